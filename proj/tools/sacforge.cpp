#include <cstdio>
int main() { std::puts("sacforge: experiments not wired up yet"); return 1; }
