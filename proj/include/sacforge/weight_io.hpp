#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sacforge/common.hpp"
#include "sacforge/network.hpp"

namespace sacforge {

/// JSON snapshot of a trained network: architecture, stored signed DAC codes,
/// the converter offsets and measured cell gain map behind them, mismatch
/// state, training hyperparameters, and final metrics. Serialization is
/// deterministic (insertion-ordered keys, shortest round-trip doubles), so
/// save -> load -> save reproduces the file byte for byte.
inline nlohmann::ordered_json weights_to_json(const TrainedNetwork& net) {
    nlohmann::ordered_json j;
    j["format"] = "sacforge-weights-v1";
    nlohmann::ordered_json spec;
    spec["layer_sizes"] = net.spec.layer_sizes;
    spec["n_splines"] = net.spec.n_splines;
    spec["c_multiplier"] = net.spec.c_multiplier;
    spec["c_relu"] = net.spec.c_relu;
    spec["regime"] = regime_name(net.spec.regime);
    spec["temperature"] = net.spec.temperature;
    spec["weight_bits"] = net.spec.weight_bits;
    spec["w_scale"] = net.spec.w_scale;
    spec["mult_bias"] = net.spec.mult_bias;
    spec["target_scale"] = net.spec.target_scale;
    j["spec"] = spec;
    j["weights"] = net.codes;
    j["dac_offsets"] = net.blocks->dac_offsets;
    nlohmann::ordered_json gm;
    gm["w"] = net.blocks->gain_map.w;
    gm["g"] = net.blocks->gain_map.g;
    j["gain_map"] = gm;
    nlohmann::ordered_json mm;
    mm["sigma"] = net.mismatch_sigma;
    mm["seed"] = net.mismatch_seed;
    j["mismatch"] = mm;
    nlohmann::ordered_json hy;
    hy["lr"] = net.hyper.lr;
    hy["epochs"] = net.hyper.epochs;
    hy["batch_size"] = net.hyper.batch_size;
    hy["seed"] = net.hyper.seed;
    j["training"] = hy;
    nlohmann::ordered_json me;
    me["final_train_mse"] =
        net.history.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(net.history.back());
    if (std::isnan(net.final_test_mse)) {
        me["final_test_mse"] = nullptr;
    } else {
        me["final_test_mse"] = net.final_test_mse;
    }
    me["history"] = net.history;
    j["metrics"] = me;
    return j;
}

inline void save_weights(const TrainedNetwork& net, const std::string& path) {
    if (net.codes.empty()) throw ParameterError("network has no stored weights to save");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot open weight file for writing: " + path);
    out << weights_to_json(net).dump(2) << '\n';
    if (!out) throw ParameterError("failed writing weight file: " + path);
}

/// Rebuild a network from a weight file. The hardware artifacts are
/// regenerated deterministically from the stored specification; stored codes
/// are validated against the converter range and mismatch is re-injected
/// from its recorded seed.
inline TrainedNetwork load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot open weight file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("malformed weight file: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "sacforge-weights-v1") {
            throw ParameterError("unsupported weight file format");
        }
        const auto& js = j.at("spec");
        NetworkSpec spec;
        spec.layer_sizes = js.at("layer_sizes").get<std::vector<int>>();
        spec.n_splines = js.at("n_splines").get<int>();
        spec.c_multiplier = js.at("c_multiplier").get<Real>();
        spec.c_relu = js.at("c_relu").get<Real>();
        spec.regime = parse_regime(js.at("regime").get<std::string>());
        spec.temperature = js.at("temperature").get<Real>();
        spec.weight_bits = js.at("weight_bits").get<int>();
        spec.w_scale = js.at("w_scale").get<Real>();
        spec.mult_bias = js.at("mult_bias").get<Real>();
        spec.target_scale = js.at("target_scale").get<Real>();
        spec.validate();

        TrainedNetwork net = make_network(spec);
        net.codes = j.at("weights").get<std::vector<std::vector<long>>>();
        if (net.codes.size() != spec.layer_sizes.size() - 1) {
            throw ParameterError("weight file layer count does not match the architecture");
        }
        for (size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
            const size_t want = static_cast<size_t>(spec.layer_sizes[l + 1]) *
                                (spec.layer_sizes[l] + 1);
            if (net.codes[l].size() != want) {
                throw ParameterError("weight file edge count does not match layer " +
                                     std::to_string(l));
            }
            for (long c : net.codes[l]) {
                if (std::labs(c) < 1 || std::labs(c) > net.blocks->max_code()) {
                    throw ParameterError("stored code outside the DAC range");
                }
            }
        }
        const auto& jm = j.at("mismatch");
        const Real sigma = jm.at("sigma").get<Real>();
        const unsigned long mseed = jm.at("seed").get<unsigned long>();
        if (sigma > 0) net = inject_mismatch(net, sigma, mseed);
        const auto& jh = j.at("training");
        net.hyper.lr = jh.at("lr").get<Real>();
        net.hyper.epochs = jh.at("epochs").get<int>();
        net.hyper.batch_size = jh.at("batch_size").get<int>();
        net.hyper.seed = jh.at("seed").get<unsigned long>();
        const auto& je = j.at("metrics");
        net.history = je.at("history").get<std::vector<Real>>();
        if (je.contains("final_test_mse") && !je.at("final_test_mse").is_null()) {
            net.final_test_mse = je.at("final_test_mse").get<Real>();
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("malformed weight file: ") + e.what());
    }
}

}  // namespace sacforge
