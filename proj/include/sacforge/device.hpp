#pragma once

#include <cmath>
#include <string>

#include "sacforge/common.hpp"

namespace sacforge {

/// Transistor forward-current laws. All currents are normalized by the model's
/// spec_current; the rectifier is an analytic limit that reads its argument
/// directly in current units (slope-1 ramp), not a MOSFET law.
enum class TransistorLaw {
    WeakInversionExponential,
    StrongInversionSquareLaw,
    EkvInterpolated,
    IdealRectifier,
};

/// Diode laws: hard one-way valve, or exponential junction clamped at zero so
/// the reverse branch blocks exactly.
enum class DiodeLaw {
    IdealRectifier,
    ExponentialDiode,
};

/// Operating regime by inversion coefficient.
enum class Regime { WI, MI, SI };

struct RegimeLabel {
    Regime label;
    Real inversion_coefficient;
};

namespace detail {
inline Real thermal_voltage_at(Real temperature_kelvin) {
    if (!(temperature_kelvin >= kMinTemperature && temperature_kelvin <= kMaxTemperature)) {
        throw ParameterError("temperature " + std::to_string(temperature_kelvin) +
                             " K outside supported range [200, 450] K");
    }
    return kBoltzmannOverCharge * temperature_kelvin;
}

inline void require_finite(Real v, const char* what) {
    if (!std::isfinite(v)) {
        throw ParameterError(std::string(what) + " must be finite");
    }
}

/// log(1 + exp(t)), overflow-safe.
inline Real softplus(Real t) {
    if (t > 40.0) return t + std::exp(-t);
    if (t < -40.0) return std::exp(t);
    return std::log1p(std::exp(t));
}

/// d/dt log(1 + exp(t)) = logistic(t), overflow-safe.
inline Real logistic(Real t) {
    if (t >= 0) {
        const Real e = std::exp(-t);
        return 1.0 / (1.0 + e);
    }
    const Real e = std::exp(t);
    return e / (1.0 + e);
}
}  // namespace detail

/// One transistor: current law plus regime/temperature parameters.
/// thermal_voltage is derived from temperature (k/q = 8.617e-5 V/K) and kept
/// consistent by the factories; mutate temperature only via with_temperature.
struct TransistorModel {
    TransistorLaw law = TransistorLaw::WeakInversionExponential;
    Real spec_current = 1.0;    // normalization current I_spec
    Real slope_factor = 1.3;    // subthreshold slope factor n >= 1
    Real temperature = 300.0;   // kelvin
    Real thermal_voltage = kBoltzmannOverCharge * 300.0;  // U_T = kT/q

    static TransistorModel make(TransistorLaw law, Real spec_current,
                                Real slope_factor = 1.3, Real temperature = 300.0) {
        if (!(spec_current > 0) || !std::isfinite(spec_current)) {
            throw ParameterError("spec_current must be positive and finite");
        }
        if (!(slope_factor >= 1.0) || !std::isfinite(slope_factor)) {
            throw ParameterError("slope_factor must be >= 1");
        }
        TransistorModel m;
        m.law = law;
        m.spec_current = spec_current;
        m.slope_factor = slope_factor;
        m.temperature = temperature;
        m.thermal_voltage = detail::thermal_voltage_at(temperature);
        return m;
    }

    /// Same device at a different junction temperature (U_T recomputed).
    TransistorModel with_temperature(Real temperature_kelvin) const {
        TransistorModel m = *this;
        m.temperature = temperature_kelvin;
        m.thermal_voltage = detail::thermal_voltage_at(temperature_kelvin);
        return m;
    }
};

/// One diode element; thermal_voltage matches the companion transistor's.
struct DiodeModel {
    DiodeLaw law = DiodeLaw::ExponentialDiode;
    Real saturation_current = 1e-7;
    Real thermal_voltage = kBoltzmannOverCharge * 300.0;

    static DiodeModel make(DiodeLaw law, Real saturation_current,
                           Real temperature = 300.0) {
        if (law == DiodeLaw::ExponentialDiode &&
            (!(saturation_current > 0) || !std::isfinite(saturation_current))) {
            throw ParameterError("saturation_current must be positive and finite");
        }
        DiodeModel d;
        d.law = law;
        d.saturation_current = saturation_current;
        d.thermal_voltage = detail::thermal_voltage_at(temperature);
        return d;
    }

    DiodeModel with_temperature(Real temperature_kelvin) const {
        DiodeModel d = *this;
        d.thermal_voltage = detail::thermal_voltage_at(temperature_kelvin);
        return d;
    }
};

/// Forward current F(v) of the device law. Nonnegative and nondecreasing for
/// every law; strictly increasing wherever it is positive.
inline Real forward_current(const TransistorModel& m, Real v) {
    detail::require_finite(v, "voltage");
    switch (m.law) {
        case TransistorLaw::WeakInversionExponential:
            return m.spec_current * std::exp(v / (m.slope_factor * m.thermal_voltage));
        case TransistorLaw::StrongInversionSquareLaw: {
            const Real q = std::max(v, 0.0) / (2.0 * m.slope_factor * m.thermal_voltage);
            return m.spec_current * q * q;
        }
        case TransistorLaw::EkvInterpolated: {
            const Real l = detail::softplus(v / (2.0 * m.slope_factor * m.thermal_voltage));
            return m.spec_current * l * l;
        }
        case TransistorLaw::IdealRectifier:
            return std::max(v, 0.0);
    }
    throw ParameterError("unknown transistor law");
}

/// dF/dv at v. Zero on the clamped branch of the square law / rectifier.
inline Real conductance(const TransistorModel& m, Real v) {
    detail::require_finite(v, "voltage");
    const Real nut = m.slope_factor * m.thermal_voltage;
    switch (m.law) {
        case TransistorLaw::WeakInversionExponential:
            return m.spec_current * std::exp(v / nut) / nut;
        case TransistorLaw::StrongInversionSquareLaw: {
            const Real q = std::max(v, 0.0) / (2.0 * nut);
            return m.spec_current * q / nut;
        }
        case TransistorLaw::EkvInterpolated: {
            const Real t = v / (2.0 * nut);
            return m.spec_current * detail::softplus(t) * detail::logistic(t) / nut;
        }
        case TransistorLaw::IdealRectifier:
            return v > 0.0 ? 1.0 : 0.0;
    }
    throw ParameterError("unknown transistor law");
}

/// Inverse of forward_current on currents i >= 0 (i > 0 for the exponential
/// law, whose range excludes zero).
inline Real inverse_forward(const TransistorModel& m, Real i) {
    detail::require_finite(i, "current");
    if (i < 0) throw ParameterError("forward current is nonnegative; cannot invert " +
                                    std::to_string(i));
    const Real nut = m.slope_factor * m.thermal_voltage;
    switch (m.law) {
        case TransistorLaw::WeakInversionExponential:
            if (i <= 0) throw ParameterError("exponential law never reaches zero current");
            return nut * std::log(i / m.spec_current);
        case TransistorLaw::StrongInversionSquareLaw:
            return 2.0 * nut * std::sqrt(i / m.spec_current);
        case TransistorLaw::EkvInterpolated: {
            const Real l = std::sqrt(i / m.spec_current);
            if (l <= 0) throw ParameterError("EKV law never reaches zero current");
            const Real t = l > 30.0 ? l : std::log(std::expm1(l));
            return 2.0 * nut * t;
        }
        case TransistorLaw::IdealRectifier:
            return i;
    }
    throw ParameterError("unknown transistor law");
}

/// Drain-source channel current: forward minus reverse component,
/// F(vg - vs) - F(vg - vd). Antisymmetric in vs <-> vd by construction.
inline Real channel_current(const TransistorModel& m, Real vg, Real vs, Real vd) {
    return forward_current(m, vg - vs) - forward_current(m, vg - vd);
}

/// Diode current D(v): >= 0, nondecreasing, -> 0 as v -> -inf. The exponential
/// junction is clamped at v = 0 so the reverse branch blocks exactly.
inline Real diode_current(const DiodeModel& d, Real v) {
    detail::require_finite(v, "voltage");
    switch (d.law) {
        case DiodeLaw::IdealRectifier:
            return std::max(v, 0.0);
        case DiodeLaw::ExponentialDiode:
            return v > 0.0 ? d.saturation_current * std::expm1(v / d.thermal_voltage) : 0.0;
    }
    throw ParameterError("unknown diode law");
}

/// dD/dv at v (zero on the blocked branch).
inline Real diode_conductance(const DiodeModel& d, Real v) {
    detail::require_finite(v, "voltage");
    switch (d.law) {
        case DiodeLaw::IdealRectifier:
            return v > 0.0 ? 1.0 : 0.0;
        case DiodeLaw::ExponentialDiode:
            return v > 0.0
                       ? d.saturation_current * std::exp(v / d.thermal_voltage) / d.thermal_voltage
                       : 0.0;
    }
    throw ParameterError("unknown diode law");
}

/// Voltage v such that diode_current(d, v) = i, for i >= 0.
inline Real inverse_diode(const DiodeModel& d, Real i) {
    detail::require_finite(i, "current");
    if (i < 0) throw ParameterError("diode current is nonnegative; cannot invert");
    switch (d.law) {
        case DiodeLaw::IdealRectifier:
            return i;
        case DiodeLaw::ExponentialDiode:
            return d.thermal_voltage * std::log1p(i / d.saturation_current);
    }
    throw ParameterError("unknown diode law");
}

/// Classify an operating point by inversion coefficient IC = bias/spec.
/// WI below 0.1, SI above 10, MI between.
inline RegimeLabel classify_regime(Real bias_current, Real spec_current) {
    if (!(bias_current > 0) || !(spec_current > 0)) {
        throw ParameterError("regime classification needs positive currents");
    }
    const Real ic = bias_current / spec_current;
    Regime r = Regime::MI;
    if (ic < 0.1) r = Regime::WI;
    else if (ic > 10.0) r = Regime::SI;
    return RegimeLabel{r, ic};
}

/// Working unit current the regime presets are normalized to: signals of order
/// one land in the intended inversion region of each preset.
inline constexpr Real kUnitCurrent = 1.0;

/// spec_current presets per regime, for unit-scale signals:
/// WI -> IC 0.01, MI -> IC 1, SI -> IC 100.
inline Real regime_spec_current(Regime r) {
    switch (r) {
        case Regime::WI: return 100.0;
        case Regime::MI: return 1.0;
        case Regime::SI: return 0.01;
    }
    throw ParameterError("unknown regime");
}

/// Device preset for a regime: WI uses the exponential law, SI the square law,
/// MI the interpolated law, each biased so unit signals sit in-regime.
inline TransistorModel make_model(Regime r, Real temperature = 300.0) {
    switch (r) {
        case Regime::WI:
            return TransistorModel::make(TransistorLaw::WeakInversionExponential,
                                         regime_spec_current(r), 1.3, temperature);
        case Regime::MI:
            return TransistorModel::make(TransistorLaw::EkvInterpolated,
                                         regime_spec_current(r), 1.3, temperature);
        case Regime::SI:
            return TransistorModel::make(TransistorLaw::StrongInversionSquareLaw,
                                         regime_spec_current(r), 1.3, temperature);
    }
    throw ParameterError("unknown regime");
}

/// Analytic rectifier limit (closed-form margin solve); not a MOSFET.
inline TransistorModel rectifier_model(Real temperature = 300.0) {
    return TransistorModel::make(TransistorLaw::IdealRectifier, 1.0, 1.0, temperature);
}

/// Short lowercase tag ("wi", "mi", "si") for file formats and CLIs.
inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::WI: return "wi";
        case Regime::MI: return "mi";
        case Regime::SI: return "si";
    }
    throw ParameterError("unknown regime");
}

/// Inverse of regime_name; throws ParameterError on anything else.
inline Regime parse_regime(const std::string& s) {
    if (s == "wi") return Regime::WI;
    if (s == "mi") return Regime::MI;
    if (s == "si") return Regime::SI;
    throw ParameterError("unknown regime tag '" + s + "' (want wi, mi, or si)");
}

/// Ratio saturation_current / spec_current for the default companion diode.
/// Sets the knee smoothing of the margin solve in current units
/// (width ~ 2*sqrt(spec_current * saturation_current) for the exponential law).
inline constexpr Real kDiodeSaturationRatio = 1e-7;

/// Default companion diode for a transistor model: hard valve in the rectifier
/// limit, clamped exponential junction (same U_T) otherwise.
inline DiodeModel default_diode(const TransistorModel& m) {
    if (m.law == TransistorLaw::IdealRectifier) {
        return DiodeModel::make(DiodeLaw::IdealRectifier, 0.0, m.temperature);
    }
    return DiodeModel::make(DiodeLaw::ExponentialDiode,
                            kDiodeSaturationRatio * m.spec_current, m.temperature);
}

}  // namespace sacforge
