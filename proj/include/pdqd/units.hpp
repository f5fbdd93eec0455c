#pragma once

// Unit system: capacitance in attofarad, voltage in volt, energy in meV,
// temperature in millikelvin.

namespace pdqd {

/// Elementary charge in coulomb (exact, SI 2019).
inline constexpr double kElementaryCharge = 1.602176634e-19;

/// Elementary charge expressed in aF·V. Dividing by a capacitance in aF gives volts.
inline constexpr double kChargeAFV = kElementaryCharge / 1e-18;

/// e² in meV·aF: e²/C with C in aF yields meV.
inline constexpr double kChargeSquaredMeVaF = kChargeAFV * 1e3;

/// Boltzmann constant in meV/K.
inline constexpr double kBoltzmannMeVPerK = 8.617333262e-2;

/// Electron energy (meV) picked up across `volts`.
constexpr double volts_to_mev(double volts) { return volts * 1e3; }

constexpr double mev_to_volts(double mev) { return mev * 1e-3; }

constexpr double thermal_energy_mev(double temperature_mk) {
    return kBoltzmannMeVPerK * temperature_mk * 1e-3;
}

} // namespace pdqd
