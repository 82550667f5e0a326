#pragma once

namespace twophoton {

// Reduced Planck constant in ueV ps: E = hbar * omega.
inline constexpr double kHbar = 658.2119569;

inline constexpr double energy_to_rate(double e_ueV) { return e_ueV / kHbar; }
inline constexpr double rate_to_energy(double omega) { return omega * kHbar; }

}  // namespace twophoton
