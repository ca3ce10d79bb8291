// Gray-mapped QAM constellations, unit average energy.
//
// Mapping convention (bit index 0 first):
//   QPSK:   [b0,b1]       -> ((1-2 b0) + i (1-2 b1)) / sqrt(2)
//   16-QAM: [b0,b1,b2,b3] -> ((1-2 b0)(2-(1-2 b2)) + i (1-2 b1)(2-(1-2 b3))) / sqrt(10)
// so even-indexed bits steer the real axis and odd-indexed bits the
// imaginary axis.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mimorx/tensor.hpp"

namespace mimorx {

enum class Modulation { kQpsk, kQam16 };

inline int bits_per_symbol(Modulation m) { return m == Modulation::kQpsk ? 2 : 4; }

inline Modulation modulation_from_string(const std::string& s) {
  if (s == "qpsk") return Modulation::kQpsk;
  if (s == "16qam") return Modulation::kQam16;
  throw ConfigError("unsupported modulation '" + s + "' (expected qpsk or 16qam)");
}

inline std::string modulation_to_string(Modulation m) {
  return m == Modulation::kQpsk ? "qpsk" : "16qam";
}

// One symbol from bits_per_symbol(m) bits (values 0/1).
inline std::complex<double> qam_modulate(const uint8_t* bits, Modulation m) {
  if (m == Modulation::kQpsk) {
    const double s = 1.0 / std::sqrt(2.0);
    return {s * (1 - 2 * bits[0]), s * (1 - 2 * bits[1])};
  }
  const double s = 1.0 / std::sqrt(10.0);
  return {s * (1 - 2 * bits[0]) * (2 - (1 - 2 * bits[2])),
          s * (1 - 2 * bits[1]) * (2 - (1 - 2 * bits[3]))};
}

// All 2^N_b points, indexed by bits interpreted MSB-first: index
// b0*2^(N_b-1) + b1*2^(N_b-2) + ...
inline std::vector<std::complex<double>> constellation(Modulation m) {
  const int nb = bits_per_symbol(m);
  std::vector<std::complex<double>> pts;
  pts.reserve(1u << nb);
  for (int idx = 0; idx < (1 << nb); ++idx) {
    std::array<uint8_t, 4> bits{};
    for (int b = 0; b < nb; ++b) bits[static_cast<size_t>(b)] = (idx >> (nb - 1 - b)) & 1;
    pts.push_back(qam_modulate(bits.data(), m));
  }
  return pts;
}

}  // namespace mimorx
