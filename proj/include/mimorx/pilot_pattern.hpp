// DMRS pilot placement with frequency-domain CDM of size 2.
//
// Layers pair into CDM groups (0,1), (2,3), ... Each group owns one
// frequency comb: subcarrier i belongs to comb (i mod n_combs). Within a
// group the two layers transmit the same base QPSK sequence, multiplied by
// orthogonal cover codes (+1,+1) and (+1,-1) over adjacent comb
// subcarriers. Subcarriers outside a layer's comb carry nothing from that
// layer during pilot symbols; all resource elements of a pilot symbol are
// pilot overhead (no data bits anywhere on that symbol).

#pragma once

#include <vector>

#include "mimorx/link_config.hpp"
#include "mimorx/rng.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

struct PilotPattern {
  int F = 0, S = 0, n_tx = 0;
  int cdm_group_size = 2;
  int n_combs = 0;
  std::vector<int> pilot_symbols;
  std::vector<uint8_t> is_pilot_symbol;  // [S]
  // Transmitted pilot values, zero off-comb: complex [F, n_pilot_symbols, n_tx].
  Tensor<double> values;

  int comb_of_layer(int k) const { return (k / cdm_group_size) % n_combs; }
  int group_of_layer(int k) const { return k / cdm_group_size; }

  // Cover code of layer k over the two adjacent subcarriers of its comb pair.
  std::pair<double, double> cover_code(int k) const {
    return (k % cdm_group_size == 0) ? std::make_pair(1.0, 1.0) : std::make_pair(1.0, -1.0);
  }

  // Subcarriers of comb c in increasing order.
  std::vector<int> comb_positions(int c) const {
    std::vector<int> pos;
    for (int i = c; i < F; i += n_combs) pos.push_back(i);
    return pos;
  }

  bool is_data_re(int /*i*/, int j) const { return !is_pilot_symbol[static_cast<size_t>(j)]; }

  int64_t value_index(int i, int pilot_sym_idx, int k) const {
    return (static_cast<int64_t>(i) * static_cast<int64_t>(pilot_symbols.size()) +
            pilot_sym_idx) * n_tx + k;
  }
};

// Deterministic pattern for one TTI; `seed` addresses the per-TTI base
// sequences.
inline PilotPattern build_pilot_pattern(const LinkConfig& cfg, uint64_t seed) {
  cfg.validate();
  PilotPattern p;
  p.F = cfg.F;
  p.S = cfg.S;
  p.n_tx = cfg.n_tx;
  p.cdm_group_size = cfg.cdm_group_size;
  p.n_combs = cfg.n_tx / cfg.cdm_group_size;
  p.pilot_symbols = cfg.pilot_symbols;
  p.is_pilot_symbol.assign(static_cast<size_t>(cfg.S), 0);
  for (int s : cfg.pilot_symbols) p.is_pilot_symbol[static_cast<size_t>(s)] = 1;

  // Every comb needs at least one adjacent pair for the cover codes.
  const int pairs_per_comb = (cfg.F / p.n_combs) / 2;
  if (pairs_per_comb < 1)
    throw ConfigError("unsupported pilot configuration: layer count exceeds twice the comb count");

  p.values = Tensor<double>::complex({cfg.F, static_cast<int>(cfg.pilot_symbols.size()), cfg.n_tx});
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (size_t si = 0; si < cfg.pilot_symbols.size(); ++si) {
    for (int g = 0; g < p.n_combs; ++g) {
      Rng rng =
          Rng::derive(seed, "pilot-base", (static_cast<uint64_t>(si) << 32) | static_cast<uint64_t>(g));
      const auto pos = p.comb_positions(g);
      for (size_t m = 0; m < pos.size(); ++m) {
        // Fresh unit-modulus QPSK base value per comb subcarrier, shared by
        // the group's layers before cover-code application.
        const std::complex<double> base{(rng.bit() ? -1.0 : 1.0) * inv_sqrt2,
                                        (rng.bit() ? -1.0 : 1.0) * inv_sqrt2};
        const bool second_of_pair = (m % 2 == 1);
        for (int within = 0; within < cfg.cdm_group_size; ++within) {
          const int k = g * cfg.cdm_group_size + within;
          auto code = p.cover_code(k);
          const double c = second_of_pair ? code.second : code.first;
          p.values.set(p.value_index(pos[m], static_cast<int>(si), k), base * c);
        }
      }
    }
  }
  return p;
}

}  // namespace mimorx
