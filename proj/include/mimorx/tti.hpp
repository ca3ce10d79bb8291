// One TTI of the link simulation: bits -> QAM grid with pilots -> TDL MIMO
// channel -> received grid (post-FFT model y = H x + n per resource
// element).
//
// Noise power: per-receive-antenna SNR is E||Hx||^2 / (N_R sigma^2). With
// unit-variance channel entries and unit-power layer symbols this gives
// sigma^2 = N_T / snr_linear.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mimorx/channel.hpp"
#include "mimorx/link_config.hpp"
#include "mimorx/modulation.hpp"
#include "mimorx/pilot_pattern.hpp"
#include "mimorx/rng.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

struct TtiSample {
  Tensor<double> y;       // [F, S, N_R] complex
  Tensor<double> h_true;  // [F, S, N_R, N_T] complex (empty when not stored)
  std::vector<uint8_t> tx_bits;    // [F*S*N_T*N_b], row-major [F,S,N_T,N_b]
  std::vector<uint8_t> data_mask;  // [F*S], 1 on data REs
  double snr_db = 0, snr_linear = 1, sigma2 = 0;
  double delay_spread_s = 0, doppler_hz = 0;
  PilotPattern pattern;
};

// Channel-condition draw shared by a block of consecutive TTIs.
struct BlockParams {
  double snr_db;
  double delay_spread_s;
  double doppler_hz;
};

// TTIs are grouped in blocks of 10 that share one parameter draw.
constexpr int kParamBlockLen = 10;

inline BlockParams draw_block_params(const LinkConfig& cfg, uint64_t block_index) {
  Rng rng = Rng::derive(cfg.seed, "block-params", block_index);
  BlockParams p;
  p.snr_db = rng.uniform(cfg.snr_db_min, cfg.snr_db_max);
  p.delay_spread_s = rng.uniform(cfg.delay_spread_s_min, cfg.delay_spread_s_max);
  p.doppler_hz = rng.uniform(cfg.doppler_hz_min, cfg.doppler_hz_max);
  return p;
}

struct TtiOverrides {
  std::optional<double> sigma2;  // force the noise power (0 disables noise)
  bool zero_tx = false;          // transmit nothing: y is pure noise
};

// Deterministic sample for TTI `index` under `cfg` (and its master seed).
inline TtiSample generate_tti(const LinkConfig& cfg, const ChannelProfile& profile, uint64_t index,
                              const TtiOverrides* ov = nullptr) {
  cfg.validate();
  const int F = cfg.F, S = cfg.S, T = cfg.n_tx, R = cfg.n_rx;
  const int nb = cfg.bits_per_layer_symbol();

  TtiSample s;
  const BlockParams bp = draw_block_params(cfg, index / kParamBlockLen);
  s.snr_db = bp.snr_db;
  s.snr_linear = std::pow(10.0, bp.snr_db / 10.0);
  s.delay_spread_s = bp.delay_spread_s;
  s.doppler_hz = bp.doppler_hz;
  s.sigma2 = static_cast<double>(T) / s.snr_linear;
  if (ov && ov->sigma2) s.sigma2 = *ov->sigma2;

  s.pattern = build_pilot_pattern(cfg, hash_combine(cfg.seed, splitmix64(index)));

  // Transmitted grid: pilots on pilot symbols, data symbols elsewhere.
  Rng bits_rng = Rng::derive(cfg.seed, "tti-bits", index);
  s.tx_bits.assign(static_cast<size_t>(F) * S * T * nb, 0);
  s.data_mask.assign(static_cast<size_t>(F) * S, 0);
  auto x = Tensor<double>::complex({F, S, T});
  std::vector<int> pilot_sym_idx(static_cast<size_t>(S), -1);
  for (size_t pi = 0; pi < s.pattern.pilot_symbols.size(); ++pi)
    pilot_sym_idx[static_cast<size_t>(s.pattern.pilot_symbols[pi])] = static_cast<int>(pi);
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j) {
      const bool pilot_sym = s.pattern.is_pilot_symbol[static_cast<size_t>(j)];
      if (!pilot_sym) s.data_mask[static_cast<size_t>(i) * S + j] = 1;
      for (int k = 0; k < T; ++k) {
        if (pilot_sym) {
          x.set(offset3(x.shape, i, j, k),
                s.pattern.values.cval(s.pattern.value_index(i, pilot_sym_idx[static_cast<size_t>(j)], k)));
        } else {
          uint8_t* b =
              s.tx_bits.data() + ((static_cast<size_t>(i) * S + j) * T + k) * static_cast<size_t>(nb);
          for (int q = 0; q < nb; ++q) b[q] = static_cast<uint8_t>(bits_rng.bit());
          x.set(offset3(x.shape, i, j, k), qam_modulate(b, cfg.modulation));
        }
      }
    }
  if (ov && ov->zero_tx) x.fill(0.0, 0.0);

  Rng chan_rng = Rng::derive(cfg.seed, "tti-chan", index);
  auto h = tdl_channel(profile, s.delay_spread_s, s.doppler_hz, cfg, chan_rng);

  Rng noise_rng = Rng::derive(cfg.seed, "tti-noise", index);
  s.y = Tensor<double>::complex({F, S, R});
  const double nstd = std::sqrt(s.sigma2);
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j)
      for (int r = 0; r < R; ++r) {
        std::complex<double> acc = 0;
        for (int k = 0; k < T; ++k)
          acc += h.cval(offset4(h.shape, i, j, r, k)) * x.cval(offset3(x.shape, i, j, k));
        if (nstd > 0) acc += nstd * noise_rng.cnormal(1.0);
        s.y.set(offset3(s.y.shape, i, j, r), acc);
      }

  if (cfg.store_h_true) s.h_true = std::move(h);
  return s;
}

}  // namespace mimorx
