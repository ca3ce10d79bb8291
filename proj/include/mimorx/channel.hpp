// Tapped-delay-line MIMO fading channel.
//
// A profile is a list of (normalized delay, linear power) taps, optionally
// with a specular first tap (line of sight). Per TTI, each (tap, rx, tx)
// triple gets an independent complex gain evolving over OFDM symbols via a
// sum-of-sinusoids Doppler process; the frequency response follows as
// H(f_i, t_j) = sum_l a_l(t_j) exp(-2 pi i f_i tau_l). Antennas are
// uncorrelated.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mimorx/link_config.hpp"
#include "mimorx/rng.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

struct ChannelProfile {
  std::string name;
  std::vector<double> delays;  // normalized, sorted ascending
  std::vector<double> powers;  // linear, sum to 1
  bool los = false;            // first tap is specular when set
  double k_factor_db = 0.0;

  int n_taps() const { return static_cast<int>(delays.size()); }
};

// Parses the plain-text tap table: comment lines start with '#', an optional
// "los_k_db <v>" line marks the first tap as specular, remaining lines are
// "normalized_delay power_db". Taps are sorted by delay and powers
// normalized to unit sum.
inline ChannelProfile parse_channel_profile(std::istream& in, const std::string& name) {
  ChannelProfile p;
  p.name = name;
  std::vector<std::pair<double, double>> taps;  // delay, linear power
  bool first_is_los = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto h = line.find('#');
    if (h != std::string::npos) line = line.substr(0, h);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "los_k_db") {
      if (!(ls >> p.k_factor_db)) throw IoError("profile " + name + ": bad los_k_db line");
      first_is_los = true;
      continue;
    }
    double delay, power_db;
    try {
      delay = std::stod(tok);
    } catch (const std::exception&) {
      throw IoError("profile " + name + ": bad tap line '" + line + "'");
    }
    if (!(ls >> power_db)) throw IoError("profile " + name + ": bad tap line '" + line + "'");
    if (delay < 0) throw IoError("profile " + name + ": negative tap delay");
    taps.emplace_back(delay, std::pow(10.0, power_db / 10.0));
  }
  if (taps.empty()) throw IoError("profile " + name + ": no taps");
  p.los = first_is_los;

  // The specular tap stays first; diffuse taps are sorted by delay.
  size_t sort_from = first_is_los ? 1 : 0;
  std::sort(taps.begin() + static_cast<std::ptrdiff_t>(sort_from), taps.end());
  double total = 0;
  for (auto& [d, pw] : taps) total += pw;
  for (auto& [d, pw] : taps) {
    p.delays.push_back(d);
    p.powers.push_back(pw / total);
  }
  return p;
}

// Loads "<name>.txt" from the directory given by the MIMORX_TDL_DIR
// environment variable or the build-time default; an argument containing a
// path separator is opened directly.
inline ChannelProfile load_channel_profile(const std::string& name_or_path) {
  std::string path;
  if (name_or_path.find('/') != std::string::npos) {
    path = name_or_path;
  } else {
    const char* dir = std::getenv("MIMORX_TDL_DIR");
#ifdef MIMORX_TDL_DIR_DEFAULT
    std::string base = dir ? dir : MIMORX_TDL_DIR_DEFAULT;
#else
    std::string base = dir ? dir : "data/tdl";
#endif
    path = base + "/" + name_or_path + ".txt";
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open channel profile file " + path);
  return parse_channel_profile(in, name_or_path);
}

namespace detail {
constexpr int kDopplerSinusoids = 16;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace detail

// Frequency response over the full grid: complex [F, S, N_R, N_T].
// Frequencies are f_i = i * scs; symbol times t_j = j * symbol_duration.
inline Tensor<double> tdl_channel(const ChannelProfile& profile, double delay_spread_s,
                                  double doppler_hz, const LinkConfig& cfg, Rng& rng) {
  const int F = cfg.F, S = cfg.S, R = cfg.n_rx, T = cfg.n_tx;
  const int L = profile.n_taps();
  using cd = std::complex<double>;

  // Per (tap, rx, tx): gains over the S symbols.
  // Diffuse taps: sqrt(P/N) sum_m exp(i(2 pi fd cos(alpha_m) t + phi_m)).
  // Specular tap: sqrt(P) exp(i(2 pi fd cos(alpha_0) t + phi_0)).
  std::vector<cd> gains(static_cast<size_t>(L) * R * T * S);
  for (int l = 0; l < L; ++l) {
    const bool specular = profile.los && l == 0;
    const double amp = specular ? std::sqrt(profile.powers[static_cast<size_t>(l)])
                                : std::sqrt(profile.powers[static_cast<size_t>(l)] /
                                            detail::kDopplerSinusoids);
    for (int r = 0; r < R; ++r)
      for (int t = 0; t < T; ++t) {
        const int n_sin = specular ? 1 : detail::kDopplerSinusoids;
        // Angular rates and phases fixed for the TTI.
        double omega[detail::kDopplerSinusoids], phi[detail::kDopplerSinusoids];
        for (int m = 0; m < n_sin; ++m) {
          omega[m] = detail::kTwoPi * doppler_hz * std::cos(detail::kTwoPi * rng.uniform());
          phi[m] = detail::kTwoPi * rng.uniform();
        }
        for (int j = 0; j < S; ++j) {
          const double tj = j * cfg.symbol_duration_s;
          cd acc = 0;
          for (int m = 0; m < n_sin; ++m) {
            const double a = omega[m] * tj + phi[m];
            acc += cd(std::cos(a), std::sin(a));
          }
          gains[((static_cast<size_t>(l) * R + r) * T + t) * S + j] = amp * acc;
        }
      }
  }

  // Tap phasors over frequency.
  std::vector<cd> fph(static_cast<size_t>(F) * L);
  for (int i = 0; i < F; ++i)
    for (int l = 0; l < L; ++l) {
      const double ang = -detail::kTwoPi * (i * cfg.scs_hz) *
                         (profile.delays[static_cast<size_t>(l)] * delay_spread_s);
      fph[static_cast<size_t>(i) * L + l] = cd(std::cos(ang), std::sin(ang));
    }

  auto h = Tensor<double>::complex({F, S, R, T});
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j)
      for (int r = 0; r < R; ++r)
        for (int t = 0; t < T; ++t) {
          cd acc = 0;
          for (int l = 0; l < L; ++l)
            acc += gains[((static_cast<size_t>(l) * R + r) * T + t) * S + j] *
                   fph[static_cast<size_t>(i) * L + l];
          h.set(offset4(h.shape, i, j, r, t), acc);
        }
  return h;
}

}  // namespace mimorx
