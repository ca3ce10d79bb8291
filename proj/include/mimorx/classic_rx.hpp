// Conventional receiver chain: raw channel estimates at pilot resource
// elements, CDM pair combining, interpolation to the full grid, LMMSE
// equalization with per-layer post-equalization noise variance, and
// max-log-MAP demapping to bit LLRs.
//
// LLR sign convention throughout the project: positive means bit 0 is the
// more likely transmitted bit.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mimorx/modulation.hpp"
#include "mimorx/pilot_pattern.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

// Channel estimates at a sparse set of grid positions. Frequency positions
// are per layer (layers of different CDM groups use different combs) and may
// sit at half-integer midpoints after pair combining.
struct RawChannelEstimate {
  int F = 0, S = 0, n_rx = 0, n_tx = 0;
  std::vector<int> symbols;               // pilot symbol indices, ascending
  std::vector<std::vector<double>> freq;  // per layer, ascending
  std::vector<Tensor<double>> values;     // per layer: [n_pos, n_symbols, N_R] complex

  int64_t index(int layer, int pos, int sym_idx, int r) const {
    const auto& sh = values[static_cast<size_t>(layer)].shape;
    return (static_cast<int64_t>(pos) * sh[1] + sym_idx) * sh[2] + r;
  }

  void require_positions() const {
    if (symbols.empty()) throw ShapeError("channel estimate has no pilot symbols");
    for (const auto& f : freq)
      if (f.empty()) throw ShapeError("channel estimate has a layer with no positions");
  }
};

// Raw per-pilot-RE estimate: the outer product of the received vector with
// the conjugated pilot vector. Layers transmitting nothing on a subcarrier
// (off their comb) get a zero column there.
inline RawChannelEstimate raw_estimate(const Tensor<double>& y, const PilotPattern& p) {
  if (y.shape.size() != 3 || y.shape[0] != p.F || y.shape[1] != p.S || !y.is_complex())
    throw ShapeError("raw_estimate expects a complex [F, S, N_R] received grid");
  RawChannelEstimate e;
  e.F = p.F;
  e.S = p.S;
  e.n_rx = y.shape[2];
  e.n_tx = p.n_tx;
  e.symbols = p.pilot_symbols;
  const int n_sym = static_cast<int>(e.symbols.size());
  e.freq.resize(static_cast<size_t>(e.n_tx));
  e.values.resize(static_cast<size_t>(e.n_tx));
  for (int k = 0; k < e.n_tx; ++k) {
    auto& f = e.freq[static_cast<size_t>(k)];
    f.resize(static_cast<size_t>(e.F));
    for (int i = 0; i < e.F; ++i) f[static_cast<size_t>(i)] = i;
    auto& v = e.values[static_cast<size_t>(k)];
    v = Tensor<double>::complex({e.F, n_sym, e.n_rx});
    for (int i = 0; i < e.F; ++i)
      for (int si = 0; si < n_sym; ++si) {
        const auto x = p.values.cval(p.value_index(i, si, k));
        for (int r = 0; r < e.n_rx; ++r)
          v.set(e.index(k, i, si, r),
                y.cval(offset3(y.shape, i, e.symbols[static_cast<size_t>(si)], r)) * std::conj(x));
      }
  }
  return e;
}

// Averages each layer's adjacent comb pair into one estimate at the pair
// midpoint; the conjugated pilots in raw_estimate already despread the
// cover codes. A comb with an odd position count passes its trailing
// position through unaveraged.
inline RawChannelEstimate cdm_combine(const RawChannelEstimate& raw, const PilotPattern& p) {
  if (p.cdm_group_size != 2) throw ConfigError("cdm_combine supports CDM groups of 2 only");
  for (const auto& f : raw.freq)
    if (static_cast<int>(f.size()) != raw.F)
      throw ShapeError("cdm_combine expects the full-grid raw estimate");
  RawChannelEstimate out;
  out.F = raw.F;
  out.S = raw.S;
  out.n_rx = raw.n_rx;
  out.n_tx = raw.n_tx;
  out.symbols = raw.symbols;
  const int n_sym = static_cast<int>(raw.symbols.size());
  out.freq.resize(static_cast<size_t>(raw.n_tx));
  out.values.resize(static_cast<size_t>(raw.n_tx));
  for (int k = 0; k < raw.n_tx; ++k) {
    const auto pos = p.comb_positions(p.comb_of_layer(k));
    const size_t n_pairs = pos.size() / 2;
    const bool trailing = pos.size() % 2 != 0;
    const size_t n_out = n_pairs + (trailing ? 1 : 0);
    auto& f = out.freq[static_cast<size_t>(k)];
    auto& v = out.values[static_cast<size_t>(k)];
    f.resize(n_out);
    v = Tensor<double>::complex({static_cast<int>(n_out), n_sym, raw.n_rx});
    for (size_t m = 0; m < n_pairs; ++m) {
      const int a = pos[2 * m], b = pos[2 * m + 1];
      f[m] = 0.5 * (a + b);
      for (int si = 0; si < n_sym; ++si)
        for (int r = 0; r < raw.n_rx; ++r) {
          const auto& rv = raw.values[static_cast<size_t>(k)];
          v.set(out.index(k, static_cast<int>(m), si, r),
                0.5 * (rv.cval(raw.index(k, a, si, r)) + rv.cval(raw.index(k, b, si, r))));
        }
    }
    if (trailing) {
      const int a = pos.back();
      f[n_pairs] = a;
      for (int si = 0; si < n_sym; ++si)
        for (int r = 0; r < raw.n_rx; ++r)
          v.set(out.index(k, static_cast<int>(n_pairs), si, r),
                raw.values[static_cast<size_t>(k)].cval(raw.index(k, a, si, r)));
    }
  }
  return out;
}

namespace detail {

// Natural cubic spline through (x_k, y_k); evaluation clamps to the end
// values outside the knot range. Two knots degenerate to a line, one to a
// constant.
struct CubicSpline {
  std::vector<double> x, y, m;

  void build(const std::vector<double>& xs, const std::vector<double>& ys) {
    x = xs;
    y = ys;
    const size_t n = x.size();
    m.assign(n, 0.0);
    if (n < 3) return;
    // Thomas solve of the tridiagonal system for interior second
    // derivatives, with natural ends m_0 = m_{n-1} = 0.
    std::vector<double> diag(n), upper(n), rhs(n);
    for (size_t i = 1; i + 1 < n; ++i) {
      const double hl = x[i] - x[i - 1], hr = x[i + 1] - x[i];
      diag[i] = (x[i + 1] - x[i - 1]) / 3.0;
      upper[i] = hr / 6.0;
      rhs[i] = (y[i + 1] - y[i]) / hr - (y[i] - y[i - 1]) / hl;
    }
    for (size_t i = 2; i + 1 < n; ++i) {
      const double w = ((x[i] - x[i - 1]) / 6.0) / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    for (size_t i = n - 2; i >= 1; --i) {
      m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
      if (i == 1) break;
    }
  }

  double eval(double t) const {
    if (x.size() == 1 || t <= x.front()) return y.front();
    if (t >= x.back()) return y.back();
    const size_t j =
        static_cast<size_t>(std::upper_bound(x.begin(), x.end(), t) - x.begin()) - 1;
    const double h = x[j + 1] - x[j];
    const double a = (x[j + 1] - t) / h, b = 1.0 - a;
    return a * y[j] + b * y[j + 1] +
           ((a * a * a - a) * m[j] + (b * b * b - b) * m[j + 1]) * h * h / 6.0;
  }
};

}  // namespace detail

enum class InterpMode { kSplineFreqLinearTime, kNearest };

// Expands sparse estimates to the full [F, S, N_R, N_T] grid. Spline mode
// runs a natural cubic over frequency per pilot symbol and then linear
// interpolation over time, clamping to the end values outside the covered
// range on both axes. Nearest mode copies the closest estimate position in
// (subcarrier, symbol) index space; ties prefer the earlier symbol, then
// the lower frequency position.
inline Tensor<double> interpolate(const RawChannelEstimate& est, InterpMode mode) {
  est.require_positions();
  const int F = est.F, S = est.S, R = est.n_rx, T = est.n_tx;
  const int n_sym = static_cast<int>(est.symbols.size());
  auto out = Tensor<double>::complex({F, S, R, T});

  if (mode == InterpMode::kNearest) {
    for (int k = 0; k < T; ++k) {
      const auto& f = est.freq[static_cast<size_t>(k)];
      for (int j = 0; j < S; ++j)
        for (int i = 0; i < F; ++i) {
          double best = std::numeric_limits<double>::infinity();
          int bsi = 0, bm = 0;
          for (int si = 0; si < n_sym; ++si) {
            const double dj = j - est.symbols[static_cast<size_t>(si)];
            for (size_t mm = 0; mm < f.size(); ++mm) {
              const double di = i - f[mm];
              const double d2 = di * di + dj * dj;
              if (d2 < best) {
                best = d2;
                bsi = si;
                bm = static_cast<int>(mm);
              }
            }
          }
          for (int r = 0; r < R; ++r)
            out.set(offset4(out.shape, i, j, r, k),
                    est.values[static_cast<size_t>(k)].cval(est.index(k, bm, bsi, r)));
        }
    }
    return out;
  }

  // Frequency profiles at each pilot symbol, then a time pass.
  detail::CubicSpline sre, sim;
  std::vector<double> yre, yim;
  // profiles[k]: [F, n_sym] complex values per receive antenna, flattened.
  std::vector<std::complex<double>> prof(static_cast<size_t>(F) * n_sym * R);
  for (int k = 0; k < T; ++k) {
    const auto& f = est.freq[static_cast<size_t>(k)];
    const auto& v = est.values[static_cast<size_t>(k)];
    for (int si = 0; si < n_sym; ++si)
      for (int r = 0; r < R; ++r) {
        yre.resize(f.size());
        yim.resize(f.size());
        for (size_t mm = 0; mm < f.size(); ++mm) {
          const auto c = v.cval(est.index(k, static_cast<int>(mm), si, r));
          yre[mm] = c.real();
          yim[mm] = c.imag();
        }
        sre.build(f, yre);
        sim.build(f, yim);
        for (int i = 0; i < F; ++i)
          prof[(static_cast<size_t>(i) * n_sym + si) * R + r] = {sre.eval(i), sim.eval(i)};
      }
    for (int j = 0; j < S; ++j) {
      // Bracketing pilot symbols for the linear time pass.
      int lo = 0;
      while (lo + 1 < n_sym && est.symbols[static_cast<size_t>(lo + 1)] <= j) ++lo;
      int hi = std::min(lo + 1, n_sym - 1);
      double w = 0.0;
      const int slo = est.symbols[static_cast<size_t>(lo)], shi = est.symbols[static_cast<size_t>(hi)];
      if (j <= slo) {
        hi = lo;
      } else if (j >= shi) {
        lo = hi;
      } else {
        w = static_cast<double>(j - slo) / static_cast<double>(shi - slo);
      }
      for (int i = 0; i < F; ++i)
        for (int r = 0; r < R; ++r) {
          const auto a = prof[(static_cast<size_t>(i) * n_sym + lo) * R + r];
          const auto b = prof[(static_cast<size_t>(i) * n_sym + hi) * R + r];
          out.set(offset4(out.shape, i, j, r, k), (1.0 - w) * a + w * b);
        }
    }
  }
  return out;
}

// Equalized data grid with the per-layer noise variance the demapper needs.
struct EqualizedGrid {
  Tensor<double> x_hat;      // [F, S, N_T] complex
  Tensor<double> nu;         // [F, S, N_T] real, diagonal of the error covariance
  bool regularized = false;  // a singular zero-noise system needed a ridge
};

// Per resource element: x_hat = (H^H H + sigma2 I)^{-1} H^H y. The error
// covariance sigma2 (H^H H + sigma2 I)^{-1} supplies nu.
inline EqualizedGrid lmmse_equalize(const Tensor<double>& h_hat, const Tensor<double>& y,
                                    double sigma2_hat) {
  if (h_hat.shape.size() != 4 || !h_hat.is_complex())
    throw ShapeError("lmmse_equalize expects a complex [F, S, N_R, N_T] channel estimate");
  if (y.shape.size() != 3 || y.shape[0] != h_hat.shape[0] || y.shape[1] != h_hat.shape[1] ||
      y.shape[2] != h_hat.shape[2] || !y.is_complex())
    throw ShapeError("received grid does not match the channel estimate");
  if (sigma2_hat < 0) throw ConfigError("noise variance must be non-negative");

  const int F = h_hat.shape[0], S = h_hat.shape[1], R = h_hat.shape[2], T = h_hat.shape[3];
  EqualizedGrid g;
  g.x_hat = Tensor<double>::complex({F, S, T});
  g.nu = Tensor<double>::real({F, S, T});

  Eigen::MatrixXcd H(R, T), A(T, T), Ainv(T, T);
  Eigen::VectorXcd yv(R), xh(T);
  Eigen::LLT<Eigen::MatrixXcd> llt;
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j) {
      for (int r = 0; r < R; ++r) {
        yv(r) = y.cval(offset3(y.shape, i, j, r));
        for (int t = 0; t < T; ++t) H(r, t) = h_hat.cval(offset4(h_hat.shape, i, j, r, t));
      }
      A.noalias() = H.adjoint() * H;
      A.diagonal().array() += sigma2_hat;
      if (sigma2_hat > 0) {
        llt.compute(A);
        Ainv = llt.solve(Eigen::MatrixXcd::Identity(T, T));
      } else {
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(A);
        if (!lu.isInvertible()) {
          A.diagonal().array() += 1e-12;
          g.regularized = true;
          lu.compute(A);
        }
        Ainv = lu.inverse();
      }
      xh.noalias() = Ainv * (H.adjoint() * yv);
      for (int t = 0; t < T; ++t) {
        g.x_hat.set(offset3(g.x_hat.shape, i, j, t), xh(t));
        g.nu.re[static_cast<size_t>(offset3(g.nu.shape, i, j, t))] =
            sigma2_hat * Ainv(t, t).real();
      }
    }
  return g;
}

// Max-log-MAP LLRs: (min over bit-1 points of |x_hat - c|^2 minus min over
// bit-0 points) / nu, so positive favors bit 0.
inline Tensor<double> maxlog_demap(const Tensor<double>& x_hat, const Tensor<double>& nu,
                                   Modulation m) {
  if (x_hat.shape.size() != 3 || !x_hat.is_complex())
    throw ShapeError("maxlog_demap expects a complex [F, S, N_T] grid");
  if (nu.shape != x_hat.shape || nu.is_complex())
    throw ShapeError("noise variance grid must be real with the equalized grid's shape");
  const int nb = bits_per_symbol(m);
  const auto pts = constellation(m);
  auto out = Tensor<double>::real({x_hat.shape[0], x_hat.shape[1], x_hat.shape[2], nb});

  double min0[4], min1[4];
  const size_t n = x_hat.re.size();
  for (size_t e = 0; e < n; ++e) {
    const double v = nu.re[e];
    if (v <= 0) throw NumericError("demapper needs a positive noise variance");
    for (int b = 0; b < nb; ++b)
      min0[b] = min1[b] = std::numeric_limits<double>::infinity();
    const std::complex<double> xh{x_hat.re[e], x_hat.im[e]};
    for (size_t c = 0; c < pts.size(); ++c) {
      const double d2 = std::norm(xh - pts[c]);
      for (int b = 0; b < nb; ++b) {
        if ((c >> (nb - 1 - b)) & 1) {
          min1[b] = std::min(min1[b], d2);
        } else {
          min0[b] = std::min(min0[b], d2);
        }
      }
    }
    for (int b = 0; b < nb; ++b)
      out.re[e * static_cast<size_t>(nb) + static_cast<size_t>(b)] = (min1[b] - min0[b]) / v;
  }
  return out;
}

struct BerBin {
  double snr_db_center = 0;
  uint64_t bit_errors = 0;
  uint64_t bit_total = 0;

  double ber() const {
    return bit_total ? static_cast<double>(bit_errors) / static_cast<double>(bit_total) : 0.0;
  }
};

// Bit error accumulator, bucketed by SNR.
class BerRecord {
 public:
  explicit BerRecord(double bin_width_db = 1.0) : width_(bin_width_db) {
    if (bin_width_db <= 0) throw ConfigError("BER bin width must be positive");
  }

  // Hard decision by LLR sign (zero counts as bit 0) on masked data REs.
  void add(const Tensor<double>& llrs, const std::vector<uint8_t>& tx_bits,
           const std::vector<uint8_t>& mask, double snr_db) {
    if (llrs.shape.size() != 4 || llrs.is_complex())
      throw ShapeError("BER accumulation expects real [F, S, N_T, N_b] LLRs");
    const int F = llrs.shape[0], S = llrs.shape[1], T = llrs.shape[2], nb = llrs.shape[3];
    if (mask.size() != static_cast<size_t>(F) * S || tx_bits.size() != llrs.re.size())
      throw ShapeError("LLR, bit, and mask shapes disagree");
    const int64_t key = std::llround(snr_db / width_);
    auto& bin = bins_[key];
    bin.snr_db_center = static_cast<double>(key) * width_;
    for (int i = 0; i < F; ++i)
      for (int j = 0; j < S; ++j) {
        if (!mask[static_cast<size_t>(i) * S + j]) continue;
        const size_t base = (static_cast<size_t>(i) * S + j) * static_cast<size_t>(T * nb);
        for (int q = 0; q < T * nb; ++q) {
          const uint8_t hard = llrs.re[base + static_cast<size_t>(q)] < 0 ? 1 : 0;
          bin.bit_errors += hard != tx_bits[base + static_cast<size_t>(q)];
          ++bin.bit_total;
        }
      }
  }

  void merge(const BerRecord& other) {
    if (other.width_ != width_) throw ConfigError("cannot merge BER records with different bins");
    for (const auto& [k, b] : other.bins_) {
      auto& mine = bins_[k];
      mine.snr_db_center = b.snr_db_center;
      mine.bit_errors += b.bit_errors;
      mine.bit_total += b.bit_total;
    }
  }

  const std::map<int64_t, BerBin>& bins() const { return bins_; }
  double bin_width() const { return width_; }

  std::pair<uint64_t, uint64_t> totals() const {
    uint64_t e = 0, t = 0;
    for (const auto& [k, b] : bins_) {
      e += b.bit_errors;
      t += b.bit_total;
    }
    return {e, t};
  }

  double total_ber() const {
    auto [e, t] = totals();
    return t ? static_cast<double>(e) / static_cast<double>(t) : 0.0;
  }

 private:
  double width_;
  std::map<int64_t, BerBin> bins_;
};

inline BerRecord uncoded_ber(const Tensor<double>& llrs, const std::vector<uint8_t>& tx_bits,
                             const std::vector<uint8_t>& mask, double snr_db = 0.0) {
  BerRecord r;
  r.add(llrs, tx_bits, mask, snr_db);
  return r;
}

inline void write_ber_csv_header(std::ostream& os) {
  os << "snr_db_bin_center,bit_errors,bit_total,ber,receiver_id,pilot_config\n";
}

inline void write_ber_csv_rows(std::ostream& os, const BerRecord& r,
                               const std::string& receiver_id, const std::string& pilot_config) {
  char buf[96];
  for (const auto& [k, b] : r.bins()) {
    std::snprintf(buf, sizeof(buf), "%.6g,%llu,%llu,%.10g,", b.snr_db_center,
                  static_cast<unsigned long long>(b.bit_errors),
                  static_cast<unsigned long long>(b.bit_total), b.ber());
    os << buf << receiver_id << ',' << pilot_config << '\n';
  }
}

// Practical front end: raw estimates at pilot REs, CDM pair combining, then
// interpolation to the full grid.
inline Tensor<double> estimate_channel(const Tensor<double>& y, const PilotPattern& p,
                                       InterpMode mode) {
  return interpolate(cdm_combine(raw_estimate(y, p), p), mode);
}

// Equalize and demap in one step (sigma2 must be positive so the demapper
// has a usable noise variance).
inline Tensor<double> lmmse_llrs(const Tensor<double>& h_hat, const Tensor<double>& y,
                                 double sigma2, Modulation m) {
  auto eq = lmmse_equalize(h_hat, y, sigma2);
  return maxlog_demap(eq.x_hat, eq.nu, m);
}

}  // namespace mimorx
