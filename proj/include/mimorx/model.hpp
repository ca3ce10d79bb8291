// Trainable MIMO receiver model.
//
// Two variants share the same skeleton: complex convolutional front ends
// feed a combining stage, whose output a real separable-convolution
// backbone maps to per-bit LLRs.
//   kMrc:            channel and signal front ends -> per-RE matched
//                    combining over M_T virtual streams (mrc_combine).
//   kMultiplicative: one joint front end over [Y | H_est] -> learned
//                    channel expansion, imaginary-plane scaling and
//                    elementwise products (multiplicative_transform).
//
// Front ends are residual around a fixed channel wiring: the final linear
// layer and each block's second conv start at zero, so a freshly built
// model runs plain matched combining of the interpolated channel estimate
// (virtual streams beyond the physical layers start as cyclic copies of
// the physical columns). LLR sign convention matches the classic demapper:
// positive means bit 0.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mimorx/config_io.hpp"
#include "mimorx/ops.hpp"
#include "mimorx/rng.hpp"
#include "mimorx/rx_ops.hpp"

namespace mimorx {

enum class TransformKind { kMrc, kMultiplicative };

inline std::string transform_kind_to_string(TransformKind k) {
  return k == TransformKind::kMrc ? "mrc" : "multiplicative";
}

inline TransformKind transform_kind_from_string(const std::string& s) {
  if (s == "mrc") return TransformKind::kMrc;
  if (s == "multiplicative" || s == "mult") return TransformKind::kMultiplicative;
  throw ConfigError("unknown transform kind '" + s + "' (want mrc|multiplicative)");
}

struct TransformConfig {
  TransformKind kind = TransformKind::kMrc;

  // Link dimensions the model is built for (any F x S grid works).
  int n_tx = 2;
  int n_rx = 4;
  int n_bits = 2;  // bits per layer symbol

  int m_t = 4;                // virtual streams (mrc kind), >= n_tx
  int m_in = 32, m_ex = 48;   // multiplicative kind; m_ex mod 3 == 0

  int front_blocks = 2;       // residual blocks per complex front end
  int front_channels = 32;
  int backbone_blocks = 4;    // real separable-conv residual blocks
  int backbone_channels = 64;
  std::vector<int> backbone_dilations;  // per block; empty -> 1,2,3,3,...

  bool concat_inputs = false;  // also feed raw Y / H_est channels to the backbone
  bool feed_pilots = false;    // append the pilot reference grid to the backbone input

  int m_out() const { return 2 * m_ex / 3; }

  std::vector<int> dilations() const {
    if (!backbone_dilations.empty()) return backbone_dilations;
    std::vector<int> d(static_cast<size_t>(backbone_blocks));
    for (int b = 0; b < backbone_blocks; ++b) d[static_cast<size_t>(b)] = std::min(b + 1, 3);
    return d;
  }

  // Complex channel count entering the backbone.
  int feature_channels() const {
    int c = kind == TransformKind::kMrc ? m_t : m_out();
    if (concat_inputs) c += n_rx + n_rx * n_tx;
    if (feed_pilots) c += n_tx;
    return c;
  }

  void validate() const {
    if (n_tx < 1 || n_rx < 1) throw ConfigError("transform config: antenna counts must be >= 1");
    if (n_bits != 2 && n_bits != 4) throw ConfigError("transform config: n_bits must be 2 or 4");
    if (front_blocks < 0 || backbone_blocks < 1)
      throw ConfigError("transform config: bad block counts");
    if (front_channels < 1 || backbone_channels < 1)
      throw ConfigError("transform config: channel counts must be >= 1");
    if (!backbone_dilations.empty()) {
      if (static_cast<int>(backbone_dilations.size()) != backbone_blocks)
        throw ConfigError("transform config: dilation list length != backbone blocks");
      for (int d : backbone_dilations)
        if (d < 1) throw ConfigError("transform config: dilations must be >= 1");
    }
    if (kind == TransformKind::kMrc) {
      if (m_t < n_tx) throw ConfigError("transform config: m_t must be >= n_tx");
    } else {
      if (m_in < 1) throw ConfigError("transform config: m_in must be >= 1");
      if (m_ex < 3 || m_ex % 3 != 0)
        throw ConfigError("transform config: m_ex must be a positive multiple of 3");
    }
  }
};

inline Json transform_config_to_json(const TransformConfig& c) {
  return Json{{"kind", transform_kind_to_string(c.kind)},
              {"n_tx", c.n_tx},
              {"n_rx", c.n_rx},
              {"n_bits", c.n_bits},
              {"m_t", c.m_t},
              {"m_in", c.m_in},
              {"m_ex", c.m_ex},
              {"front_blocks", c.front_blocks},
              {"front_channels", c.front_channels},
              {"backbone_blocks", c.backbone_blocks},
              {"backbone_channels", c.backbone_channels},
              {"backbone_dilations", c.backbone_dilations},
              {"concat_inputs", c.concat_inputs},
              {"feed_pilots", c.feed_pilots}};
}

inline TransformConfig transform_config_from_json(const Json& j) {
  TransformConfig c;
  try {
    c.kind = transform_kind_from_string(j.at("kind").get<std::string>());
    c.n_tx = j.at("n_tx").get<int>();
    c.n_rx = j.at("n_rx").get<int>();
    c.n_bits = j.at("n_bits").get<int>();
    c.m_t = j.value("m_t", 2 * c.n_tx);
    c.m_in = j.value("m_in", 32);
    c.m_ex = j.value("m_ex", 48);
    c.front_blocks = j.value("front_blocks", 2);
    c.front_channels = j.value("front_channels", 32);
    c.backbone_blocks = j.value("backbone_blocks", 4);
    c.backbone_channels = j.value("backbone_channels", 64);
    c.backbone_dilations = j.value("backbone_dilations", std::vector<int>{});
    c.concat_inputs = j.value("concat_inputs", false);
    c.feed_pilots = j.value("feed_pilots", false);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad transform config: ") + e.what());
  }
  c.validate();
  return c;
}

// Trainable leaves addressed by name. Insertion order is the canonical
// parameter order (checkpoints and optimizer state both follow it).
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_of(name) >= 0) throw ConfigError("duplicate parameter name " + name);
    names_.push_back(name);
    vars_.push_back(Var<T>::leaf(std::move(init), /*needs_grad=*/true));
    return vars_.back();
  }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return -1;
  }

  const Var<T>& at(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) throw ConfigError("unknown parameter " + name);
    return vars_[static_cast<size_t>(i)];
  }

  size_t size() const { return vars_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Var<T>& var(size_t i) { return vars_[i]; }
  const Var<T>& var(size_t i) const { return vars_[i]; }

  int64_t total_entries() const {
    int64_t n = 0;
    for (const auto& v : vars_) n += static_cast<int64_t>(v.value().re.size() + v.value().im.size());
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
};

// Learned multiplicative combining for one grid of complex features
// z [.., M_in]: expand channels with w1 [M_ex, M_in], rescale the imaginary
// plane with real w2 [M_ex] (learned generalized conjugation), split into
// three equal channel groups and emit [g1 (*) g2, g3] -> [.., 2*M_ex/3].
template <typename T>
Var<T> multiplicative_transform(const Var<T>& z, const Var<T>& w1, const Var<T>& w2) {
  const int me = w1.value().shape[0];
  if (me % 3 != 0) throw ConfigError("multiplicative_transform: expansion count must divide by 3");
  Var<T> zsc = scale_imag(linear(z, w1), w2);
  const int g = me / 3;
  Var<T> z1 = slice_channels(zsc, 0, g);
  Var<T> z2 = slice_channels(zsc, g, 2 * g);
  Var<T> z3 = slice_channels(zsc, 2 * g, me);
  return concat_channels<T>({mul(z1, z2), z3});
}

template <typename T>
class NeuralReceiver {
 public:
  TransformConfig cfg;
  ParamStore<T> params;

  static NeuralReceiver init(const TransformConfig& cfg, uint64_t seed) {
    cfg.validate();
    NeuralReceiver m;
    m.cfg = cfg;
    Rng rng = Rng::derive(seed, "model-init", 0);
    const int R = cfg.n_rx, Tx = cfg.n_tx;
    if (cfg.kind == TransformKind::kMrc) {
      m.add_front_end("chan_front", R * Tx, cfg.m_t * R, rng);
      m.add_front_end("sig_front", R, R, rng);
    } else {
      m.add_front_end("joint_front", R + R * Tx, cfg.m_in, rng);
      m.params.add("mult.expand",
                   randn_complex(Shape{cfg.m_ex, cfg.m_in}, std::sqrt(T(0.5) / T(cfg.m_in)), rng));
      auto ones = Tensor<T>::real({cfg.m_ex});
      ones.fill(T(1));
      m.params.add("mult.imag_scale", std::move(ones));
    }
    m.add_backbone(2 * cfg.feature_channels(), rng);
    return m;
  }

  // Channel branch wiring: output channel m*n_rx + r starts as the estimate
  // entry (r, m mod n_tx), i.e. row m of the virtual channel is a copy of
  // physical column m mod n_tx.
  std::vector<int> channel_wire() const {
    std::vector<int> w(static_cast<size_t>(cfg.m_t) * cfg.n_rx);
    for (int mt = 0; mt < cfg.m_t; ++mt)
      for (int r = 0; r < cfg.n_rx; ++r)
        w[static_cast<size_t>(mt) * cfg.n_rx + r] = r * cfg.n_tx + (mt % cfg.n_tx);
    return w;
  }

  // One complex front end: fixed wiring bypass + learned residual stack.
  Var<T> front_end(const std::string& prefix, const Var<T>& x) const {
    const int cin = x.value().shape.back();
    const int cout = params.at(prefix + ".head.w").value().shape[0];
    Var<T> h = conv2d_full(x, params.at(prefix + ".entry.w"));
    for (int b = 0; b < cfg.front_blocks; ++b) {
      const std::string base = prefix + ".b" + std::to_string(b);
      Var<T> t = crelu(conv2d_full(h, params.at(base + ".c1.w")));
      t = conv2d_full(t, params.at(base + ".c2.w"));
      h = add(h, t);
    }
    h = linear(h, params.at(prefix + ".head.w"));
    std::vector<int> wire(static_cast<size_t>(cout));
    if (prefix == "chan_front") {
      wire = channel_wire();
    } else {
      for (int c = 0; c < cout; ++c) wire[static_cast<size_t>(c)] = c % cin;
    }
    return add(gather_channels(x, wire), h);
  }

  // Front ends of the mrc kind: virtual channel [F,S,M_T,N_R] plus the
  // processed signal [F,S,N_R].
  std::pair<Var<T>, Var<T>> front_mrc(const Var<T>& y, const Var<T>& h_est) const {
    check_inputs(y, h_est);
    const int F = y.value().shape[0], S = y.value().shape[1];
    Var<T> hc = reshape(h_est, {F, S, cfg.n_rx * cfg.n_tx});
    Var<T> hv = front_end("chan_front", hc);
    hv = reshape(hv, {F, S, cfg.m_t, cfg.n_rx});
    Var<T> yp = front_end("sig_front", y);
    return {hv, yp};
  }

  // Complex combining-stage output: [F,S,M_T] (mrc) or [F,S,M_out] (mult).
  Var<T> combined_features(const Var<T>& y, const Var<T>& h_est) const {
    if (cfg.kind == TransformKind::kMrc) {
      auto [hv, yp] = front_mrc(y, h_est);
      return mrc_combine(hv, yp);
    }
    check_inputs(y, h_est);
    const int F = y.value().shape[0], S = y.value().shape[1];
    Var<T> hc = reshape(h_est, {F, S, cfg.n_rx * cfg.n_tx});
    Var<T> z = front_end("joint_front", concat_channels<T>({y, hc}));
    return multiplicative_transform(z, params.at("mult.expand"), params.at("mult.imag_scale"));
  }

  // Real backbone over complex features: entry conv, dilated residual
  // blocks of depthwise + pointwise convs, 1x1 head to [F,S,N_T,N_b] LLRs.
  Var<T> backbone(const Var<T>& features) const {
    Var<T> x = complex_to_real_channels(features);
    x = add_channel_bias(conv2d_full(x, params.at("backbone.entry.w")), params.at("backbone.entry.b"));
    const std::vector<int> dil = cfg.dilations();
    for (int b = 0; b < cfg.backbone_blocks; ++b) {
      const std::string base = "backbone.b" + std::to_string(b);
      const int d = dil[static_cast<size_t>(b)];
      Var<T> t = relu(x);
      t = conv2d_depthwise(t, params.at(base + ".dw1.w"), d);
      t = add_channel_bias(linear(t, params.at(base + ".pw1.w")), params.at(base + ".pw1.b"));
      t = relu(t);
      t = conv2d_depthwise(t, params.at(base + ".dw2.w"), d);
      t = add_channel_bias(linear(t, params.at(base + ".pw2.w")), params.at(base + ".pw2.b"));
      x = add(x, t);
    }
    x = relu(x);
    x = add_channel_bias(linear(x, params.at("backbone.head.w")), params.at("backbone.head.b"));
    const int F = x.value().shape[0], S = x.value().shape[1];
    return reshape(x, {F, S, cfg.n_tx, cfg.n_bits});
  }

  // Full graph: LLRs [F,S,N_T,N_b], positive = bit 0.
  Var<T> llrs(const Var<T>& y, const Var<T>& h_est, const Var<T>* pilots = nullptr) const {
    Var<T> f = combined_features(y, h_est);
    std::vector<Var<T>> parts{f};
    if (cfg.concat_inputs) {
      const int F = y.value().shape[0], S = y.value().shape[1];
      parts.push_back(y);
      parts.push_back(reshape(h_est, {F, S, cfg.n_rx * cfg.n_tx}));
    }
    if (cfg.feed_pilots) {
      if (!pilots) throw ConfigError("model expects a pilot reference grid (feed_pilots on)");
      detail::require(pilots->value().rank() == 3 && pilots->value().shape[2] == cfg.n_tx,
                      "llrs: pilots must be [F,S,N_T]");
      parts.push_back(*pilots);
    }
    return backbone(parts.size() == 1 ? f : concat_channels(parts));
  }

  // Inference entry point for plain tensors.
  Tensor<T> forward(const Tensor<T>& y, const Tensor<T>& h_est,
                    const Tensor<T>* pilots = nullptr) const {
    Var<T> yv = Var<T>::constant(y);
    Var<T> hv = Var<T>::constant(h_est);
    if (pilots) {
      Var<T> pv = Var<T>::constant(*pilots);
      return llrs(yv, hv, &pv).value();
    }
    return llrs(yv, hv).value();
  }

  // Expansion matrix of the multiplicative kind (L1-regularized during
  // training); undefined Var for the mrc kind.
  Var<T> w1() const {
    return cfg.kind == TransformKind::kMultiplicative ? params.at("mult.expand") : Var<T>{};
  }

  static Tensor<T> randn_complex(Shape s, T plane_std, Rng& rng) {
    auto t = Tensor<T>::complex(std::move(s));
    for (auto& v : t.re) v = static_cast<T>(rng.normal()) * plane_std;
    for (auto& v : t.im) v = static_cast<T>(rng.normal()) * plane_std;
    return t;
  }

  static Tensor<T> randn_real(Shape s, T std, Rng& rng) {
    auto t = Tensor<T>::real(std::move(s));
    for (auto& v : t.re) v = static_cast<T>(rng.normal()) * std;
    return t;
  }

 private:
  void check_inputs(const Var<T>& y, const Var<T>& h_est) const {
    const auto& yv = y.value();
    const auto& hv = h_est.value();
    detail::require(yv.rank() == 3 && yv.is_complex(), "receiver: y must be complex [F,S,N_R]");
    detail::require(hv.rank() == 4 && hv.is_complex(),
                    "receiver: h_est must be complex [F,S,N_R,N_T]");
    detail::require(yv.shape[2] == cfg.n_rx && hv.shape[2] == cfg.n_rx && hv.shape[3] == cfg.n_tx,
                    "receiver: antenna/layer dims disagree with model config");
    detail::require(yv.shape[0] == hv.shape[0] && yv.shape[1] == hv.shape[1],
                    "receiver: y and h_est grids disagree");
  }

  // Complex residual stack mapping cin -> cout channels. The head linear and
  // every second block conv start at zero: the whole branch is initially the
  // wiring bypass alone.
  void add_front_end(const std::string& prefix, int cin, int cout, Rng& rng) {
    const int C = cfg.front_channels;
    const T entry_std = std::sqrt(T(0.5) / T(9 * cin));
    const T block_std = std::sqrt(T(0.5) / T(9 * C));
    params.add(prefix + ".entry.w", randn_complex({3, 3, cin, C}, entry_std, rng));
    for (int b = 0; b < cfg.front_blocks; ++b) {
      const std::string base = prefix + ".b" + std::to_string(b);
      params.add(base + ".c1.w", randn_complex({3, 3, C, C}, block_std, rng));
      params.add(base + ".c2.w", Tensor<T>::complex({3, 3, C, C}));
    }
    params.add(prefix + ".head.w", Tensor<T>::complex({cout, C}));
  }

  void add_backbone(int cin, Rng& rng) {
    const int C = cfg.backbone_channels;
    params.add("backbone.entry.w", randn_real({3, 3, cin, C}, std::sqrt(T(2) / T(9 * cin)), rng));
    params.add("backbone.entry.b", Tensor<T>::real({C}));
    for (int b = 0; b < cfg.backbone_blocks; ++b) {
      const std::string base = "backbone.b" + std::to_string(b);
      params.add(base + ".dw1.w", randn_real({3, 3, C}, std::sqrt(T(2) / T(9)), rng));
      params.add(base + ".pw1.w", randn_real({C, C}, std::sqrt(T(2) / T(C)), rng));
      params.add(base + ".pw1.b", Tensor<T>::real({C}));
      params.add(base + ".dw2.w", randn_real({3, 3, C}, std::sqrt(T(2) / T(9)), rng));
      params.add(base + ".pw2.w", Tensor<T>::real({C, C}));
      params.add(base + ".pw2.b", Tensor<T>::real({C}));
    }
    const int no = cfg.n_tx * cfg.n_bits;
    params.add("backbone.head.w", randn_real({no, C}, std::sqrt(T(1) / T(C)), rng));
    params.add("backbone.head.b", Tensor<T>::real({no}));
  }
};

}  // namespace mimorx
