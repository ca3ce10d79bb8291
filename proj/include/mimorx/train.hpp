// Training loop (SNR-weighted cross entropy + L1 on the expansion matrix,
// adaptive-moment optimizer, layer-shuffle augmentation) and paired BER
// evaluation of the classic and neural receivers on the same TTIs.
//
// Everything a step consumes (batch indices, shuffle permutations) comes
// from an Rng substream derived from (seed, step index), so a resumed run
// replays the exact step sequence of an uninterrupted one.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mimorx/checkpoint.hpp"
#include "mimorx/classic_rx.hpp"
#include "mimorx/dataset_io.hpp"
#include "mimorx/model.hpp"
#include "mimorx/tti.hpp"

namespace mimorx {

// Loss exceeded 10x its initial value for a sustained stretch, or went
// non-finite; the caller should abort with the trace written so far.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch = 2;
  int iterations = 1000;
  double base_lr = 1e-3;
  int warmup_steps = 500;   // linear ramp, then cosine decay to zero
  double alpha = 1e-5;      // L1 coefficient on the expansion matrix
  uint64_t seed = 1;
  bool augment = true;      // layer-shuffle augmentation
  int checkpoint_every = 2000;  // steps between checkpoint callbacks (0 = never)

  void validate() const {
    if (batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (iterations < 1) throw ConfigError("train config: iterations must be >= 1");
    if (!(base_lr > 0)) throw ConfigError("train config: base_lr must be positive");
    if (warmup_steps < 0) throw ConfigError("train config: warmup_steps must be >= 0");
    if (alpha < 0) throw ConfigError("train config: alpha must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
  }
};

inline Json train_config_to_json(const TrainConfig& c) {
  return Json{{"batch", c.batch},           {"iterations", c.iterations},
              {"base_lr", c.base_lr},       {"warmup_steps", c.warmup_steps},
              {"alpha", c.alpha},           {"seed", c.seed},
              {"augment", c.augment},       {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  try {
    c.batch = j.value("batch", c.batch);
    c.iterations = j.value("iterations", c.iterations);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.alpha = j.value("alpha", c.alpha);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

// Learning rate for 1-based step s: linear warmup to base, cosine decay to
// zero over the remaining steps (never reaching zero before the last step).
inline double lr_at_step(int64_t s, int64_t total, int64_t warmup, double base) {
  if (warmup > 0 && s <= warmup) return base * static_cast<double>(s) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double t =
      static_cast<double>(s - warmup - 1) / static_cast<double>(std::max<int64_t>(1, total - warmup));
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<Tensor<float>> m, v;  // first/second moments, parameter order
  int64_t step = 0;                 // completed updates (drives bias correction)
};

inline AdamState make_adam_state(const ParamStore<float>& params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    st.m.push_back(Tensor<float>::like(params.var(i).value()));
    st.v.push_back(Tensor<float>::like(params.var(i).value()));
  }
  return st;
}

inline void adam_step(ParamStore<float>& params, AdamState& st, float lr, float beta1 = 0.9f,
                      float beta2 = 0.999f, float eps = 1e-8f) {
  if (st.m.size() != params.size()) throw ConfigError("optimizer state size mismatch");
  ++st.step;
  const float c1 = 1.0f - std::pow(beta1, static_cast<float>(st.step));
  const float c2 = 1.0f - std::pow(beta2, static_cast<float>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& node = *params.var(i).node();
    auto update_plane = [&](std::vector<float>& p, std::vector<float>& m, std::vector<float>& v,
                            const std::vector<float>* g) {
      for (size_t k = 0; k < p.size(); ++k) {
        const float gk = g ? (*g)[k] : 0.0f;
        m[k] = beta1 * m[k] + (1.0f - beta1) * gk;
        v[k] = beta2 * v[k] + (1.0f - beta2) * gk * gk;
        p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      }
    };
    const bool has_grad = !node.grad.re.empty();
    update_plane(node.value.re, st.m[i].re, st.v[i].re, has_grad ? &node.grad.re : nullptr);
    update_plane(node.value.im, st.m[i].im, st.v[i].im, has_grad ? &node.grad.im : nullptr);
    node.grad = Tensor<float>{};
  }
}

inline void save_adam(const std::string& path, const ParamStore<float>& params,
                      const AdamState& st) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(2 * params.size());
  for (size_t i = 0; i < params.size(); ++i) tensors.push_back({"adam.m." + params.name(i), st.m[i]});
  for (size_t i = 0; i < params.size(); ++i) tensors.push_back({"adam.v." + params.name(i), st.v[i]});
  write_checkpoint(path, tensors);
}

inline AdamState load_adam(const std::string& path, const ParamStore<float>& params,
                           int64_t step) {
  auto tensors = read_checkpoint(path);
  if (tensors.size() != 2 * params.size())
    throw ConfigError("optimizer checkpoint does not match the model parameter list");
  AdamState st;
  st.step = step;
  for (size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].name != "adam.m." + params.name(i) ||
        tensors[params.size() + i].name != "adam.v." + params.name(i))
      throw ConfigError("optimizer checkpoint tensor order does not match the model");
    st.m.push_back(std::move(tensors[i].value));
    st.v.push_back(std::move(tensors[params.size() + i].value));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Loss

struct LossBreakdown {
  double weighted_bce = 0;       // mean over the batch of weight_q * CE_q
  double l1_term = 0;            // alpha * ||W1||_L1
  double total = 0;              // weighted_bce + l1_term
  std::vector<double> weights;   // per-sample log2(1 + snr)
};

// SNR weight of one TTI: zero at snr 0, 1 at snr 1, 2 at snr 3.
inline double snr_weight(double snr_linear) {
  if (snr_linear < 0) throw ConfigError("snr_linear must be >= 0");
  return std::log2(1.0 + snr_linear);
}

// Batch loss. `tx_bits` carries the label bits as 0/1 reals; the LLR sign
// convention (positive means bit 0) makes sigmoid(-LLR) the bit-1
// probability, which folds into the cross entropy as target 1 - bit.
// LLRs are clipped at +-30 inside the BCE.
template <typename T>
std::pair<Var<T>, LossBreakdown> weighted_bce_loss(const std::vector<Var<T>>& llrs,
                                                   const std::vector<Tensor<T>>& tx_bits,
                                                   const std::vector<Tensor<T>>& masks,
                                                   const std::vector<double>& snr_linear,
                                                   const Var<T>& w1, T alpha) {
  if (llrs.empty() || llrs.size() != tx_bits.size() || llrs.size() != masks.size() ||
      llrs.size() != snr_linear.size())
    throw ConfigError("weighted_bce_loss: batch arrays disagree");
  const auto B = static_cast<T>(llrs.size());
  LossBreakdown bd;
  Var<T> total;
  for (size_t q = 0; q < llrs.size(); ++q) {
    Tensor<T> target = tx_bits[q];
    for (auto& v : target.re) v = T(1) - v;
    Var<T> ce = bce_with_logits_masked(llrs[q], target, masks[q], T(30));
    const double w = snr_weight(snr_linear[q]);
    bd.weights.push_back(w);
    Var<T> wce = scale(ce, static_cast<T>(w) / B);
    total = total.defined() ? add(total, wce) : wce;
  }
  bd.weighted_bce = static_cast<double>(total.value().re[0]);
  if (w1.defined() && alpha > 0) {
    Var<T> l1 = scale(l1_norm(w1), alpha);
    bd.l1_term = static_cast<double>(l1.value().re[0]);
    total = add(total, l1);
  }
  bd.total = static_cast<double>(total.value().re[0]);
  if (!std::isfinite(bd.total))
    throw NumericError("non-finite training loss " + std::to_string(bd.total));
  return {total, bd};
}

// ---------------------------------------------------------------------------
// Layer-shuffle augmentation

inline std::vector<int> draw_permutation(int n, Rng& rng) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(p[static_cast<size_t>(i)], p[rng.uniform_int(static_cast<uint64_t>(i) + 1)]);
  return p;
}

// Reorders an axis of length n with `trailing` contiguous entries per index:
// new position k takes old position perm[k].
template <typename V>
void permute_axis(V& flat, int n, int64_t trailing, const std::vector<int>& perm) {
  V out(flat.size());
  const int64_t lead = static_cast<int64_t>(flat.size()) / (n * trailing);
  for (int64_t l = 0; l < lead; ++l)
    for (int k = 0; k < n; ++k) {
      const int64_t dst = (l * n + k) * trailing;
      const int64_t src = (l * n + perm[static_cast<size_t>(k)]) * trailing;
      for (int64_t t = 0; t < trailing; ++t) out[dst + t] = flat[src + t];
    }
  flat = std::move(out);
}

// Relabels the transmit streams: layer k of the output takes layer perm[k]'s
// bits, true-channel column, and (when given) raw-estimate column. Y and the
// receive dimension are untouched.
inline TtiSample shuffle_layers(const TtiSample& s, Rng& rng, Tensor<double>* raw_est = nullptr) {
  const int T = s.pattern.n_tx;
  const int nb = static_cast<int>(s.tx_bits.size() / (s.data_mask.size() * static_cast<size_t>(T)));
  const std::vector<int> perm = draw_permutation(T, rng);
  TtiSample out = s;
  permute_axis(out.tx_bits, T, nb, perm);
  if (out.h_true.is_complex()) {
    permute_axis(out.h_true.re, T, 1, perm);
    permute_axis(out.h_true.im, T, 1, perm);
  }
  if (raw_est) {
    if (raw_est->shape.back() != T) throw ShapeError("shuffle_layers: raw estimate layer dim");
    permute_axis(raw_est->re, T, 1, perm);
    permute_axis(raw_est->im, T, 1, perm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample assembly

// One TTI prepared for the model: received grid, nearest-pilot channel
// estimate, per-bit labels and mask, optional pilot reference grid.
struct TrainSample {
  Tensor<float> y;       // [F,S,N_R] complex
  Tensor<float> h_est;   // [F,S,N_R,N_T] complex
  Tensor<float> bits;    // [F,S,N_T,N_b] real 0/1
  Tensor<float> mask;    // [F,S,N_T,N_b] real, 1 on data REs
  Tensor<float> pilots;  // [F,S,N_T] complex (empty unless requested)
  double snr_linear = 1;
  double snr_db = 0;
};

inline PilotPattern pattern_for_tti(const LinkConfig& link, uint64_t tti_index) {
  return build_pilot_pattern(link, hash_combine(link.seed, splitmix64(tti_index)));
}

inline Tensor<float> pilot_reference_grid(const PilotPattern& p) {
  auto g = Tensor<float>::complex({p.F, p.S, p.n_tx});
  for (size_t si = 0; si < p.pilot_symbols.size(); ++si) {
    const int j = p.pilot_symbols[si];
    for (int i = 0; i < p.F; ++i)
      for (int k = 0; k < p.n_tx; ++k) {
        const auto v = p.values.cval(p.value_index(i, static_cast<int>(si), k));
        g.set((static_cast<int64_t>(i) * p.S + j) * p.n_tx + k,
              {static_cast<float>(v.real()), static_cast<float>(v.imag())});
      }
  }
  return g;
}

inline TrainSample make_train_sample(const StoredTti& t, const LinkConfig& link, uint64_t tti_index,
                                     bool want_pilots, Rng* shuffle_rng = nullptr) {
  const int F = link.F, S = link.S, T = link.n_tx;
  const int nb = link.bits_per_layer_symbol();
  const PilotPattern pat = pattern_for_tti(link, tti_index);

  TrainSample s;
  s.y = t.y;
  s.snr_linear = t.snr_linear();
  s.snr_db = t.snr_db;
  Tensor<double> h_est = estimate_channel(t.y.cast<double>(), pat, InterpMode::kNearest);

  std::vector<uint8_t> bits = t.tx_bits;
  if (shuffle_rng) {
    const std::vector<int> perm = draw_permutation(T, *shuffle_rng);
    permute_axis(bits, T, nb, perm);
    permute_axis(h_est.re, T, 1, perm);
    permute_axis(h_est.im, T, 1, perm);
  }
  s.h_est = h_est.cast<float>();

  s.bits = Tensor<float>::real({F, S, T, nb});
  s.mask = Tensor<float>::real({F, S, T, nb});
  for (int64_t re = 0; re < static_cast<int64_t>(F) * S; ++re) {
    const float m = t.data_mask[static_cast<size_t>(re)] ? 1.0f : 0.0f;
    for (int q = 0; q < T * nb; ++q) {
      s.bits.re[re * T * nb + q] = static_cast<float>(bits[static_cast<size_t>(re * T * nb + q)]);
      s.mask.re[re * T * nb + q] = m;
    }
  }
  if (want_pilots) s.pilots = pilot_reference_grid(pat);
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct TraceRow {
  int64_t step = 0;
  double weighted_bce = 0, l1_term = 0, total = 0, lr = 0;
};

inline void write_loss_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows) {
  os << "step,weighted_bce,l1_term,total,learning_rate\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(r.step), r.weighted_bce, r.l1_term, r.total, r.lr);
    os << buf;
  }
}

struct TrainResult {
  std::vector<TraceRow> trace;
  int64_t final_step = 0;
};

// Runs steps start_step+1 .. cfg.iterations. Each step derives its own Rng
// substream, so results do not depend on where a run was interrupted.
// `checkpoint_hook` fires every cfg.checkpoint_every steps (if nonzero).
inline TrainResult train(NeuralReceiver<float>& model, AdamState& opt,
                         const std::vector<StoredTti>& data, const LinkConfig& link,
                         const TrainConfig& cfg, int64_t start_step = 0,
                         const std::function<void(int64_t)>& checkpoint_hook = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training dataset is empty");
  if (model.cfg.n_tx != link.n_tx || model.cfg.n_rx != link.n_rx ||
      model.cfg.n_bits != link.bits_per_layer_symbol())
    throw ConfigError("model dimensions do not match the dataset link config");
  if (start_step < 0 || start_step > cfg.iterations)
    throw ConfigError("resume step outside the configured iteration range");

  TrainResult res;
  const Var<float> w1 = model.w1();
  double initial_total = -1;
  int high_loss_steps = 0;

  for (int64_t s = start_step + 1; s <= cfg.iterations; ++s) {
    Rng step_rng = Rng::derive(cfg.seed, "train-step", static_cast<uint64_t>(s));
    std::vector<Var<float>> llrs;
    std::vector<Tensor<float>> bits, masks;
    std::vector<double> snrs;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = step_rng.uniform_int(data.size());
      TrainSample ts = make_train_sample(data[static_cast<size_t>(idx)], link, idx,
                                         model.cfg.feed_pilots,
                                         cfg.augment ? &step_rng : nullptr);
      Var<float> yv = Var<float>::constant(std::move(ts.y));
      Var<float> hv = Var<float>::constant(std::move(ts.h_est));
      if (model.cfg.feed_pilots) {
        Var<float> pv = Var<float>::constant(std::move(ts.pilots));
        llrs.push_back(model.llrs(yv, hv, &pv));
      } else {
        llrs.push_back(model.llrs(yv, hv));
      }
      bits.push_back(std::move(ts.bits));
      masks.push_back(std::move(ts.mask));
      snrs.push_back(ts.snr_linear);
    }

    TraceRow row;
    row.step = s;
    row.lr = lr_at_step(s, cfg.iterations, cfg.warmup_steps, cfg.base_lr);
    try {
      auto [loss, bd] = weighted_bce_loss(llrs, bits, masks, snrs, w1, static_cast<float>(cfg.alpha));
      row.weighted_bce = bd.weighted_bce;
      row.l1_term = bd.l1_term;
      row.total = bd.total;
      backward(loss);
    } catch (const NumericError& e) {
      throw DivergenceError("aborting at step " + std::to_string(s) + ": " + e.what());
    }
    adam_step(model.params, opt, static_cast<float>(row.lr));
    res.trace.push_back(row);
    res.final_step = s;

    if (initial_total < 0) initial_total = row.total;
    high_loss_steps = row.total > 10 * initial_total ? high_loss_steps + 1 : 0;
    if (high_loss_steps >= 500)
      throw DivergenceError("loss stayed above 10x its initial value for 500 steps (step " +
                            std::to_string(s) + ", total " + std::to_string(row.total) + ")");

    if (checkpoint_hook && cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0)
      checkpoint_hook(s);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ReceiverCurve {
  std::string receiver_id;
  BerRecord record;

  ReceiverCurve(std::string id, double bin_width) : receiver_id(std::move(id)), record(bin_width) {}
};

// Paired uncoded-BER curves: the classic receivers and every model see the
// same TTIs. Needs the true channel in the dataset for the genie baseline.
inline std::vector<ReceiverCurve> evaluate(
    const std::vector<StoredTti>& data, const LinkConfig& link,
    const std::vector<std::pair<std::string, const NeuralReceiver<float>*>>& models,
    double bin_width_db = 2.0) {
  std::vector<ReceiverCurve> curves;
  curves.emplace_back("lmmse_practical", bin_width_db);
  curves.emplace_back("lmmse_genie", bin_width_db);
  for (const auto& [name, model] : models) {
    if (model->cfg.n_tx != link.n_tx || model->cfg.n_rx != link.n_rx ||
        model->cfg.n_bits != link.bits_per_layer_symbol())
      throw ConfigError("model '" + name + "' does not match the dataset link config");
    curves.emplace_back(name, bin_width_db);
  }

  for (size_t idx = 0; idx < data.size(); ++idx) {
    const StoredTti& t = data[idx];
    if (!t.h_true.is_complex())
      throw ConfigError("evaluation dataset lacks the true channel (store_h_true off)");
    const PilotPattern pat = pattern_for_tti(link, idx);
    const Tensor<double> yd = t.y.cast<double>();
    const double sigma2 = static_cast<double>(link.n_tx) / t.snr_linear();

    const auto h_practical = estimate_channel(yd, pat, InterpMode::kSplineFreqLinearTime);
    curves[0].record.add(lmmse_llrs(h_practical, yd, sigma2, link.modulation), t.tx_bits,
                         t.data_mask, t.snr_db);
    curves[1].record.add(lmmse_llrs(t.h_true.cast<double>(), yd, sigma2, link.modulation),
                         t.tx_bits, t.data_mask, t.snr_db);

    if (!models.empty()) {
      for (size_t mi = 0; mi < models.size(); ++mi) {
        const NeuralReceiver<float>& model = *models[mi].second;
        TrainSample ts = make_train_sample(t, link, idx, model.cfg.feed_pilots);
        Tensor<float> llr = model.cfg.feed_pilots ? model.forward(ts.y, ts.h_est, &ts.pilots)
                                                  : model.forward(ts.y, ts.h_est);
        curves[2 + mi].record.add(llr.cast<double>(), t.tx_bits, t.data_mask, t.snr_db);
      }
    }
  }
  return curves;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata sidecar

struct CheckpointMeta {
  TransformConfig transform;
  int64_t step = 0;
  uint64_t train_seed = 0;
  std::string link_config_hash;
  std::string tool_version;
};

inline Json checkpoint_meta_to_json(const CheckpointMeta& m) {
  return Json{{"transform", transform_config_to_json(m.transform)},
              {"step", m.step},
              {"train_seed", m.train_seed},
              {"link_config_hash", m.link_config_hash},
              {"tool_version", m.tool_version}};
}

inline CheckpointMeta checkpoint_meta_from_json(const Json& j) {
  CheckpointMeta m;
  try {
    m.transform = transform_config_from_json(j.at("transform"));
    m.step = j.at("step").get<int64_t>();
    m.train_seed = j.value("train_seed", static_cast<uint64_t>(0));
    m.link_config_hash = j.value("link_config_hash", std::string());
    m.tool_version = j.value("tool_version", std::string());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad checkpoint metadata: ") + e.what());
  }
  return m;
}

// Writes base.drxw (weights), base.json (metadata), and optionally
// base.opt.drxw (optimizer moments, needed only to resume training).
inline void save_receiver(const std::string& base, const NeuralReceiver<float>& model,
                          const CheckpointMeta& meta, const AdamState* opt = nullptr) {
  write_checkpoint(base + ".drxw", snapshot_params(model.params));
  std::ofstream js(base + ".json", std::ios::trunc);
  if (!js) throw IoError("cannot write " + base + ".json");
  js << checkpoint_meta_to_json(meta).dump(2) << '\n';
  if (!js) throw IoError("short write to " + base + ".json");
  if (opt) save_adam(base + ".opt.drxw", model.params, *opt);
}

inline NeuralReceiver<float> load_receiver(const std::string& base, CheckpointMeta* meta_out = nullptr,
                                           AdamState* opt_out = nullptr) {
  std::ifstream js(base + ".json");
  if (!js) throw IoError("cannot open checkpoint metadata " + base + ".json");
  CheckpointMeta meta;
  try {
    meta = checkpoint_meta_from_json(Json::parse(js));
  } catch (const Json::exception& e) {
    throw IoError("cannot parse " + base + ".json: " + e.what());
  }
  auto model = NeuralReceiver<float>::init(meta.transform, /*seed=*/0);
  load_params(model.params, read_checkpoint(base + ".drxw"));
  if (meta_out) *meta_out = meta;
  if (opt_out) *opt_out = load_adam(base + ".opt.drxw", model.params, meta.step);
  return model;
}

}  // namespace mimorx
