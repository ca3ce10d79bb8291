// Neural receiver model: transform configs, the two combining stages, the
// identity property of freshly built front ends, gradients end to end, and
// checkpoint round trips.

#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>

#include "mimorx/checkpoint.hpp"
#include "mimorx/gradcheck.hpp"
#include "mimorx/model.hpp"
#include "test_util.hpp"

using namespace mimorx;

namespace {

TransformConfig tiny_mrc_config() {
  TransformConfig c;
  c.kind = TransformKind::kMrc;
  c.n_tx = 2;
  c.n_rx = 2;
  c.n_bits = 2;
  c.m_t = 2;
  c.front_blocks = 1;
  c.front_channels = 4;
  c.backbone_blocks = 2;
  c.backbone_channels = 6;
  return c;
}

TransformConfig tiny_mult_config() {
  TransformConfig c = tiny_mrc_config();
  c.kind = TransformKind::kMultiplicative;
  c.m_in = 4;
  c.m_ex = 6;
  return c;
}

// Overwrites every parameter (including the zero-initialized residual tails)
// with small random values, so gradients flow through all layers.
template <typename T>
void randomize_params(ParamStore<T>& params, Rng& rng, T scale = T(0.3)) {
  for (size_t i = 0; i < params.size(); ++i) {
    auto& v = params.var(i).node()->value;
    for (auto& x : v.re) x = static_cast<T>(rng.normal()) * scale;
    for (auto& x : v.im) x = static_cast<T>(rng.normal()) * scale;
  }
}

template <typename T>
std::vector<Var<T>> all_params(ParamStore<T>& params) {
  std::vector<Var<T>> out;
  for (size_t i = 0; i < params.size(); ++i) out.push_back(params.var(i));
  return out;
}

}  // namespace

TEST_CASE("transform config validates and round-trips through JSON") {
  TransformConfig c = tiny_mrc_config();
  c.validate();
  CHECK(c.m_out() == 2 * c.m_ex / 3);

  TransformConfig bad = c;
  bad.m_t = 1;  // below n_tx
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  TransformConfig badm = tiny_mult_config();
  badm.m_ex = 7;
  CHECK_THROWS_AS(badm.validate(), ConfigError);
  badm.m_ex = 0;
  CHECK_THROWS_AS(badm.validate(), ConfigError);

  TransformConfig badd = c;
  badd.backbone_dilations = {1, 2};  // wrong length for 2 blocks is fine; use 3
  badd.backbone_blocks = 3;
  CHECK_THROWS_AS(badd.validate(), ConfigError);

  // Default dilation ramp is 1,2,3 capped at 3.
  TransformConfig deep = c;
  deep.backbone_blocks = 5;
  CHECK(deep.dilations() == std::vector<int>{1, 2, 3, 3, 3});

  TransformConfig m = tiny_mult_config();
  m.concat_inputs = true;
  Json j = transform_config_to_json(m);
  TransformConfig back = transform_config_from_json(j);
  CHECK(back.kind == m.kind);
  CHECK(back.m_in == m.m_in);
  CHECK(back.m_ex == m.m_ex);
  CHECK(back.concat_inputs == m.concat_inputs);
  CHECK(canonical_json(transform_config_to_json(back)) == canonical_json(j));

  CHECK(transform_kind_from_string("mult") == TransformKind::kMultiplicative);
  CHECK_THROWS_AS(transform_kind_from_string("zf"), ConfigError);
}

TEST_CASE("gather_channels copies sources and scatter-adds gradients") {
  Rng rng(11);
  auto x = Var<double>::leaf(testutil::randn_complex<double>({2, 3, 4}, rng), true);
  std::vector<int> idx{3, 0, 0, 2};
  auto out = gather_channels(x, idx);
  REQUIRE(out.value().shape == Shape{2, 3, 4});
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 4; ++c) {
      CHECK(out.value().re[r * 4 + c] == x.value().re[r * 4 + idx[(size_t)c]]);
      CHECK(out.value().im[r * 4 + c] == x.value().im[r * 4 + idx[(size_t)c]]);
    }
  CHECK_THROWS_AS(gather_channels(x, std::vector<int>{4}), ShapeError);

  auto report = grad_check<double>([&] { return sum_squares(gather_channels(x, idx)); }, {x});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("multiplicative transform closed forms") {
  // W1 = [1;1;1], w2 = (-1,1,1): output is (conj(z)*z, z) = (|z|^2, z).
  auto w1 = Tensor<double>::complex({3, 1});
  w1.re = {1, 1, 1};
  auto w2 = Tensor<double>::real({3});
  w2.re = {-1, 1, 1};
  auto z = Tensor<double>::complex({1, 1, 1});
  z.set(0, {0.6, -1.7});
  auto out = multiplicative_transform(Var<double>::constant(z), Var<double>::constant(w1),
                                      Var<double>::constant(w2))
                 .value();
  REQUIRE(out.shape == Shape{1, 1, 2});
  const double zn = 0.6 * 0.6 + 1.7 * 1.7;
  CHECK(out.cval(0).real() == doctest::Approx(zn).epsilon(1e-12));
  CHECK(std::abs(out.cval(0).imag()) < 1e-12);
  CHECK(out.cval(1) == z.cval(0));

  // w2 all ones and identity-padded W1: output (z1*z2, z3), phases untouched.
  auto w1b = Tensor<double>::complex({3, 3});
  for (int i = 0; i < 3; ++i) w1b.re[(size_t)(i * 3 + i)] = 1;
  auto w2b = Tensor<double>::real({3});
  w2b.fill(1);
  Rng rng(5);
  auto zb = testutil::randn_complex<double>({2, 2, 3}, rng);
  auto outb = multiplicative_transform(Var<double>::constant(zb), Var<double>::constant(w1b),
                                       Var<double>::constant(w2b))
                  .value();
  REQUIRE(outb.shape == Shape{2, 2, 2});
  for (int r = 0; r < 4; ++r) {
    auto z1 = zb.cval(r * 3 + 0), z2 = zb.cval(r * 3 + 1), z3 = zb.cval(r * 3 + 2);
    CHECK(std::abs(outb.cval(r * 2 + 0) - z1 * z2) < 1e-12);
    CHECK(outb.cval(r * 2 + 1) == z3);
  }

  // w2 = +1 vs -1 with both product inputs wired to the same z: z^2 vs |z|^2.
  auto w1c = Tensor<double>::complex({3, 1});
  w1c.re = {1, 1, 0};
  for (double s : {1.0, -1.0}) {
    auto w2c = Tensor<double>::real({3});
    w2c.re = {s, 1, 1};
    auto outc = multiplicative_transform(Var<double>::constant(z), Var<double>::constant(w1c),
                                         Var<double>::constant(w2c))
                    .value();
    const std::complex<double> zv = z.cval(0);
    const std::complex<double> want = s > 0 ? zv * zv : std::conj(zv) * zv;
    CHECK(std::abs(outc.cval(0) - want) < 1e-12);
  }
}

TEST_CASE("multiplicative transform gradients vs finite differences") {
  Rng rng(23);
  for (int seed = 0; seed < 5; ++seed) {
    auto z = Var<double>::leaf(testutil::randn_complex<double>({3, 2, 4}, rng), true);
    auto w1 = Var<double>::leaf(testutil::randn_complex<double>({6, 4}, rng), true);
    auto w2 = Var<double>::leaf(testutil::randn_offzero<double>({6}, rng, false), true);
    auto report = grad_check<double>(
        [&] { return sum_squares(multiplicative_transform(z, w1, w2)); }, {z, w1, w2});
    INFO("seed ", seed, " worst ", report.worst_entry);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("fresh front ends are identity maps") {
  TransformConfig cfg = tiny_mrc_config();
  cfg.m_t = 4;  // two virtual streams beyond the physical two
  auto model = NeuralReceiver<double>::init(cfg, 42);
  Rng rng(9);
  const int F = 5, S = 3;
  auto y = Var<double>::constant(testutil::randn_complex<double>({F, S, cfg.n_rx}, rng));
  auto h = Var<double>::constant(testutil::randn_complex<double>({F, S, cfg.n_rx, cfg.n_tx}, rng));

  auto [hv, yp] = model.front_mrc(y, h);
  REQUIRE(hv.value().shape == Shape{F, S, cfg.m_t, cfg.n_rx});
  REQUIRE(yp.value().shape == Shape{F, S, cfg.n_rx});

  // Signal branch: bitwise pass-through.
  CHECK(yp.value().re == y.value().re);
  CHECK(yp.value().im == y.value().im);

  // Channel branch: virtual stream m is a bitwise copy of physical column
  // m mod n_tx, transposed to rows.
  const auto& hvv = hv.value();
  const auto& hev = h.value();
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j)
      for (int mt = 0; mt < cfg.m_t; ++mt)
        for (int r = 0; r < cfg.n_rx; ++r) {
          const auto got = hvv.cval(((int64_t(i) * S + j) * cfg.m_t + mt) * cfg.n_rx + r);
          const auto want = hev.cval(((int64_t(i) * S + j) * cfg.n_rx + r) * cfg.n_tx + mt % cfg.n_tx);
          CHECK(got == want);
        }

  // Joint front end of the multiplicative kind: cyclic copies of [Y | H].
  TransformConfig mcfg = tiny_mult_config();
  mcfg.m_in = 8;  // wider than the 6 input channels, wraps around
  auto mmodel = NeuralReceiver<double>::init(mcfg, 42);
  const int cin = mcfg.n_rx + mcfg.n_rx * mcfg.n_tx;
  auto hc = reshape(h, {F, S, cin - mcfg.n_rx});
  auto zin = concat_channels<double>({y, hc});
  auto z = mmodel.front_end("joint_front", zin);
  REQUIRE(z.value().shape == Shape{F, S, mcfg.m_in});
  for (int64_t r = 0; r < int64_t(F) * S; ++r)
    for (int c = 0; c < mcfg.m_in; ++c) {
      CHECK(z.value().re[r * mcfg.m_in + c] == zin.value().re[r * cin + c % cin]);
      CHECK(z.value().im[r * mcfg.m_in + c] == zin.value().im[r * cin + c % cin]);
    }
}

TEST_CASE("identity-initialized model reproduces direct matched combining") {
  // Fresh model, m_t == n_tx: the combining stage must equal the plain per-RE
  // expression out_k = h_k^H y / ||h_k||^2 evaluated on the raw estimate.
  TransformConfig cfg;
  cfg.kind = TransformKind::kMrc;
  cfg.n_tx = 2;
  cfg.n_rx = 3;
  cfg.m_t = 2;
  cfg.front_blocks = 2;
  cfg.front_channels = 5;
  cfg.backbone_blocks = 2;
  cfg.backbone_channels = 8;
  auto model = NeuralReceiver<double>::init(cfg, 1234);

  Rng rng(77);
  const int F = 10, S = 10;  // 100 resource elements
  auto y = Tensor<double>::complex({F, S, cfg.n_rx});
  auto h = Tensor<double>::complex({F, S, cfg.n_rx, cfg.n_tx});
  y = testutil::randn_complex<double>({F, S, cfg.n_rx}, rng);
  h = testutil::randn_complex<double>({F, S, cfg.n_rx, cfg.n_tx}, rng);

  auto combined =
      model.combined_features(Var<double>::constant(y), Var<double>::constant(h)).value();
  REQUIRE(combined.shape == Shape{F, S, cfg.m_t});

  double worst = 0;
  for (int i = 0; i < F; ++i)
    for (int j = 0; j < S; ++j)
      for (int k = 0; k < cfg.n_tx; ++k) {
        std::complex<double> acc = 0;
        double nrm = 0;
        for (int r = 0; r < cfg.n_rx; ++r) {
          const auto hrk = h.cval(((int64_t(i) * S + j) * cfg.n_rx + r) * cfg.n_tx + k);
          const auto yr = y.cval((int64_t(i) * S + j) * cfg.n_rx + r);
          acc += std::conj(hrk) * yr;
          nrm += std::norm(hrk);
        }
        const auto got = combined.cval((int64_t(i) * S + j) * cfg.m_t + k);
        worst = std::max(worst, std::abs(got - acc / nrm));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("combining row scales as 1/c when its channel column scales by c") {
  Rng rng(31);
  const int F = 2, S = 2, M = 3, R = 4;
  auto h0 = testutil::randn_complex<double>({F, S, M, R}, rng);
  auto y = Var<double>::constant(testutil::randn_complex<double>({F, S, R}, rng));
  auto base = mrc_combine(Var<double>::constant(h0), y).value();
  for (double c : {0.5, 2.0, 10.0}) {
    auto hs = h0;
    // scale row k=1 of every RE by c
    for (int i = 0; i < F; ++i)
      for (int j = 0; j < S; ++j)
        for (int r = 0; r < R; ++r) {
          const int64_t o = ((int64_t(i) * S + j) * M + 1) * R + r;
          hs.re[o] *= c;
          hs.im[o] *= c;
        }
    auto out = mrc_combine(Var<double>::constant(hs), y).value();
    for (int i = 0; i < F; ++i)
      for (int j = 0; j < S; ++j) {
        const int64_t o = (int64_t(i) * S + j) * M + 1;
        CHECK(std::abs(out.cval(o) - base.cval(o) / c) < 1e-9);
        // other rows untouched
        CHECK(out.cval(o - 1) == base.cval(o - 1));
      }
  }
}

TEST_CASE("front end gradients vs finite differences") {
  TransformConfig cfg = tiny_mrc_config();
  cfg.n_rx = 2;
  cfg.front_channels = 3;
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto model = NeuralReceiver<double>::init(cfg, seed);
    Rng rng(100 + seed);
    randomize_params(model.params, rng);
    auto y = Var<double>::leaf(testutil::randn_complex<double>({3, 2, cfg.n_rx}, rng), true);
    auto h = Var<double>::leaf(testutil::randn_complex<double>({3, 2, cfg.n_rx, cfg.n_tx}, rng), true);
    std::vector<Var<double>> probes{y, h, model.params.at("chan_front.entry.w"),
                                    model.params.at("chan_front.b0.c1.w"),
                                    model.params.at("chan_front.b0.c2.w"),
                                    model.params.at("chan_front.head.w"),
                                    model.params.at("sig_front.entry.w")};
    auto report = grad_check<double>(
        [&] {
          auto [hv, yp] = model.front_mrc(y, h);
          return add(sum_squares(hv), sum_squares(yp));
        },
        probes);
    INFO("seed ", seed, " worst ", report.worst_entry);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("backbone gradients vs finite differences") {
  TransformConfig cfg = tiny_mrc_config();
  cfg.backbone_channels = 4;
  for (uint64_t seed : {4u, 5u}) {
    auto model = NeuralReceiver<double>::init(cfg, seed);
    Rng rng(200 + seed);
    randomize_params(model.params, rng);
    auto f = Var<double>::leaf(testutil::randn_complex<double>({3, 3, cfg.m_t}, rng), true);
    std::vector<Var<double>> probes{f,
                                    model.params.at("backbone.entry.w"),
                                    model.params.at("backbone.b0.dw1.w"),
                                    model.params.at("backbone.b0.pw1.w"),
                                    model.params.at("backbone.b1.dw2.w"),
                                    model.params.at("backbone.b1.pw2.b"),
                                    model.params.at("backbone.head.w"),
                                    model.params.at("backbone.head.b")};
    auto report = grad_check<double>([&] { return sum_squares(model.backbone(f)); }, probes);
    INFO("seed ", seed, " worst ", report.worst_entry);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("llr output contract for both kinds") {
  Rng rng(55);
  const int F = 6, S = 4;
  for (auto kind : {TransformKind::kMrc, TransformKind::kMultiplicative}) {
    TransformConfig cfg = kind == TransformKind::kMrc ? tiny_mrc_config() : tiny_mult_config();
    auto model = NeuralReceiver<float>::init(cfg, 3);
    Rng prng(77);
    randomize_params(model.params, prng, 0.2f);
    auto y = testutil::randn_complex<float>({F, S, cfg.n_rx}, rng);
    auto h = testutil::randn_complex<float>({F, S, cfg.n_rx, cfg.n_tx}, rng);
    auto llr = model.forward(y, h);
    REQUIRE(llr.shape == Shape{F, S, cfg.n_tx, cfg.n_bits});
    CHECK_FALSE(llr.is_complex());
    CHECK(llr.all_finite());
    for (float v : llr.re) {
      const float p = 1.0f / (1.0f + std::exp(-v));
      CHECK(p > 0.0f);
      CHECK(p < 1.0f);
    }
    // deterministic and pure
    auto llr2 = model.forward(y, h);
    CHECK(llr2.re == llr.re);
  }

  // Bad input shapes are rejected.
  auto model = NeuralReceiver<float>::init(tiny_mrc_config(), 3);
  auto y = testutil::randn_complex<float>({F, S, 3}, rng);  // wrong n_rx
  auto h = testutil::randn_complex<float>({F, S, 2, 2}, rng);
  CHECK_THROWS_AS(model.forward(y, h), ShapeError);
}

TEST_CASE("optional raw-input concat and pilot feed change the backbone input") {
  Rng rng(66);
  const int F = 4, S = 3;
  TransformConfig cfg = tiny_mrc_config();
  cfg.concat_inputs = true;
  cfg.feed_pilots = true;
  CHECK(cfg.feature_channels() == cfg.m_t + cfg.n_rx + cfg.n_rx * cfg.n_tx + cfg.n_tx);
  auto model = NeuralReceiver<float>::init(cfg, 8);
  auto y = testutil::randn_complex<float>({F, S, cfg.n_rx}, rng);
  auto h = testutil::randn_complex<float>({F, S, cfg.n_rx, cfg.n_tx}, rng);
  auto p = testutil::randn_complex<float>({F, S, cfg.n_tx}, rng);
  auto llr = model.forward(y, h, &p);
  CHECK(llr.shape == Shape{F, S, cfg.n_tx, cfg.n_bits});
  // The pilot grid is mandatory once the flag is set.
  CHECK_THROWS_AS(model.forward(y, h), ConfigError);
}

TEST_CASE("end-to-end gradients on a tiny config") {
  const int F = 4, S = 4;
  for (auto kind : {TransformKind::kMrc, TransformKind::kMultiplicative}) {
    TransformConfig cfg = kind == TransformKind::kMrc ? tiny_mrc_config() : tiny_mult_config();
    auto model = NeuralReceiver<double>::init(cfg, 21);
    Rng rng(300);
    randomize_params(model.params, rng);
    auto y = Var<double>::leaf(testutil::randn_complex<double>({F, S, cfg.n_rx}, rng), true);
    auto h = Var<double>::leaf(testutil::randn_complex<double>({F, S, cfg.n_rx, cfg.n_tx}, rng), true);
    auto report =
        grad_check<double>([&] { return sum_squares(model.llrs(y, h)); }, all_params(model.params));
    INFO(transform_kind_to_string(kind), " worst ", report.worst_entry);
    CHECK(report.max_rel_err < 1e-3);

    auto rin = grad_check<double>([&] { return sum_squares(model.llrs(y, h)); }, {y, h});
    INFO(transform_kind_to_string(kind), " input worst ", rin.worst_entry);
    CHECK(rin.max_rel_err < 1e-3);
  }
}

TEST_CASE("checkpoint round trip is bitwise and guards against mismatches") {
  const char* path = "test_ckpt.drxw";
  auto model = NeuralReceiver<float>::init(tiny_mult_config(), 99);
  Rng rng(12);
  randomize_params(model.params, rng, 0.5f);
  write_checkpoint(path, snapshot_params(model.params));

  auto tensors = read_checkpoint(path);
  REQUIRE(tensors.size() == model.params.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(tensors[i].name == model.params.name(i));
    CHECK(tensors[i].value.shape == model.params.var(i).value().shape);
    CHECK(tensors[i].value.re == model.params.var(i).value().re);
    CHECK(tensors[i].value.im == model.params.var(i).value().im);
  }

  // Restoring into a fresh same-architecture model reproduces outputs bitwise.
  auto fresh = NeuralReceiver<float>::init(tiny_mult_config(), 1);
  load_params(fresh.params, tensors);
  Rng drng(3);
  auto y = testutil::randn_complex<float>({5, 3, 2}, drng);
  auto h = testutil::randn_complex<float>({5, 3, 2, 2}, drng);
  CHECK(fresh.forward(y, h).re == model.forward(y, h).re);

  // A different architecture refuses the tensors.
  auto other = NeuralReceiver<float>::init(tiny_mrc_config(), 1);
  CHECK_THROWS_AS(load_params(other.params, tensors), ConfigError);

  // Corrupt headers.
  {
    std::ofstream bad("test_ckpt_bad.drxw", std::ios::binary);
    bad.write("NOPE", 4);
  }
  CHECK_THROWS_AS(read_checkpoint("test_ckpt_bad.drxw"), IoError);
  {
    std::ofstream bad("test_ckpt_bad.drxw", std::ios::binary);
    bad.write("DRXW", 4);
    uint32_t v = 9, n = 0;
    bad.write(reinterpret_cast<const char*>(&v), 4);
    bad.write(reinterpret_cast<const char*>(&n), 4);
  }
  CHECK_THROWS_AS(read_checkpoint("test_ckpt_bad.drxw"), IoError);
  CHECK_THROWS_AS(read_checkpoint("no_such_file.drxw"), IoError);

  // Truncated payload.
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out("test_ckpt_trunc.drxw", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  CHECK_THROWS_AS(read_checkpoint("test_ckpt_trunc.drxw"), IoError);

  std::remove(path);
  std::remove("test_ckpt_bad.drxw");
  std::remove("test_ckpt_trunc.drxw");
}

TEST_CASE("parameter store rejects duplicates and keeps insertion order") {
  ParamStore<float> ps;
  ps.add("a", Tensor<float>::real({2}));
  ps.add("b", Tensor<float>::complex({1}));
  CHECK_THROWS_AS(ps.add("a", Tensor<float>::real({2})), ConfigError);
  CHECK(ps.size() == 2);
  CHECK(ps.name(0) == "a");
  CHECK(ps.name(1) == "b");
  CHECK(ps.index_of("b") == 1);
  CHECK(ps.index_of("c") == -1);
  CHECK_THROWS_AS(ps.at("c"), ConfigError);
  CHECK(ps.total_entries() == 2 + 2);
}

TEST_CASE("degenerate virtual stream keeps gradients finite") {
  // One virtual stream with a zero channel row: its output must be zero and
  // backward must not produce NaNs in any branch parameter.
  TransformConfig cfg = tiny_mrc_config();
  auto model = NeuralReceiver<double>::init(cfg, 5);
  Rng rng(404);
  auto y = testutil::randn_complex<double>({2, 2, cfg.n_rx}, rng);
  auto h = testutil::randn_complex<double>({2, 2, cfg.m_t, cfg.n_rx}, rng);
  for (int r = 0; r < cfg.n_rx; ++r) {
    h.set((int64_t(0) * cfg.m_t + 1) * cfg.n_rx + r, {0.0, 0.0});  // RE (0,0), stream 1
  }
  auto hv = Var<double>::leaf(h, true);
  auto yv = Var<double>::leaf(y, true);
  auto out = mrc_combine(hv, yv);
  CHECK(out.value().cval(1) == std::complex<double>(0, 0));
  auto loss = sum_squares(out);
  backward(loss);
  CHECK(hv.grad().all_finite());
  CHECK(yv.grad().all_finite());
}
