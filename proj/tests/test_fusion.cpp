#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tzlab/error.hpp"
#include "tzlab/fusion.hpp"
#include "test_util.hpp"

using namespace tzlab;

namespace {

// Columns of V orthonormalised by modified Gram-Schmidt, then Q Q^T.
Tensor gram_schmidt_projector(const Tensor& v) {
  const std::size_t n = v.dim(0), k = v.dim(1);
  std::vector<std::vector<double>> q;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = v[i * k + j];
    for (const auto& e : q) {
      double d = 0;
      for (std::size_t i = 0; i < n; ++i) d += e[i] * c[i];
      for (std::size_t i = 0; i < n; ++i) c[i] -= d * e[i];
    }
    double nrm = 0;
    for (double x : c) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (double& x : c) x /= nrm;
    q.push_back(c);
  }
  Tensor p({n, n}, 0.0);
  for (const auto& e : q)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] += e[i] * e[j];
  return p;
}

Tensor matmul_ref(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST(OrthProject, SingleColumnOfOnes) {
  Tape tape;
  const Tensor p = orth_project(tape.constant(Tensor({2, 1}, 1.0))).value();
  for (double v : p.values()) EXPECT_NEAR(v, 0.5, 1e-6);
}

TEST(OrthProject, OrthonormalColumnsGiveVVt) {
  std::mt19937_64 rng(31);
  // Orthonormalise three random columns.
  Tensor v({10, 3}, 0.0);
  {
    const Tensor r = test::random_tensor({10, 3}, rng);
    const std::size_t n = 10, k = 3;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> c(n);
      for (std::size_t i = 0; i < n; ++i) c[i] = r[i * k + j];
      for (std::size_t jj = 0; jj < j; ++jj) {
        double d = 0;
        for (std::size_t i = 0; i < n; ++i) d += v[i * k + jj] * c[i];
        for (std::size_t i = 0; i < n; ++i) c[i] -= d * v[i * k + jj];
      }
      double nrm = 0;
      for (double x : c) nrm += x * x;
      for (std::size_t i = 0; i < n; ++i) v[i * k + j] = c[i] / std::sqrt(nrm);
    }
  }
  Tape tape;
  Var vv = tape.constant(v);
  const Tensor p = orth_project(vv).value();
  Tensor vt({3, 10});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 3; ++j) vt[j * 10 + i] = v[i * 3 + j];
  EXPECT_LT(max_abs_diff(p, matmul_ref(v, vt)), 1e-6);
  EXPECT_LT(max_abs_diff(matmul_ref(p, v), v), 1e-6);
}

TEST(OrthProject, MatchesGramSchmidtOracle) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor v = test::random_tensor({64, 8}, rng);
    Tape tape;
    const Tensor p = orth_project(tape.constant(v), 0.0).value();
    const Tensor oracle = gram_schmidt_projector(v);
    Tensor diff = p;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= oracle[i];
    EXPECT_LE(frobenius_norm(diff) / frobenius_norm(oracle), 1e-8);
  }
}

TEST(OrthProject, DefaultRidgeKeepsProjectorContract) {
  std::mt19937_64 rng(33);
  const Tensor v = test::random_tensor({64, 8}, rng);
  Tape tape;
  const Tensor p = orth_project(tape.constant(v)).value();
  const Tensor pp = matmul_ref(p, p);
  Tensor diff = pp;
  double tr = 0;
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= p[i];
  for (std::size_t i = 0; i < 64; ++i) tr += p[i * 64 + i];
  EXPECT_LE(frobenius_norm(diff) / frobenius_norm(p), 1e-5);
  EXPECT_NEAR(tr, 8.0, 1e-3);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(p[i * 64 + j], p[j * 64 + i], 1e-6);
}

TEST(OrthProject, ZeroBasisReportsConditionEstimate) {
  Tape tape;
  try {
    orth_project(tape.constant(Tensor({16, 4}, 0.0)));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("condition estimate"), std::string::npos);
  }
}

TEST(Attention, IdenticalRowsGiveUniformWeights) {
  Tensor v({5, 3});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) v[i * 3 + j] = 0.3 * static_cast<double>(j) - 0.2;
  Tape tape;
  const Tensor b = attention_weights(tape.constant(v)).value();
  for (double x : b.values()) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(Attention, MatchesNaiveSoftmax) {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor v = test::random_tensor({3, 2}, rng, -2.0, 2.0);
    Tape tape;
    const Tensor b = attention_weights(tape.constant(v)).value();
    for (std::size_t j = 0; j < 3; ++j) {
      double z = 0;
      std::vector<double> e(3);
      for (std::size_t i = 0; i < 3; ++i) {
        const double s = v[j * 2] * v[i * 2] + v[j * 2 + 1] * v[i * 2 + 1];
        e[i] = std::exp(s);
        z += e[i];
      }
      for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(b[j * 3 + i], e[i] / z, 1e-12);
    }
  }
}

TEST(Attention, RowsSumToOneEvenForRankOneAndLargeLogits) {
  std::mt19937_64 rng(35);
  Tensor v({40, 6});
  const Tensor u = test::random_tensor({40}, rng, -30.0, 30.0);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 6; ++j) v[i * 6 + j] = u[i];
  Tape tape;
  const Tensor b = attention_weights(tape.constant(v)).value();
  for (std::size_t r = 0; r < 40; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 40; ++c) s += b[r * 40 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

namespace {

struct SafmFixture {
  std::mt19937_64 rng{36};
  Tensor xa, xp, xf, fs_w, fs_b;
  SafmFixture(std::size_t bands, std::size_t c, std::size_t h, std::size_t w) {
    xa = test::random_tensor({bands, h, w}, rng);
    xp = test::random_tensor({bands, h, w}, rng);
    xf = test::random_tensor({c, h, w}, rng);
    fs_w = test::random_tensor({c, 2 * bands, 1, 1}, rng);
    fs_b = test::random_tensor({c}, rng);
  }
};

}  // namespace

TEST(SafmApply, IdentityAttentionAndProjectionPassInputsThrough) {
  SafmFixture fx(3, 6, 4, 4);
  // With f_s selecting channel c from the 6 concatenated inputs, the output
  // minus x_f must reproduce [Xa|Xp] exactly.
  Tensor sel({6, 6, 1, 1}, 0.0);
  for (std::size_t c = 0; c < 6; ++c) sel[c * 6 + c] = 1.0;
  Tape tape;
  Var out = safm_apply(tape.constant(fx.xa), tape.constant(fx.xp), tape.constant(identity(16)),
                       tape.constant(identity(16)), tape.constant(fx.xf), tape.constant(sel),
                       tape.constant(Tensor({6}, 0.0)));
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t i = 0; i < 16; ++i) {
      const double in = c < 3 ? fx.xa[c * 16 + i] : fx.xp[(c - 3) * 16 + i];
      EXPECT_DOUBLE_EQ(out.value()[c * 16 + i] - fx.xf[c * 16 + i], in);
    }
}

TEST(SafmApply, ZeroSpectralInputsLeaveResidual) {
  SafmFixture fx(3, 5, 4, 4);
  std::mt19937_64 rng(37);
  Tape tape;
  Var out = safm_apply(tape.constant(Tensor({3, 4, 4}, 0.0)), tape.constant(Tensor({3, 4, 4}, 0.0)),
                       tape.constant(test::random_tensor({16, 16}, rng)), tape.constant(test::random_tensor({16, 16}, rng)),
                       tape.constant(fx.xf), tape.constant(fx.fs_w), tape.constant(Tensor({5}, 0.0)));
  EXPECT_TRUE(out.value().identical(fx.xf));
}

TEST(SafmApply, MatchesLoopOracle) {
  for (int trial = 0; trial < 10; ++trial) {
    SafmFixture fx(3, 4, 4, 4);
    fx.rng.seed(100 + trial);
    const Tensor beta = test::random_tensor({16, 16}, fx.rng, 0.0, 1.0);
    const Tensor p = test::random_tensor({16, 16}, fx.rng);
    Tape tape;
    const Tensor out = safm_apply(tape.constant(fx.xa), tape.constant(fx.xp), tape.constant(beta), tape.constant(p),
                                  tape.constant(fx.xf), tape.constant(fx.fs_w), tape.constant(fx.fs_b))
                           .value();
    // s_i = [P Xa | P Xp]_i, o_j = sum_i beta_ji s_i, out = fs(o) + x_f.
    std::vector<double> s(16 * 6, 0.0), o(16 * 6, 0.0);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t m = 0; m < 16; ++m)
          s[i * 6 + c] += p[i * 16 + m] * (c < 3 ? fx.xa[c * 16 + m] : fx.xp[(c - 3) * 16 + m]);
    for (std::size_t j = 0; j < 16; ++j)
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t i = 0; i < 16; ++i) o[j * 6 + c] += beta[j * 16 + i] * s[i * 6 + c];
    for (std::size_t co = 0; co < 4; ++co)
      for (std::size_t j = 0; j < 16; ++j) {
        double v = fx.fs_b[co] + fx.xf[co * 16 + j];
        for (std::size_t c = 0; c < 6; ++c) v += fx.fs_w[co * 6 + c] * o[j * 6 + c];
        EXPECT_NEAR(out[co * 16 + j], v, 1e-12);
      }
  }
}

TEST(SafmApply, ChannelMismatchThrows) {
  SafmFixture fx(3, 4, 4, 4);
  Tape tape;
  EXPECT_THROW(safm_apply(tape.constant(fx.xa), tape.constant(fx.xp), tape.constant(identity(16)),
                          tape.constant(identity(16)), tape.constant(Tensor({5, 4, 4}, 0.0)), tape.constant(fx.fs_w),
                          tape.constant(fx.fs_b)),
               ShapeError);
}

TEST(BuildBasis, ShapeContractAndDeterminism) {
  ParamStore store;
  Rng rng(38);
  init_safm(store, "safm", {3, 16, 8, 4}, rng);
  std::mt19937_64 data(39);
  const Tensor xa = test::random_tensor({3, 16, 16}, data);
  const Tensor xp = test::random_tensor({3, 16, 16}, data);
  Tensor first;
  for (int run = 0; run < 2; ++run) {
    Tape tape;
    Forward f(tape, store, {BnMode::Train, 0.1, 1e-5, false}, false);
    Var v = build_basis(f, tape.constant(xa), tape.constant(xp), "safm");
    EXPECT_EQ(v.shape(), (Shape{256, 8}));
    if (run == 0) first = v.value();
    else EXPECT_TRUE(first.identical(v.value()));
  }
}

TEST(BuildBasis, ZeroInputsGiveZeroBasis) {
  ParamStore store;
  Rng rng(40);
  init_safm(store, "safm", {3, 16, 8, 4}, rng);
  Tape tape;
  Forward f(tape, store);
  Var v = build_basis(f, tape.constant(Tensor({3, 8, 8}, 0.0)), tape.constant(Tensor({3, 8, 8}, 0.0)), "safm");
  for (double x : v.value().values()) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(orth_project(v), NumericError);
}

TEST(BuildBasis, SpatialMismatchThrows) {
  ParamStore store;
  Rng rng(41);
  init_safm(store, "safm", {3, 4, 4, 4}, rng);
  Tape tape;
  Forward f(tape, store);
  EXPECT_THROW(build_basis(f, tape.constant(Tensor({3, 8, 8}, 0.0)), tape.constant(Tensor({3, 8, 4}, 0.0)), "safm"),
               ShapeError);
}

TEST(SafmForward, FactoredFormMatchesExplicitProjector) {
  ParamStore store;
  Rng rng(42);
  init_safm(store, "safm", {3, 8, 4, 5}, rng);
  std::mt19937_64 data(43);
  const Tensor xa = test::random_tensor({2, 3, 8, 8}, data);
  const Tensor xp = test::random_tensor({2, 3, 8, 8}, data);
  const Tensor xf = test::random_tensor({2, 5, 8, 8}, data);
  Tape tape;
  Forward f(tape, store, {BnMode::Train, 0.1, 1e-5, false});
  Var factored = safm_forward(f, tape.constant(xa), tape.constant(xp), tape.constant(xf), "safm");
  Var v = build_basis(f, tape.constant(xa), tape.constant(xp), "safm");
  Var explicit_out = safm_apply(tape.constant(xa), tape.constant(xp), attention_weights(v), orth_project(v),
                                tape.constant(xf), f.param("safm.fs.weight"), f.param("safm.fs.bias"));
  EXPECT_EQ(factored.shape(), (Shape{2, 5, 8, 8}));
  EXPECT_LT(max_abs_diff(factored.value(), explicit_out.value()), 1e-9);
}

TEST(SafmForward, CompositeGradCheck) {
  ParamStore store;
  Rng rng(44);
  init_safm(store, "safm", {3, 4, 4, 3}, rng);
  std::mt19937_64 data(45);
  std::vector<GradCheckInput> inputs{{"xa", test::random_tensor({2, 3, 8, 8}, data)},
                                     {"xp", test::random_tensor({2, 3, 8, 8}, data)},
                                     {"xf", test::random_tensor({2, 3, 8, 8}, data)}};
  const auto params = param_inputs(store);
  inputs.insert(inputs.end(), params.begin(), params.end());
  auto fn = [&](Tape& tape, std::span<const Var> v) {
    Forward f(tape, store, {BnMode::Train, 0.1, 1e-5, false});
    bind_params(f, params, v, 3);
    return safm_forward(f, v[0], v[1], v[2], "safm");
  };
  GradCheckOptions opts;
  opts.rel_tol = 1e-4;
  opts.max_probes_per_input = 24;
  const GradCheckReport r = grad_check(fn, inputs, opts);
  EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_error;
  EXPECT_GT(r.probes, 100u);
}

TEST(CamPool, MeansPerChannel) {
  Tensor x({2, 1, 2});
  x[0] = 1, x[1] = 3, x[2] = 5, x[3] = 5;
  Tape tape;
  const Tensor g = cam_pool(tape.constant(x)).value();
  EXPECT_EQ(g.shape(), (Shape{2, 1, 1}));
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1], 5.0);
}

TEST(CamPool, MatchesSummationOracle) {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = test::random_tensor({4, 5, 6}, rng);
    Tape tape;
    const Tensor g = cam_pool(tape.constant(x)).value();
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 30; ++i) s += x[c * 30 + i];
      EXPECT_NEAR(g[c], s / 30.0, 1e-14);
    }
  }
}

namespace {

// Zero weights everywhere, excite bias pinned per half, so w is a constant
// sigmoid(bias) regardless of the input.
ParamStore forced_cam(std::size_t c, double b1, double b2) {
  ParamStore store;
  Rng rng(47);
  init_cam(store, "cam", c, 4, rng);
  store.at("cam.squeeze.weight").fill(0.0);
  store.at("cam.excite.weight").fill(0.0);
  Tensor& b = store.at("cam.excite.bias");
  for (std::size_t i = 0; i < 2 * c; ++i) b[i] = i < c ? b1 : b2;
  return store;
}

}  // namespace

TEST(CamApply, GatingExtremes) {
  std::mt19937_64 rng(48);
  const Tensor xc = test::random_tensor({4, 5, 5}, rng);
  const Tensor xs = test::random_tensor({4, 5, 5}, rng);
  {
    ParamStore store = forced_cam(4, 40.0, -40.0);
    Tape tape;
    Forward f(tape, store);
    const Tensor out = cam_apply(f, tape.constant(xc), tape.constant(xs), "cam").value();
    EXPECT_LT(max_abs_diff(out, xc), 1e-15);
  }
  {
    ParamStore store = forced_cam(4, 0.0, 0.0);
    Tape tape;
    Forward f(tape, store);
    const Tensor out = cam_apply(f, tape.constant(xc), tape.constant(xs), "cam").value();
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.5 * (xc[i] + xs[i]), 1e-15);
  }
}

TEST(CamApply, OutputBoundedAndWeightsInsideUnitInterval) {
  std::mt19937_64 rng(49);
  ParamStore store;
  Rng init(50);
  init_cam(store, "cam", 8, 4, init);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor xc = test::random_tensor({2, 8, 6, 6}, rng, -3.0, 3.0);
    const Tensor xs = test::random_tensor({2, 8, 6, 6}, rng, -3.0, 3.0);
    Tape tape;
    Forward f(tape, store);
    const Tensor w = cam_weights(f, tape.constant(xc), tape.constant(xs), "cam").value();
    for (double v : w.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    const Tensor out = cam_apply(f, tape.constant(xc), tape.constant(xs), "cam").value();
    EXPECT_EQ(out.shape(), xc.shape());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LE(std::abs(out[i]), std::abs(xc[i]) + std::abs(xs[i]));
  }
}

TEST(CamApply, RatioMustDivideChannels) {
  ParamStore store;
  Rng rng(51);
  EXPECT_THROW(init_cam(store, "cam", 3, 4, rng), ConfigError);
}

TEST(CamApply, GradCheck) {
  ParamStore store;
  Rng rng(52);
  init_cam(store, "cam", 4, 4, rng);
  std::mt19937_64 data(53);
  std::vector<GradCheckInput> inputs{{"xc", test::random_tensor({2, 4, 5, 5}, data)},
                                     {"xs", test::random_tensor({2, 4, 5, 5}, data)}};
  const auto params = param_inputs(store);
  inputs.insert(inputs.end(), params.begin(), params.end());
  auto fn = [&](Tape& tape, std::span<const Var> v) {
    Forward f(tape, store);
    bind_params(f, params, v, 2);
    return cam_apply(f, v[0], v[1], "cam");
  };
  const GradCheckReport r = grad_check(fn, inputs);
  EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_error;
}

TEST(ConvBlock, ShapeZeroAndGradCheck) {
  ParamStore store;
  Rng rng(54);
  init_conv_block(store, "blk", 1, 3, 3, rng);
  std::mt19937_64 data(55);
  const Tensor x = test::random_tensor({1, 4, 4}, data);
  {
    Tape tape;
    Forward f(tape, store);
    EXPECT_EQ(conv_block(f, tape.constant(x), "blk").shape(), (Shape{3, 4, 4}));
  }
  {
    ParamStore zero = store;
    zero.at("blk.conv1").fill(0.0);
    zero.at("blk.conv2").fill(0.0);
    Tape tape;
    Forward f(tape, zero);
    for (double v : conv_block(f, tape.constant(x), "blk").value().values()) EXPECT_EQ(v, 0.0);
  }
  std::vector<GradCheckInput> inputs{{"x", x}};
  const auto params = param_inputs(store);
  inputs.insert(inputs.end(), params.begin(), params.end());
  auto fn = [&](Tape& tape, std::span<const Var> v) {
    Forward f(tape, store, {BnMode::Train, 0.1, 1e-5, false});
    bind_params(f, params, v, 1);
    return conv_block(f, v[0], "blk");
  };
  GradCheckOptions opts;
  opts.rel_tol = 1e-4;
  const GradCheckReport r = grad_check(fn, inputs, opts);
  EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_error;
}

TEST(ParamStore, RejectsDuplicatesAndUnknownNames) {
  ParamStore store;
  store.add("a", Tensor({2}, 0.0));
  EXPECT_THROW(store.add("a", Tensor({2}, 0.0)), ConfigError);
  EXPECT_THROW(store.at("b"), ConfigError);
  store.add_batch_norm("bn", 3);
  EXPECT_EQ(store.parameter_count(), 8u);
  EXPECT_EQ(store.bn_names().size(), 1u);
}
