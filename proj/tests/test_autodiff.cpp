#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mammoseg/gradcheck.hpp"
#include "mammoseg/optim.hpp"
#include "mammoseg/ops.hpp"

using namespace mammoseg;

namespace {

template <typename T>
Tensor<T> filled(std::vector<std::int64_t> shape, T v) {
  Tensor<T> t(std::move(shape));
  t.fill(v);
  return t;
}

template <typename T>
Tensor<T> random_uniform(Rng& rng, std::vector<std::int64_t> shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("conv2d scaling kernel identity") {
  Tape<double> tape;
  Var x = tape.input(filled<double>({1, 1, 3, 3}, 1.0));
  Tensor<double> w({1, 1, 1, 1});
  w[0] = 2.0;
  Var out = conv2d(tape, x, tape.input(std::move(w)), std::nullopt, 1, 0);
  const Tensor<double>& y = tape.value(out);
  REQUIRE(y.shape() == std::vector<std::int64_t>({1, 1, 3, 3}));
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(2.0));
}

TEST_CASE("conv2d output size formula") {
  Tape<float> tape;
  Rng rng(7);
  Var x = tape.input(random_uniform<float>(rng, {8, 1, 256, 256}, 0, 1));
  Var w = tape.input(random_uniform<float>(rng, {32, 1, 4, 4}, -0.1, 0.1));
  Var out = conv2d(tape, x, w, std::nullopt, 2, 1);
  CHECK(tape.value(out).shape() == std::vector<std::int64_t>({8, 32, 128, 128}));
}

TEST_CASE("conv2d discriminator spatial chain 256 -> 30") {
  Tape<float> tape;
  Rng rng(9);
  Var t = tape.input(random_uniform<float>(rng, {1, 1, 256, 256}, 0, 1));
  std::vector<std::int64_t> extents;
  for (int layer = 0; layer < 5; ++layer) {
    int stride = layer < 3 ? 2 : 1;
    Var w = tape.input(random_uniform<float>(rng, {1, 1, 4, 4}, -0.1, 0.1));
    t = conv2d(tape, t, w, std::nullopt, stride, 1);
    extents.push_back(tape.value(t).size(2));
  }
  CHECK(extents == std::vector<std::int64_t>({128, 64, 32, 31, 30}));
}

TEST_CASE("conv2d rejects bad geometry") {
  Tape<double> tape;
  Var x = tape.input(filled<double>({1, 2, 4, 4}, 0.0));
  Var w_badch = tape.input(filled<double>({1, 3, 3, 3}, 0.0));
  CHECK_THROWS_AS(conv2d(tape, x, w_badch, std::nullopt, 1, 0), ContractError);
  Var w_toobig = tape.input(filled<double>({1, 2, 8, 8}, 0.0));
  CHECK_THROWS_AS(conv2d(tape, x, w_toobig, std::nullopt, 1, 0), ConfigError);
}

TEST_CASE("conv_transpose2d scatter example") {
  Tape<double> tape;
  Var x = tape.input(filled<double>({1, 1, 1, 1}, 1.0));
  Var w = tape.input(filled<double>({1, 1, 4, 4}, 1.0));
  Var out = conv_transpose2d(tape, x, w, std::nullopt, 2, 1);
  const Tensor<double>& y = tape.value(out);
  REQUIRE(y.shape() == std::vector<std::int64_t>({1, 1, 2, 2}));
  for (std::int64_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(1.0));
}

TEST_CASE("conv_transpose2d output size formula") {
  Tape<float> tape;
  Rng rng(11);
  Var x = tape.input(random_uniform<float>(rng, {8, 256, 2, 2}, -1, 1));
  Var w = tape.input(random_uniform<float>(rng, {256, 256, 4, 4}, -0.02, 0.02));
  Var out = conv_transpose2d(tape, x, w, std::nullopt, 2, 1);
  CHECK(tape.value(out).shape() == std::vector<std::int64_t>({8, 256, 4, 4}));
}

TEST_CASE("conv adjoint identity <= 1e-10 relative") {
  Rng rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    // geometries whose size formulas round-trip on 5x5
    int k = trial % 2 ? 4 : 3;
    int stride = trial % 2 ? 1 : 2;
    Tensor<double> x = random_uniform<double>(rng, {2, 3, 5, 5}, -1, 1);
    Tensor<double> w = random_uniform<double>(rng, {4, 3, k, k}, -1, 1);

    Tape<double> tape;
    Var xv = tape.input(x);
    Var wv = tape.input(w);
    Var yv = conv2d(tape, xv, wv, std::nullopt, stride, 1);
    const Tensor<double>& y = tape.value(yv);

    Tensor<double> yb = random_uniform<double>(rng, y.shape(), -1, 1);
    Var ybv = tape.input(yb);
    Var xtv = conv_transpose2d(tape, ybv, wv, std::nullopt, stride, 1);
    const Tensor<double>& xt = tape.value(xtv);
    REQUIRE(xt.shape() == x.shape());

    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) lhs += y[i] * yb[i];
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * xt[i];
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("batchnorm2d examples") {
  SUBCASE("constant channel normalizes to zero") {
    Tape<double> tape;
    BatchNormStats<double> stats(1);
    Var x = tape.input(filled<double>({2, 1, 2, 2}, 3.7));
    Var g = tape.input(filled<double>({1}, 1.0));
    Var b = tape.input(filled<double>({1}, 0.0));
    Var out = batchnorm2d(tape, x, g, b, true, stats, 1e-5, 0.1);
    for (std::int64_t i = 0; i < 8; ++i) CHECK(tape.value(out)[i] == doctest::Approx(0.0));
  }
  SUBCASE("two-level channel maps to -1/+1") {
    Tape<double> tape;
    BatchNormStats<double> stats(1);
    Tensor<double> x({2, 1, 1, 1});
    x[0] = 1.0;
    x[1] = 3.0;
    Var out = batchnorm2d(tape, tape.input(std::move(x)), tape.input(filled<double>({1}, 1.0)),
                          tape.input(filled<double>({1}, 0.0)), true, stats, 1e-5, 0.1);
    CHECK(tape.value(out)[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(tape.value(out)[1] == doctest::Approx(1.0).epsilon(1e-4));
    // running stats were blended with momentum 0.1 from (0, 1)
    CHECK(stats.mean[0] == doctest::Approx(0.2));
    CHECK(stats.var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
  }
  SUBCASE("infer mode affine formula") {
    Tape<double> tape;
    BatchNormStats<double> stats(1);  // mean 0, var 1
    Var out = batchnorm2d(tape, tape.input(filled<double>({1, 1, 1, 1}, 1.0)),
                          tape.input(filled<double>({1}, 2.0)),
                          tape.input(filled<double>({1}, 3.0)), false, stats, 1e-5, 0.1);
    CHECK(tape.value(out)[0] == doctest::Approx(5.0).epsilon(1e-4));
  }
  SUBCASE("train mode needs batch*H*W >= 2") {
    Tape<double> tape;
    BatchNormStats<double> stats(1);
    Var x = tape.input(filled<double>({1, 1, 1, 1}, 1.0));
    Var g = tape.input(filled<double>({1}, 1.0));
    Var b = tape.input(filled<double>({1}, 0.0));
    CHECK_THROWS_AS(batchnorm2d(tape, x, g, b, true, stats, 1e-5, 0.1), ContractError);
  }
}

TEST_CASE("batchnorm2d train output moments") {
  // gamma=1, beta=0: per-channel mean ~0 and variance ~1.
  Rng rng(31);
  Tape<double> tape;
  BatchNormStats<double> stats(3);
  Var x = tape.input(random_uniform<double>(rng, {4, 3, 8, 8}, -2, 5));
  Var out = batchnorm2d(tape, x, tape.input(filled<double>({3}, 1.0)),
                        tape.input(filled<double>({3}, 0.0)), true, stats, 1e-5, 0.1);
  const Tensor<double>& y = tape.value(out);
  const std::int64_t plane = 64, N = 4, C = 3;
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0, s2 = 0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t j = 0; j < plane; ++j) {
        double v = y[(n * C + c) * plane + j];
        s += v;
        s2 += v * v;
      }
    double m = s / double(N * plane);
    double var = s2 / double(N * plane) - m * m;
    CHECK(std::abs(m) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-3);
  }
}

TEST_CASE("activation values") {
  Tape<double> tape;
  Tensor<double> x({1, 4});
  x[0] = -1.0;
  x[1] = 0.0;
  x[2] = 0.0;
  x[3] = 0.0;
  Var xv = tape.input(x);
  CHECK(tape.value(activation(tape, xv, Act::leaky_relu))[0] == doctest::Approx(-0.2));
  CHECK(tape.value(activation(tape, xv, Act::tanh))[1] == doctest::Approx(0.0));
  CHECK(tape.value(activation(tape, xv, Act::sigmoid))[1] == doctest::Approx(0.5));
  Var sm = activation(tape, tape.input(filled<double>({1, 4}, 0.0)), Act::softmax_rows);
  for (int i = 0; i < 4; ++i) CHECK(tape.value(sm)[i] == doctest::Approx(0.25));
  CHECK_THROWS_AS(activation(tape, tape.input(filled<double>({1, 1, 2, 2}, 0.0)),
                             Act::softmax_rows),
                  ContractError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(5);
  Tape<double> tape;
  Var sm = activation(tape, tape.input(random_uniform<double>(rng, {16, 4}, -8, 8)),
                      Act::softmax_rows);
  const Tensor<double>& y = tape.value(sm);
  for (std::int64_t r = 0; r < 16; ++r) {
    double s = 0;
    for (std::int64_t c = 0; c < 4; ++c) s += y[r * 4 + c];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("maxpool2d") {
  SUBCASE("64 -> 16 and constant propagation") {
    Tape<double> tape;
    Var out = maxpool2d(tape, tape.input(filled<double>({1, 1, 64, 64}, 0.25)), 4, 4);
    CHECK(tape.value(out).shape() == std::vector<std::int64_t>({1, 1, 16, 16}));
    for (std::int64_t i = 0; i < tape.value(out).numel(); ++i)
      CHECK(tape.value(out)[i] == doctest::Approx(0.25));
  }
  SUBCASE("gradient flows only to the maximal element") {
    Tape<double> tape;
    Tensor<double> x({1, 1, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i) x[i] = double(i + 1);
    Parameter<double> px("x", x);
    Var out = maxpool2d(tape, tape.leaf(px), 4, 4);
    tape.backward(out);
    for (std::int64_t i = 0; i < 16; ++i) CHECK(px.grad[i] == (i == 15 ? 1.0 : 0.0));
  }
  SUBCASE("window larger than input is rejected") {
    Tape<double> tape;
    CHECK_THROWS_AS(maxpool2d(tape, tape.input(filled<double>({1, 1, 3, 3}, 0.0)), 4, 4),
                    ContractError);
  }
}

TEST_CASE("dropout") {
  SUBCASE("p=0 is the identity") {
    Rng rng(1);
    Tape<double> tape;
    Tensor<double> x = random_uniform<double>(rng, {2, 2, 3, 3}, -1, 1);
    Var out = dropout(tape, tape.input(x), 0.0, rng, true);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(tape.value(out)[i] == x[i]);
  }
  SUBCASE("inverted scaling keeps the expectation") {
    Rng rng(2);
    Tape<double> tape;
    Var out = dropout(tape, tape.input(filled<double>({1, 1, 1000, 1000}, 1.0)), 0.5, rng, true);
    double s = 0;
    const Tensor<double>& y = tape.value(out);
    for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i];
    CHECK(std::abs(s / double(y.numel()) - 1.0) <= 0.01);
  }
  SUBCASE("same seed, same mask") {
    Tape<double> tape;
    Var x = tape.input(filled<double>({1, 1, 8, 8}, 1.0));
    Rng a(77), b(77);
    Var ya = dropout(tape, x, 0.5, a, true);
    Var yb = dropout(tape, x, 0.5, b, true);
    for (std::int64_t i = 0; i < 64; ++i) CHECK(tape.value(ya)[i] == tape.value(yb)[i]);
  }
  SUBCASE("invalid probability is rejected") {
    Tape<double> tape;
    Rng rng(3);
    Var x = tape.input(filled<double>({1, 1, 2, 2}, 1.0));
    CHECK_THROWS_AS(dropout(tape, x, 1.0, rng, true), ContractError);
  }
}

TEST_CASE("dense") {
  SUBCASE("identity map") {
    Tape<double> tape;
    Tensor<double> w({3, 3});
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    Rng rng(4);
    Tensor<double> x = random_uniform<double>(rng, {2, 3}, -1, 1);
    Var out = dense(tape, tape.input(x), tape.input(w), tape.input(filled<double>({3}, 0.0)));
    for (std::int64_t i = 0; i < 6; ++i) CHECK(tape.value(out)[i] == doctest::Approx(x[i]));
  }
  SUBCASE("shape rule (16,256)x(128,256) -> (16,128)") {
    Rng rng(6);
    Tape<float> tape;
    Var out = dense(tape, tape.input(random_uniform<float>(rng, {16, 256}, -1, 1)),
                    tape.input(random_uniform<float>(rng, {128, 256}, -1, 1)),
                    tape.input(random_uniform<float>(rng, {128}, -1, 1)));
    CHECK(tape.value(out).shape() == std::vector<std::int64_t>({16, 128}));
  }
  SUBCASE("dimension mismatch rejected") {
    Tape<double> tape;
    Var x = tape.input(filled<double>({2, 3}, 0.0));
    Var w = tape.input(filled<double>({4, 5}, 0.0));
    CHECK_THROWS_AS(dense(tape, x, w, tape.input(filled<double>({4}, 0.0))), ContractError);
  }
}

TEST_CASE("backward quadratic and accumulation") {
  Rng rng(8);
  Parameter<double> x("x", random_uniform<double>(rng, {2, 1, 3, 3}, -2, 2));
  {
    Tape<double> tape;
    Var xv = tape.leaf(x);
    Var loss = sum(tape, mul(tape, xv, xv));
    tape.backward(loss);
    for (std::int64_t i = 0; i < x.value.numel(); ++i)
      CHECK(x.grad[i] == doctest::Approx(2.0 * x.value[i]));
    // two sweeps without zeroing double the gradients, exactly
    tape.backward(loss);
    for (std::int64_t i = 0; i < x.value.numel(); ++i)
      CHECK(x.grad[i] == doctest::Approx(4.0 * x.value[i]));
  }
  {
    Tape<double> tape;
    Var not_scalar = tape.leaf(x);
    CHECK_THROWS_AS(tape.backward(not_scalar), ContractError);
  }
}

TEST_CASE("composed conv->batchnorm->leaky->sum matches finite differences") {
  Rng rng(12);
  Parameter<double> x("x", Tensor<double>({1, 2, 6, 6}));
  Parameter<double> w("w", Tensor<double>({3, 2, 4, 4}));
  Parameter<double> b("b", Tensor<double>({3}));
  Parameter<double> gamma("gamma", Tensor<double>({3}));
  Parameter<double> beta("beta", Tensor<double>({3}));
  for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = rng.uniform(-1, 1);
  for (std::int64_t i = 0; i < w.value.numel(); ++i) w.value[i] = rng.uniform(-0.5, 0.5);
  for (std::int64_t i = 0; i < 3; ++i) {
    b.value[i] = rng.uniform(-0.2, 0.2);
    gamma.value[i] = rng.uniform(0.8, 1.2);
    beta.value[i] = rng.uniform(-0.2, 0.2);
  }
  double err = gradcheck_max_rel_error(
      {&x, &w, &b, &gamma, &beta},
      [&](Tape<double>& t) {
        BatchNormStats<double> stats(3);
        Var h = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 2, 1);
        h = batchnorm2d(t, h, t.leaf(gamma), t.leaf(beta), true, stats, 1e-5, 0.1);
        h = activation(t, h, Act::leaky_relu);
        return sum(t, h);
      },
      1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("layer gradcheck suite (quick)") {
  for (const GradCheckReport& r : layer_gradcheck_suite(3)) {
    INFO(r.name, " max rel err ", r.max_rel_err);
    CHECK(r.max_rel_err <= r.tolerance);
  }
}

TEST_CASE("adam first step magnitude is the learning rate") {
  for (double g : {0.01, 0.5, 12.0, -3.0}) {
    Parameter<float> p("w", Tensor<float>::scalar(1.0f));
    p.grad[0] = float(g);
    AdamConfig cfg;  // lr 2e-4, beta1 0.5
    auto opt = Optimizer<float>::adam({&p}, cfg);
    opt.step();
    double delta = 1.0 - double(p.value[0]);
    CHECK(std::abs(std::abs(delta) - 2e-4) <= 1e-6);
    CHECK((delta > 0) == (g > 0));
    CHECK(p.grad[0] == float(g));  // untouched: caller zeroes
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  Parameter<float> p("w", Tensor<float>::scalar(0.75f));
  auto opt = Optimizer<float>::adam({&p}, AdamConfig{});
  opt.step();
  opt.step();
  CHECK(p.value[0] == 0.75f);
  Parameter<float> q("w", Tensor<float>::scalar(0.75f));
  auto ropt = Optimizer<float>::rmsprop({&q}, RmsPropConfig{});
  ropt.step();
  CHECK(q.value[0] == 0.75f);
}

TEST_CASE("rmsprop reproduces the hand-computed two-step sequence") {
  Parameter<double> p("w", Tensor<double>::scalar(1.0));
  RmsPropConfig cfg;  // lr 1e-3, decay 0.9, momentum 0.9, eps 1e-8
  auto opt = Optimizer<double>::rmsprop({&p}, cfg);

  double sq = 0.0, buf = 0.0, w = 1.0;
  auto scripted = [&](double g) {
    sq = 0.9 * sq + 0.1 * g * g;
    buf = 0.9 * buf + g / (std::sqrt(sq) + 1e-8);
    w -= 1e-3 * buf;
  };

  p.grad[0] = 0.5;
  opt.step();
  scripted(0.5);
  CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-12));

  p.grad[0] = 0.3;
  opt.step();
  scripted(0.3);
  CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-12));
}

TEST_CASE("optimizer state visitation names") {
  Parameter<float> p("gen.enc1.weight", Tensor<float>({2, 2}));
  auto opt = Optimizer<float>::adam({&p}, AdamConfig{});
  std::vector<std::string> names;
  opt.visit_state([&](const std::string& n, Tensor<float>&) { names.push_back(n); });
  CHECK(names == std::vector<std::string>({"gen.enc1.weight.m", "gen.enc1.weight.v"}));
}

TEST_CASE("forward+backward+step is bit-identical across runs") {
  auto run = [] {
    Rng rng(99);
    Parameter<float> w("w", Tensor<float>({4, 2, 4, 4}));
    Parameter<float> b("b", Tensor<float>({4}));
    for (std::int64_t i = 0; i < w.value.numel(); ++i) w.value[i] = float(rng.normal(0, 0.02));
    auto opt = Optimizer<float>::adam({&w, &b}, AdamConfig{});
    Tensor<float> x({2, 2, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform());
    for (int step = 0; step < 3; ++step) {
      Tape<float> tape;
      Rng drop(1000 + std::uint64_t(step));
      Var h = conv2d(tape, tape.input(x), tape.leaf(w), tape.leaf(b), 2, 1);
      h = dropout(tape, h, 0.3f, drop, true);
      Var loss = mean(tape, mul(tape, h, h));
      w.grad.zero();
      b.grad.zero();
      tape.backward(loss);
      opt.step();
    }
    return std::make_pair(w.value, b.value);
  };
  auto [w1, b1] = run();
  auto [w2, b2] = run();
  for (std::int64_t i = 0; i < w1.numel(); ++i) CHECK(w1[i] == w2[i]);
  for (std::int64_t i = 0; i < b1.numel(); ++i) CHECK(b1[i] == b2[i]);
}
