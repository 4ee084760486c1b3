#include "mammoseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mammoseg/rng.hpp"

namespace mammoseg {
namespace {

Tensor<double> random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values in +-[0.1, 1]: keeps relu/leaky kinks at least 0.1 away from the
// central-difference step.
Tensor<double> random_signed_tensor(Rng& rng, std::vector<std::int64_t> shape) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = rng.uniform(0.1, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return t;
}

// Distinct values with pairwise gaps >= 0.02 so pooling argmaxes are stable.
Tensor<double> random_gapped_tensor(Rng& rng, std::vector<std::int64_t> shape) {
  Tensor<double> t(std::move(shape));
  std::vector<std::int64_t> order(std::size_t(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) order[std::size_t(i)] = i;
  for (std::int64_t i = t.numel() - 1; i > 0; --i)
    std::swap(order[std::size_t(i)], order[std::size_t(rng.below(std::uint64_t(i + 1)))]);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[order[std::size_t(i)]] = 0.02 * double(i);
  return t;
}

// Smooth random functional that exposes every element of a non-scalar output.
Var probe(Tape<double>& tape, Var out, const Tensor<double>& weights) {
  Var w = tape.input(weights);
  return sum(tape, mul(tape, out, w));
}

}  // namespace

double gradcheck_max_rel_error(const std::vector<Parameter<double>*>& params,
                               const LossBuilder& build, double h) {
  for (Parameter<double>* p : params) p->grad.zero();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  double worst = 0.0;
  for (Parameter<double>* p : params) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      double lp;
      {
        Tape<double> tape;
        lp = tape.value(build(tape))[0];
      }
      p->value[i] = saved - h;
      double lm;
      {
        Tape<double> tape;
        lm = tape.value(build(tape))[0];
      }
      p->value[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

std::vector<GradCheckReport> layer_gradcheck_suite(int seeds) {
  struct Case {
    std::string name;
    std::function<double(Rng)> run;  // returns max rel err for one seed
  };

  auto run_with = [](std::vector<Parameter<double>*> params, LossBuilder build) {
    return gradcheck_max_rel_error(params, build);
  };

  std::vector<Case> cases;

  cases.push_back({"conv2d_s1", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {2, 2, 6, 6}));
    Parameter<double> w("w", random_signed_tensor(rng, {3, 2, 3, 3}));
    Parameter<double> b("b", random_signed_tensor(rng, {3}));
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 3, 6, 6});
    return run_with({&x, &w, &b}, [&](Tape<double>& t) {
      Var out = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 1, 1);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"conv2d_s2", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {2, 3, 6, 6}));
    Parameter<double> w("w", random_signed_tensor(rng, {4, 3, 4, 4}));
    Parameter<double> b("b", random_signed_tensor(rng, {4}));
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 4, 3, 3});
    return run_with({&x, &w, &b}, [&](Tape<double>& t) {
      Var out = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 2, 1);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"conv_transpose2d", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {2, 3, 3, 3}));
    Parameter<double> w("w", random_signed_tensor(rng, {3, 2, 4, 4}));
    Parameter<double> b("b", random_signed_tensor(rng, {2}));
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 2, 6, 6});
    return run_with({&x, &w, &b}, [&](Tape<double>& t) {
      Var out = conv_transpose2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 2, 1);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"batchnorm_train", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {2, 3, 4, 4}));
    Parameter<double> g("g", random_tensor(rng, {3}, 0.5, 1.5));
    Parameter<double> b("b", random_tensor(rng, {3}, -0.5, 0.5));
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 3, 4, 4});
    return run_with({&x, &g, &b}, [&, probe_w](Tape<double>& t) {
      BatchNormStats<double> stats(3);
      Var out = batchnorm2d(t, t.leaf(x), t.leaf(g), t.leaf(b), true, stats, 1e-5, 0.1);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"batchnorm_infer", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {2, 3, 4, 4}));
    Parameter<double> g("g", random_tensor(rng, {3}, 0.5, 1.5));
    Parameter<double> b("b", random_tensor(rng, {3}, -0.5, 0.5));
    Tensor<double> rm = random_tensor(rng, {3}, -0.3, 0.3);
    Tensor<double> rv = random_tensor(rng, {3}, 0.5, 2.0);
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 3, 4, 4});
    return run_with({&x, &g, &b}, [&, rm, rv, probe_w](Tape<double>& t) {
      BatchNormStats<double> stats(3);
      stats.mean = rm;
      stats.var = rv;
      Var out = batchnorm2d(t, t.leaf(x), t.leaf(g), t.leaf(b), false, stats, 1e-5, 0.1);
      return probe(t, out, probe_w);
    });
  }});

  auto act_case = [](std::string name, Act kind) {
    return Case{std::move(name), [kind](Rng rng) {
      Parameter<double> x("x", random_signed_tensor(rng, {2, 3, 4, 4}));
      Tensor<double> probe_w = random_signed_tensor(rng, {2, 3, 4, 4});
      return gradcheck_max_rel_error({&x}, [&, kind](Tape<double>& t) {
        Var out = activation(t, t.leaf(x), kind);
        return probe(t, out, probe_w);
      });
    }};
  };
  cases.push_back(act_case("relu", Act::relu));
  cases.push_back(act_case("leaky_relu", Act::leaky_relu));
  cases.push_back(act_case("tanh", Act::tanh));
  cases.push_back(act_case("sigmoid", Act::sigmoid));

  cases.push_back({"softmax_rows", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {3, 4}));
    Tensor<double> probe_w = random_signed_tensor(rng, {3, 4});
    return run_with({&x}, [&, probe_w](Tape<double>& t) {
      Var out = activation(t, t.leaf(x), Act::softmax_rows);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"maxpool2d", [=](Rng rng) {
    Parameter<double> x("x", random_gapped_tensor(rng, {1, 2, 8, 8}));
    Tensor<double> probe_w = random_signed_tensor(rng, {1, 2, 2, 2});
    return run_with({&x}, [&, probe_w](Tape<double>& t) {
      Var out = maxpool2d(t, t.leaf(x), 4, 4);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"dropout", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {2, 3, 4, 4}));
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 3, 4, 4});
    Rng mask_rng = rng.derive(1);
    return run_with({&x}, [&, probe_w, mask_rng](Tape<double>& t) {
      Rng local = mask_rng;  // same mask on every rebuild
      Var out = dropout(t, t.leaf(x), 0.3, local, true);
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"dense", [=](Rng rng) {
    Parameter<double> x("x", random_signed_tensor(rng, {3, 5}));
    Parameter<double> w("w", random_signed_tensor(rng, {4, 5}));
    Parameter<double> b("b", random_signed_tensor(rng, {4}));
    Tensor<double> probe_w = random_signed_tensor(rng, {3, 4});
    return run_with({&x, &w, &b}, [&, probe_w](Tape<double>& t) {
      Var out = dense(t, t.leaf(x), t.leaf(w), t.leaf(b));
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"concat_channels", [=](Rng rng) {
    Parameter<double> a("a", random_signed_tensor(rng, {2, 2, 3, 3}));
    Parameter<double> b("b", random_signed_tensor(rng, {2, 3, 3, 3}));
    Tensor<double> probe_w = random_signed_tensor(rng, {2, 5, 3, 3});
    return run_with({&a, &b}, [&, probe_w](Tape<double>& t) {
      Var out = concat_channels(t, t.leaf(a), t.leaf(b));
      return probe(t, out, probe_w);
    });
  }});

  cases.push_back({"elementwise_chain", [=](Rng rng) {
    Parameter<double> a("a", random_signed_tensor(rng, {2, 3, 4, 4}));
    Parameter<double> b("b", random_signed_tensor(rng, {2, 3, 4, 4}));
    return run_with({&a, &b}, [&](Tape<double>& t) {
      Var u = affine(t, t.leaf(a), 1.3, 0.2);
      return mean(t, mul(t, u, t.leaf(b)));
    });
  }});

  cases.push_back({"neg_mean_log", [=](Rng rng) {
    Parameter<double> x("x", random_tensor(rng, {2, 3, 4, 4}, 0.05, 1.0));
    return run_with({&x}, [&](Tape<double>& t) {
      return neg_mean_log(t, t.leaf(x), 1e-7);
    });
  }});

  cases.push_back({"mean_abs_diff", [=](Rng rng) {
    Parameter<double> a("a", random_tensor(rng, {2, 3, 4, 4}, 0.6, 1.0));
    Parameter<double> b("b", random_tensor(rng, {2, 3, 4, 4}, 0.0, 0.4));
    return run_with({&a, &b}, [&](Tape<double>& t) {
      return mean_abs_diff(t, t.leaf(a), t.leaf(b));
    });
  }});

  cases.push_back({"weighted_nll_softmax", [=](Rng rng) {
    Parameter<double> logits("z", random_signed_tensor(rng, {4, 4}));
    std::vector<int> labels{0, 1, 2, 3};
    std::vector<double> weights{0.75, 0.6, 0.9, 0.95};
    return run_with({&logits}, [&, labels, weights](Tape<double>& t) {
      Var p = activation(t, t.leaf(logits), Act::softmax_rows);
      return weighted_nll(t, p, labels, weights, 1e-7);
    });
  }});

  cases.push_back({"dice_loss", [=](Rng rng) {
    Parameter<double> y("y", random_tensor(rng, {1, 1, 6, 6}, 0.0, 1.0));
    Parameter<double> g("g", random_tensor(rng, {1, 1, 6, 6}, 0.1, 0.9));
    return run_with({&y, &g}, [&](Tape<double>& t) {
      return dice_loss(t, t.leaf(y), t.leaf(g), 1e-7);
    });
  }});

  std::vector<GradCheckReport> reports;
  for (const Case& c : cases) {
    GradCheckReport r;
    r.name = c.name;
    for (int s = 0; s < seeds; ++s)
      r.max_rel_err = std::max(r.max_rel_err, c.run(Rng(0x5eed0000u + std::uint64_t(s))));
    reports.push_back(r);
  }
  return reports;
}

}  // namespace mammoseg
