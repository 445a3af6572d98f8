#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nftlab/dataset.hpp"
#include "nftlab/model.hpp"
#include "nftlab/theory.hpp"

using namespace nftlab;

namespace {

Tensor random_input(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({1, h, w});
  for (double& v : x.data) v = rng.uniform(0.05, 1.0);
  return x;
}

}  // namespace

TEST_CASE("euler residual vanishes on bias-free relu nets") {
  const ModelSpec spec = theorem_mlp(1, 6, 6, 16);
  const Parameters params = build_model(spec, 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    CHECK(euler_residual(spec, params, random_input(6, 6, seed)) <= 1e-10);
}

TEST_CASE("a nonzero bias breaks the identity measurably") {
  const ModelSpec spec = theorem_mlp(1, 6, 6, 16);
  Parameters params = build_model(spec, 2);
  // hand-inject a bias: the residual diagnostic must catch the violation
  ModelSpec biased = spec;
  biased.layers[1].has_bias = true;
  Parameters bp = params;
  bp.layers[0].bias = Tensor({16}, 0.35);

  // the guard refuses models whose spec declares biases
  CHECK_THROWS_AS(euler_residual(biased, bp, random_input(6, 6, 3)), ValueError);

  // bypassing the spec flag (bias-free spec, nonzero bias smuggled into the
  // weights by an extra constant) is emulated through f(x) + c: compute the
  // residual formula directly
  const Tensor x = random_input(6, 6, 4);
  const auto fg = [&](const Tensor& in) {
    Tensor batch({1, 1, 6, 6});
    batch.data = in.data;
    Tape t;
    const int xin = t.input(batch);
    const ForwardNodes fn = build_forward(t, spec, params, nullptr, xin);
    const int f = t.sum(fn.logits);
    t.backward(f);
    Tensor g = t.grad(xin);
    g.shape = in.shape;
    return std::make_pair(t.value(f)[0], g);
  };
  const auto [f, g] = fg(x);
  const double c = 0.75;  // constant offset = a bias on the output unit
  const double residual = std::abs((f + c) - dot(g, x)) / (std::abs(f + c) + 1e-12);
  CHECK(residual > 1e-3);
}

TEST_CASE("positive homogeneity f(2x) = 2 f(x)") {
  const ModelSpec spec = theorem_mlp(1, 6, 6, 16);
  const Parameters params = build_model(spec, 5);
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const Tensor x = random_input(6, 6, seed);
    Tensor x2 = x;
    for (double& v : x2.data) v *= 2.0;
    Tensor b1({1, 1, 6, 6}), b2({1, 1, 6, 6});
    b1.data = x.data;
    b2.data = x2.data;
    const double f1 = forward(spec, params, nullptr, b1)[0];
    const double f2 = forward(spec, params, nullptr, b2)[0];
    CHECK(std::abs(f2 - 2.0 * f1) / std::max(std::abs(2.0 * f1), 1e-12) < 1e-10);
  }
}

TEST_CASE("epsilon estimate: beta mean, cosine bounds, linear closed form") {
  // E[1-lambda] for Beta(1,1) is 1/2
  const ModelSpec spec = theorem_mlp(1, 4, 4, 8);
  const Parameters params = build_model(spec, 6);
  const Dataset ds = synth_generate(2, 20, 4, 4, 7);
  const EpsilonEstimate est = estimate_epsilon(spec, params, ds, 1.0, 1.0);
  CHECK(est.expected_one_minus_lambda == doctest::Approx(0.5).epsilon(1e-12));

  // R_i = eps_i / (c_x E sqrt(d)) must lie in [-1, 1]
  const double d = 16.0;
  for (double e : est.eps) {
    const double r = e / (est.c_x * 0.5 * std::sqrt(d));
    CHECK(r >= -1.0 - 1e-12);
    CHECK(r <= 1.0 + 1e-12);
  }

  // linear model: f(x) = w.x, so eps_i = cos(w, x_i) c_x E sqrt(d) exactly
  ModelSpec lin;
  lin.in_channels = 1;
  lin.in_height = 4;
  lin.in_width = 4;
  lin.classes = 1;
  lin.layers = {LayerSpec::flatten(), LayerSpec::dense(16, 1, false)};
  const Parameters lp = build_model(lin, 8);
  const EpsilonEstimate lest = estimate_epsilon(lin, lp, ds, 2.0, 3.0);
  CHECK(lest.expected_one_minus_lambda == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
  Tensor w({16});
  for (int i = 0; i < 16; ++i) w[i] = lp.layers[0].weights[i];
  double cx = 1e300;
  for (int i = 0; i < ds.count(); ++i)
    cx = std::min(cx, l2_norm(ds.image(i)) / std::sqrt(16.0));
  CHECK(lest.c_x == doctest::Approx(cx).epsilon(1e-12));
  for (std::size_t k = 0; k < lest.eps.size(); ++k) {
    const Tensor x = ds.image(lest.sample_index[k]);
    Tensor flat({16});
    flat.data = x.data;
    const double want = dot(w, flat) / (l2_norm(w) * l2_norm(flat)) * cx * (3.0 / 5.0) * 4.0;
    CHECK(std::abs(lest.eps[k] - want) < 1e-10);
  }
}

TEST_CASE("epsilon estimate is scale consistent") {
  const ModelSpec spec = theorem_mlp(1, 4, 4, 8);
  const Parameters params = build_model(spec, 9);
  const Dataset ds = synth_generate(2, 10, 4, 4, 10);
  const EpsilonEstimate a = estimate_epsilon(spec, params, ds, 1.0, 1.0);
  Dataset scaled = ds;
  const double k = 3.5;
  for (double& v : scaled.images.data) v *= k;
  const EpsilonEstimate b = estimate_epsilon(spec, params, scaled, 1.0, 1.0);
  CHECK(b.c_x == doctest::Approx(k * a.c_x).epsilon(1e-9));
  REQUIRE(a.eps.size() == b.eps.size());
  for (std::size_t i = 0; i < a.eps.size(); ++i)
    CHECK(b.eps[i] == doctest::Approx(k * a.eps[i]).epsilon(1e-9));
}

TEST_CASE("bound check input validation") {
  const ModelSpec spec = theorem_mlp(1, 4, 4, 8);
  const Parameters params = build_model(spec, 11);
  const Dataset ds = synth_generate(2, 10, 4, 4, 12);
  CHECK_THROWS_AS(mixup_bound_check(spec, params, ds, 1.0, 1.0, 50), ValueError);

  Dataset multi = ds;
  multi.labels[0] = 2;
  CHECK_THROWS_AS(mixup_bound_check(spec, params, multi, 1.0, 1.0, 1000), ValueError);

  const ModelSpec with_bias = mlp_small(1, 4, 4, 2);
  const Parameters bp = build_model(with_bias, 13);
  CHECK_THROWS_AS(mixup_bound_check(with_bias, bp, ds, 1.0, 1.0, 1000), ValueError);
}

TEST_CASE("lambda pinned near 1 degenerates both sides to the plain loss") {
  const ModelSpec spec = theorem_mlp(1, 4, 4, 8);
  Parameters params = build_model(spec, 14);
  const Dataset ds = synth_generate(2, 30, 4, 4, 15);
  train_binary_logistic(spec, params, ds, 0.05, 0.9, 10, 16, 16);

  const BoundReport rep = mixup_bound_check(spec, params, ds, 1e6, 1.0, 2000,
                                            PerturbDirection::Gradient, 17);
  // plain mean logistic loss over the set
  double plain = 0.0;
  for (int i = 0; i < ds.count(); ++i) {
    Tensor b({1, 1, 4, 4});
    b.data = ds.image(i).data;
    plain += logistic_loss_value(forward(spec, params, nullptr, b)[0],
                                 ds.labels[static_cast<std::size_t>(i)]);
  }
  plain /= ds.count();
  CHECK(std::abs(rep.mix_loss_mean - plain) < 0.05);
  CHECK(std::abs(rep.eps_min) < 1e-4);
  CHECK(std::abs(rep.ideal_loss - plain) < 0.05);
}

TEST_CASE("forcing eps to zero reduces the bound to L_mix >= L") {
  const ModelSpec spec = theorem_mlp(1, 4, 4, 8);
  Parameters params = build_model(spec, 18);
  const Dataset ds = synth_generate(2, 30, 4, 4, 19);
  train_binary_logistic(spec, params, ds, 0.05, 0.9, 20, 16, 20);

  // evaluate the perturbed side by hand at eps = 0: it is the plain loss
  double plain = 0.0;
  for (int i = 0; i < ds.count(); ++i) {
    Tensor b({1, 1, 4, 4});
    b.data = ds.image(i).data;
    plain += logistic_loss_value(forward(spec, params, nullptr, b)[0],
                                 ds.labels[static_cast<std::size_t>(i)]);
  }
  plain /= ds.count();

  const BoundReport rep = mixup_bound_check(spec, params, ds, 1.0, 1.0, 4000,
                                            PerturbDirection::Gradient, 21);
  // L_mix exceeds the plain loss on a trained model (jensen-style gap)
  CHECK(rep.mix_loss_mean + 3.0 * rep.mix_loss_stderr >= plain);
}

TEST_CASE("bound check holds on trained models and is estimator-consistent") {
  int holds = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ModelSpec spec = theorem_mlp(1, 6, 6, 24);
    Parameters params = build_model(spec, 100 + seed);
    const Dataset train_ds = synth_generate(2, 60, 6, 6, 200 + seed);
    train_binary_logistic(spec, params, train_ds, 0.05, 0.9, 30, 32, 300 + seed);
    const Dataset eval_ds = synth_generate(2, 60, 6, 6, 400 + seed);
    const BoundReport rep = mixup_bound_check(spec, params, eval_ds, 1.0, 1.0, 4000,
                                              PerturbDirection::Gradient, 500 + seed);
    if (rep.inequality_holds) ++holds;

    if (seed == 0) {
      // doubling the samples moves the estimate by < 3 pooled stderr
      const BoundReport rep2 = mixup_bound_check(spec, params, eval_ds, 1.0, 1.0, 8000,
                                                 PerturbDirection::Gradient, 500 + seed);
      const double pooled = std::sqrt(rep.mix_loss_stderr * rep.mix_loss_stderr +
                                      rep2.mix_loss_stderr * rep2.mix_loss_stderr);
      CHECK(std::abs(rep.mix_loss_mean - rep2.mix_loss_mean) < 3.0 * pooled);

      // the random-direction variant also runs
      const BoundReport rnd = mixup_bound_check(spec, params, eval_ds, 1.0, 1.0, 1000,
                                                PerturbDirection::Random, 600);
      CHECK(std::isfinite(rnd.ideal_loss));
    }
  }
  CHECK(holds >= 2);  // the full 5-seed version runs in the acceptance suite
}
