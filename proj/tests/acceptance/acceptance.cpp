// Acceptance suite: one PASS/FAIL line per criterion, exit 1 on any failure.
// Criteria 1-5 are end-to-end desk-scale experiments on the bundled configs;
// 6-10 are property checks. Expect a runtime in the tens of minutes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "nftlab/experiment.hpp"
#include "nftlab/finite_diff.hpp"
#include "nftlab/theory.hpp"

using namespace nftlab;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string config_path(const char* name) {
  return std::string(NFTLAB_CONFIG_DIR) + "/" + name;
}

ExperimentConfig load_bundled(const char* name) {
  return parse_experiment_config_file(config_path(name));
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Shared state assembled once and reused across criteria.
struct Workbench {
  ExperimentConfig badnets = load_bundled("badnets-desk.json");
  Dataset train_all, test;
  SplitResult split;  // the 1% holdout of badnets-desk
  TrainedModel backdoored;
  TrainedModel benign;
  TriggeredTestSet triggered;
  double train_seconds = 0.0;
  double benign_acc = 0.0, backdoor_acc = 0.0, backdoor_asr = 0.0;

  Workbench() {
    Timer t;
    train_all = load_train_data(badnets);
    test = load_test_data(badnets);
    split = holdout_split(train_all, badnets.purify.validation);
    backdoored = run_training(badnets, split.train, true);
    benign = run_training(badnets, split.train, false);
    train_seconds = t.seconds();
    triggered = make_triggered_test(badnets, test);
    benign_acc = clean_accuracy(benign.spec, benign.params, test);
    backdoor_acc = clean_accuracy(backdoored.spec, backdoored.params, test);
    backdoor_asr = attack_success_rate(backdoored.spec, backdoored.params, triggered);
  }
};

}  // namespace

// 1. Backdoor insertion fidelity: ASR >= 0.95, ACC within 2 points of the
//    benign model, both trainings within 10 minutes of one core.
void criterion_1(const Workbench& wb) {
  const bool pass = wb.backdoor_asr >= 0.95 &&
                    std::abs(wb.backdoor_acc - wb.benign_acc) <= 0.02 &&
                    wb.train_seconds <= 600.0;
  report(1, pass,
         "backdoor insertion: asr " + fmt(wb.backdoor_asr) + " (>= 0.95), acc " +
             fmt(wb.backdoor_acc) + " vs benign " + fmt(wb.benign_acc) +
             " (|diff| <= 0.02), train wall " + fmt(wb.train_seconds) + "s (<= 600)");
}

// 2. NFT purification on badnets / blend / sig-clean-label, 3 purification
//    seeds each: ASR <= 0.10, ACC drop <= 5 points, <= 5 min per run.
void criterion_2(const Workbench& wb) {
  bool pass = true;
  std::string detail;
  const char* configs[] = {"badnets-desk.json", "blend-desk.json",
                           "sig-clean-label-desk.json"};
  for (const char* name : configs) {
    ExperimentConfig cfg = load_bundled(name);
    Dataset train_all, test;
    SplitResult split;
    TrainedModel model;
    TriggeredTestSet triggered;
    if (std::string(name) == "badnets-desk.json") {
      test = wb.test;
      split = wb.split;
      model = wb.backdoored;
      triggered = wb.triggered;
    } else {
      train_all = load_train_data(cfg);
      test = load_test_data(cfg);
      split = holdout_split(train_all, cfg.purify.validation);
      model = run_training(cfg, split.train, true);
      triggered = make_triggered_test(cfg, test);
    }
    const double acc_before = clean_accuracy(model.spec, model.params, test);
    const double asr_before = attack_success_rate(model.spec, model.params, triggered);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      NftConfig nft = cfg.purify.nft;
      nft.seed = cfg.purify.nft.seed + seed;
      Timer t;
      const PurifyResult res = purify_nft(model.spec, model.params, split.validation, nft);
      const double wall = t.seconds();
      const double acc = clean_accuracy(model.spec, res.purified, test);
      const double asr = attack_success_rate(model.spec, res.purified, triggered);
      const bool ok = asr <= 0.10 && acc_before - acc <= 0.05 && wall <= 300.0;
      pass = pass && ok;
      detail += std::string(name) + "#" + std::to_string(seed) + " asr " +
                fmt(asr_before) + "->" + fmt(asr) + " acc " + fmt(acc_before) + "->" +
                fmt(acc) + " " + fmt(wall) + "s; ";
    }
  }
  report(2, pass, "nft purification (asr <= 0.10, acc drop <= 0.05): " + detail);
}

// 3. One-shot regime, 5 seeds: ASR <= 0.20 and ACC drop <= 10 points with the
//    regularizer; mean ACC with the regularizer beats eta-base = 0.
// 5. Same runs: mean one-shot NFT ACC >= mean one-shot vanilla-FT ACC.
void criteria_3_and_5(const Workbench& wb) {
  const ExperimentConfig cfg = load_bundled("one-shot-desk.json");
  const double acc_before =
      clean_accuracy(wb.backdoored.spec, wb.backdoored.params, wb.test);
  bool pass3 = true;
  std::string detail3;
  double mean_reg = 0.0, mean_noreg = 0.0, mean_vanilla = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    // one clean sample per class, drawn from the defender's holdout pool
    SplitSpec shot;
    shot.mode = SplitSpec::Mode::PerClassCount;
    shot.per_class = 1;
    shot.seed = 1000 + seed;
    const Dataset one_shot = holdout_split(wb.split.validation, shot).validation;

    NftConfig nft = cfg.purify.nft;
    nft.seed = cfg.purify.nft.seed + seed;
    const PurifyResult reg =
        purify_nft(wb.backdoored.spec, wb.backdoored.params, one_shot, nft);
    const double acc = clean_accuracy(wb.backdoored.spec, reg.purified, wb.test);
    const double asr = attack_success_rate(wb.backdoored.spec, reg.purified, wb.triggered);
    mean_reg += acc / 5.0;
    if (!(asr <= 0.20 && acc_before - acc <= 0.10)) pass3 = false;
    detail3 += "#" + std::to_string(seed) + " asr " + fmt(asr) + " acc " + fmt(acc) + "; ";

    NftConfig noreg = nft;
    noreg.eta_base = 0.0;
    const PurifyResult bare =
        purify_nft(wb.backdoored.spec, wb.backdoored.params, one_shot, noreg);
    mean_noreg +=
        clean_accuracy(wb.backdoored.spec, bare.purified, wb.test) / 5.0;

    const Parameters ft =
        purify_vanilla_ft(wb.backdoored.spec, wb.backdoored.params, one_shot, nft);
    mean_vanilla += clean_accuracy(wb.backdoored.spec, ft, wb.test) / 5.0;
  }
  const bool reg_helps = mean_reg > mean_noreg;
  report(3, pass3 && reg_helps,
         "one-shot nft (asr <= 0.20, acc drop <= 0.10): " + detail3 + "mean acc with reg " +
             fmt(mean_reg) + " > without " + fmt(mean_noreg));
  report(5, mean_reg >= mean_vanilla,
         "one-shot ordering: mean nft acc " + fmt(mean_reg) + " >= vanilla-ft acc " +
             fmt(mean_vanilla));
}

// 4. Purifying a benign model costs at most 2 accuracy points.
void criterion_4(const Workbench& wb) {
  const PurifyResult res = purify_nft(wb.benign.spec, wb.benign.params,
                                      wb.split.validation, wb.badnets.purify.nft);
  const double acc = clean_accuracy(wb.benign.spec, res.purified, wb.test);
  report(4, wb.benign_acc - acc <= 0.02,
         "benign pass-through: acc " + fmt(wb.benign_acc) + " -> " + fmt(acc) +
             " (drop <= 0.02)");
}

// 6. Autodiff vs central finite differences on every op and composed nets,
//    100 seeds, rel-err <= 1e-4 away from relu/max-pool kinks.
void criterion_6() {
  double worst = 0.0;
  bool pass = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto rand_tensor = [&](std::vector<int> shape, double scale = 1.0) {
      Tensor t(std::move(shape));
      for (double& v : t.data) {
        v = rng.normal(0.0, scale);
        if (std::abs(v) < 1e-3) v = 0.5;  // stay off the kinks
      }
      return t;
    };

    // composed conv net: conv -> bias -> relu -> pool -> flatten -> dense ->
    // soft CE, gradients for kernels, bias, dense weights, masks and input
    const Tensor X = rand_tensor({2, 1, 6, 6});
    const Tensor K = rand_tensor({3, 1, 3, 3});
    const Tensor Bc = rand_tensor({3});
    const Tensor W = rand_tensor({12, 4});
    const Tensor M = Tensor::from({4}, {0.9, 0.7, 1.0, 0.6});
    Tensor targets({2, 4});
    targets[0] = 1.0;
    targets[static_cast<std::int64_t>(1) * 4 + 2] = 1.0;

    auto loss_at = [&](const Tensor& k, const Tensor& bc, const Tensor& w,
                       const Tensor& m, const Tensor& x) {
      Tape t;
      const int conv = t.add_bias_channels(t.conv2d(t.input(x), t.input(k), 1, 0),
                                           t.input(bc));
      const int pooled = t.flatten(t.max_pool2(t.relu(conv)));
      const int logits = t.matmul(pooled, t.scale_columns(t.input(w), t.input(m)));
      return t.value(t.soft_cross_entropy(logits, targets))[0];
    };

    Tape t;
    const int xn = t.input(X);
    const int kn = t.input(K);
    const int bn = t.input(Bc);
    const int wn = t.input(W);
    const int mn = t.input(M);
    const int conv = t.add_bias_channels(t.conv2d(xn, kn, 1, 0), bn);
    const int pooled = t.flatten(t.max_pool2(t.relu(conv)));
    const int logits = t.matmul(pooled, t.scale_columns(wn, mn));
    const int loss = t.soft_cross_entropy(logits, targets);
    t.backward(loss);

    const struct {
      int node;
      const Tensor* at;
    } checks[] = {{kn, &K}, {bn, &Bc}, {wn, &W}, {mn, &M}, {xn, &X}};
    for (const auto& c : checks) {
      const Tensor fd = finite_diff_gradient(
          [&](const Tensor& p) {
            return loss_at(c.node == kn ? p : K, c.node == bn ? p : Bc,
                           c.node == wn ? p : W, c.node == mn ? p : M,
                           c.node == xn ? p : X);
          },
          *c.at, 1e-5);
      worst = std::max(worst, gradient_rel_error(t.grad(c.node), fd));
    }

    // scalar ops: logistic loss, l1 distance, mean/sum/add/scale chain
    const Tensor F = rand_tensor({5});
    Tensor y({5});
    for (int i = 0; i < 5; ++i) y[i] = (seed + i) % 2;
    Tensor ref = rand_tensor({5});
    auto scalar_loss = [&](const Tensor& f) {
      Tape tt;
      const int fn = tt.input(f);
      const int a = tt.mean(tt.logistic_loss(fn, y));
      const int b = tt.scale(tt.l1_distance(fn, ref), 0.25);
      return tt.value(tt.add(a, b))[0];
    };
    Tape ts;
    const int fn = ts.input(F);
    const int a = ts.mean(ts.logistic_loss(fn, y));
    const int b = ts.scale(ts.l1_distance(fn, ref), 0.25);
    ts.backward(ts.add(a, b));
    worst = std::max(worst,
                     gradient_rel_error(ts.grad(fn),
                                        finite_diff_gradient(scalar_loss, F, 1e-6)));
    if (worst > 1e-4) {
      pass = false;
      break;
    }
  }
  report(6, pass,
         "gradient correctness over 100 seeds: worst rel-err " +
             std::to_string(worst) + " (<= 1e-4)");
}

// 7. Mask feasibility and isolation across an entire purification trace.
void criterion_7(const Workbench& wb) {
  const Parameters before = wb.backdoored.params;
  NftConfig nft = wb.badnets.purify.nft;
  nft.epochs = std::min(nft.epochs, 30);
  const Schedule sched = nft.schedule();
  bool feasible = true;
  int steps = 0;
  const PurifyResult res = purify_nft(
      wb.backdoored.spec, wb.backdoored.params, wb.split.validation, nft,
      [&](const MaskSet& masks) {
        ++steps;
        int l = 0;
        for (std::size_t i = 0; i < masks.masks.size(); ++i) {
          if (!masks.maskable[i]) {
            for (double v : masks.masks[i].data)
              if (v != 1.0) feasible = false;
            continue;
          }
          ++l;
          const double lo = sched.mu(l);
          for (double v : masks.masks[i].data)
            if (v < lo || v > 1.0) feasible = false;
        }
      });
  const bool weights_isolated = wb.backdoored.params == before;
  bool first_layer_ones = !res.masks.maskable[0];
  for (double v : res.masks.masks[0].data)
    if (v != 1.0) first_layer_ones = false;
  // raw weights and biases of the output equal the input's, bitwise
  bool raw_equal = true;
  const Parameters recomposed = apply_masks(before, res.masks);
  for (std::size_t i = 0; i < before.layers.size(); ++i) {
    if (res.purified.layers[i].bias.data != before.layers[i].bias.data) raw_equal = false;
    if (res.purified.layers[i].weights.data != recomposed.layers[i].weights.data)
      raw_equal = false;
  }
  report(7, feasible && weights_isolated && first_layer_ones && raw_equal && steps > 0,
         "mask feasibility over " + std::to_string(steps) +
             " steps, weights/biases untouched, first-layer masks pinned at 1");
}

// 8. Euler identity on bias-free relu models; bias injection breaks it.
void criterion_8() {
  const ModelSpec spec = theorem_mlp(1, 8, 8, 32);
  const Parameters params = build_model(spec, 808);
  Rng rng(809);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Tensor x({1, 8, 8});
    for (double& v : x.data) v = rng.uniform(0.05, 1.0);
    worst = std::max(worst, euler_residual(spec, params, x));
  }
  // counterexample: the same network with a constant added to the output
  Tensor x({1, 8, 8});
  for (double& v : x.data) v = rng.uniform(0.05, 1.0);
  Tensor batch({1, 1, 8, 8});
  batch.data = x.data;
  Tape t;
  const int xin = t.input(batch);
  const ForwardNodes fn = build_forward(t, spec, params, nullptr, xin);
  const int f = t.sum(fn.logits);
  t.backward(f);
  const double fx = t.value(f)[0] + 0.5;  // injected output bias
  Tensor g = t.grad(xin);
  g.shape = x.shape;
  const double residual_biased = std::abs(fx - dot(g, x)) / (std::abs(fx) + 1e-12);
  report(8, worst <= 1e-10 && residual_biased > 1e-3,
         "euler identity: bias-free worst residual " + std::to_string(worst) +
             " (<= 1e-10), bias-injected residual " + fmt(residual_biased) + " (> 1e-3)");
}

// 9. Theorem 1 diagnostic: inequality holds on >= 4 of 5 seeds.
void criterion_9() {
  const ExperimentConfig cfg = load_bundled("theorem-desk.json");
  const TheoryConfig& tc = *cfg.theory;
  int holds = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelSpec spec = theorem_mlp(1, tc.height, tc.width, tc.hidden);
    Parameters params = build_model(spec, tc.seed + seed);
    const Dataset train_ds = synth_generate(2, tc.per_class, tc.height, tc.width,
                                            tc.seed + 100 + seed, tc.noise_sigma);
    train_binary_logistic(spec, params, train_ds, tc.train_lr, tc.train_momentum,
                          tc.train_epochs, tc.train_batch, tc.seed + 200 + seed);
    const Dataset eval_ds = synth_generate(2, tc.per_class, tc.height, tc.width,
                                           tc.test_seed + seed, tc.noise_sigma);
    const BoundReport rep = mixup_bound_check(spec, params, eval_ds, 1.0, 1.0, 10000,
                                              PerturbDirection::Gradient, tc.seed + seed);
    if (rep.inequality_holds) ++holds;
    detail += "#" + std::to_string(seed) + (rep.inequality_holds ? " holds" : " FAILS") +
              " (mix " + fmt(rep.mix_loss_mean) + " vs ideal " + fmt(rep.ideal_loss) +
              "); ";
  }
  report(9, holds >= 4, "theorem diagnostic " + std::to_string(holds) + "/5: " + detail);
}

// 10. Re-running a bundled config from its embedded resolved copy reproduces
//     every metric bitwise (wall-times excluded).
void criterion_10() {
  bool pass = true;
  std::string detail;

  for (const char* name : {"badnets-desk.json", "one-shot-desk.json"}) {
    const ExperimentConfig cfg = load_bundled(name);
    const PipelineResult first = run_pipeline(cfg);
    const ExperimentConfig replay = parse_experiment_config(first.report["config"]);
    const PipelineResult second = run_pipeline(replay);
    const bool same = first.report["metrics"] == second.report["metrics"] &&
                      first.report["config"] == second.report["config"];
    pass = pass && same;
    detail += std::string(name) + (same ? " reproduced; " : " DIVERGED; ");
  }

  const ExperimentConfig theorem = load_bundled("theorem-desk.json");
  const TheoryOutcome t1 = run_theory_stage(theorem, "");
  const ExperimentConfig replay = parse_experiment_config(t1.report["config"]);
  const TheoryOutcome t2 = run_theory_stage(replay, "");
  ojson b1 = t1.report;
  ojson b2 = t2.report;
  const bool same = b1["bound"] == b2["bound"] &&
                    b1["euler-max-residual"] == b2["euler-max-residual"];
  pass = pass && same;
  detail += std::string("theorem-desk.json") + (same ? " reproduced" : " DIVERGED");
  report(10, pass, "determinism: " + detail);
}

int main() {
  std::printf("building shared desk-scale models (badnets benign/backdoored)...\n");
  std::fflush(stdout);
  const Workbench wb;
  criterion_1(wb);
  criterion_2(wb);
  criteria_3_and_5(wb);
  criterion_4(wb);
  criterion_6();
  criterion_7(wb);
  criterion_8();
  criterion_9();
  criterion_10();
  if (g_failures == 0) {
    std::printf("all criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
