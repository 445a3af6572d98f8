#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nftlab/attack.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/eval.hpp"
#include "nftlab/model.hpp"
#include "nftlab/train.hpp"

using namespace nftlab;

namespace {

// a dense head pinned to emit one constant class
Parameters constant_predictor(const ModelSpec& spec, int winner) {
  Parameters p = build_model(spec, 0);
  LayerParams& head = p.layers.back();
  for (double& v : head.weights.data) v = 0.0;
  for (std::int64_t i = 0; i < head.bias.size(); ++i)
    head.bias[i] = i == winner ? 10.0 : 0.0;
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("clean accuracy: constant predictor, perfect labels, hand count") {
  const Dataset ds = synth_generate(10, 20, 8, 8, 1);  // balanced, 200 samples
  const ModelSpec spec = mlp_small(1, 8, 8, 10);
  const Parameters constant = constant_predictor(spec, 3);
  CHECK(clean_accuracy(spec, constant, ds) == doctest::Approx(0.10).epsilon(1e-12));

  // relabel everything to the constant class: accuracy 1.0
  Dataset all3 = ds;
  for (int& y : all3.labels) y = 3;
  CHECK(clean_accuracy(spec, constant, all3) == 1.0);

  // hand-counted check on 20 rows
  const Dataset small = ds.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14,
                                   15, 16, 17, 18, 19});
  const std::vector<int> pred = predict(forward(spec, constant, nullptr, small.images));
  int hits = 0;
  for (int i = 0; i < 20; ++i)
    if (pred[static_cast<std::size_t>(i)] == small.labels[static_cast<std::size_t>(i)])
      ++hits;
  CHECK(clean_accuracy(spec, constant, small) ==
        doctest::Approx(hits / 20.0).epsilon(1e-12));

  const std::vector<double> per_class = per_class_accuracy(spec, constant, ds);
  for (int k = 0; k < 10; ++k) CHECK(per_class[static_cast<std::size_t>(k)] == (k == 3 ? 1.0 : 0.0));
}

TEST_CASE("asr: chance level for random models, 1.0 for a hardwired one") {
  const Dataset test = synth_generate(10, 30, 8, 8, 2);
  const LabelMap map{LabelMap::Mode::All2One, 0};
  const TriggeredTestSet trig =
      build_poison_test_set(test, CheckerboardTrigger{3, Corner::BottomLeft}, map);

  const ModelSpec spec = mlp_small(1, 8, 8, 10);
  double asr_sum = 0.0;
  for (std::uint64_t seed : {101ULL, 102ULL, 103ULL})
    asr_sum += attack_success_rate(spec, build_model(spec, seed), trig);
  // untrained He-initialized nets predict near-uniformly
  CHECK(asr_sum / 3.0 == doctest::Approx(0.10).epsilon(0.35));

  CHECK(attack_success_rate(spec, constant_predictor(spec, 0), trig) == 1.0);
}

TEST_CASE("lcr: ideal and worst cases, disjointness with asr") {
  const Dataset test = synth_generate(10, 30, 8, 8, 3);
  const LabelMap map{LabelMap::Mode::All2One, 0};
  const TriggeredTestSet trig =
      build_poison_test_set(test, CheckerboardTrigger{3, Corner::BottomLeft}, map);
  const ModelSpec spec = mlp_small(1, 8, 8, 10);

  // a predictor hardwired to the target: lcr 0, asr 1
  const Parameters to_target = constant_predictor(spec, 0);
  CHECK(label_correction_rate(spec, to_target, trig) == 0.0);
  CHECK(attack_success_rate(spec, to_target, trig) == 1.0);

  // an oracle that ignores the trigger entirely: train on clean data only
  Parameters params = build_model(spec, 4);
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 50;
  tc.seed = 5;
  train(spec, params, test, tc);
  const double lcr = label_correction_rate(spec, params, trig);
  const double asr = attack_success_rate(spec, params, trig);
  CHECK(lcr + asr <= 1.0 + 1e-12);

  // asr + lcr <= 1 for any model under all2one (disjoint events)
  for (std::uint64_t seed : {6ULL, 7ULL}) {
    const Parameters rnd = build_model(spec, seed);
    CHECK(attack_success_rate(spec, rnd, trig) + label_correction_rate(spec, rnd, trig) <=
          1.0 + 1e-12);
  }
}

TEST_CASE("metrics are bitwise stable across repeated evaluation") {
  const Dataset test = synth_generate(4, 25, 8, 8, 8);
  const ModelSpec spec = mlp_small(1, 8, 8, 4);
  const Parameters params = build_model(spec, 9);
  const TriggeredTestSet trig = build_poison_test_set(
      test, BlendTrigger{0.2, 5}, LabelMap{LabelMap::Mode::All2All, 0});
  CHECK(clean_accuracy(spec, params, test) == clean_accuracy(spec, params, test));
  CHECK(attack_success_rate(spec, params, trig) == attack_success_rate(spec, params, trig));
  CHECK(label_correction_rate(spec, params, trig) ==
        label_correction_rate(spec, params, trig));

  // accuracy is unchanged by all-ones masks
  const MaskSet ones = MaskSet::ones_for(spec, true);
  CHECK(clean_accuracy(spec, apply_masks(params, ones), test) ==
        clean_accuracy(spec, params, test));
}

TEST_CASE("embedding export: schema, cardinality, byte-identical re-export") {
  const Dataset clean = synth_generate(3, 6, 8, 8, 10);  // 18 samples
  const ModelSpec spec = mlp_small(1, 8, 8, 3);
  const Parameters params = build_model(spec, 11);
  const TriggeredTestSet trig = build_poison_test_set(
      clean, CheckerboardTrigger{2, Corner::TopRight}, LabelMap{LabelMap::Mode::All2One, 1});

  const std::string path =
      (std::filesystem::temp_directory_path() / "nftlab_embed.csv").string();
  export_embeddings(spec, params, clean, &trig, path);
  const std::string text = slurp(path);

  std::istringstream lines(text);
  std::string header;
  std::getline(lines, header);
  std::istringstream hs(header);
  std::string col;
  int cols = 0;
  while (std::getline(hs, col, ',')) ++cols;
  CHECK(cols == 3 + 256);  // split, true_label, attack_target, e_0..e_255
  CHECK(header.substr(0, 30) == "split,true_label,attack_target");

  int rows = 0;
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == clean.count() + trig.data.count());

  export_embeddings(spec, params, clean, &trig, path);
  CHECK(slurp(path) == text);  // deterministic bytes
  std::remove(path.c_str());
}
