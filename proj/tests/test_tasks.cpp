#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "network.hpp"
#include "oracles.hpp"

using namespace msnas;

namespace {

// Nearest intensity band.
std::vector<std::int32_t> threshold_segment(const Tensor& image, int num_classes) {
  std::vector<std::int32_t> out(image.numel());
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const int c = static_cast<int>(std::floor(image[i] * num_classes));
    out[i] = std::clamp(c, 0, num_classes - 1);
  }
  return out;
}

DecodedArch small_arch(int layers, int scales, std::uint64_t seed, int n_paths) {
  const SupernetGraph g(layers, scales);
  Rng rng = derive_stream(seed, "t");
  return decode_architecture(g, random_arch(g, CellConfig{}, 1.0, rng), n_paths);
}

}  // namespace

TEST_CASE("generator is deterministic per seed") {
  const SynthOptions opt{7, 6, 16, 3, 0.05, 1};
  const Dataset a = gen_synthetic(opt), b = gen_synthetic(opt);
  REQUIRE(a.count() == 6);
  for (std::size_t i = 0; i < a.count(); ++i) {
    CHECK(std::memcmp(a.samples[i].image.data().data(), b.samples[i].image.data().data(),
                      a.samples[i].image.numel() * sizeof(double)) == 0);
    CHECK(a.samples[i].label == b.samples[i].label);
  }
  SynthOptions other = opt;
  other.seed = 8;
  CHECK(gen_synthetic(other).samples[0].label != a.samples[0].label);
  a.validate();
}

TEST_CASE("two classes give binary labels with a present foreground") {
  const Dataset d = gen_synthetic({3, 10, 16, 2, 0.05, 1});
  for (const SegSample& s : d.samples) {
    std::set<int> seen(s.label.begin(), s.label.end());
    CHECK(seen == std::set<int>{0, 1});
  }
}

TEST_CASE("multi-channel images share the label map") {
  const Dataset d = gen_synthetic({4, 2, 8, 3, 0.0, 3});
  CHECK(d.samples[0].image.shape() == Shape{1, 3, 8, 8});
  d.validate();
}

TEST_CASE("zero-noise data is solved by intensity thresholds") {
  const Dataset d = gen_synthetic({11, 20, 32, 3, 0.0, 1});
  MetricAccumulator acc(3);
  for (const SegSample& s : d.samples) acc.add(threshold_segment(s.image, 3), s.label);
  CHECK(acc.result().mean_dice > 0.99);
}

TEST_CASE("generator rejects degenerate requests") {
  CHECK_THROWS_AS(gen_synthetic({1, 4, 16, 1, 0.0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic({1, 4, 2, 2, 0.0, 1}), std::invalid_argument);
}

TEST_CASE("IOU and Dice closed cases") {
  const std::vector<std::int32_t> pred{1, 1, 0, 0}, gt{1, 0, 0, 0};
  const PairScores s = score_pair(pred, gt, 2);
  CHECK(*s.iou[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*s.dice[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(*s.iou[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  const PairScores same = miou(gt, gt, 3);
  CHECK(*same.iou[0] == 1.0);
  CHECK(*same.iou[1] == 1.0);
  CHECK_FALSE(same.iou[2].has_value());
  CHECK(same.mean_iou == 1.0);
  CHECK(dsc(gt, gt, 3).mean_dice == 1.0);

  const std::vector<std::int32_t> ones(4, 1), zeros(4, 0);
  const PairScores disjoint = score_pair(ones, zeros, 2);
  CHECK(*disjoint.iou[0] == 0.0);
  CHECK(*disjoint.iou[1] == 0.0);
  CHECK(disjoint.mean_dice == 0.0);
}

TEST_CASE("metrics reject bad inputs") {
  const std::vector<std::int32_t> a{0, 1}, b{0, 2}, c{0};
  CHECK_THROWS_AS(score_pair(a, b, 2), std::out_of_range);
  CHECK_THROWS_AS(score_pair(a, c, 2), ShapeError);
}

TEST_CASE("Dice equals 2 IOU / (1 + IOU) on random masks") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + trial % 4;
    std::uniform_int_distribution<int> cls(0, k - 1);
    std::vector<std::int32_t> p(64), g(64);
    for (auto& v : p) v = cls(rng);
    for (auto& v : g) v = cls(rng);
    const PairScores s = score_pair(p, g, k);
    for (int c = 0; c < k; ++c) {
      if (!s.iou[c]) continue;
      CHECK(std::abs(*s.dice[c] - 2 * *s.iou[c] / (1 + *s.iou[c])) <= 1e-12);
      CHECK(*s.iou[c] >= 0.0);
      CHECK(*s.dice[c] <= 1.0);
    }
  }
}

TEST_CASE("k-fold split partitions the index range") {
  const auto f = kfold_split(10, 5, 3);
  REQUIRE(f.size() == 5);
  std::set<int> all;
  for (const auto& fold : f) {
    CHECK(fold.size() == 2);
    all.insert(fold.begin(), fold.end());
  }
  CHECK(all.size() == 10);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 9);
  CHECK(kfold_split(10, 5, 3) == f);
  const auto uneven = kfold_split(11, 3, 1);
  CHECK(uneven[0].size() == 4);
  CHECK(uneven[2].size() == 3);
  CHECK_THROWS_AS(kfold_split(3, 5, 0), std::invalid_argument);
}

TEST_CASE("argmax prefers the lower class on ties") {
  Tensor logits({1, 3, 1, 2}, 0.0);
  logits.at(0, 2, 0, 1) = 1.0;
  CHECK(argmax_classes(logits) == std::vector<std::int32_t>{0, 2});
}

TEST_CASE("decoded network runs and its gradients match finite differences") {
  const DecodedArch a = small_arch(3, 2, 2, 3);
  DecodedNetwork net(a, {4, 1, 2, 4}, 5);
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng);
  std::vector<std::int32_t> labels(128);
  for (auto& v : labels) v = static_cast<int>(rng() % 2);
  Tape t(false);
  CHECK(net.forward(t.constant(x), false).shape() == Shape{2, 2, 8, 8});
  StateRefs st = net.state();
  const auto r = oracle::check_grads(
      [&](Tape& tape) { return segmentation_loss(net.forward(tape.constant(x), true), labels); },
      st.params, 1e-5, 1e-5, 1e-8, 2);
  CAPTURE(r.worst_name);
  CHECK(r.ok());
}

TEST_CASE("decoded network rejects tampered architectures") {
  DecodedArch a = small_arch(3, 2, 2, 2);
  a.cell_instances.pop_back();
  CHECK_THROWS_AS(DecodedNetwork(a, {4, 1, 2, 4}, 1), InvalidArchitecture);
}

TEST_CASE("perfect predictions score 1") {
  const Dataset d = gen_synthetic({5, 6, 16, 3, 0.0, 1});
  ForwardFn oracle_fwd = [&](Var image, bool) {
    const Tensor& x = image.value();
    const Shape s = x.shape();
    Tensor logits({s.n, 3, s.h, s.w}, 0.0);
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          const int c = std::clamp(static_cast<int>(std::floor(x.at(n, 0, y, xx) * 3)), 0, 2);
          logits.at(n, c, y, xx) = 1.0;
        }
    return image.tape->constant(logits);
  };
  const Metrics m = evaluate_model(oracle_fwd, d, {0, 1, 2, 3, 4, 5}, 4);
  CHECK(m.mean_iou == 1.0);
  CHECK(m.mean_dice == 1.0);
  CHECK(m.samples == 6);
}

TEST_CASE("cross-validated retraining smoke run") {
  const Dataset d = gen_synthetic({9, 8, 16, 2, 0.05, 1});
  const DecodedArch a = small_arch(3, 2, 4, 2);
  TrainConfig cfg;
  cfg.folds = 2;
  cfg.epochs = 2;
  cfg.seed = 3;
  const CrossValResult r = train_decoded(a, {4, 1, 2, 4}, d, cfg);
  REQUIRE(r.folds.size() == 2);
  for (const FoldResult& f : r.folds) {
    CHECK_FALSE(f.failed);
    CHECK(f.epoch_loss.size() == 2);
    CHECK(f.metrics.samples == 4);
    CHECK(f.metrics.mean_dice >= 0.0);
    CHECK(f.metrics.mean_dice <= 1.0);
    CHECK(std::isfinite(f.metrics.mean_iou));
  }
  const CrossValResult again = train_decoded(a, {4, 1, 2, 4}, d, cfg);
  for (int f = 0; f < 2; ++f) {
    CHECK(again.folds[f].metrics.mean_dice == r.folds[f].metrics.mean_dice);
    CHECK(again.folds[f].epoch_loss == r.folds[f].epoch_loss);
  }
  TrainConfig too_many = cfg;
  too_many.folds = 5;
  CHECK_THROWS_AS(train_decoded(a, {4, 1, 2, 4}, d, too_many), std::invalid_argument);
}

TEST_CASE("a diverging fold is recorded and the run continues") {
  Dataset d = gen_synthetic({9, 8, 16, 2, 0.05, 1});
  const auto folds = kfold_split(8, 2, 3);
  // Poison one image of fold 1, so only fold 0 trains on it.
  d.samples[folds[1][0]].image[0] = std::nan("");
  TrainConfig cfg;
  cfg.folds = 2;
  cfg.epochs = 1;
  cfg.seed = 3;
  const CrossValResult r = train_decoded(small_arch(3, 2, 4, 1), {4, 1, 2, 4}, d, cfg);
  CHECK(r.failed == 1);
  CHECK(r.folds[0].failed);
  CHECK_FALSE(r.folds[0].error.empty());
  CHECK_FALSE(r.folds[1].failed);
}
