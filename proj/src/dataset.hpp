#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace msnas {

struct SegSample {
  Tensor image;                     // (1, C, H, W)
  std::vector<std::int32_t> label;  // H*W class ids
};

struct Dataset {
  int size = 0;  // square side
  int channels = 1;
  int num_classes = 2;
  std::vector<SegSample> samples;

  std::size_t count() const { return samples.size(); }
  // Throws when a sample's shape or labels break the dataset invariants.
  void validate() const;
};

struct SynthOptions {
  std::uint64_t seed = 0;
  int count = 64;
  int size = 32;
  int num_classes = 3;
  double noise = 0.05;
  int channels = 1;
};

// Centre of the intensity band of class c out of k: (c + 0.5) / k.
double class_level(int c, int num_classes);

// Images of one or more ellipses/rectangles per foreground class painted in
// that class's intensity band, plus Gaussian noise. Labels are the painted
// masks.
Dataset gen_synthetic(const SynthOptions& opt);

struct Batch {
  Tensor images;                     // (B, C, H, W)
  std::vector<std::int32_t> labels;  // B*H*W
};

Batch make_batch(const Dataset& d, std::span<const int> indices);

// k disjoint folds covering [0, n) after a seeded shuffle; sizes differ by
// at most one; each fold sorted ascending.
std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed);

// ---------------------------------------------------------------- metrics

struct PairScores {
  std::vector<std::optional<double>> iou;   // nullopt: class absent from both maps
  std::vector<std::optional<double>> dice;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
};

PairScores score_pair(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                      int num_classes);
inline PairScores miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                       int num_classes) {
  return score_pair(pred, gt, num_classes);
}
inline PairScores dsc(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                      int num_classes) {
  return score_pair(pred, gt, num_classes);
}

struct Metrics {
  std::vector<std::optional<double>> class_iou;   // mean over images where the class occurs
  std::vector<std::optional<double>> class_dice;
  double mean_iou = 0.0;   // mean over images of the per-image class mean
  double mean_dice = 0.0;
  int samples = 0;
};

// Per-image accumulation of scores.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(int num_classes);
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt);
  Metrics result() const;

 private:
  int k_;
  int samples_ = 0;
  double sum_iou_ = 0.0, sum_dice_ = 0.0;
  std::vector<double> class_iou_, class_dice_;
  std::vector<int> class_n_;
};

// Per-pixel argmax over the class axis of (B, K, H, W) logits; ties go to
// the lower class.
std::vector<std::int32_t> argmax_classes(const Tensor& logits);

}  // namespace msnas
