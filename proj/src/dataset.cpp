#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rng.hpp"

namespace msnas {

void Dataset::validate() const {
  if (num_classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SegSample& s = samples[i];
    const Shape expect{1, channels, size, size};
    if (!(s.image.shape() == expect)) {
      throw ShapeError("sample " + std::to_string(i) + " image " + s.image.shape().str() +
                       ", expected " + expect.str());
    }
    if (s.label.size() != static_cast<std::size_t>(size) * size) {
      throw ShapeError("sample " + std::to_string(i) + " label size mismatch");
    }
    for (std::int32_t c : s.label) {
      if (c < 0 || c >= num_classes) {
        throw std::out_of_range("sample " + std::to_string(i) + " has label " + std::to_string(c));
      }
    }
  }
}

double class_level(int c, int num_classes) { return (c + 0.5) / num_classes; }

Dataset gen_synthetic(const SynthOptions& opt) {
  if (opt.num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (opt.size < 4) throw std::invalid_argument("image size must be >= 4");
  if (opt.count < 0 || opt.channels < 1) throw std::invalid_argument("bad count or channels");
  if (!(opt.noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
  Rng shapes = derive_stream(opt.seed, "data");
  Rng noise = derive_stream(opt.seed, "noise");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n = opt.size;
  const int k = opt.num_classes;
  Dataset d{n, opt.channels, k, {}};
  d.samples.reserve(opt.count);
  for (int i = 0; i < opt.count; ++i) {
    SegSample s{Tensor({1, opt.channels, n, n}), std::vector<std::int32_t>(n * n, 0)};
    for (int c = 1; c < k; ++c) {
      const int shapes_here = 1 + static_cast<int>(unit(shapes) * 2.0);
      for (int j = 0; j < shapes_here; ++j) {
        const bool ellipse = unit(shapes) < 0.5;
        const double cy = (0.2 + 0.6 * unit(shapes)) * n;
        const double cx = (0.2 + 0.6 * unit(shapes)) * n;
        const double ry = std::max(1.0, n * (0.125 + 0.125 * unit(shapes)));
        const double rx = std::max(1.0, n * (0.125 + 0.125 * unit(shapes)));
        for (int y = 0; y < n; ++y) {
          for (int x = 0; x < n; ++x) {
            const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
            const bool inside = ellipse ? dy * dy + dx * dx <= 1.0
                                        : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
            if (inside) s.label[y * n + x] = c;
          }
        }
      }
    }
    std::vector<double> level(k);
    for (int c = 0; c < k; ++c) level[c] = class_level(c, k) + (unit(shapes) - 0.5) * 0.2 / k;
    for (int ch = 0; ch < opt.channels; ++ch) {
      for (int p = 0; p < n * n; ++p) {
        s.image.at(0, ch, p / n, p % n) = level[s.label[p]] + opt.noise * gauss(noise);
      }
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

Batch make_batch(const Dataset& d, std::span<const int> indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const int b = static_cast<int>(indices.size());
  Batch out{Tensor({b, d.channels, d.size, d.size}), {}};
  const std::size_t per = static_cast<std::size_t>(d.channels) * d.size * d.size;
  out.labels.reserve(static_cast<std::size_t>(b) * d.size * d.size);
  for (int i = 0; i < b; ++i) {
    const SegSample& s = d.samples.at(indices[i]);
    std::copy(s.image.data().begin(), s.image.data().end(), out.images.data().begin() + i * per);
    out.labels.insert(out.labels.end(), s.label.begin(), s.label.end());
  }
  return out;
}

std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (n < k) {
    throw std::invalid_argument("cannot split " + std::to_string(n) + " samples into " +
                                std::to_string(k) + " folds");
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = derive_stream(seed, "folds");
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> folds(k);
  int at = 0;
  for (int f = 0; f < k; ++f) {
    const int len = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(idx.begin() + at, idx.begin() + at + len);
    std::sort(folds[f].begin(), folds[f].end());
    at += len;
  }
  return folds;
}

PairScores score_pair(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                      int num_classes) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth differ in size");
  std::vector<long long> inter(num_classes, 0), np(num_classes, 0), ng(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int a = pred[i], b = gt[i];
    if (a < 0 || a >= num_classes || b < 0 || b >= num_classes) {
      throw std::out_of_range("class id out of range at pixel " + std::to_string(i));
    }
    ++np[a];
    ++ng[b];
    if (a == b) ++inter[a];
  }
  PairScores s;
  s.iou.resize(num_classes);
  s.dice.resize(num_classes);
  int included = 0;
  for (int c = 0; c < num_classes; ++c) {
    const long long total = np[c] + ng[c];
    if (total == 0) continue;
    s.iou[c] = static_cast<double>(inter[c]) / static_cast<double>(total - inter[c]);
    s.dice[c] = 2.0 * static_cast<double>(inter[c]) / static_cast<double>(total);
    s.mean_iou += *s.iou[c];
    s.mean_dice += *s.dice[c];
    ++included;
  }
  if (included > 0) {
    s.mean_iou /= included;
    s.mean_dice /= included;
  }
  return s;
}

MetricAccumulator::MetricAccumulator(int num_classes)
    : k_(num_classes), class_iou_(num_classes, 0.0), class_dice_(num_classes, 0.0),
      class_n_(num_classes, 0) {}

void MetricAccumulator::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
  const PairScores s = score_pair(pred, gt, k_);
  ++samples_;
  sum_iou_ += s.mean_iou;
  sum_dice_ += s.mean_dice;
  for (int c = 0; c < k_; ++c) {
    if (!s.iou[c]) continue;
    class_iou_[c] += *s.iou[c];
    class_dice_[c] += *s.dice[c];
    ++class_n_[c];
  }
}

Metrics MetricAccumulator::result() const {
  Metrics m;
  m.samples = samples_;
  m.class_iou.resize(k_);
  m.class_dice.resize(k_);
  for (int c = 0; c < k_; ++c) {
    if (class_n_[c] == 0) continue;
    m.class_iou[c] = class_iou_[c] / class_n_[c];
    m.class_dice[c] = class_dice_[c] / class_n_[c];
  }
  if (samples_ > 0) {
    m.mean_iou = sum_iou_ / samples_;
    m.mean_dice = sum_dice_ / samples_;
  }
  return m;
}

std::vector<std::int32_t> argmax_classes(const Tensor& logits) {
  const Shape s = logits.shape();
  std::vector<std::int32_t> out(static_cast<std::size_t>(s.n) * s.h * s.w);
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        int best = 0;
        for (int c = 1; c < s.c; ++c) {
          if (logits.at(n, c, y, x) > logits.at(n, best, y, x)) best = c;
        }
        out[(static_cast<std::size_t>(n) * s.h + y) * s.w + x] = best;
      }
    }
  }
  return out;
}

}  // namespace msnas
