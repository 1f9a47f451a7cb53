#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace msnas {

enum class OperatorKind { SepConv3x3, DilConv3x3r2, AvgPool3x3, SkipConnect, Zero };

inline constexpr std::array<OperatorKind, 5> kAllOperators{
    OperatorKind::SepConv3x3, OperatorKind::DilConv3x3r2, OperatorKind::AvgPool3x3,
    OperatorKind::SkipConnect, OperatorKind::Zero};

const char* to_string(OperatorKind k);
std::optional<OperatorKind> parse_operator(std::string_view s);

// Everything a module owns that a checkpoint must carry.
struct StateRefs {
  std::vector<Param*> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(Param& p) { params.push_back(&p); }
};

// He-normal initialisation with the given fan-in.
Tensor he_normal(Shape shape, int fan_in, Rng& rng);

// Per-channel affine normalisation (batch statistics when training,
// running statistics otherwise).
struct Norm {
  Norm() = default;
  Norm(const std::string& name, int channels);

  Param gamma;
  Param beta;
  NormStats stats;
  std::string name;

  Var forward(Var x, bool training);
  void collect(StateRefs& refs);
};

// 1x1 convolution followed by normalisation.
struct Projection {
  Projection() = default;
  Projection(const std::string& name, int in_channels, int out_channels, Rng& rng);

  Param weight;
  Norm norm;

  Var forward(Var x, bool training);
  void collect(StateRefs& refs);
};

// activation -> depthwise 3x3 (dilation d, size-preserving padding d) ->
// pointwise 1x1 -> normalisation, plus a residual from the block input
// (1x1 projection with bias when channel counts differ).
struct ConvBlock {
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels, int dilation, Rng& rng);

  int in_channels = 0;
  int out_channels = 0;
  int dilation = 1;
  Param depthwise;  // (C_in, 1, 3, 3)
  Param pointwise;  // (C_out, C_in, 1, 1)
  Norm norm;
  std::optional<Param> residual_weight;  // (C_out, C_in, 1, 1)
  std::optional<Param> residual_bias;    // (C_out)

  Var forward(Var x, bool training);
  void collect(StateRefs& refs);
};

Var sep_conv3x3(Var x, ConvBlock& weights, bool training);
Var dil_conv3x3(Var x, ConvBlock& weights, bool training);

// Weights for every parametric operator of one candidate edge operating at
// a fixed channel count.
struct OperatorBank {
  OperatorBank() = default;
  OperatorBank(const std::string& name, int channels, std::span<const OperatorKind> ops, Rng& rng);

  int channels = 0;
  std::optional<ConvBlock> sep;
  std::optional<ConvBlock> dil;

  // Result of `op` on x. Returns nullopt for Zero (an all-zero contribution).
  std::optional<Var> apply(OperatorKind op, Var x, bool training);
  void collect(StateRefs& refs);
};

// Fixed 3x3 convolution + normalisation from the image to the base width.
struct Stem {
  Stem() = default;
  Stem(const std::string& name, int image_channels, int out_channels, Rng& rng);

  Param weight;
  Norm norm;

  Var forward(Var image, bool training);
  void collect(StateRefs& refs);
};

// Fixed output head: 1x1 classifier with bias, then bilinear upsampling
// back to input resolution (one factor-2 step per scale level).
struct Head {
  Head() = default;
  Head(const std::string& name, int in_channels, int num_classes, int scale, Rng& rng);

  Param weight;
  Param bias;
  int scale = 0;

  Var forward(Var x);
  void collect(StateRefs& refs);
};

}  // namespace msnas
