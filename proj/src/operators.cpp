#include "operators.hpp"

#include <algorithm>
#include <cmath>

namespace msnas {

const char* to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::SepConv3x3: return "sep_conv_3x3";
    case OperatorKind::DilConv3x3r2: return "dil_conv_3x3";
    case OperatorKind::AvgPool3x3: return "avg_pool_3x3";
    case OperatorKind::SkipConnect: return "skip_connect";
    case OperatorKind::Zero: return "zero";
  }
  return "?";
}

std::optional<OperatorKind> parse_operator(std::string_view s) {
  for (OperatorKind k : kAllOperators) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(fan_in, 1)));
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// ---------------------------------------------------------------- Norm

Norm::Norm(const std::string& n, int channels)
    : gamma(n + ".gamma", Tensor({1, channels, 1, 1}, 1.0), false),
      beta(n + ".beta", Tensor({1, channels, 1, 1}, 0.0), false),
      stats(channels),
      name(n) {}

Var Norm::forward(Var x, bool training) {
  Tape& t = *x.tape;
  return batch_norm(x, t.leaf(gamma), t.leaf(beta), stats, training);
}

void Norm::collect(StateRefs& refs) {
  refs.add(gamma);
  refs.add(beta);
  refs.buffers.emplace_back(name + ".running_mean", &stats.mean);
  refs.buffers.emplace_back(name + ".running_var", &stats.var);
}

// ---------------------------------------------------------------- Projection

Projection::Projection(const std::string& name, int in_channels, int out_channels, Rng& rng)
    : weight(name + ".weight", he_normal({out_channels, in_channels, 1, 1}, in_channels, rng)),
      norm(name + ".norm", out_channels) {}

Var Projection::forward(Var x, bool training) {
  Var y = conv2d(x, x.tape->leaf(weight), std::nullopt, ConvSpec{});
  return norm.forward(y, training);
}

void Projection::collect(StateRefs& refs) {
  refs.add(weight);
  norm.collect(refs);
}

// ---------------------------------------------------------------- ConvBlock

ConvBlock::ConvBlock(const std::string& name, int cin, int cout, int dil, Rng& rng)
    : in_channels(cin),
      out_channels(cout),
      dilation(dil),
      depthwise(name + ".depthwise", he_normal({cin, 1, 3, 3}, 9, rng)),
      pointwise(name + ".pointwise", he_normal({cout, cin, 1, 1}, cin, rng)),
      norm(name + ".norm", cout) {
  if (cin != cout) {
    residual_weight.emplace(name + ".residual.weight", he_normal({cout, cin, 1, 1}, cin, rng));
    residual_bias.emplace(name + ".residual.bias", Tensor({1, cout, 1, 1}, 0.0));
  }
}

Var ConvBlock::forward(Var x, bool training) {
  if (x.shape().c != in_channels) {
    throw ShapeError("conv block expects " + std::to_string(in_channels) +
                     " input channels, got " + x.shape().str());
  }
  Tape& t = *x.tape;
  Var h = relu(x);
  h = conv2d(h, t.leaf(depthwise), std::nullopt,
             ConvSpec{.stride = 1, .padding = dilation, .dilation = dilation, .groups = in_channels});
  h = conv2d(h, t.leaf(pointwise), std::nullopt, ConvSpec{});
  h = norm.forward(h, training);
  Var residual = x;
  if (residual_weight) {
    residual = conv2d(x, t.leaf(*residual_weight), t.leaf(*residual_bias), ConvSpec{});
  }
  return add(residual, h);
}

void ConvBlock::collect(StateRefs& refs) {
  refs.add(depthwise);
  refs.add(pointwise);
  norm.collect(refs);
  if (residual_weight) {
    refs.add(*residual_weight);
    refs.add(*residual_bias);
  }
}

Var sep_conv3x3(Var x, ConvBlock& weights, bool training) {
  if (weights.dilation != 1) throw std::invalid_argument("sep_conv3x3 needs a dilation-1 block");
  return weights.forward(x, training);
}

Var dil_conv3x3(Var x, ConvBlock& weights, bool training) {
  if (weights.dilation != 2) throw std::invalid_argument("dil_conv3x3 needs a dilation-2 block");
  return weights.forward(x, training);
}

// ---------------------------------------------------------------- OperatorBank

OperatorBank::OperatorBank(const std::string& name, int ch, std::span<const OperatorKind> ops,
                           Rng& rng)
    : channels(ch) {
  for (OperatorKind op : ops) {
    if (op == OperatorKind::SepConv3x3) sep.emplace(name + ".sep", ch, ch, 1, rng);
    if (op == OperatorKind::DilConv3x3r2) dil.emplace(name + ".dil", ch, ch, 2, rng);
  }
}

std::optional<Var> OperatorBank::apply(OperatorKind op, Var x, bool training) {
  switch (op) {
    case OperatorKind::SepConv3x3:
      if (!sep) throw std::logic_error("operator bank has no sep_conv weights");
      return sep_conv3x3(x, *sep, training);
    case OperatorKind::DilConv3x3r2:
      if (!dil) throw std::logic_error("operator bank has no dil_conv weights");
      return dil_conv3x3(x, *dil, training);
    case OperatorKind::AvgPool3x3:
      return avg_pool3x3(x);
    case OperatorKind::SkipConnect:
      return x;
    case OperatorKind::Zero:
      return std::nullopt;
  }
  return std::nullopt;
}

void OperatorBank::collect(StateRefs& refs) {
  if (sep) sep->collect(refs);
  if (dil) dil->collect(refs);
}

// ---------------------------------------------------------------- Stem / Head

Stem::Stem(const std::string& name, int image_channels, int out_channels, Rng& rng)
    : weight(name + ".weight", he_normal({out_channels, image_channels, 3, 3}, 9 * image_channels, rng)),
      norm(name + ".norm", out_channels) {}

Var Stem::forward(Var image, bool training) {
  Var y = conv2d(image, image.tape->leaf(weight), std::nullopt, ConvSpec{.padding = 1});
  return norm.forward(y, training);
}

void Stem::collect(StateRefs& refs) {
  refs.add(weight);
  norm.collect(refs);
}

Head::Head(const std::string& name, int in_channels, int num_classes, int s, Rng& rng)
    : weight(name + ".weight", he_normal({num_classes, in_channels, 1, 1}, in_channels, rng)),
      bias(name + ".bias", Tensor({1, num_classes, 1, 1}, 0.0), false),
      scale(s) {}

Var Head::forward(Var x) {
  Tape& t = *x.tape;
  Var y = conv2d(x, t.leaf(weight), t.leaf(bias), ConvSpec{});
  for (int i = 0; i < scale; ++i) y = upsample_bilinear2(y);
  return y;
}

void Head::collect(StateRefs& refs) {
  refs.add(weight);
  refs.add(bias);
}

}  // namespace msnas
