#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace msnas {

// A trainable tensor with its gradient and SGD momentum buffer.
struct Param {
  Param() = default;
  Param(std::string param_name, Tensor init, bool apply_decay = true);

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;
  bool requires_grad = true;
  // Weight decay applies to kernel weights only, never to architecture
  // scalars.
  bool decay = true;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode differentiation tape. Nodes are appended in execution order,
// which is a topological order, so backward is a single reverse sweep.
// One tape belongs to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Returns the leaf node for `p`, creating it on first use.
  Var leaf(Param& p);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Appends a node. `fn` is dropped when no input needs a gradient.
  Var push(Tensor value, std::vector<int> inputs, BackwardFn fn);

  // Gradient buffer of node `id`, allocated as zeros on first access.
  Tensor& grad(int id);
  // Gradient of a node after backward(); empty when nothing reached it.
  const Tensor& grad_view(int id) const { return grads_[id]; }

  // Propagates d(root)/d(node) to every node and accumulates into the
  // grad field of each Param leaf that requires gradients.
  void backward(Var root);

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    Param* param = nullptr;
    bool needs_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Param*, int> leaves_;
};

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

// Running statistics of a normalization layer (per channel).
struct NormStats {
  Tensor mean;
  Tensor var;
  explicit NormStats(int channels = 0)
      : mean({1, channels, 1, 1}, 0.0), var({1, channels, 1, 1}, 1.0) {}
};

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.1;

// ---- primitive differentiable operations ----

Var add(Var a, Var b);
Var add_all(std::span<const Var> terms);
Var scale(Var x, double factor);
// x multiplied by the scalar node s.
Var mul_scalar(Var x, Var s);
Var relu(Var x);
Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec);
Var batch_norm(Var x, Var gamma, Var beta, NormStats& stats, bool training);
// 3x3 window, stride 1, zero padding 1, divisor always 9.
Var avg_pool3x3(Var x);
// 2x2 window, stride 2. Height and width must be even.
Var max_pool2(Var x);
// Factor-2 bilinear upsampling, half-pixel centers (align_corners = false).
Var upsample_bilinear2(Var x);
Var slice_channels(Var x, int begin, int end);
Var concat_channels(std::span<const Var> parts);
// Softmax over all entries of a vector-shaped node.
Var softmax(Var v);
Var element(Var v, int index);
Var sum(Var x);
Var dot(Var x, const Tensor& weights);

struct LossParts {
  double cross_entropy = 0.0;
  double dice_loss = 0.0;
  double total() const { return cross_entropy + dice_loss; }
};

inline constexpr double kDiceSmooth = 1.0;

// Mean per-pixel cross-entropy plus (1 - soft Dice averaged over classes).
// `labels` holds n*h*w class ids.
Var segmentation_loss(Var logits, std::span<const std::int32_t> labels,
                      LossParts* parts = nullptr);

// ---- plain helpers ----

std::vector<double> softmax_vec(std::span<const double> v);
Tensor conv2d_forward(const Tensor& x, const Tensor& weight,
                      const Tensor* bias, const ConvSpec& spec);

}  // namespace msnas
