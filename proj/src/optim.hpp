#pragma once

#include <span>
#include <stdexcept>

#include "autodiff.hpp"

namespace msnas {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SgdOptions {
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

// Classic momentum SGD:
//   buf <- momentum * buf + grad + weight_decay * param
//   param <- param - lr * buf
// Weight decay is skipped for params with decay == false. Throws
// NonFiniteError naming the first parameter with a non-finite gradient,
// before touching any parameter.
void sgd_step(std::span<Param* const> params, const SgdOptions& opt);

void zero_grads(std::span<Param* const> params);

// Cosine interpolation from `start` at epoch 0 to `end` at epoch total-1.
double cosine_lr(int epoch, int total, double start, double end);

}  // namespace msnas
