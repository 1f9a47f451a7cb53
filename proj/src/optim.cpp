#include "optim.hpp"

#include <cmath>
#include <numbers>

namespace msnas {

void sgd_step(std::span<Param* const> params, const SgdOptions& opt) {
  if (!(opt.lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  for (const Param* p : params) {
    if (!p->grad.all_finite()) {
      throw NonFiniteError("non-finite gradient for parameter '" + p->name + "'");
    }
  }
  for (Param* p : params) {
    const double wd = p->decay ? opt.weight_decay : 0.0;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double& buf = p->momentum[i];
      buf = opt.momentum * buf + p->grad[i] + wd * p->value[i];
      p->value[i] -= opt.lr * buf;
    }
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

double cosine_lr(int epoch, int total, double start, double end) {
  if (total < 1 || epoch < 0 || epoch >= total) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(total) + ")");
  }
  if (epoch == 0) return start;
  if (epoch == total - 1) return end;
  const double t = static_cast<double>(epoch) / (total - 1);
  return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace msnas
