#pragma once

// Test-only reference implementations. Nothing here calls into the
// production kernels it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "optim.hpp"

namespace msnas::oracle {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Direct nested-loop convolution with zero padding.
inline Tensor conv2d_direct(const Tensor& x, const Tensor& w, const Tensor* bias, int stride,
                            int pad, int dil, int groups) {
  const Shape xs = x.shape(), ws = w.shape();
  const int ho = (xs.h + 2 * pad - dil * (ws.h - 1) - 1) / stride + 1;
  const int wo = (xs.w + 2 * pad - dil * (ws.w - 1) - 1) / stride + 1;
  const int cin_g = xs.c / groups, cout_g = ws.n / groups;
  Tensor out({xs.n, ws.n, ho, wo}, 0.0);
  for (int n = 0; n < xs.n; ++n)
    for (int oc = 0; oc < ws.n; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[oc] : 0.0;
          const int g = oc / cout_g;
          for (int icg = 0; icg < cin_g; ++icg)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = oy * stride - pad + ky * dil;
                const int ix = ox * stride - pad + kx * dil;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w.at(oc, icg, ky, kx) * x.at(n, g * cin_g + icg, iy, ix);
              }
          out.at(n, oc, oy, ox) = acc;
        }
  return out;
}

inline Tensor max_pool2_direct(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int xx = 0; xx < s.w / 2; ++xx)
          out.at(n, c, y, xx) = std::max({x.at(n, c, 2 * y, 2 * xx), x.at(n, c, 2 * y, 2 * xx + 1),
                                          x.at(n, c, 2 * y + 1, 2 * xx),
                                          x.at(n, c, 2 * y + 1, 2 * xx + 1)});
  return out;
}

inline Tensor avg_pool3_direct(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int iy = y + dy, ix = xx + dx;
              if (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) acc += x.at(n, c, iy, ix);
            }
          out.at(n, c, y, xx) = acc / 9.0;
        }
  return out;
}

// Scalar bilinear interpolation at half-pixel source coordinates.
inline double bilinear_sample(const Tensor& x, int n, int c, int oy, int ox) {
  const Shape s = x.shape();
  auto coord = [](int o, int size, int& i0, int& i1, double& frac) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, size - 1);
    frac = src - i0;
  };
  int y0, y1, x0, x1;
  double fy, fx;
  coord(oy, s.h, y0, y1, fy);
  coord(ox, s.w, x0, x1, fx);
  const double top = (1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1);
  const double bot = (1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1);
  return (1 - fy) * top + fy * bot;
}

struct GradCheck {
  double worst_excess = 0.0;  // max of |a-n| - tolerance; <= 0 means pass
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  bool ok() const { return worst_excess <= 0.0; }
};

// Central finite differences against the tape's analytic gradient.
// Entry passes when |a - n| <= rtol * max(|a|, |n|) + atol.
inline GradCheck check_grads(const std::function<Var(Tape&)>& build,
                             std::span<Param* const> params, double step = 1e-5,
                             double rtol = 1e-5, double atol = 1e-8,
                             std::size_t max_per_param = 1u << 30) {
  zero_grads(params);
  {
    Tape tape;
    tape.backward(build(tape));
  }
  GradCheck r;
  r.worst_excess = -1.0;
  auto eval = [&] {
    Tape tape(false);
    return build(tape).value().item();
  };
  for (Param* p : params) {
    const std::size_t n = std::min(p->value.numel(), max_per_param);
    for (std::size_t i = 0; i < n; ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double fp = eval();
      p->value[i] = orig - step;
      const double fm = eval();
      p->value[i] = orig;
      const double num = (fp - fm) / (2 * step);
      const double ana = p->grad[i];
      const double excess =
          std::abs(ana - num) - (rtol * std::max(std::abs(ana), std::abs(num)) + atol);
      ++r.checked;
      if (excess > r.worst_excess) {
        r.worst_excess = excess;
        r.worst_analytic = ana;
        r.worst_numeric = num;
        r.worst_name = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace msnas::oracle
