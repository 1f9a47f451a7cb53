#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace msnas {

Param::Param(std::string param_name, Tensor init, bool apply_decay)
    : name(std::move(param_name)),
      value(std::move(init)),
      grad(value.shape(), 0.0),
      momentum(value.shape(), 0.0),
      decay(apply_decay) {}

const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------- Tape

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Param& p) {
  if (auto it = leaves_.find(&p); it != leaves_.end()) return {this, it->second};
  Node node;
  node.value = p.value;
  node.param = &p;
  node.needs_grad = record_ && p.requires_grad;
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size()) - 1;
  leaves_.emplace(&p, id);
  return {this, id};
}

Var Tape::push(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (int in : inputs) {
      if (nodes_[in].needs_grad) {
        node.needs_grad = true;
        break;
      }
    }
  }
  if (node.needs_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
  Tensor& g = grads_[id];
  if (g.empty() && nodes_[id].value.numel() > 0) {
    g = Tensor(nodes_[id].value.shape(), 0.0);
  }
  return g;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("root is from another tape");
  if (nodes_[root.id].value.numel() != 1) {
    throw ShapeError("backward root must be a scalar, got " +
                     nodes_[root.id].value.shape().str());
  }
  grads_.assign(nodes_.size(), Tensor());
  if (!nodes_[root.id].needs_grad) return;
  grad(root.id).fill(1.0);
  for (int id = root.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.needs_grad || grads_[id].empty()) continue;
    if (node.backward) node.backward(*this, id);
  }
  for (const auto& [param, id] : leaves_) {
    (void)param;
    Node& node = nodes_[id];
    if (node.needs_grad && !grads_[id].empty()) {
      node.param->grad.accumulate(grads_[id]);
    }
  }
}

// ------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  out.accumulate(b.value());
  return a.tape->push(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a).accumulate(g);
    if (t.needs_grad(b)) t.grad(b).accumulate(g);
  });
}

Var add_all(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("add_all of nothing");
  Tensor out = terms[0].value();
  std::vector<int> ids{terms[0].id};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(out.shape(), terms[i].shape(), "add_all");
    out.accumulate(terms[i].value());
    ids.push_back(terms[i].id);
  }
  auto ids_copy = ids;
  return terms[0].tape->push(std::move(out), std::move(ids), [ids = std::move(ids_copy)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (int id : ids) {
      if (t.needs_grad(id)) t.grad(id).accumulate(g);
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape->push(std::move(out), {x.id}, [x = x.id, factor](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += factor * g[i];
  });
}

Var mul_scalar(Var x, Var s) {
  if (s.value().numel() != 1) throw ShapeError("mul_scalar: scale must be a scalar");
  const double k = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v *= k;
  return x.tape->push(std::move(out), {x.id, s.id}, [x = x.id, s = s.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const double k = t.value(s)[0];
    if (t.needs_grad(x)) {
      Tensor& gx = t.grad(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += k * g[i];
    }
    if (t.needs_grad(s)) {
      const Tensor& xv = t.value(x);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
      t.grad(s)[0] += acc;
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape->push(std::move(out), {x.id}, [x = x.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

// ------------------------------------------------------- convolution

namespace {

struct ConvGeometry {
  Shape in;
  Shape out;
  int kh = 0, kw = 0;
  int cin_per_group = 0, cout_per_group = 0;
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, const ConvSpec& spec) {
  if (spec.groups <= 0 || spec.stride <= 0 || spec.dilation <= 0 || spec.padding < 0) {
    throw ShapeError("conv2d: invalid spec");
  }
  if (x.c % spec.groups != 0 || w.n % spec.groups != 0) {
    throw ShapeError("conv2d: channels not divisible by groups");
  }
  if (w.c != x.c / spec.groups) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) +
                     " channels but kernel " + w.str() + " expects " +
                     std::to_string(w.c * spec.groups));
  }
  ConvGeometry g;
  g.in = x;
  g.kh = w.h;
  g.kw = w.w;
  g.cin_per_group = w.c;
  g.cout_per_group = w.n / spec.groups;
  const int ho = (x.h + 2 * spec.padding - spec.dilation * (w.h - 1) - 1) / spec.stride + 1;
  const int wo = (x.w + 2 * spec.padding - spec.dilation * (w.w - 1) - 1) / spec.stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output for input " + x.str());
  g.out = {x.n, w.n, ho, wo};
  return g;
}

// Range [lo, hi) of output columns whose input column ow*stride+offset is
// inside [0, width).
inline void valid_range(int offset, int stride, int width, int out_width, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = offset > width - 1 ? 0 : (width - 1 - offset) / stride + 1;
  hi = std::min(hi, out_width);
  if (lo > hi) lo = hi;
}

// Visits every (output element, input element, kernel element) triple of a
// convolution as whole contiguous output-row spans.
template <typename RowFn>
void for_each_conv_row(const ConvGeometry& g, const ConvSpec& spec, RowFn&& fn) {
  const int groups = spec.groups;
  for (int n = 0; n < g.in.n; ++n) {
    for (int grp = 0; grp < groups; ++grp) {
      for (int ocg = 0; ocg < g.cout_per_group; ++ocg) {
        const int oc = grp * g.cout_per_group + ocg;
        for (int icg = 0; icg < g.cin_per_group; ++icg) {
          const int ic = grp * g.cin_per_group + icg;
          for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
              const int col_off = kx * spec.dilation - spec.padding;
              int lo, hi;
              valid_range(col_off, spec.stride, g.in.w, g.out.w, lo, hi);
              if (lo >= hi) continue;
              for (int oy = 0; oy < g.out.h; ++oy) {
                const int iy = oy * spec.stride + ky * spec.dilation - spec.padding;
                if (iy < 0 || iy >= g.in.h) continue;
                fn(n, oc, ic, icg, ky, kx, oy, iy, lo, hi, col_off);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(x.shape(), weight.shape(), spec);
  Tensor out(g.out, 0.0);
  if (bias) {
    if (bias->numel() != static_cast<std::size_t>(g.out.c)) {
      throw ShapeError("conv2d: bias length mismatch");
    }
    for (int n = 0; n < g.out.n; ++n)
      for (int c = 0; c < g.out.c; ++c) {
        double* o = &out.at(n, c, 0, 0);
        std::fill(o, o + g.out.plane(), (*bias)[c]);
      }
  }
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  double* od = out.data().data();
  const int stride = spec.stride;
  for_each_conv_row(g, spec, [&](int n, int oc, int ic, int icg, int ky, int kx, int oy, int iy,
                                 int lo, int hi, int col_off) {
    const double wv = wd[weight.offset(oc, icg, ky, kx)];
    const double* xrow = xd + x.offset(n, ic, iy, 0);
    double* orow = od + out.offset(n, oc, oy, 0);
    if (stride == 1) {
      for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * xrow[ox + col_off];
    } else {
      for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * xrow[ox * stride + col_off];
    }
  });
  return out;
}

Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec) {
  Tensor out = conv2d_forward(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  std::vector<int> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const int bias_id = bias ? bias->id : -1;
  return x.tape->push(
      std::move(out), std::move(inputs),
      [x = x.id, w = weight.id, bias_id, spec](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        const ConvGeometry geo = conv_geometry(xv.shape(), wv.shape(), spec);
        const bool need_x = t.needs_grad(x);
        const bool need_w = t.needs_grad(w);
        double* gx = need_x ? t.grad(x).data().data() : nullptr;
        double* gw = need_w ? t.grad(w).data().data() : nullptr;
        const double* gd = g.data().data();
        const double* xd = xv.data().data();
        const double* wd = wv.data().data();
        const int stride = spec.stride;
        for_each_conv_row(geo, spec, [&](int n, int oc, int ic, int icg, int ky, int kx, int oy,
                                         int iy, int lo, int hi, int col_off) {
          const std::size_t widx = wv.offset(oc, icg, ky, kx);
          const double* grow = gd + g.offset(n, oc, oy, 0);
          const std::size_t xrow = xv.offset(n, ic, iy, 0);
          if (need_x) {
            const double k = wd[widx];
            double* gxrow = gx + xrow;
            for (int ox = lo; ox < hi; ++ox) gxrow[ox * stride + col_off] += k * grow[ox];
          }
          if (need_w) {
            const double* xr = xd + xrow;
            double acc = 0.0;
            for (int ox = lo; ox < hi; ++ox) acc += grow[ox] * xr[ox * stride + col_off];
            gw[widx] += acc;
          }
        });
        if (bias_id >= 0 && t.needs_grad(bias_id)) {
          Tensor& gb = t.grad(bias_id);
          for (int n = 0; n < g.shape().n; ++n)
            for (int c = 0; c < g.shape().c; ++c) {
              const double* p = gd + g.offset(n, c, 0, 0);
              double acc = 0.0;
              for (std::size_t i = 0; i < g.shape().plane(); ++i) acc += p[i];
              gb[c] += acc;
            }
        }
      });
}

// ------------------------------------------------------- normalization

Var batch_norm(Var x, Var gamma, Var beta, NormStats& stats, bool training) {
  const Shape s = x.shape();
  if (gamma.value().numel() != static_cast<std::size_t>(s.c) ||
      beta.value().numel() != static_cast<std::size_t>(s.c) ||
      stats.mean.numel() != static_cast<std::size_t>(s.c)) {
    throw ShapeError("batch_norm: parameter length does not match " + s.str());
  }
  const Tensor& xv = x.value();
  const std::size_t m = static_cast<std::size_t>(s.n) * s.plane();
  std::vector<double> mean(s.c), inv_std(s.c);
  if (training) {
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = &xv.at(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(m);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = &xv.at(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(m);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + kNormEps);
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      stats.mean[c] = (1.0 - kNormMomentum) * stats.mean[c] + kNormMomentum * mu;
      stats.var[c] = (1.0 - kNormMomentum) * stats.var[c] + kNormMomentum * unbiased;
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + kNormEps);
    }
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat(s);
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = &xv.at(n, c, 0, 0);
      double* h = &xhat.at(n, c, 0, 0);
      double* o = &out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        h[i] = (p[i] - mean[c]) * inv_std[c];
        o[i] = gv[c] * h[i] + bv[c];
      }
    }
  return x.tape->push(
      std::move(out), {x.id, gamma.id, beta.id},
      [x = x.id, gm = gamma.id, bt = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std), training, m](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Shape s = g.shape();
        const Tensor& gv = t.value(gm);
        std::vector<double> sum_g(s.c, 0.0), sum_gx(s.c, 0.0);
        for (int n = 0; n < s.n; ++n)
          for (int c = 0; c < s.c; ++c) {
            const double* gp = &g.at(n, c, 0, 0);
            const double* hp = &xhat.at(n, c, 0, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) {
              sum_g[c] += gp[i];
              sum_gx[c] += gp[i] * hp[i];
            }
          }
        if (t.needs_grad(gm)) {
          Tensor& gg = t.grad(gm);
          for (int c = 0; c < s.c; ++c) gg[c] += sum_gx[c];
        }
        if (t.needs_grad(bt)) {
          Tensor& gb = t.grad(bt);
          for (int c = 0; c < s.c; ++c) gb[c] += sum_g[c];
        }
        if (!t.needs_grad(x)) return;
        Tensor& gx = t.grad(x);
        const double md = static_cast<double>(m);
        for (int n = 0; n < s.n; ++n)
          for (int c = 0; c < s.c; ++c) {
            const double* gp = &g.at(n, c, 0, 0);
            const double* hp = &xhat.at(n, c, 0, 0);
            double* op = &gx.at(n, c, 0, 0);
            const double k = gv[c] * inv_std[c];
            if (training) {
              for (std::size_t i = 0; i < s.plane(); ++i) {
                op[i] += k * (gp[i] - sum_g[c] / md - hp[i] * sum_gx[c] / md);
              }
            } else {
              for (std::size_t i = 0; i < s.plane(); ++i) op[i] += k * gp[i];
            }
          }
      });
}

// ------------------------------------------------------- pooling / resampling

Var avg_pool3x3(Var x) {
  const Shape s = x.shape();
  const Tensor& xv = x.value();
  Tensor out(s, 0.0);
  constexpr double kInv = 1.0 / 9.0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int iy = y + dy;
            if (iy < 0 || iy >= s.h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int ix = xx + dx;
              if (ix < 0 || ix >= s.w) continue;
              acc += xv.at(n, c, iy, ix);
            }
          }
          out.at(n, c, y, xx) = acc * kInv;
        }
  return x.tape->push(std::move(out), {x.id}, [x = x.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    const Shape s = g.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const double v = g.at(n, c, y, xx) * kInv;
            for (int dy = -1; dy <= 1; ++dy) {
              const int iy = y + dy;
              if (iy < 0 || iy >= s.h) continue;
              for (int dx = -1; dx <= 1; ++dx) {
                const int ix = xx + dx;
                if (ix < 0 || ix >= s.w) continue;
                gx.at(n, c, iy, ix) += v;
              }
            }
          }
  });
}

Var max_pool2(Var x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("max_pool2: spatial size must be even, got " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  const Tensor& xv = x.value();
  Tensor out(os);
  std::vector<std::uint32_t> argmax(os.numel());
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx, ++k) {
          std::size_t best = xv.offset(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = xv.offset(n, c, 2 * y + dy, 2 * xx + dx);
              if (xv[idx] > xv[best]) best = idx;
            }
          argmax[k] = static_cast<std::uint32_t>(best);
          out[k] = xv[best];
        }
  return x.tape->push(std::move(out), {x.id}, [x = x.id, argmax = std::move(argmax)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[argmax[i]] += g[i];
  });
}

namespace {

struct LerpTap {
  int i0, i1;
  double w0, w1;
};

// Source taps for factor-2 upsampling along one axis, half-pixel centers.
std::vector<LerpTap> upsample_taps(int in_size) {
  std::vector<LerpTap> taps(2 * in_size);
  for (int o = 0; o < 2 * in_size; ++o) {
    double src = (o + 0.5) * 0.5 - 0.5;
    if (src < 0.0) src = 0.0;
    const int i0 = static_cast<int>(src);
    const int i1 = i0 < in_size - 1 ? i0 + 1 : i0;
    const double l1 = src - i0;
    taps[o] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear2(Var x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  const Tensor& xv = x.value();
  Tensor out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* in = &xv.at(n, c, 0, 0);
      double* o = &out.at(n, c, 0, 0);
      for (int y = 0; y < os.h; ++y) {
        const LerpTap& a = ty[y];
        const double* r0 = in + static_cast<std::size_t>(a.i0) * s.w;
        const double* r1 = in + static_cast<std::size_t>(a.i1) * s.w;
        for (int xx = 0; xx < os.w; ++xx) {
          const LerpTap& b = tx[xx];
          o[static_cast<std::size_t>(y) * os.w + xx] =
              a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
              a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        }
      }
    }
  return x.tape->push(std::move(out), {x.id}, [x = x.id, ty, tx](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    const Shape os = g.shape();
    const Shape s = gx.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* gp = &g.at(n, c, 0, 0);
        double* in = &gx.at(n, c, 0, 0);
        for (int y = 0; y < os.h; ++y) {
          const LerpTap& a = ty[y];
          double* r0 = in + static_cast<std::size_t>(a.i0) * s.w;
          double* r1 = in + static_cast<std::size_t>(a.i1) * s.w;
          for (int xx = 0; xx < os.w; ++xx) {
            const LerpTap& b = tx[xx];
            const double v = gp[static_cast<std::size_t>(y) * os.w + xx];
            r0[b.i0] += a.w0 * b.w0 * v;
            r0[b.i1] += a.w0 * b.w1 * v;
            r1[b.i0] += a.w1 * b.w0 * v;
            r1[b.i1] += a.w1 * b.w1 * v;
          }
        }
      }
  });
}

// ------------------------------------------------------- channel plumbing

Var slice_channels(Var x, int begin, int end) {
  const Shape s = x.shape();
  if (begin < 0 || end > s.c || begin >= end) {
    throw ShapeError("slice_channels: invalid range for " + s.str());
  }
  const Shape os{s.n, end - begin, s.h, s.w};
  const Tensor& xv = x.value();
  Tensor out(os);
  const std::size_t block = static_cast<std::size_t>(os.c) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    const double* src = &xv.at(n, begin, 0, 0);
    std::copy(src, src + block, &out.at(n, 0, 0, 0));
  }
  return x.tape->push(std::move(out), {x.id}, [x = x.id, begin](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    const Shape os = g.shape();
    const std::size_t block = static_cast<std::size_t>(os.c) * os.plane();
    for (int n = 0; n < os.n; ++n) {
      const double* src = &g.at(n, 0, 0, 0);
      double* dst = &gx.at(n, begin, 0, 0);
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  Shape os = parts[0].shape();
  os.c = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    if (s.n != os.n || s.h != os.h || s.w != os.w) {
      throw ShapeError("concat_channels: incompatible " + s.str());
    }
    os.c += s.c;
    ids.push_back(p.id);
  }
  Tensor out(os);
  int at = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t block = static_cast<std::size_t>(v.shape().c) * os.plane();
    for (int n = 0; n < os.n; ++n) {
      const double* src = &v.at(n, 0, 0, 0);
      std::copy(src, src + block, &out.at(n, at, 0, 0));
    }
    at += v.shape().c;
  }
  auto ids_copy = ids;
  return parts[0].tape->push(std::move(out), std::move(ids), [ids = std::move(ids_copy)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Shape os = g.shape();
    int at = 0;
    for (int id : ids) {
      const int c = t.value(id).shape().c;
      if (t.needs_grad(id)) {
        Tensor& gi = t.grad(id);
        const std::size_t block = static_cast<std::size_t>(c) * os.plane();
        for (int n = 0; n < os.n; ++n) {
          const double* src = &g.at(n, at, 0, 0);
          double* dst = &gi.at(n, 0, 0, 0);
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      at += c;
    }
  });
}

// ------------------------------------------------------- vectors and reductions

std::vector<double> softmax_vec(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (double& o : out) o /= z;
  return out;
}

Var softmax(Var v) {
  const Tensor& vv = v.value();
  Tensor out(vv.shape(), softmax_vec(vv.data()));
  return v.tape->push(std::move(out), {v.id}, [v = v.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double dotp = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) dotp += g[i] * y[i];
    Tensor& gv = t.grad(v);
    for (std::size_t i = 0; i < g.numel(); ++i) gv[i] += y[i] * (g[i] - dotp);
  });
}

Var element(Var v, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= v.value().numel()) {
    throw ShapeError("element: index out of range");
  }
  return v.tape->push(Tensor::scalar(v.value()[index]), {v.id}, [v = v.id, index](Tape& t, int self) {
    t.grad(v)[index] += t.grad(self)[0];
  });
}

Var sum(Var x) {
  return x.tape->push(Tensor::scalar(x.value().sum()), {x.id}, [x = x.id](Tape& t, int self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(x).data()) v += g;
  });
}

Var dot(Var x, const Tensor& weights) {
  require_same_shape(x.shape(), weights.shape(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
  return x.tape->push(Tensor::scalar(acc), {x.id}, [x = x.id, weights](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < weights.numel(); ++i) gx[i] += g * weights[i];
  });
}

// ------------------------------------------------------- loss

Var segmentation_loss(Var logits, std::span<const std::int32_t> labels, LossParts* parts) {
  const Shape s = logits.shape();
  const std::size_t pixels = static_cast<std::size_t>(s.n) * s.plane();
  if (labels.size() != pixels) {
    throw ShapeError("segmentation_loss: " + std::to_string(labels.size()) +
                     " labels for logits " + s.str());
  }
  for (std::int32_t l : labels) {
    if (l < 0 || l >= s.c) {
      throw std::out_of_range("segmentation_loss: label " + std::to_string(l) +
                              " outside [0, " + std::to_string(s.c) + ")");
    }
  }
  const Tensor& z = logits.value();
  Tensor prob(s);
  double ce = 0.0;
  std::vector<double> inter(s.c, 0.0), psum(s.c, 0.0), gsum(s.c, 0.0);
  std::vector<double> col(s.c);
  for (int n = 0; n < s.n; ++n)
    for (std::size_t px = 0; px < s.plane(); ++px) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s.c; ++c) {
        col[c] = z[z.offset(n, c, 0, 0) + px];
        mx = std::max(mx, col[c]);
      }
      double zsum = 0.0;
      for (int c = 0; c < s.c; ++c) zsum += std::exp(col[c] - mx);
      const double log_z = mx + std::log(zsum);
      const int label = labels[static_cast<std::size_t>(n) * s.plane() + px];
      ce -= col[label] - log_z;
      for (int c = 0; c < s.c; ++c) {
        const double p = std::exp(col[c] - log_z);
        prob[prob.offset(n, c, 0, 0) + px] = p;
        psum[c] += p;
        if (c == label) {
          inter[c] += p;
          gsum[c] += 1.0;
        }
      }
    }
  ce /= static_cast<double>(pixels);
  double dice_mean = 0.0;
  std::vector<double> num(s.c), den(s.c);
  for (int c = 0; c < s.c; ++c) {
    num[c] = 2.0 * inter[c] + kDiceSmooth;
    den[c] = psum[c] + gsum[c] + kDiceSmooth;
    dice_mean += num[c] / den[c];
  }
  dice_mean /= s.c;
  const double loss = ce + (1.0 - dice_mean);
  if (parts) *parts = {ce, 1.0 - dice_mean};
  std::vector<std::int32_t> saved(labels.begin(), labels.end());
  return logits.tape->push(
      Tensor::scalar(loss), {logits.id},
      [lg = logits.id, prob = std::move(prob), saved = std::move(saved), num = std::move(num),
       den = std::move(den), pixels](Tape& t, int self) {
        const double g = t.grad(self)[0];
        Tensor& gz = t.grad(lg);
        const Shape s = prob.shape();
        const double inv_px = 1.0 / static_cast<double>(pixels);
        std::vector<double> dp(s.c);
        for (int n = 0; n < s.n; ++n)
          for (std::size_t px = 0; px < s.plane(); ++px) {
            const int label = saved[static_cast<std::size_t>(n) * s.plane() + px];
            double weighted = 0.0;
            for (int c = 0; c < s.c; ++c) {
              const double gc = c == label ? 1.0 : 0.0;
              // d(1 - mean dice)/dp_c for this pixel.
              dp[c] = -(2.0 * gc * den[c] - num[c]) / (den[c] * den[c]) / s.c;
              weighted += prob[prob.offset(n, c, 0, 0) + px] * dp[c];
            }
            for (int c = 0; c < s.c; ++c) {
              const std::size_t idx = prob.offset(n, c, 0, 0) + px;
              const double p = prob[idx];
              const double gc = c == label ? 1.0 : 0.0;
              gz[idx] += g * ((p - gc) * inv_px + p * (dp[c] - weighted));
            }
          }
      });
}

}  // namespace msnas
