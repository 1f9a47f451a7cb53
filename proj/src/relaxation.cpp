#include "relaxation.hpp"

#include <cmath>

namespace msnas {

const char* to_string(CellKind k) {
  switch (k) {
    case CellKind::Expanding: return "expanding";
    case CellKind::Contracting: return "contracting";
    case CellKind::NonScaling: return "nonscaling";
  }
  return "?";
}

std::optional<CellKind> parse_cell_kind(std::string_view s) {
  for (CellKind k : kAllCellKinds) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

int index_of(CellKind k) { return static_cast<int>(k); }

std::optional<CellKind> cell_kind_for(EdgeKind e) {
  switch (e) {
    case EdgeKind::Expand: return CellKind::Expanding;
    case EdgeKind::Contract: return CellKind::Contracting;
    case EdgeKind::NonScale:
    case EdgeKind::Input: return CellKind::NonScaling;
    case EdgeKind::Skip:
    case EdgeKind::Output: return std::nullopt;
  }
  return std::nullopt;
}

PartialMask make_partial_mask(int channels, int k) {
  if (k < 1) throw std::invalid_argument("partial channel factor k must be >= 1");
  if (channels % k != 0) {
    throw ShapeError("channel count " + std::to_string(channels) + " not divisible by k=" +
                     std::to_string(k));
  }
  return {k, channels};
}

// ---------------------------------------------------------------- parameters

CellArchParams::CellArchParams(CellKind k, const CellConfig& cfg) : kind(k), config(cfg) {
  if (cfg.blocks < 1) throw std::invalid_argument("a cell needs at least one block");
  if (cfg.ops.empty()) throw std::invalid_argument("empty operator set");
  const std::string base = std::string("alpha.") + to_string(k);
  const int n_ops = static_cast<int>(cfg.ops.size());
  for (int b = 0; b < cfg.blocks; ++b) {
    for (int j = 0; j <= b; ++j) {
      alpha.emplace_back(base + ".b" + std::to_string(b) + ".e" + std::to_string(j),
                         Tensor({1, n_ops, 1, 1}, 0.0), false);
    }
    p.emplace_back(std::string("p.") + to_string(k) + ".b" + std::to_string(b),
                   Tensor({1, b + 1, 1, 1}, 0.0), false);
  }
}

void CellArchParams::collect(StateRefs& refs) {
  for (Param& a : alpha) refs.add(a);
  for (Param& q : p) refs.add(q);
}

CellWeights::CellWeights(const std::string& name, CellKind k, int cin, int cout,
                         const CellConfig& cfg, Rng& rng)
    : kind(k), in_channels(cin), out_channels(cout) {
  const PartialMask mask = make_partial_mask(cin, cfg.k);
  banks.reserve(cfg.num_edges());
  for (int b = 0; b < cfg.blocks; ++b) {
    for (int j = 0; j <= b; ++j) {
      banks.emplace_back(name + ".b" + std::to_string(b) + ".e" + std::to_string(j),
                         mask.selected(), cfg.ops, rng);
    }
  }
  projection = Projection(name + ".proj", cfg.blocks * cin, cout, rng);
}

void CellWeights::collect(StateRefs& refs) {
  for (OperatorBank& b : banks) b.collect(refs);
  projection.collect(refs);
}

// ---------------------------------------------------------------- forward pieces

Var partial_connect(Var x, Param& alpha, std::span<const OperatorKind> ops,
                    const PartialMask& mask, OperatorBank& bank, bool training) {
  const Shape s = x.shape();
  if (s.c != mask.channels) {
    throw ShapeError("partial_connect: mask for " + std::to_string(mask.channels) +
                     " channels applied to " + s.str());
  }
  if (s.c % mask.k != 0) {
    throw ShapeError("partial_connect: channel count not divisible by k");
  }
  if (alpha.value.numel() != ops.size()) {
    throw ShapeError("partial_connect: alpha has " + std::to_string(alpha.value.numel()) +
                     " entries for " + std::to_string(ops.size()) + " operators");
  }
  Tape& t = *x.tape;
  const int sel = mask.selected();
  Var selected = mask.k == 1 ? x : slice_channels(x, 0, sel);
  Var weights = softmax(t.leaf(alpha));
  std::vector<Var> terms;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    auto out = bank.apply(ops[i], selected, training);
    if (!out) continue;
    terms.push_back(mul_scalar(*out, element(weights, static_cast<int>(i))));
  }
  Var mixed = terms.empty() ? t.constant(Tensor(selected.shape(), 0.0)) : add_all(terms);
  if (mask.k == 1) return mixed;
  const Var parts[] = {mixed, slice_channels(x, sel, s.c)};
  return concat_channels(parts);
}

Var resample_for(CellKind kind, Var x) {
  switch (kind) {
    case CellKind::Contracting: return max_pool2(x);
    case CellKind::Expanding: return upsample_bilinear2(x);
    case CellKind::NonScaling: return x;
  }
  return x;
}

Var cell_forward(CellKind kind, Var x_in, CellArchParams& arch, CellWeights& weights,
                 bool training) {
  if (arch.kind != kind || weights.kind != kind) {
    throw std::invalid_argument("cell_forward: parameter banks are for a different cell kind");
  }
  const CellConfig& cfg = arch.config;
  Tape& t = *x_in.tape;
  const PartialMask mask = make_partial_mask(weights.in_channels, cfg.k);
  std::vector<Var> states{resample_for(kind, x_in)};
  for (int b = 0; b < cfg.blocks; ++b) {
    Var edge_w = softmax(t.leaf(arch.p[b]));
    std::vector<Var> terms;
    for (int j = 0; j <= b; ++j) {
      const int e = CellConfig::edge_index(b, j);
      Var y = partial_connect(states[j], arch.alpha[e], cfg.ops, mask, weights.banks[e], training);
      terms.push_back(mul_scalar(y, element(edge_w, j)));
    }
    states.push_back(add_all(terms));
  }
  Var cat = concat_channels(std::span<const Var>(states).subspan(1));
  return weights.projection.forward(cat, training);
}

std::vector<int> channel_plan(const SupernetGraph& g, int base_channels, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (base_channels < 1 || base_channels % k != 0) {
    throw std::invalid_argument("base_channels " + std::to_string(base_channels) +
                                " must be a positive multiple of k=" + std::to_string(k));
  }
  std::vector<int> widths(g.vertices().size(), 0);
  for (std::size_t v = 0; v < widths.size(); ++v) {
    const Vertex& x = g.vertices()[v];
    if (x.kind == VertexKind::CellSite) widths[v] = base_channels << x.scale;
    if (x.kind == VertexKind::Input) widths[v] = base_channels;
  }
  return widths;
}

// ---------------------------------------------------------------- supernet

RelaxedSupernet::RelaxedSupernet(const SupernetConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), graph_(cfg.layers, cfg.scales) {
  widths_ = channel_plan(graph_, cfg.base_channels, cfg.cell.k);
  Rng init = derive_stream(seed, "init");
  stem_ = Stem("stem", cfg.image_channels, cfg.base_channels, init);
  for (CellKind k : kAllCellKinds) cell_arch_[index_of(k)] = CellArchParams(k, cfg.cell);

  const auto& vs = graph_.vertices();
  const auto& es = graph_.edges();
  beta_.resize(vs.size());
  heads_.resize(vs.size());
  cells_.resize(es.size());
  for (int v = 0; v < static_cast<int>(vs.size()); ++v) {
    if (vs[v].kind != VertexKind::CellSite) continue;
    const int n_in = static_cast<int>(graph_.incoming(v).size());
    beta_[v].emplace("beta." + graph_.vertex_name(v), Tensor({1, n_in, 1, 1}, 0.0), false);
  }
  for (int e = 0; e < static_cast<int>(es.size()); ++e) {
    const auto kind = cell_kind_for(es[e].kind);
    if (!kind) continue;
    const std::string name = "cell." + graph_.vertex_name(es[e].to) + "." + to_string(*kind);
    cells_[e].emplace(name, *kind, widths_[es[e].from], widths_[es[e].to], cfg.cell, init);
  }
  for (int e : graph_.incoming(graph_.output())) {
    const int v = es[e].from;
    heads_[v].emplace("head." + graph_.vertex_name(v), widths_[v], cfg.num_classes,
                      vs[v].scale, init);
  }
}

Param& RelaxedSupernet::beta(int vertex) {
  if (vertex < 0 || vertex >= static_cast<int>(beta_.size()) || !beta_[vertex]) {
    throw std::out_of_range("vertex has no beta group");
  }
  return *beta_[vertex];
}

const Param& RelaxedSupernet::beta(int vertex) const {
  return const_cast<RelaxedSupernet*>(this)->beta(vertex);
}

Var RelaxedSupernet::forward(Var image, bool training, MixingTrace* trace) {
  const Shape s = image.shape();
  const int div = 1 << (cfg_.scales - 1);
  if (s.h % div != 0 || s.w % div != 0) {
    throw ShapeError("input " + s.str() + " not divisible by " + std::to_string(div));
  }
  if (s.c != cfg_.image_channels) {
    throw ShapeError("expected " + std::to_string(cfg_.image_channels) + " image channels");
  }
  Tape& t = *image.tape;
  const auto& es = graph_.edges();
  std::vector<std::optional<Var>> out(graph_.vertices().size());
  out[graph_.input()] = stem_.forward(image, training);
  std::vector<Var> logits;
  for (int v = 0; v < static_cast<int>(graph_.vertices().size()); ++v) {
    const Vertex& vx = graph_.vertices()[v];
    if (vx.kind == VertexKind::Input) continue;
    if (vx.kind == VertexKind::Output) {
      for (int e : graph_.incoming(v)) {
        const int src = es[e].from;
        logits.push_back(heads_[src]->forward(*out[src]));
      }
      continue;
    }
    const auto& in = graph_.incoming(v);
    Var mix = softmax(t.leaf(*beta_[v]));
    if (trace) {
      const auto w = mix.value().data();
      trace->vertex_weights.emplace_back(v, std::vector<double>(w.begin(), w.end()));
    }
    std::vector<Var> terms;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Edge& edge = es[in[i]];
      Var src = *out[edge.from];
      Var value = src;
      if (auto kind = cell_kind_for(edge.kind)) {
        value = cell_forward(*kind, src, cell_arch(*kind), *cells_[in[i]], training);
      }
      terms.push_back(mul_scalar(value, element(mix, static_cast<int>(i))));
    }
    Var y = add_all(terms);
    if (!y.value().all_finite()) {
      throw NonFiniteActivation("non-finite activation at vertex " + graph_.vertex_name(v));
    }
    out[v] = y;
  }
  return add_all(logits);
}

StateRefs RelaxedSupernet::kernel_state() {
  StateRefs refs;
  stem_.collect(refs);
  for (auto& c : cells_)
    if (c) c->collect(refs);
  for (auto& h : heads_)
    if (h) h->collect(refs);
  return refs;
}

std::vector<Param*> RelaxedSupernet::cell_arch_params() {
  StateRefs refs;
  for (auto& c : cell_arch_) c.collect(refs);
  return refs.params;
}

std::vector<Param*> RelaxedSupernet::network_arch_params() {
  std::vector<Param*> ps;
  for (auto& b : beta_)
    if (b) ps.push_back(&*b);
  return ps;
}

StateRefs RelaxedSupernet::full_state() {
  StateRefs refs = kernel_state();
  for (Param* p : cell_arch_params()) refs.params.push_back(p);
  for (Param* p : network_arch_params()) refs.params.push_back(p);
  return refs;
}

void RelaxedSupernet::perturb_arch(double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Param* p : cell_arch_params())
    for (double& v : p->value.data()) v += dist(rng);
  for (Param* p : network_arch_params())
    for (double& v : p->value.data()) v += dist(rng);
}

}  // namespace msnas
