#include "decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>

namespace msnas {

namespace {

std::vector<double> values_of(const Param& p) {
  const auto d = p.value.data();
  return {d.begin(), d.end()};
}

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string("non-finite ") + what);
  }
}

}  // namespace

ArchScalars snapshot_arch(const RelaxedSupernet& net) {
  ArchScalars s;
  s.cell = net.config().cell;
  for (CellKind k : kAllCellKinds) {
    const CellArchParams& a = net.cell_arch(k);
    for (const Param& x : a.alpha) s.alpha[index_of(k)].push_back(values_of(x));
    for (const Param& x : a.p) s.p[index_of(k)].push_back(values_of(x));
  }
  const SupernetGraph& g = net.graph();
  s.beta.resize(g.vertices().size());
  for (int v = 0; v < static_cast<int>(g.vertices().size()); ++v) {
    if (g.vertices()[v].kind == VertexKind::CellSite) s.beta[v] = values_of(net.beta(v));
  }
  return s;
}

ArchScalars random_arch(const SupernetGraph& g, const CellConfig& cell, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  auto draw = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
  };
  ArchScalars s;
  s.cell = cell;
  for (CellKind k : kAllCellKinds) {
    for (int b = 0; b < cell.blocks; ++b) {
      for (int j = 0; j <= b; ++j) s.alpha[index_of(k)].push_back(draw(cell.ops.size()));
      s.p[index_of(k)].push_back(draw(b + 1));
    }
  }
  s.beta.resize(g.vertices().size());
  for (int v = 0; v < static_cast<int>(g.vertices().size()); ++v) {
    if (g.vertices()[v].kind == VertexKind::CellSite) s.beta[v] = draw(g.incoming(v).size());
  }
  return s;
}

CellGenotype decode_cell(CellKind kind, const CellConfig& cell,
                         const std::vector<std::vector<double>>& alpha,
                         const std::vector<std::vector<double>>& p) {
  if (static_cast<int>(alpha.size()) != cell.num_edges() ||
      static_cast<int>(p.size()) != cell.blocks) {
    throw std::invalid_argument("decode_cell: parameter count does not match the cell config");
  }
  CellGenotype g;
  g.kind = kind;
  for (int b = 0; b < cell.blocks; ++b) {
    require_finite(p[b], "p");
    const std::vector<double> pw = softmax_vec(p[b]);
    double best = -1.0;
    std::optional<Block> choice;
    for (int j = 0; j <= b; ++j) {
      const auto& a = alpha[CellConfig::edge_index(b, j)];
      require_finite(a, "alpha");
      if (a.size() != cell.ops.size()) throw std::invalid_argument("decode_cell: alpha width");
      const std::vector<double> aw = softmax_vec(a);
      for (std::size_t o = 0; o < cell.ops.size(); ++o) {
        if (cell.ops[o] == OperatorKind::Zero) continue;
        const double w = pw[j] * aw[o];
        if (w > best) {
          best = w;
          choice = Block{j, cell.ops[o]};
        }
      }
    }
    if (!choice) throw std::invalid_argument("decode_cell: operator set has only Zero");
    g.blocks.push_back(*choice);
  }
  return g;
}

std::array<CellGenotype, 3> decode_cells(const ArchScalars& s) {
  std::array<CellGenotype, 3> out;
  for (CellKind k : kAllCellKinds) {
    out[index_of(k)] = decode_cell(k, s.cell, s.alpha[index_of(k)], s.p[index_of(k)]);
  }
  return out;
}

WeightedDag edge_weights_from_beta(const SupernetGraph& g,
                                   const std::vector<std::vector<double>>& beta) {
  WeightedDag w{g.dag(), std::vector<double>(g.edges().size(), 1.0)};
  if (beta.size() != g.vertices().size()) {
    throw std::invalid_argument("edge_weights_from_beta: one beta group per vertex expected");
  }
  for (int v = 0; v < static_cast<int>(g.vertices().size()); ++v) {
    if (g.vertices()[v].kind != VertexKind::CellSite) continue;
    const auto& in = g.incoming(v);
    if (beta[v].size() != in.size()) {
      throw std::invalid_argument("beta group of " + g.vertex_name(v) + " has " +
                                  std::to_string(beta[v].size()) + " entries for " +
                                  std::to_string(in.size()) + " edges");
    }
    require_finite(beta[v], "beta");
    const std::vector<double> sm = softmax_vec(beta[v]);
    for (std::size_t i = 0; i < in.size(); ++i) w.weights[in[i]] = sm[i];
  }
  return w;
}

namespace {

struct Partial {
  double score = 0.0;
  std::vector<int> arcs;
  std::vector<int> verts;
};

// Ranking of two partial paths ending at the same vertex.
bool better(const Partial& a, const Partial& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.verts != b.verts) return a.verts < b.verts;
  return a.arcs < b.arcs;
}

}  // namespace

RankedPaths top_k_longest_paths(const WeightedDag& w, int n) {
  if (n < 1) throw std::invalid_argument("top_k_longest_paths: N_l must be >= 1");
  const Dag& g = w.dag;
  if (w.weights.size() != g.arcs.size()) {
    throw std::invalid_argument("top_k_longest_paths: one weight per arc expected");
  }
  const std::vector<int> order = g.topological_order();
  const auto in = g.in_arcs();
  std::vector<std::vector<Partial>> best(g.num_vertices);
  best[g.source].push_back({0.0, {}, {g.source}});

  for (int v : order) {
    if (v == g.source) continue;
    // One cursor per incoming arc into that predecessor's ranked list.
    struct Cursor {
      int arc;
      std::size_t index;
    };
    auto candidate = [&](const Cursor& c) {
      const Partial& base = best[g.arcs[c.arc].from][c.index];
      Partial p{base.score + w.weights[c.arc], base.arcs, base.verts};
      p.arcs.push_back(c.arc);
      p.verts.push_back(v);
      return p;
    };
    auto worse = [&](const std::pair<Partial, Cursor>& a, const std::pair<Partial, Cursor>& b) {
      return better(b.first, a.first);
    };
    std::priority_queue<std::pair<Partial, Cursor>, std::vector<std::pair<Partial, Cursor>>,
                        decltype(worse)>
        heap(worse);
    for (int a : in[v]) {
      if (!best[g.arcs[a].from].empty()) heap.emplace(candidate({a, 0}), Cursor{a, 0});
    }
    while (!heap.empty() && static_cast<int>(best[v].size()) < n) {
      auto [p, c] = heap.top();
      heap.pop();
      best[v].push_back(std::move(p));
      const Cursor next{c.arc, c.index + 1};
      if (next.index < best[g.arcs[c.arc].from].size()) heap.emplace(candidate(next), next);
    }
  }

  RankedPaths r;
  for (const Partial& p : best[g.sink]) {
    r.paths.push_back(Path{p.arcs});
    r.scores.push_back(p.score);
  }
  r.capped = static_cast<int>(r.paths.size()) < n;
  return r;
}

void validate_path(const SupernetGraph& g, const Path& p) {
  const auto& es = g.edges();
  if (p.arcs.empty()) throw InvalidArchitecture("empty path");
  int at = g.input();
  for (int e : p.arcs) {
    if (e < 0 || e >= static_cast<int>(es.size())) {
      throw InvalidArchitecture("path references unknown edge " + std::to_string(e));
    }
    if (es[e].from != at) {
      throw InvalidArchitecture("path edge " + std::to_string(e) + " does not start at " +
                                g.vertex_name(at));
    }
    at = es[e].to;
  }
  if (at != g.output()) throw InvalidArchitecture("path ends at " + g.vertex_name(at));
  if (static_cast<int>(p.arcs.size()) != g.layers() + 1) {
    throw InvalidArchitecture("path has " + std::to_string(p.arcs.size() + 1) +
                              " vertices; complete paths have " + std::to_string(g.layers() + 2));
  }
}

DecodedArch assemble_architecture(const std::vector<Path>& paths,
                                  const std::array<CellGenotype, 3>& genotypes,
                                  const SupernetGraph& g) {
  if (paths.empty()) throw InvalidArchitecture("an architecture needs at least one path");
  for (CellKind k : kAllCellKinds) {
    const CellGenotype& gt = genotypes[index_of(k)];
    if (gt.kind != k) throw InvalidArchitecture("genotype kind mismatch");
    for (std::size_t b = 0; b < gt.blocks.size(); ++b) {
      if (gt.blocks[b].input < 0 || gt.blocks[b].input > static_cast<int>(b)) {
        throw InvalidArchitecture(std::string("block input out of range in ") + to_string(k));
      }
      if (gt.blocks[b].op == OperatorKind::Zero) {
        throw InvalidArchitecture(std::string("zero operator in decoded ") + to_string(k));
      }
    }
  }
  DecodedArch a;
  a.layers = g.layers();
  a.scales = g.scales();
  a.paths = paths;
  a.genotypes = genotypes;
  std::set<int> edges;
  for (const Path& p : paths) {
    validate_path(g, p);
    edges.insert(p.arcs.begin(), p.arcs.end());
  }
  a.edges.assign(edges.begin(), edges.end());
  std::map<int, int> inbound;
  for (int e : a.edges) {
    const Edge& edge = g.edges()[e];
    ++inbound[edge.to];
    if (auto kind = cell_kind_for(edge.kind)) a.cell_instances.push_back({edge.to, *kind, e});
  }
  for (auto [v, count] : inbound) {
    if (count > 1) a.merge_vertices.push_back(v);
  }
  return a;
}

DecodedArch decode_architecture(const SupernetGraph& g, const ArchScalars& s, int n_paths) {
  const auto genotypes = decode_cells(s);
  const RankedPaths ranked = top_k_longest_paths(edge_weights_from_beta(g, s.beta), n_paths);
  DecodedArch a = assemble_architecture(ranked.paths, genotypes, g);
  a.scores = ranked.scores;
  a.capped = ranked.capped;
  return a;
}

}  // namespace msnas
