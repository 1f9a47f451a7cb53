#include "supernet.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <queue>
#include <set>
#include <sstream>

namespace msnas {

// ---------------------------------------------------------------- Dag

std::vector<std::vector<int>> Dag::out_arcs() const {
  std::vector<std::vector<int>> out(num_vertices);
  for (int e = 0; e < static_cast<int>(arcs.size()); ++e) out[arcs[e].from].push_back(e);
  return out;
}

std::vector<std::vector<int>> Dag::in_arcs() const {
  std::vector<std::vector<int>> in(num_vertices);
  for (int e = 0; e < static_cast<int>(arcs.size()); ++e) in[arcs[e].to].push_back(e);
  return in;
}

std::vector<int> Dag::topological_order() const {
  std::vector<int> indegree(num_vertices, 0);
  for (const Arc& a : arcs) {
    if (a.from < 0 || a.from >= num_vertices || a.to < 0 || a.to >= num_vertices) {
      throw std::out_of_range("arc endpoint outside vertex range");
    }
    ++indegree[a.to];
  }
  const auto out = out_arcs();
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int v = 0; v < num_vertices; ++v)
    if (indegree[v] == 0) ready.push(v);
  std::vector<int> order;
  order.reserve(num_vertices);
  while (!ready.empty()) {
    const int v = ready.top();
    ready.pop();
    order.push_back(v);
    for (int e : out[v]) {
      if (--indegree[arcs[e].to] == 0) ready.push(arcs[e].to);
    }
  }
  if (static_cast<int>(order.size()) != num_vertices) {
    throw CycleError("graph contains a cycle");
  }
  return order;
}

std::vector<int> Path::vertices(const Dag& g) const {
  std::vector<int> vs;
  if (arcs.empty()) return vs;
  vs.push_back(g.arcs[arcs.front()].from);
  for (int e : arcs) vs.push_back(g.arcs[e].to);
  return vs;
}

bool path_less(const Dag& g, const Path& a, const Path& b) {
  const auto va = a.vertices(g);
  const auto vb = b.vertices(g);
  if (va != vb) return va < vb;
  return a.arcs < b.arcs;
}

BigInt count_paths(const Dag& g) {
  const auto order = g.topological_order();
  const auto out = g.out_arcs();
  std::vector<BigInt> ways(g.num_vertices, 0);
  ways[g.source] = 1;
  for (int v : order) {
    if (ways[v] == 0) continue;
    for (int e : out[v]) ways[g.arcs[e].to] += ways[v];
  }
  return ways[g.sink];
}

std::vector<Path> enumerate_paths(const Dag& g, std::size_t cap) {
  const BigInt total = count_paths(g);
  if (total > cap) {
    throw std::length_error("path count " + total.str() + " exceeds enumeration cap " +
                            std::to_string(cap));
  }
  const auto out = g.out_arcs();
  std::vector<Path> paths;
  Path current;
  std::function<void(int)> walk = [&](int v) {
    if (v == g.sink) {
      paths.push_back(current);
      return;
    }
    for (int e : out[v]) {
      current.arcs.push_back(e);
      walk(g.arcs[e].to);
      current.arcs.pop_back();
    }
  };
  walk(g.source);
  return paths;
}

// ---------------------------------------------------------------- supernet

const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::Expand: return "expand";
    case EdgeKind::Contract: return "contract";
    case EdgeKind::NonScale: return "nonscale";
    case EdgeKind::Skip: return "skip";
    case EdgeKind::Input: return "input";
    case EdgeKind::Output: return "output";
  }
  return "?";
}

SupernetGraph::SupernetGraph(int layers, int scales) : layers_(layers), scales_(scales) {
  if (layers < 1 || scales < 1) {
    throw std::invalid_argument("supernet needs at least one layer and one scale");
  }
  site_index_.assign(static_cast<std::size_t>(layers) * scales, -1);
  vertices_.push_back({-1, 0, VertexKind::Input});
  for (int l = 0; l < layers; ++l) {
    for (int s = 0; s <= max_scale_at(l); ++s) {
      site_index_[static_cast<std::size_t>(l) * scales + s] = static_cast<int>(vertices_.size());
      vertices_.push_back({l, s, VertexKind::CellSite});
    }
  }
  vertices_.push_back({layers, 0, VertexKind::Output});
  incoming_.resize(vertices_.size());

  auto connect = [&](int from, int to, EdgeKind kind) {
    incoming_[to].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({from, to, kind});
  };
  connect(input(), *site(0, 0), EdgeKind::Input);
  for (int l = 1; l < layers; ++l) {
    for (int s = 0; s <= max_scale_at(l); ++s) {
      const int v = *site(l, s);
      if (auto up = site(l - 1, s + 1)) connect(*up, v, EdgeKind::Expand);
      if (auto same = site(l - 1, s)) connect(*same, v, EdgeKind::NonScale);
      if (s > 0) {
        if (auto down = site(l - 1, s - 1)) connect(*down, v, EdgeKind::Contract);
      }
      if (auto same = site(l - 1, s)) connect(*same, v, EdgeKind::Skip);
    }
  }
  for (int s = 0; s <= max_scale_at(layers - 1); ++s) {
    connect(*site(layers - 1, s), output(), EdgeKind::Output);
  }

  dag_.num_vertices = static_cast<int>(vertices_.size());
  dag_.source = input();
  dag_.sink = output();
  for (const Edge& e : edges_) dag_.arcs.push_back({e.from, e.to});
}

int SupernetGraph::max_scale_at(int layer) const { return std::min(layer, scales_ - 1); }

std::optional<int> SupernetGraph::site(int layer, int scale) const {
  if (layer < 0 || layer >= layers_ || scale < 0 || scale > max_scale_at(layer)) {
    return std::nullopt;
  }
  return site_index_[static_cast<std::size_t>(layer) * scales_ + scale];
}

std::string SupernetGraph::vertex_name(int v) const {
  const Vertex& x = vertices_[v];
  switch (x.kind) {
    case VertexKind::Input: return "input";
    case VertexKind::Output: return "output";
    case VertexKind::CellSite: break;
  }
  return "L" + std::to_string(x.layer) + "S" + std::to_string(x.scale);
}

SupernetGraph build_supernet(int layers, int scales) { return SupernetGraph(layers, scales); }

BigInt count_cell_structures(int blocks, int num_ops) {
  if (blocks < 1 || num_ops < 1) throw std::invalid_argument("blocks and num_ops must be >= 1");
  BigInt n = 1;
  for (int i = 1; i <= blocks; ++i) n *= BigInt(i) * num_ops;
  return n;
}

BigInt count_architectures(const Dag& g, int blocks, int num_ops) {
  const BigInt cells = count_cell_structures(blocks, num_ops);
  return count_paths(g) * cells * cells * cells;
}

// ---------------------------------------------------------------- DOT

std::string to_dot(const SupernetGraph& g, const DotOptions& opts) {
  if (!opts.edge_weights.empty() && opts.edge_weights.size() != g.edges().size()) {
    throw std::invalid_argument("to_dot: one weight per edge required");
  }
  std::set<int> lit;
  for (const Path& p : opts.highlighted) lit.insert(p.arcs.begin(), p.arcs.end());

  std::ostringstream os;
  os << "// msnas-dot v1\n";
  os << "digraph \"" << opts.title << "\" {\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=box, fontname=\"Helvetica\"];\n";
  for (int v = 0; v < static_cast<int>(g.vertices().size()); ++v) {
    const Vertex& x = g.vertices()[v];
    os << "  v" << v << " [label=\"" << g.vertex_name(v) << "\"";
    if (x.kind != VertexKind::CellSite) os << ", shape=ellipse";
    os << "];\n";
  }
  char buf[32];
  for (int e = 0; e < static_cast<int>(g.edges().size()); ++e) {
    const Edge& edge = g.edges()[e];
    os << "  v" << edge.from << " -> v" << edge.to << " [comment=\"" << to_string(edge.kind) << "\"";
    if (!opts.edge_weights.empty()) {
      std::snprintf(buf, sizeof buf, "%.4f", opts.edge_weights[e]);
      os << ", label=\"" << buf << "\"";
    }
    if (lit.count(e)) {
      os << ", style=dashed, color=red, penwidth=2";
    } else if (edge.kind == EdgeKind::Skip) {
      os << ", style=dotted";
    }
    os << "];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace msnas
