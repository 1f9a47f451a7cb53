#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace msnas {

using BigInt = boost::multiprecision::cpp_int;

class CycleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Plain single-source single-sink directed multigraph. Parallel edges are
// distinct (a path is a sequence of edges).
struct Dag {
  struct Arc {
    int from = 0;
    int to = 0;
  };

  int num_vertices = 0;
  std::vector<Arc> arcs;
  int source = 0;
  int sink = 0;

  // Outgoing / incoming arc ids of each vertex, in arc-id order.
  std::vector<std::vector<int>> out_arcs() const;
  std::vector<std::vector<int>> in_arcs() const;
  // Kahn order with smallest-id-first tie breaking; throws CycleError.
  std::vector<int> topological_order() const;
};

struct Path {
  std::vector<int> arcs;

  std::vector<int> vertices(const Dag& g) const;
  bool operator==(const Path&) const = default;
};

// Lexicographic vertex sequence, then arc sequence for parallel arcs.
bool path_less(const Dag& g, const Path& a, const Path& b);

BigInt count_paths(const Dag& g);

inline constexpr std::size_t kDefaultPathCap = 10000;

// Every source->sink path in DFS order. Throws when the path count exceeds
// `cap`.
std::vector<Path> enumerate_paths(const Dag& g, std::size_t cap = kDefaultPathCap);

// ---------------------------------------------------------------- supernet

enum class VertexKind { CellSite, Input, Output };
enum class EdgeKind { Expand, Contract, NonScale, Skip, Input, Output };

const char* to_string(EdgeKind k);

struct Vertex {
  int layer = 0;
  int scale = 0;  // resolution is input / 2^scale
  VertexKind kind = VertexKind::CellSite;
};

struct Edge {
  int from = 0;
  int to = 0;
  EdgeKind kind = EdgeKind::NonScale;
};

// Triangular multi-scale search space: layer l holds cell sites at scales
// 0..min(l, S-1). Vertex ids are input terminal first, then sites in
// (layer, scale) order, then the output terminal; that order is topological.
class SupernetGraph {
 public:
  SupernetGraph(int layers, int scales);

  int layers() const { return layers_; }
  int scales() const { return scales_; }
  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  int input() const { return 0; }
  int output() const { return static_cast<int>(vertices_.size()) - 1; }
  std::optional<int> site(int layer, int scale) const;
  // Incoming edge ids of vertex v in construction order.
  const std::vector<int>& incoming(int v) const { return incoming_[v]; }
  const Dag& dag() const { return dag_; }
  int max_scale_at(int layer) const;
  std::string vertex_name(int v) const;

 private:
  int layers_;
  int scales_;
  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> incoming_;
  std::vector<int> site_index_;  // layer * scales + scale -> vertex id or -1
  Dag dag_;
};

SupernetGraph build_supernet(int layers, int scales);

// Genotypes of one cell: block i (1-based) picks one of i inputs and one of
// num_ops operators.
BigInt count_cell_structures(int blocks, int num_ops);
// Paths times the genotype combinations of the three shared cell kinds.
BigInt count_architectures(const Dag& g, int blocks, int num_ops);

struct DotOptions {
  std::span<const double> edge_weights;  // empty, or one per edge
  std::span<const Path> highlighted;
  std::string title = "supernet";
};

std::string to_dot(const SupernetGraph& g, const DotOptions& opts = {});

}  // namespace msnas
