#pragma once

#include <array>
#include <vector>

#include "relaxation.hpp"
#include "supernet.hpp"

namespace msnas {

// Detached values of every architecture scalar of a relaxed supernet.
struct ArchScalars {
  CellConfig cell;
  std::array<std::vector<std::vector<double>>, 3> alpha;  // [kind][cell edge][op]
  std::array<std::vector<std::vector<double>>, 3> p;      // [kind][block][pred]
  std::vector<std::vector<double>> beta;                  // [vertex], empty at terminals
};

ArchScalars snapshot_arch(const RelaxedSupernet& net);
// Gaussian architecture scalars shaped for graph `g`.
ArchScalars random_arch(const SupernetGraph& g, const CellConfig& cell, double stddev, Rng& rng);

struct Block {
  int input = 0;  // 0 = cell input, j >= 1 = block j-1
  OperatorKind op = OperatorKind::SkipConnect;
  bool operator==(const Block&) const = default;
};

struct CellGenotype {
  CellKind kind = CellKind::NonScaling;
  std::vector<Block> blocks;
  bool operator==(const CellGenotype&) const = default;
};

// Per block: argmax over (predecessor, operator != Zero) of
// softmax(p)[pred] * softmax(alpha[pred])[op]; ties go to the lower
// predecessor, then the earlier operator.
CellGenotype decode_cell(CellKind kind, const CellConfig& cell,
                         const std::vector<std::vector<double>>& alpha,
                         const std::vector<std::vector<double>>& p);
std::array<CellGenotype, 3> decode_cells(const ArchScalars& s);

struct WeightedDag {
  Dag dag;
  std::vector<double> weights;  // per arc
};

// Each cell site's incoming edges carry softmax(beta) over that group;
// terminal edges weigh 1.
WeightedDag edge_weights_from_beta(const SupernetGraph& g,
                                   const std::vector<std::vector<double>>& beta);

struct RankedPaths {
  std::vector<Path> paths;
  std::vector<double> scores;
  bool capped = false;  // fewer than the requested number exist
};

// The n highest-scoring source->sink paths (score = sum of arc weights),
// best first, ties by lexicographic vertex then arc sequence. k-best
// dynamic program over topological order with a priority-queue merge of
// the predecessor lists at each vertex.
RankedPaths top_k_longest_paths(const WeightedDag& w, int n);

struct CellInstance {
  int vertex = 0;
  CellKind kind = CellKind::NonScaling;
  int edge = 0;  // supernet edge carrying the cell
  bool operator==(const CellInstance&) const = default;
};

struct DecodedArch {
  int layers = 0;
  int scales = 0;
  std::vector<Path> paths;
  std::vector<double> scores;
  bool capped = false;
  std::array<CellGenotype, 3> genotypes;
  std::vector<int> edges;                   // union of path edges, ascending
  std::vector<CellInstance> cell_instances;  // one per (vertex, kind), by edge id
  std::vector<int> merge_vertices;          // vertices with > 1 selected inbound edge

  const CellGenotype& genotype(CellKind k) const { return genotypes[index_of(k)]; }
};

class InvalidArchitecture : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void validate_path(const SupernetGraph& g, const Path& p);

DecodedArch assemble_architecture(const std::vector<Path>& paths,
                                  const std::array<CellGenotype, 3>& genotypes,
                                  const SupernetGraph& g);

// Both decoding steps: cell genotypes, then the top-n network paths.
DecodedArch decode_architecture(const SupernetGraph& g, const ArchScalars& s, int n_paths);

}  // namespace msnas
