#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "operators.hpp"
#include "supernet.hpp"

namespace msnas {

enum class CellKind { Expanding, Contracting, NonScaling };

inline constexpr std::array<CellKind, 3> kAllCellKinds{CellKind::Expanding, CellKind::Contracting,
                                                       CellKind::NonScaling};

const char* to_string(CellKind k);
std::optional<CellKind> parse_cell_kind(std::string_view s);
int index_of(CellKind k);
// Cell kind evaluated on an edge; nullopt for skip and output edges.
std::optional<CellKind> cell_kind_for(EdgeKind e);

// Error raised when a forward activation becomes NaN/Inf.
class NonFiniteActivation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Channel split of a partial connection: the first channels/k channels go
// through the mixed operation, the rest bypass it.
struct PartialMask {
  int k = 1;
  int channels = 0;

  int selected() const { return (channels + k - 1) / k; }
};

PartialMask make_partial_mask(int channels, int k);

struct CellConfig {
  int blocks = 3;
  int k = 4;
  std::vector<OperatorKind> ops{kAllOperators.begin(), kAllOperators.end()};

  // Edges of the cell DAG: block b (0-based) reads predecessors 0..b, where
  // predecessor 0 is the resampled cell input and j >= 1 is block j-1.
  int num_edges() const { return blocks * (blocks + 1) / 2; }
  static int edge_index(int block, int pred) { return block * (block + 1) / 2 + pred; }
};

// Architecture scalars of one cell kind: alpha per (edge, operator) and p
// per (block, predecessor). Shared by every site evaluating that kind.
struct CellArchParams {
  CellArchParams() = default;
  CellArchParams(CellKind kind, const CellConfig& cfg);

  CellKind kind = CellKind::NonScaling;
  CellConfig config;
  std::vector<Param> alpha;  // [edge] -> (1, ops, 1, 1)
  std::vector<Param> p;      // [block] -> (1, block + 1, 1, 1)

  void collect(StateRefs& refs);
};

// Kernel weights of one cell instance at one site.
struct CellWeights {
  CellWeights() = default;
  CellWeights(const std::string& name, CellKind kind, int in_channels, int out_channels,
              const CellConfig& cfg, Rng& rng);

  CellKind kind = CellKind::NonScaling;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<OperatorBank> banks;  // [edge], at the masked channel count
  Projection projection;            // blocks * in_channels -> out_channels

  void collect(StateRefs& refs);
};

// Selected channels: sum_o softmax(alpha)_o * o(x[selected]); bypass
// channels are copied unchanged.
Var partial_connect(Var x, Param& alpha, std::span<const OperatorKind> ops,
                    const PartialMask& mask, OperatorBank& bank, bool training);

Var resample_for(CellKind kind, Var x);

// Cell output: resample, blocks mixed by softmax(p) over predecessors, then
// the concatenation of all block outputs projected to out_channels.
Var cell_forward(CellKind kind, Var x_in, CellArchParams& arch, CellWeights& weights,
                 bool training);

// Channel width of every vertex: base * 2^scale at cell sites, base at the
// input terminal, 0 at the output terminal.
std::vector<int> channel_plan(const SupernetGraph& g, int base_channels, int k);

struct SupernetConfig {
  int layers = 10;
  int scales = 5;
  int base_channels = 8;
  int image_channels = 1;
  int num_classes = 2;
  CellConfig cell;
};

// Softmax mixing weights recorded at each cell site during a forward pass.
struct MixingTrace {
  std::vector<std::pair<int, std::vector<double>>> vertex_weights;
};

// Relaxed supernet: every cell site mixes its Expand/NonScale/Contract
// cells and skip input with softmax(beta) over the edges present.
class RelaxedSupernet {
 public:
  RelaxedSupernet(const SupernetConfig& cfg, std::uint64_t seed);
  RelaxedSupernet(const RelaxedSupernet&) = delete;
  RelaxedSupernet& operator=(const RelaxedSupernet&) = delete;

  const SupernetConfig& config() const { return cfg_; }
  const SupernetGraph& graph() const { return graph_; }
  const std::vector<int>& widths() const { return widths_; }

  // Per-pixel class logits at input resolution.
  Var forward(Var image, bool training, MixingTrace* trace = nullptr);

  CellArchParams& cell_arch(CellKind k) { return cell_arch_[index_of(k)]; }
  const CellArchParams& cell_arch(CellKind k) const { return cell_arch_[index_of(k)]; }
  // beta of a cell site, one entry per incoming edge in graph order.
  Param& beta(int vertex);
  const Param& beta(int vertex) const;

  StateRefs kernel_state();
  std::vector<Param*> cell_arch_params();
  std::vector<Param*> network_arch_params();
  // Everything, in a fixed order: kernels, cell arch, network arch.
  StateRefs full_state();

  // Adds Gaussian noise of the given scale to every architecture scalar.
  void perturb_arch(double stddev, Rng& rng);

 private:
  SupernetConfig cfg_;
  SupernetGraph graph_;
  std::vector<int> widths_;
  Stem stem_;
  std::array<CellArchParams, 3> cell_arch_;
  std::vector<std::optional<Param>> beta_;          // [vertex]
  std::vector<std::optional<CellWeights>> cells_;   // [edge]
  std::vector<std::optional<Head>> heads_;          // [vertex]
};

}  // namespace msnas
