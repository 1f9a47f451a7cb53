#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "decode.hpp"
#include "optim.hpp"

namespace msnas {

struct NetworkSpec {
  int base_channels = 8;
  int image_channels = 1;
  int num_classes = 2;
  int k = 4;  // only constrains the channel plan
};

// One decoded cell: blocks use their single chosen operator on the full
// input width.
struct DecodedCell {
  DecodedCell() = default;
  DecodedCell(const std::string& name, const CellGenotype& g, int in_channels, int out_channels,
              Rng& rng);

  CellGenotype genotype;
  std::vector<OperatorBank> ops;  // one per block
  Projection projection;

  Var forward(Var x, bool training);
  void collect(StateRefs& refs);
};

// Discrete network: the selected paths' cells, merges summing every
// selected inbound edge, and one head per selected final-layer vertex.
class DecodedNetwork {
 public:
  DecodedNetwork(const DecodedArch& arch, const NetworkSpec& spec, std::uint64_t seed);
  DecodedNetwork(const DecodedNetwork&) = delete;
  DecodedNetwork& operator=(const DecodedNetwork&) = delete;

  Var forward(Var image, bool training);
  StateRefs state();
  const DecodedArch& arch() const { return arch_; }
  const std::vector<int>& widths() const { return widths_; }

 private:
  DecodedArch arch_;
  NetworkSpec spec_;
  SupernetGraph graph_;
  std::vector<int> widths_;
  Stem stem_;
  std::vector<std::optional<DecodedCell>> cells_;  // [edge]
  std::vector<std::optional<Head>> heads_;         // [vertex]
  std::vector<std::vector<int>> inbound_;          // selected edges per vertex
};

struct TrainConfig {
  int folds = 2;
  int epochs = 10;
  int batch_size = 4;
  double lr_start = 0.025;
  double lr_end = 0.001;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  std::uint64_t seed = 0;
};

using ForwardFn = std::function<Var(Var image, bool training)>;

// Minibatch SGD over `train` with the cosine schedule; returns the mean
// loss of each epoch. Throws NonFiniteError on a non-finite loss.
std::vector<double> train_model(const ForwardFn& forward, std::span<Param* const> params,
                                const Dataset& data, const std::vector<int>& train,
                                const TrainConfig& cfg, Rng& shuffle);

// Hard predictions (eval mode) scored per image.
Metrics evaluate_model(const ForwardFn& forward, const Dataset& data,
                       const std::vector<int>& indices, int batch_size);

struct FoldResult {
  int fold = 0;
  bool failed = false;
  std::string error;
  std::vector<double> epoch_loss;
  Metrics metrics;
};

struct CrossValResult {
  std::vector<FoldResult> folds;
  double mean_iou = 0.0, std_iou = 0.0;
  double mean_dice = 0.0, std_dice = 0.0;
  int failed = 0;
};

using FoldHook = std::function<void(int fold, DecodedNetwork& net)>;

// Fresh initialisation per fold; each fold is held out once. Failed folds
// are recorded and skipped in the summary.
CrossValResult train_decoded(const DecodedArch& arch, const NetworkSpec& spec,
                             const Dataset& data, const TrainConfig& cfg,
                             const FoldHook& on_trained = {});

std::uint64_t fold_seed(std::uint64_t seed, int fold);

}  // namespace msnas
