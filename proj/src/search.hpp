#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "optim.hpp"
#include "relaxation.hpp"

namespace msnas {

// Invalid configuration value; `field` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct SearchConfig {
  int layers = 10;
  int scales = 5;
  int blocks = 3;
  int k = 4;
  int n_paths = 3;
  int base_channels = 8;
  int epochs_total = 40;
  int epochs_phase1 = 20;
  double lr_start = 0.025;
  double lr_end = 0.001;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  int batch_size = 4;
  std::uint64_t seed = 0;
  int num_classes = 2;
  int image_size = 256;
  int image_channels = 1;
  double arch_init_noise = 1e-3;
  // Multiplier on the schedule for architecture-scalar steps.
  double arch_lr_scale = 1.0;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
  SupernetConfig supernet() const;
};

double lr_schedule(int epoch, const SearchConfig& cfg);

struct LossRecord {
  int epoch = 0;
  int phase = 1;
  double weight_loss = 0.0;
  double arch_loss = 0.0;
  double lr = 0.0;
};

// Disjoint weight-set / arch-set halves of a dataset (seeded shuffle).
struct DataSplit {
  std::vector<int> weights;
  std::vector<int> arch;
};
DataSplit split_halves(int n, std::uint64_t seed);

enum class ParamGroup { Kernels, CellArch, NetworkArch };

// Two-phase search. Phase 1 alternates kernel steps on the weight half with
// (alpha, p) steps on the arch half while beta stays uniform; phase 2
// freezes (alpha, p) and trains beta instead. Kernels train throughout.
class SearchRun {
 public:
  SearchRun(const SearchConfig& cfg, const Dataset& data);

  const SearchConfig& config() const { return cfg_; }
  RelaxedSupernet& net() { return *net_; }
  const RelaxedSupernet& net() const { return *net_; }
  int epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= cfg_.epochs_total; }
  const std::vector<LossRecord>& history() const { return history_; }
  const Rng& rng() const { return rng_; }
  const std::string& error() const { return error_; }
  bool aborted() const { return !error_.empty(); }

  // Runs one epoch. Returns false (leaving the last finite state in place)
  // when a loss, activation or gradient goes non-finite.
  bool run_epoch();
  // Runs until finished or aborted.
  bool run();

  // Restores the loop position; parameters are restored separately.
  void restore(int epoch, const Rng& rng, std::vector<LossRecord> history);

  std::vector<Param*> group(ParamGroup g);

 private:
  double step(const Batch& batch, std::span<Param* const> active, const SgdOptions& opt);
  void begin_phase2();

  SearchConfig cfg_;
  const Dataset* data_;
  std::unique_ptr<RelaxedSupernet> net_;
  DataSplit split_;
  Rng rng_;
  int epoch_ = 0;
  std::vector<LossRecord> history_;
  std::string error_;
};

std::string loss_csv(const std::vector<LossRecord>& history);

}  // namespace msnas
