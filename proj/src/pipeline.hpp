#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cost.hpp"
#include "io.hpp"

namespace msnas {

// Computed path / cell / architecture counts. For the reference
// configuration (10, 5, 3, 5) the report adds the published values and a
// match line.
std::string count_report(int layers, int scales, int blocks, int num_ops);

struct SynthSummary {
  std::size_t count = 0;
  std::string manifest_sha256;
};
SynthSummary synth_to_dir(const SynthOptions& opt, const std::filesystem::path& dir);

struct SearchSummary {
  bool completed = false;
  std::string error;
  int epochs_run = 0;
  std::string checkpoint_sha256;
};

// Writes checkpoint.bin (after every epoch), loss.csv and manifest.json.
// Invalid configuration or a missing dataset raise ConfigError.
SearchSummary search_to_dir(const RunConfig& cfg, const std::filesystem::path& out,
                            const std::optional<std::filesystem::path>& resume = {},
                            std::ostream* log = nullptr);

struct DecodeSummary {
  ArchFile arch;
  bool capped = false;
  std::string arch_sha256;
};

// Writes arch.json and arch.dot (chosen paths highlighted, beta weights on
// edges). n_paths 0 takes decode.n_paths from the checkpoint's config.
DecodeSummary decode_to_dir(const std::filesystem::path& checkpoint, int n_paths,
                            const std::filesystem::path& out);

ArchFile load_arch(const std::filesystem::path& p);
CostSpec cost_spec(const ArchFile& a);
std::string cost_report_csv(const std::filesystem::path& arch, int input_size);
std::string compare_report_csv(const std::filesystem::path& checkpoint,
                               const std::vector<int>& n_paths, int input_size);

struct TrainSummary {
  CrossValResult result;
  std::string metrics_csv;
};

// Cross-validated retraining; writes metrics.csv, weights_fold<i>.bin and
// manifest.json.
TrainSummary train_to_dir(const std::filesystem::path& arch, const RunConfig& cfg,
                          const std::filesystem::path& out, std::ostream* log = nullptr);

// Scores stored weights on a dataset. With `oracle` the ground truth is fed
// back as the prediction and no weights are needed.
std::string eval_report_csv(const std::filesystem::path& arch,
                            const std::optional<std::filesystem::path>& weights,
                            const std::filesystem::path& dataset, bool oracle);

// The full supernet, or the supernet of an arch file with its paths lit.
std::string export_dot(int layers, int scales);
std::string export_arch_dot(const std::filesystem::path& arch);

}  // namespace msnas
