#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "decode.hpp"
#include "network.hpp"
#include "search.hpp"

namespace msnas {

inline constexpr const char* kToolVersion = "0.1.0";

// Unreadable, truncated or tampered file, or an unsupported format version.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::string_view bytes);
std::string read_file(const std::filesystem::path& p);
// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& p, std::string_view bytes);

// ------------------------------------------------------------- run config

struct RunConfig {
  SearchConfig search;
  TrainConfig train;
  std::string dataset_dir;
  std::string output_dir;

  // ConfigError fields are reported as "section.key".
  void validate() const;
  // Applies one "section.key=value" assignment.
  void set(std::string_view assignment);
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
};

// Sections supernet, data, search, decode, train, run. Unknown sections or
// keys and malformed values raise ConfigError.
RunConfig parse_config(const std::string& ini_text);
RunConfig load_config(const std::filesystem::path& p);
// Canonical text: fixed key order, doubles with 17 significant digits.
std::string config_to_ini(const RunConfig& c);
std::vector<std::string> config_keys();

// ------------------------------------------------------------- checkpoint

// "MSNASCKP", u32 version, u64 meta length, meta JSON, u32 record count,
// records, 32-byte SHA-256 of everything before it. Little endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  bool is_param = true;
  Tensor value;
  Tensor momentum;  // params only
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<TensorRecord> tensors;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

std::vector<TensorRecord> capture_state(const StateRefs& s);
// Every name must match exactly once with the same shape.
void apply_state(StateRefs& s, const std::vector<TensorRecord>& records);

Checkpoint search_checkpoint(SearchRun& run, const RunConfig& cfg);
struct LoadedSearch {
  RunConfig config;
  int epoch = 0;
  std::string rng;
  std::vector<LossRecord> history;
  std::string error;
  std::vector<TensorRecord> tensors;
};
LoadedSearch read_search_checkpoint(const Checkpoint& c);

// ------------------------------------------------------------- arch file

inline constexpr int kArchVersion = 1;

struct ArchFile {
  DecodedArch arch;
  CellConfig cell;
  NetworkSpec spec;
  int n_paths_requested = 0;
  std::vector<int> widths;
  std::string checkpoint_sha256;
  std::uint64_t seed = 0;
  int search_epochs = 0;
};

std::string arch_to_json(const ArchFile& a);
// Re-checks every DecodedArch invariant; throws FormatError or
// InvalidArchitecture.
ArchFile arch_from_json(std::string_view text);

// ------------------------------------------------------------- datasets

inline constexpr int kDatasetVersion = 1;

// manifest.json plus one image and one label file per sample. Image files
// hold "MSNI", u32 version, u32 C/H/W and f64 pixels; label files "MSNL",
// u32 version, u32 H/W and u8 class ids.
void save_dataset(const Dataset& d, const std::filesystem::path& dir, const nlohmann::json& generator);
Dataset load_dataset(const std::filesystem::path& dir);

// ------------------------------------------------------------- reports

std::string metrics_csv(const CrossValResult& r, int num_classes);
std::string eval_csv(const Metrics& m, int num_classes);

// Reproducibility manifest: command, seed, config digest and the SHA-256
// of each artifact written.
std::string run_manifest(const std::string& command, std::uint64_t seed,
                         const std::string& config_sha256,
                         const std::map<std::string, std::string>& artifact_sha256);

}  // namespace msnas
