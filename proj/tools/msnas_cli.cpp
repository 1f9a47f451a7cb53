#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msnas/msnas.h"

namespace {

struct ConfigDeleter {
  void operator()(msnas_config* c) const { msnas_config_free(c); }
};
using ConfigPtr = std::unique_ptr<msnas_config, ConfigDeleter>;

int report(msnas_status s, const char* command) {
  if (s != MSNAS_OK) {
    std::fprintf(stderr, "msnas %s: %s: %s\n", command, msnas_status_name(s), msnas_last_error());
  }
  return msnas_exit_code(s);
}

// Takes ownership of a C string, returns it as std::string.
std::string take(char* s) {
  std::string out = s ? s : "";
  msnas_free_string(s);
  return out;
}

int emit(const std::string& text, const std::string& path, const char* command) {
  if (path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return 0;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::fprintf(stderr, "msnas %s: cannot write %s\n", command, path.c_str());
    return 1;
  }
  return 0;
}

// --out, then MSNAS_OUTPUT_DIR, then the config's run.output_dir, then ".".
std::string output_dir(const std::string& flag, const msnas_config* cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MSNAS_OUTPUT_DIR"); env && *env) return env;
  if (cfg) {
    char* v = nullptr;
    if (msnas_config_get(cfg, "run.output_dir", &v) == MSNAS_OK) {
      std::string dir = take(v);
      if (!dir.empty()) return dir;
    }
  }
  return ".";
}

msnas_status load_config(const std::string& path, const std::vector<std::string>& sets,
                         ConfigPtr& out) {
  msnas_config* raw = nullptr;
  msnas_status s = path.empty() ? msnas_config_new(&raw) : msnas_config_load(path.c_str(), &raw);
  if (s != MSNAS_OK) return s;
  out.reset(raw);
  for (const std::string& a : sets) {
    if ((s = msnas_config_assign(raw, a.c_str())) != MSNAS_OK) return s;
  }
  return msnas_config_validate(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale cell search for segmentation networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", msnas_version());

  int layers = 10, scales = 5, blocks = 3, num_ops = 5;
  auto* count = app.add_subcommand("count", "Count paths, cells and architectures");
  count->add_option("--layers", layers, "Supernet layers L")->capture_default_str();
  count->add_option("--scales", scales, "Supernet scales S")->capture_default_str();
  count->add_option("--blocks", blocks, "Blocks per cell N")->capture_default_str();
  count->add_option("--ops", num_ops, "Candidate operators per edge")->capture_default_str();

  std::uint64_t seed = 0;
  int n_images = 64, size = 32, classes = 3, channels = 1;
  double noise = 0.05;
  std::string out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic segmentation dataset");
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--count", n_images)->capture_default_str();
  synth->add_option("--size", size, "Square image side")->capture_default_str();
  synth->add_option("--classes", classes)->capture_default_str();
  synth->add_option("--noise", noise, "Gaussian noise sigma")->capture_default_str();
  synth->add_option("--channels", channels)->capture_default_str();
  synth->add_option("--out", out, "Dataset directory");

  std::string config_path, resume;
  std::vector<std::string> sets;
  bool quiet = false;
  auto* search = app.add_subcommand("search", "Run the two-phase architecture search");
  search->add_option("--config", config_path, "INI run configuration")->required();
  search->add_option("--set", sets, "Override, section.key=value (repeatable)");
  search->add_option("--out", out, "Output directory");
  search->add_option("--resume", resume, "Continue from a checkpoint");
  search->add_flag("--quiet", quiet, "No per-epoch progress");

  std::string checkpoint;
  int n_paths = 0;
  auto* decode = app.add_subcommand("decode", "Decode a searched checkpoint");
  decode->add_option("--checkpoint", checkpoint)->required();
  decode->add_option("--paths", n_paths, "N_l (default: the checkpoint's decode.n_paths)");
  decode->add_option("--out", out, "Output directory");

  std::string arch;
  int input_size = 256;
  std::vector<int> sweep;
  auto* cost = app.add_subcommand("cost", "Parameter and FLOP report");
  auto* cost_arch = cost->add_option("--arch", arch, "Arch file to cost");
  auto* cost_ckpt = cost->add_option("--checkpoint", checkpoint, "Checkpoint for an N_l sweep");
  cost->add_option("--sweep", sweep, "Ascending N_l values")->delimiter(',');
  cost->add_option("--input-size", input_size)->capture_default_str();
  cost->add_option("--out", out, "Output file (default stdout)");
  cost_arch->excludes(cost_ckpt);

  auto* train = app.add_subcommand("train", "Cross-validated retraining of an arch file");
  train->add_option("--arch", arch)->required();
  train->add_option("--config", config_path, "INI run configuration")->required();
  train->add_option("--set", sets, "Override, section.key=value (repeatable)");
  train->add_option("--out", out, "Output directory");
  train->add_flag("--quiet", quiet);

  std::string weights, dataset;
  bool oracle = false;
  auto* eval = app.add_subcommand("eval", "Score trained weights on a dataset");
  eval->add_option("--arch", arch)->required();
  auto* eval_w = eval->add_option("--weights", weights);
  auto* eval_o = eval->add_flag("--oracle", oracle, "Score ground truth as the prediction");
  eval->add_option("--dataset", dataset)->required();
  eval->add_option("--out", out, "Output file (default stdout)");
  eval_w->excludes(eval_o);

  auto* dot = app.add_subcommand("export-dot", "Graphviz rendering of a supernet");
  auto* dot_arch = dot->add_option("--arch", arch, "Highlight an arch file's paths");
  auto* dot_l = dot->add_option("--layers", layers)->capture_default_str();
  auto* dot_s = dot->add_option("--scales", scales)->capture_default_str();
  dot->add_option("--out", out, "Output file (default stdout)");
  dot_arch->excludes(dot_l)->excludes(dot_s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*count) {
    char* text = nullptr;
    const msnas_status s = msnas_count(layers, scales, blocks, num_ops, &text);
    if (s != MSNAS_OK) return report(s, "count");
    std::fputs(take(text).c_str(), stdout);
    return 0;
  }

  if (*synth) {
    const std::string dir = output_dir(out, nullptr);
    const msnas_status s = msnas_synth(seed, n_images, size, classes, noise, channels, dir.c_str());
    if (s == MSNAS_OK) std::fprintf(stderr, "wrote %d samples to %s\n", n_images, dir.c_str());
    return report(s, "synth");
  }

  if (*search) {
    ConfigPtr cfg;
    msnas_status s = load_config(config_path, sets, cfg);
    if (s != MSNAS_OK) return report(s, "search");
    const std::string dir = output_dir(out, cfg.get());
    s = msnas_search(cfg.get(), dir.c_str(), resume.empty() ? nullptr : resume.c_str(), !quiet);
    if (s == MSNAS_OK) std::fprintf(stderr, "checkpoint written to %s\n", dir.c_str());
    return report(s, "search");
  }

  if (*decode) {
    const std::string dir = output_dir(out, nullptr);
    int capped = 0;
    const msnas_status s = msnas_decode(checkpoint.c_str(), n_paths, dir.c_str(), &capped);
    if (s == MSNAS_OK && capped) {
      std::fprintf(stderr, "warning: fewer paths exist than requested; all paths were kept\n");
    }
    return report(s, "decode");
  }

  if (*cost) {
    char* csv = nullptr;
    msnas_status s;
    if (!arch.empty()) {
      s = msnas_cost(arch.c_str(), input_size, &csv);
    } else if (!checkpoint.empty()) {
      if (sweep.empty()) sweep = {3, 4, 5};
      s = msnas_compare(checkpoint.c_str(), sweep.data(), sweep.size(), input_size, &csv);
    } else {
      std::fprintf(stderr, "msnas cost: one of --arch or --checkpoint is required\n");
      return 2;
    }
    if (s != MSNAS_OK) return report(s, "cost");
    return emit(take(csv), out, "cost");
  }

  if (*train) {
    ConfigPtr cfg;
    msnas_status s = load_config(config_path, sets, cfg);
    if (s != MSNAS_OK) return report(s, "train");
    const std::string dir = output_dir(out, cfg.get());
    s = msnas_train(arch.c_str(), cfg.get(), dir.c_str(), !quiet);
    if (s == MSNAS_OK && *msnas_last_error()) {
      std::fprintf(stderr, "warning: %s (see metrics.csv)\n", msnas_last_error());
    }
    return report(s, "train");
  }

  if (*eval) {
    if (weights.empty() && !oracle) {
      std::fprintf(stderr, "msnas eval: one of --weights or --oracle is required\n");
      return 2;
    }
    char* csv = nullptr;
    const msnas_status s = msnas_eval(arch.c_str(), weights.empty() ? nullptr : weights.c_str(),
                                      dataset.c_str(), oracle ? 1 : 0, &csv);
    if (s != MSNAS_OK) return report(s, "eval");
    return emit(take(csv), out, "eval");
  }

  if (*dot) {
    char* text = nullptr;
    const msnas_status s =
        msnas_export_dot(layers, scales, arch.empty() ? nullptr : arch.c_str(), &text);
    if (s != MSNAS_OK) return report(s, "export-dot");
    return emit(take(text), out, "export-dot");
  }
  return 2;
}
