#include "msnas/msnas.h"

#include <cstdlib>
#include <cstring>
#include <iostream>

#include "pipeline.hpp"

struct msnas_config {
  msnas::RunConfig cfg;
};

struct msnas_arch {
  msnas::ArchFile file;
};

namespace {

thread_local std::string g_last_error;

msnas_status fail(msnas_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Maps the exception in flight to a status.
msnas_status translate() {
  try {
    throw;
  } catch (const msnas::ConfigError& e) {
    return fail(MSNAS_ERR_CONFIG, e.what());
  } catch (const msnas::FormatError& e) {
    return fail(MSNAS_ERR_FORMAT, e.what());
  } catch (const msnas::InvalidArchitecture& e) {
    return fail(MSNAS_ERR_ARCH, std::string("invalid architecture: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return fail(MSNAS_ERR_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(MSNAS_ERR_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(MSNAS_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(MSNAS_ERR_RUNTIME, "unknown error");
  }
}

template <class F>
msnas_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (...) {
    return translate();
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

msnas_status null_arg(const char* name) {
  return fail(MSNAS_ERR_ARGUMENT, std::string(name) + " must not be NULL");
}

}  // namespace

extern "C" {

int msnas_exit_code(msnas_status s) {
  switch (s) {
    case MSNAS_OK: return 0;
    case MSNAS_ERR_CONFIG: return 2;
    default: return 1;
  }
}

const char* msnas_status_name(msnas_status s) {
  switch (s) {
    case MSNAS_OK: return "ok";
    case MSNAS_ERR_RUNTIME: return "runtime error";
    case MSNAS_ERR_CONFIG: return "configuration error";
    case MSNAS_ERR_ARGUMENT: return "invalid argument";
    case MSNAS_ERR_FORMAT: return "format error";
    case MSNAS_ERR_ARCH: return "invalid architecture";
  }
  return "unknown status";
}

const char* msnas_version(void) { return msnas::kToolVersion; }

const char* msnas_last_error(void) { return g_last_error.c_str(); }

void msnas_free_string(char* s) { std::free(s); }

msnas_status msnas_config_new(msnas_config** out) {
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new msnas_config{};
    return MSNAS_OK;
  });
}

msnas_status msnas_config_load(const char* path, msnas_config** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new msnas_config{msnas::load_config(path)};
    return MSNAS_OK;
  });
}

msnas_status msnas_config_parse(const char* ini_text, msnas_config** out) {
  if (!ini_text) return null_arg("ini_text");
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new msnas_config{msnas::parse_config(ini_text)};
    return MSNAS_OK;
  });
}

void msnas_config_free(msnas_config* cfg) { delete cfg; }

msnas_status msnas_config_set(msnas_config* cfg, const char* key, const char* value) {
  if (!cfg) return null_arg("cfg");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded([&] {
    cfg->cfg.set(key, value);
    return MSNAS_OK;
  });
}

msnas_status msnas_config_assign(msnas_config* cfg, const char* assignment) {
  if (!cfg) return null_arg("cfg");
  if (!assignment) return null_arg("assignment");
  return guarded([&] {
    cfg->cfg.set(std::string_view(assignment));
    return MSNAS_OK;
  });
}

msnas_status msnas_config_get(const msnas_config* cfg, const char* key, char** out) {
  if (!cfg) return null_arg("cfg");
  if (!key) return null_arg("key");
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = dup_string(cfg->cfg.get(key));
    return MSNAS_OK;
  });
}

msnas_status msnas_config_validate(const msnas_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] {
    cfg->cfg.validate();
    return MSNAS_OK;
  });
}

msnas_status msnas_config_to_ini(const msnas_config* cfg, char** out) {
  if (!cfg) return null_arg("cfg");
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = dup_string(msnas::config_to_ini(cfg->cfg));
    return MSNAS_OK;
  });
}

msnas_status msnas_arch_load(const char* path, msnas_arch** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new msnas_arch{msnas::load_arch(path)};
    return MSNAS_OK;
  });
}

void msnas_arch_free(msnas_arch* arch) { delete arch; }

size_t msnas_arch_num_paths(const msnas_arch* arch) {
  return arch ? arch->file.arch.paths.size() : 0;
}

size_t msnas_arch_num_cells(const msnas_arch* arch) {
  return arch ? arch->file.arch.cell_instances.size() : 0;
}

int msnas_arch_capped(const msnas_arch* arch) { return arch && arch->file.arch.capped ? 1 : 0; }

msnas_status msnas_count(int layers, int scales, int blocks, int num_ops, char** report) {
  if (!report) return null_arg("report");
  return guarded([&] {
    if (layers < 1 || scales < 1 || blocks < 1 || num_ops < 1) {
      throw msnas::ConfigError("count", "dimensions must all be >= 1");
    }
    *report = dup_string(msnas::count_report(layers, scales, blocks, num_ops));
    return MSNAS_OK;
  });
}

msnas_status msnas_synth(uint64_t seed, int count, int size, int num_classes, double noise,
                         int channels, const char* out_dir) {
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    if (count < 1) throw msnas::ConfigError("count", "must be >= 1");
    if (size < 4) throw msnas::ConfigError("size", "must be >= 4");
    if (num_classes < 2 || num_classes > 256) {
      throw msnas::ConfigError("classes", "must be in [2, 256]");
    }
    if (!(noise >= 0.0)) throw msnas::ConfigError("noise", "must be >= 0");
    if (channels < 1) throw msnas::ConfigError("channels", "must be >= 1");
    msnas::synth_to_dir({seed, count, size, num_classes, noise, channels}, out_dir);
    return MSNAS_OK;
  });
}

msnas_status msnas_search(const msnas_config* cfg, const char* out_dir, const char* resume,
                          int verbose) {
  if (!cfg) return null_arg("cfg");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    std::optional<std::filesystem::path> r;
    if (resume) r = resume;
    const msnas::SearchSummary s =
        msnas::search_to_dir(cfg->cfg, out_dir, r, verbose ? &std::cerr : nullptr);
    if (!s.completed) return fail(MSNAS_ERR_RUNTIME, "search aborted: " + s.error);
    return MSNAS_OK;
  });
}

msnas_status msnas_decode(const char* checkpoint, int n_paths, const char* out_dir, int* capped) {
  if (!checkpoint) return null_arg("checkpoint");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    const msnas::DecodeSummary d = msnas::decode_to_dir(checkpoint, n_paths, out_dir);
    if (capped) *capped = d.capped ? 1 : 0;
    return MSNAS_OK;
  });
}

msnas_status msnas_cost(const char* arch_path, int input_size, char** csv) {
  if (!arch_path) return null_arg("arch_path");
  if (!csv) return null_arg("csv");
  return guarded([&] {
    if (input_size < 1) throw msnas::ConfigError("input_size", "must be >= 1");
    *csv = dup_string(msnas::cost_report_csv(arch_path, input_size));
    return MSNAS_OK;
  });
}

msnas_status msnas_compare(const char* checkpoint, const int* n_paths, size_t count,
                           int input_size, char** csv) {
  if (!checkpoint) return null_arg("checkpoint");
  if (!n_paths && count) return null_arg("n_paths");
  if (!csv) return null_arg("csv");
  return guarded([&] {
    if (input_size < 1) throw msnas::ConfigError("input_size", "must be >= 1");
    if (count == 0) throw msnas::ConfigError("paths", "need at least one N_l");
    for (size_t i = 0; i < count; ++i) {
      if (n_paths[i] < 1) throw msnas::ConfigError("paths", "N_l must be >= 1");
      if (i && n_paths[i] <= n_paths[i - 1]) {
        throw msnas::ConfigError("paths", "N_l list must be strictly ascending");
      }
    }
    *csv = dup_string(
        msnas::compare_report_csv(checkpoint, std::vector<int>(n_paths, n_paths + count), input_size));
    return MSNAS_OK;
  });
}

msnas_status msnas_train(const char* arch_path, const msnas_config* cfg, const char* out_dir,
                         int verbose) {
  if (!arch_path) return null_arg("arch_path");
  if (!cfg) return null_arg("cfg");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    const msnas::TrainSummary s =
        msnas::train_to_dir(arch_path, cfg->cfg, out_dir, verbose ? &std::cerr : nullptr);
    if (s.result.failed == static_cast<int>(s.result.folds.size())) {
      return fail(MSNAS_ERR_RUNTIME, "every fold failed: " + s.result.folds.front().error);
    }
    if (s.result.failed > 0) {
      g_last_error = std::to_string(s.result.failed) + " fold(s) failed";
    }
    return MSNAS_OK;
  });
}

msnas_status msnas_eval(const char* arch_path, const char* weights, const char* dataset_dir,
                        int oracle, char** csv) {
  if (!arch_path) return null_arg("arch_path");
  if (!dataset_dir) return null_arg("dataset_dir");
  if (!csv) return null_arg("csv");
  return guarded([&] {
    std::optional<std::filesystem::path> w;
    if (weights) w = weights;
    *csv = dup_string(msnas::eval_report_csv(arch_path, w, dataset_dir, oracle != 0));
    return MSNAS_OK;
  });
}

msnas_status msnas_export_dot(int layers, int scales, const char* arch_path, char** dot) {
  if (!dot) return null_arg("dot");
  return guarded([&] {
    if (arch_path) {
      *dot = dup_string(msnas::export_arch_dot(arch_path));
    } else {
      if (layers < 1 || scales < 1) throw msnas::ConfigError("layers", "dimensions must be >= 1");
      *dot = dup_string(msnas::export_dot(layers, scales));
    }
    return MSNAS_OK;
  });
}

}  // extern "C"
