#include "pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace msnas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sci(const BigInt& v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << static_cast<double>(v);
  return os.str();
}

bool within(const BigInt& v, double ref) {
  const double x = static_cast<double>(v);
  return std::abs(x - ref) <= 0.005 * ref;
}

struct LoadedCheckpoint {
  LoadedSearch search;
  std::string sha256;
};

LoadedCheckpoint read_checkpoint_file(const fs::path& p) {
  std::string bytes;
  try {
    bytes = read_file(p);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
  LoadedCheckpoint out;
  out.search = read_search_checkpoint(decode_checkpoint(bytes));
  out.sha256 = sha256_hex(bytes);
  return out;
}

ArchScalars arch_scalars(const LoadedSearch& s) {
  RelaxedSupernet net(s.config.search.supernet(), s.config.search.seed);
  StateRefs st = net.full_state();
  apply_state(st, s.tensors);
  return snapshot_arch(net);
}

void check_dataset(const Dataset& d, const NetworkSpec& spec, int scales) {
  if (d.channels != spec.image_channels || d.num_classes != spec.num_classes) {
    throw ConfigError("data.dir", "dataset has " + std::to_string(d.channels) + " channels and " +
                                      std::to_string(d.num_classes) +
                                      " classes, the architecture expects " +
                                      std::to_string(spec.image_channels) + " and " +
                                      std::to_string(spec.num_classes));
  }
  const int div = 1 << (scales - 1);
  if (d.size % div != 0) {
    throw ConfigError("data.dir", "image size " + std::to_string(d.size) +
                                      " is not a multiple of " + std::to_string(div));
  }
}

Dataset open_dataset(const std::string& dir) {
  if (dir.empty()) throw ConfigError("data.dir", "no dataset directory given");
  if (!fs::is_directory(dir)) throw ConfigError("data.dir", "dataset not found: " + dir);
  return load_dataset(dir);
}

}  // namespace

std::string count_report(int layers, int scales, int blocks, int num_ops) {
  const SupernetGraph g(layers, scales);
  const BigInt paths = count_paths(g.dag());
  const BigInt per_kind = count_cell_structures(blocks, num_ops);
  const BigInt cells = per_kind * per_kind * per_kind;
  const BigInt archs = count_architectures(g.dag(), blocks, num_ops);
  std::ostringstream os;
  os << "supernet: L=" << layers << " S=" << scales << " N=" << blocks << " ops=" << num_ops
     << "\n";
  os << "paths: " << paths << "\n";
  os << "cells: " << cells << " (" << per_kind << " per cell kind, 3 kinds)\n";
  os << "architectures: " << archs << "\n";
  if (layers == 10 && scales == 5 && blocks == 3 && num_ops == 5) {
    os << "computed: " << sci(paths) << " / " << sci(cells) << " / " << sci(archs) << "\n";
    os << "paper: 3.89e9 / 4.22e8 / 1.64e18\n";
    const bool p = within(paths, 3.89e9), c = within(cells, 4.22e8), a = within(archs, 1.64e18);
    os << "match: paths " << (p ? "match" : "mismatch") << ", cells " << (c ? "match" : "mismatch")
       << ", architectures " << (a ? "match" : "mismatch") << "\n";
    if (!p) {
      os << "note: the published path count is not reproduced by this lattice (layer l holds "
            "scales 0..min(l, S-1), each edge one of expand / contract / non-scale / skip); "
            "architectures = paths x cells holds for both, so the architecture count differs by "
            "the same factor as the path count\n";
    }
  }
  return os.str();
}

SynthSummary synth_to_dir(const SynthOptions& opt, const fs::path& dir) {
  const Dataset d = gen_synthetic(opt);
  const json generator = {{"name", "msnas-synthetic"},
                          {"seed", opt.seed},
                          {"noise", opt.noise},
                          {"tool_version", kToolVersion}};
  save_dataset(d, dir, generator);
  return {d.count(), sha256_hex(read_file(dir / "manifest.json"))};
}

SearchSummary search_to_dir(const RunConfig& cfg, const fs::path& out,
                            const std::optional<fs::path>& resume, std::ostream* log) {
  cfg.validate();
  const Dataset data = open_dataset(cfg.dataset_dir);
  std::unique_ptr<SearchRun> run;
  try {
    run = std::make_unique<SearchRun>(cfg.search, data);
  } catch (const ConfigError& e) {
    throw ConfigError("data.dir", e.what());
  }
  if (resume) {
    const LoadedCheckpoint ck = read_checkpoint_file(*resume);
    if (config_to_ini(ck.search.config) != config_to_ini(cfg)) {
      throw ConfigError("resume", "checkpoint was written with a different configuration");
    }
    StateRefs st = run->net().full_state();
    apply_state(st, ck.search.tensors);
    run->restore(ck.search.epoch, load_rng(ck.search.rng), ck.search.history);
  }

  const std::string ini = config_to_ini(cfg);
  auto save = [&] {
    const std::string bytes = encode_checkpoint(search_checkpoint(*run, cfg));
    write_file(out / "checkpoint.bin", bytes);
    const std::string loss = loss_csv(run->history());
    write_file(out / "loss.csv", loss);
    write_file(out / "manifest.json",
               run_manifest("search", cfg.search.seed, sha256_hex(ini),
                            {{"checkpoint.bin", sha256_hex(bytes)}, {"loss.csv", sha256_hex(loss)}}));
    return sha256_hex(bytes);
  };

  SearchSummary s;
  const int start = run->epoch();
  while (!run->finished()) {
    if (!run->run_epoch()) break;
    if (log) {
      const LossRecord& r = run->history().back();
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d/%d phase %d lr %.5f weight_loss %.5f arch_loss %.5f\n",
                    r.epoch + 1, cfg.search.epochs_total, r.phase, r.lr, r.weight_loss,
                    r.arch_loss);
      *log << buf << std::flush;
    }
    save();
  }
  s.checkpoint_sha256 = save();
  s.epochs_run = run->epoch() - start;
  s.completed = run->finished();
  s.error = run->error();
  return s;
}

DecodeSummary decode_to_dir(const fs::path& checkpoint, int n_paths, const fs::path& out) {
  if (n_paths < 0) throw ConfigError("decode.n_paths", "must be >= 1");
  const LoadedCheckpoint ck = read_checkpoint_file(checkpoint);
  const SearchConfig& sc = ck.search.config.search;
  if (n_paths == 0) n_paths = sc.n_paths;
  const ArchScalars s = arch_scalars(ck.search);
  const SupernetGraph g(sc.layers, sc.scales);

  DecodeSummary d;
  ArchFile& a = d.arch;
  a.arch = decode_architecture(g, s, n_paths);
  a.cell = s.cell;
  a.spec = {sc.base_channels, sc.image_channels, sc.num_classes, sc.k};
  a.n_paths_requested = n_paths;
  a.widths = channel_plan(g, sc.base_channels, sc.k);
  a.checkpoint_sha256 = ck.sha256;
  a.seed = sc.seed;
  a.search_epochs = ck.search.epoch;
  d.capped = a.arch.capped;

  const std::string text = arch_to_json(a);
  write_file(out / "arch.json", text);
  const WeightedDag w = edge_weights_from_beta(g, s.beta);
  DotOptions opts;
  opts.edge_weights = w.weights;
  opts.highlighted = a.arch.paths;
  opts.title = "decoded";
  write_file(out / "arch.dot", to_dot(g, opts));
  d.arch_sha256 = sha256_hex(text);
  return d;
}

ArchFile load_arch(const fs::path& p) {
  std::string text;
  try {
    text = read_file(p);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
  return arch_from_json(text);
}

CostSpec cost_spec(const ArchFile& a) {
  return {a.widths, a.spec.image_channels, a.spec.num_classes};
}

std::string cost_report_csv(const fs::path& arch, int input_size) {
  const ArchFile a = load_arch(arch);
  return cost_csv(count_cost(a.arch, cost_spec(a), input_size));
}

std::string compare_report_csv(const fs::path& checkpoint, const std::vector<int>& n_paths,
                               int input_size) {
  const LoadedCheckpoint ck = read_checkpoint_file(checkpoint);
  const SearchConfig& sc = ck.search.config.search;
  const SupernetGraph g(sc.layers, sc.scales);
  const CostSpec spec{channel_plan(g, sc.base_channels, sc.k), sc.image_channels, sc.num_classes};
  return variants_csv(compare_variants(g, arch_scalars(ck.search), spec, n_paths, input_size),
                      input_size);
}

TrainSummary train_to_dir(const fs::path& arch_path, const RunConfig& cfg, const fs::path& out,
                          std::ostream* log) {
  cfg.validate();
  const std::string arch_text = [&] {
    try {
      return read_file(arch_path);
    } catch (const std::runtime_error& e) {
      throw FormatError(e.what());
    }
  }();
  const ArchFile a = arch_from_json(arch_text);
  const Dataset data = open_dataset(cfg.dataset_dir);
  check_dataset(data, a.spec, a.arch.scales);
  if (data.count() < static_cast<std::size_t>(2 * cfg.train.folds)) {
    throw ConfigError("train.folds", "dataset has " + std::to_string(data.count()) +
                                         " images, fewer than 2 x folds");
  }
  const std::string arch_sha = sha256_hex(arch_text);
  std::map<std::string, std::string> artifacts;
  auto on_trained = [&](int fold, DecodedNetwork& net) {
    Checkpoint c;
    c.meta = {{"format", "msnas-checkpoint"},
              {"kind", "weights"},
              {"tool_version", kToolVersion},
              {"fold", fold},
              {"arch_sha256", arch_sha},
              {"seed", cfg.train.seed}};
    c.tensors = capture_state(net.state());
    const std::string bytes = encode_checkpoint(c);
    const std::string name = "weights_fold" + std::to_string(fold) + ".bin";
    write_file(out / name, bytes);
    artifacts[name] = sha256_hex(bytes);
    if (log) *log << "fold " << fold << " trained\n" << std::flush;
  };
  TrainSummary s;
  s.result = train_decoded(a.arch, a.spec, data, cfg.train, on_trained);
  s.metrics_csv = metrics_csv(s.result, a.spec.num_classes);
  write_file(out / "metrics.csv", s.metrics_csv);
  artifacts["metrics.csv"] = sha256_hex(s.metrics_csv);
  write_file(out / "manifest.json",
             run_manifest("train", cfg.train.seed, sha256_hex(config_to_ini(cfg)), artifacts));
  return s;
}

std::string eval_report_csv(const fs::path& arch, const std::optional<fs::path>& weights,
                            const fs::path& dataset, bool oracle) {
  const std::string arch_text = [&] {
    try {
      return read_file(arch);
    } catch (const std::runtime_error& e) {
      throw FormatError(e.what());
    }
  }();
  const ArchFile a = arch_from_json(arch_text);
  const Dataset data = open_dataset(dataset.string());
  check_dataset(data, a.spec, a.arch.scales);
  if (oracle) {
    MetricAccumulator acc(data.num_classes);
    for (const SegSample& s : data.samples) acc.add(s.label, s.label);
    return eval_csv(acc.result(), data.num_classes);
  }
  if (!weights) throw ConfigError("weights", "a weights file is required unless --oracle is set");
  std::string bytes;
  try {
    bytes = read_file(*weights);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
  const Checkpoint c = decode_checkpoint(bytes);
  if (c.meta.value("kind", "") != "weights") throw FormatError("not a weights file");
  if (c.meta.value("arch_sha256", "") != sha256_hex(arch_text)) {
    throw FormatError("weights were trained for a different arch file");
  }
  DecodedNetwork net(a.arch, a.spec, 0);
  StateRefs st = net.state();
  apply_state(st, c.tensors);
  std::vector<int> all(data.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const Metrics m = evaluate_model([&](Var x, bool training) { return net.forward(x, training); },
                                   data, all, 4);
  return eval_csv(m, data.num_classes);
}

std::string export_dot(int layers, int scales) {
  return to_dot(SupernetGraph(layers, scales));
}

std::string export_arch_dot(const fs::path& arch) {
  const ArchFile a = load_arch(arch);
  const SupernetGraph g(a.arch.layers, a.arch.scales);
  DotOptions opts;
  opts.highlighted = a.arch.paths;
  opts.title = "decoded";
  return to_dot(g, opts);
}

}  // namespace msnas
