#include "search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace msnas {

void SearchConfig::validate() const {
  auto positive = [](int v, const char* f) {
    if (v < 1) throw ConfigError(f, "must be >= 1, got " + std::to_string(v));
  };
  positive(layers, "layers");
  positive(scales, "scales");
  positive(blocks, "blocks");
  positive(k, "k");
  positive(n_paths, "n_paths");
  positive(base_channels, "base_channels");
  positive(epochs_total, "epochs_total");
  positive(batch_size, "batch_size");
  positive(image_channels, "image_channels");
  if (scales > 24) throw ConfigError("scales", "must be <= 24");
  if (base_channels % k != 0) {
    throw ConfigError("base_channels", "must be a multiple of k=" + std::to_string(k));
  }
  if (epochs_phase1 < 0 || epochs_phase1 >= epochs_total) {
    throw ConfigError("epochs_phase1", "must satisfy 0 <= epochs_phase1 < epochs_total");
  }
  if (!(lr_end > 0.0)) throw ConfigError("lr_end", "must be > 0");
  if (!(lr_start >= lr_end)) throw ConfigError("lr_start", "must be >= lr_end");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(arch_init_noise >= 0.0)) throw ConfigError("arch_init_noise", "must be >= 0");
  if (!(arch_lr_scale > 0.0)) throw ConfigError("arch_lr_scale", "must be > 0");
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  const int div = 1 << (scales - 1);
  if (image_size < div || image_size % div != 0) {
    throw ConfigError("image_size", "must be a positive multiple of 2^(scales-1) = " +
                                        std::to_string(div));
  }
}

SupernetConfig SearchConfig::supernet() const {
  SupernetConfig s;
  s.layers = layers;
  s.scales = scales;
  s.base_channels = base_channels;
  s.image_channels = image_channels;
  s.num_classes = num_classes;
  s.cell.blocks = blocks;
  s.cell.k = k;
  return s;
}

double lr_schedule(int epoch, const SearchConfig& cfg) {
  return cosine_lr(epoch, cfg.epochs_total, cfg.lr_start, cfg.lr_end);
}

DataSplit split_halves(int n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("search needs at least 2 images");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = derive_stream(seed, "split");
  std::shuffle(idx.begin(), idx.end(), rng);
  DataSplit s;
  s.weights.assign(idx.begin(), idx.begin() + n / 2);
  s.arch.assign(idx.begin() + n / 2, idx.end());
  std::sort(s.weights.begin(), s.weights.end());
  std::sort(s.arch.begin(), s.arch.end());
  return s;
}

SearchRun::SearchRun(const SearchConfig& cfg, const Dataset& data)
    : cfg_(cfg), data_(&data), rng_(derive_stream(cfg.seed, "data")) {
  cfg_.validate();
  data.validate();
  if (data.size != cfg.image_size || data.channels != cfg.image_channels ||
      data.num_classes != cfg.num_classes) {
    throw ConfigError("dataset", "dataset shape (" + std::to_string(data.size) + "px, " +
                                     std::to_string(data.channels) + " ch, " +
                                     std::to_string(data.num_classes) +
                                     " classes) does not match the config");
  }
  net_ = std::make_unique<RelaxedSupernet>(cfg_.supernet(), cfg_.seed);
  split_ = split_halves(static_cast<int>(data.count()), cfg_.seed);
  Rng noise = derive_stream(cfg_.seed, "arch");
  std::normal_distribution<double> dist(0.0, cfg_.arch_init_noise);
  for (Param* p : net_->cell_arch_params())
    for (double& v : p->value.data()) v = cfg_.arch_init_noise > 0 ? dist(noise) : 0.0;
}

std::vector<Param*> SearchRun::group(ParamGroup g) {
  switch (g) {
    case ParamGroup::Kernels: return net_->kernel_state().params;
    case ParamGroup::CellArch: return net_->cell_arch_params();
    case ParamGroup::NetworkArch: return net_->network_arch_params();
  }
  return {};
}

void SearchRun::restore(int epoch, const Rng& rng, std::vector<LossRecord> history) {
  if (epoch < 0 || epoch > cfg_.epochs_total) throw std::invalid_argument("bad epoch counter");
  epoch_ = epoch;
  rng_ = rng;
  history_ = std::move(history);
  error_.clear();
}

void SearchRun::begin_phase2() {
  Rng noise = derive_stream(cfg_.seed, "arch.beta");
  std::normal_distribution<double> dist(0.0, cfg_.arch_init_noise);
  for (Param* p : net_->network_arch_params())
    for (double& v : p->value.data()) v += cfg_.arch_init_noise > 0 ? dist(noise) : 0.0;
}

double SearchRun::step(const Batch& batch, std::span<Param* const> active,
                       const SgdOptions& opt) {
  StateRefs all = net_->full_state();
  for (Param* p : all.params) p->requires_grad = false;
  for (Param* p : active) p->requires_grad = true;
  zero_grads(all.params);
  Tape tape;
  Var loss = segmentation_loss(net_->forward(tape.constant(batch.images), true), batch.labels);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NonFiniteError("non-finite loss");
  tape.backward(loss);
  sgd_step(active, opt);
  return value;
}

bool SearchRun::run_epoch() {
  if (finished() || aborted()) return false;
  const int phase = epoch_ < cfg_.epochs_phase1 ? 1 : 2;
  if (epoch_ == cfg_.epochs_phase1) begin_phase2();
  const double lr = lr_schedule(epoch_, cfg_);
  const SgdOptions weight_opt{lr, cfg_.momentum, cfg_.weight_decay};
  const SgdOptions arch_opt{lr * cfg_.arch_lr_scale, cfg_.momentum, 0.0};
  const std::vector<Param*> kernels = group(ParamGroup::Kernels);
  const std::vector<Param*> arch =
      group(phase == 1 ? ParamGroup::CellArch : ParamGroup::NetworkArch);

  std::vector<int> w_order = split_.weights, a_order = split_.arch;
  std::shuffle(w_order.begin(), w_order.end(), rng_);
  std::shuffle(a_order.begin(), a_order.end(), rng_);
  const std::size_t bs = cfg_.batch_size;
  const std::size_t steps = (std::max(w_order.size(), a_order.size()) + bs - 1) / bs;
  double w_sum = 0.0, a_sum = 0.0;
  int w_n = 0, a_n = 0;
  try {
    for (std::size_t s = 0; s < steps; ++s) {
      auto slice = [&](const std::vector<int>& order) {
        const std::size_t at = s * bs;
        if (at >= order.size()) return std::span<const int>();
        return std::span<const int>(order).subspan(at, std::min(bs, order.size() - at));
      };
      if (auto idx = slice(w_order); !idx.empty()) {
        w_sum += step(make_batch(*data_, idx), kernels, weight_opt);
        ++w_n;
      }
      if (auto idx = slice(a_order); !idx.empty()) {
        a_sum += step(make_batch(*data_, idx), arch, arch_opt);
        ++a_n;
      }
    }
  } catch (const NonFiniteError& e) {
    error_ = "epoch " + std::to_string(epoch_) + ": " + e.what();
  } catch (const NonFiniteActivation& e) {
    error_ = "epoch " + std::to_string(epoch_) + ": " + e.what();
  }
  for (Param* p : net_->full_state().params) p->requires_grad = true;
  if (aborted()) return false;
  history_.push_back({epoch_, phase, w_n ? w_sum / w_n : 0.0, a_n ? a_sum / a_n : 0.0, lr});
  ++epoch_;
  return true;
}

bool SearchRun::run() {
  while (!finished()) {
    if (!run_epoch()) return false;
  }
  return true;
}

std::string loss_csv(const std::vector<LossRecord>& history) {
  std::ostringstream os;
  os << "# msnas-loss v1\nepoch,phase,weight_loss,arch_loss,lr\n";
  char buf[160];
  for (const LossRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g\n", r.epoch, r.phase, r.weight_loss,
                  r.arch_loss, r.lr);
    os << buf;
  }
  return os.str();
}

}  // namespace msnas
