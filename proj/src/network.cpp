#include "network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msnas {

DecodedCell::DecodedCell(const std::string& name, const CellGenotype& g, int in_channels,
                         int out_channels, Rng& rng)
    : genotype(g) {
  for (std::size_t b = 0; b < g.blocks.size(); ++b) {
    const OperatorKind op[] = {g.blocks[b].op};
    ops.emplace_back(name + ".b" + std::to_string(b), in_channels, op, rng);
  }
  projection = Projection(name + ".proj", static_cast<int>(g.blocks.size()) * in_channels,
                          out_channels, rng);
}

Var DecodedCell::forward(Var x, bool training) {
  std::vector<Var> states{resample_for(genotype.kind, x)};
  for (std::size_t b = 0; b < genotype.blocks.size(); ++b) {
    const Block& blk = genotype.blocks[b];
    auto y = ops[b].apply(blk.op, states[blk.input], training);
    if (!y) throw InvalidArchitecture("zero operator in a decoded cell");
    states.push_back(*y);
  }
  return projection.forward(concat_channels(std::span<const Var>(states).subspan(1)), training);
}

void DecodedCell::collect(StateRefs& refs) {
  for (OperatorBank& b : ops) b.collect(refs);
  projection.collect(refs);
}

DecodedNetwork::DecodedNetwork(const DecodedArch& arch, const NetworkSpec& spec,
                               std::uint64_t seed)
    : arch_(arch), spec_(spec), graph_(arch.layers, arch.scales) {
  widths_ = channel_plan(graph_, spec.base_channels, spec.k);
  // Re-validates the paths and the derived instance list.
  const DecodedArch check = assemble_architecture(arch.paths, arch.genotypes, graph_);
  if (check.cell_instances != arch.cell_instances || check.edges != arch.edges) {
    throw InvalidArchitecture("cell instances do not match the paths");
  }
  Rng init = derive_stream(seed, "init");
  stem_ = Stem("stem", spec.image_channels, spec.base_channels, init);
  const auto& es = graph_.edges();
  cells_.resize(es.size());
  heads_.resize(graph_.vertices().size());
  inbound_.resize(graph_.vertices().size());
  for (int e : arch_.edges) inbound_[es[e].to].push_back(e);
  for (const CellInstance& ci : arch_.cell_instances) {
    const Edge& edge = es[ci.edge];
    cells_[ci.edge].emplace("cell." + graph_.vertex_name(ci.vertex) + "." + to_string(ci.kind),
                            arch_.genotype(ci.kind), widths_[edge.from], widths_[ci.vertex],
                            init);
  }
  for (int e : inbound_[graph_.output()]) {
    const int v = es[e].from;
    heads_[v].emplace("head." + graph_.vertex_name(v), widths_[v], spec.num_classes,
                      graph_.vertices()[v].scale, init);
  }
}

Var DecodedNetwork::forward(Var image, bool training) {
  const Shape s = image.shape();
  const int div = 1 << (graph_.scales() - 1);
  if (s.h % div != 0 || s.w % div != 0) {
    throw ShapeError("input " + s.str() + " not divisible by " + std::to_string(div));
  }
  if (s.c != spec_.image_channels) throw ShapeError("image channel count mismatch");
  const auto& es = graph_.edges();
  std::vector<std::optional<Var>> out(graph_.vertices().size());
  out[graph_.input()] = stem_.forward(image, training);
  std::vector<Var> logits;
  for (int v = 1; v < static_cast<int>(graph_.vertices().size()); ++v) {
    if (inbound_[v].empty()) continue;
    if (v == graph_.output()) {
      for (int e : inbound_[v]) logits.push_back(heads_[es[e].from]->forward(*out[es[e].from]));
      continue;
    }
    std::vector<Var> terms;
    for (int e : inbound_[v]) {
      Var src = *out[es[e].from];
      terms.push_back(cells_[e] ? cells_[e]->forward(src, training) : src);
    }
    out[v] = add_all(terms);
  }
  return add_all(logits);
}

StateRefs DecodedNetwork::state() {
  StateRefs refs;
  stem_.collect(refs);
  for (auto& c : cells_)
    if (c) c->collect(refs);
  for (auto& h : heads_)
    if (h) h->collect(refs);
  return refs;
}

std::vector<double> train_model(const ForwardFn& forward, std::span<Param* const> params,
                                const Dataset& data, const std::vector<int>& train,
                                const TrainConfig& cfg, Rng& shuffle) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<double> history;
  std::vector<int> order = train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const SgdOptions opt{cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end), cfg.momentum,
                         cfg.weight_decay};
    std::shuffle(order.begin(), order.end(), shuffle);
    double total = 0.0;
    int steps = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      const Batch batch = make_batch(data, std::span<const int>(order).subspan(at, end - at));
      zero_grads(params);
      Tape tape;
      Var loss = segmentation_loss(forward(tape.constant(batch.images), true), batch.labels);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NonFiniteError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      sgd_step(params, opt);
      total += value;
      ++steps;
    }
    history.push_back(total / steps);
  }
  return history;
}

Metrics evaluate_model(const ForwardFn& forward, const Dataset& data,
                       const std::vector<int>& indices, int batch_size) {
  MetricAccumulator acc(data.num_classes);
  const std::size_t plane = static_cast<std::size_t>(data.size) * data.size;
  for (std::size_t at = 0; at < indices.size(); at += batch_size) {
    const std::size_t end = std::min(indices.size(), at + batch_size);
    const Batch batch = make_batch(data, std::span<const int>(indices).subspan(at, end - at));
    Tape tape(false);
    const std::vector<std::int32_t> pred =
        argmax_classes(forward(tape.constant(batch.images), false).value());
    for (std::size_t i = 0; i < end - at; ++i) {
      acc.add(std::span<const std::int32_t>(pred).subspan(i * plane, plane),
              std::span<const std::int32_t>(batch.labels).subspan(i * plane, plane));
    }
  }
  return acc.result();
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  Rng r = derive_stream(seed, "fold." + std::to_string(fold));
  return r();
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / (v.size() - 1));
}

}  // namespace

CrossValResult train_decoded(const DecodedArch& arch, const NetworkSpec& spec,
                             const Dataset& data, const TrainConfig& cfg,
                             const FoldHook& on_trained) {
  const int n = static_cast<int>(data.count());
  if (cfg.folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (n < 2 * cfg.folds) {
    throw std::invalid_argument("dataset of " + std::to_string(n) + " images is too small for " +
                                std::to_string(cfg.folds) + " folds");
  }
  const auto folds = kfold_split(n, cfg.folds, cfg.seed);
  CrossValResult r;
  std::vector<double> ious, dices;
  for (int f = 0; f < cfg.folds; ++f) {
    FoldResult fr;
    fr.fold = f;
    std::vector<int> train;
    for (int g = 0; g < cfg.folds; ++g)
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    try {
      const std::uint64_t s = fold_seed(cfg.seed, f);
      DecodedNetwork net(arch, spec, s);
      StateRefs st = net.state();
      Rng shuffle = derive_stream(s, "data");
      ForwardFn fwd = [&](Var x, bool training) { return net.forward(x, training); };
      fr.epoch_loss = train_model(fwd, st.params, data, train, cfg, shuffle);
      fr.metrics = evaluate_model(fwd, data, folds[f], cfg.batch_size);
      if (on_trained) on_trained(f, net);
      ious.push_back(fr.metrics.mean_iou);
      dices.push_back(fr.metrics.mean_dice);
    } catch (const NonFiniteError& e) {
      fr.failed = true;
      fr.error = e.what();
    } catch (const NonFiniteActivation& e) {
      fr.failed = true;
      fr.error = e.what();
    }
    if (fr.failed) ++r.failed;
    r.folds.push_back(std::move(fr));
  }
  mean_std(ious, r.mean_iou, r.std_iou);
  mean_std(dices, r.mean_dice, r.std_dice);
  return r;
}

}  // namespace msnas
