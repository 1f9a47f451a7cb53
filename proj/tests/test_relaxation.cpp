#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "relaxation.hpp"

using namespace msnas;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void randomize(Param& p, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  for (double& v : p.value.data()) v = d(rng);
}

std::vector<std::int32_t> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<std::int32_t> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

}  // namespace

TEST_CASE("k=1 partial connection equals the full mixed operation") {
  std::mt19937_64 rng(3);
  Rng init = derive_stream(1, "init");
  const CellConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    OperatorBank bank("bank", 4, cfg.ops, init);
    Param alpha("alpha", Tensor({1, 5, 1, 1}), false);
    randomize(alpha, rng);
    const Tensor x = oracle::random_tensor({2, 4, 6, 6}, rng);
    Tape t(false);
    Var xv = t.constant(x);
    const Tensor got =
        partial_connect(xv, alpha, cfg.ops, make_partial_mask(4, 1), bank, true).value();
    const auto w = softmax_vec(alpha.value.data());
    Tensor want(x.shape(), 0.0);
    for (std::size_t o = 0; o < cfg.ops.size(); ++o) {
      auto y = bank.apply(cfg.ops[o], xv, true);
      if (!y) continue;
      for (std::size_t i = 0; i < want.numel(); ++i) want[i] += w[o] * y->value()[i];
    }
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("k=4 bypass channels are bit-identical to the input") {
  std::mt19937_64 rng(5);
  Rng init = derive_stream(2, "init");
  const CellConfig cfg;
  OperatorBank bank("bank", 2, cfg.ops, init);
  Param alpha("alpha", Tensor({1, 5, 1, 1}), false);
  randomize(alpha, rng);
  const Tensor x = oracle::random_tensor({2, 8, 4, 4}, rng);
  Tape t;
  const Tensor y = partial_connect(t.constant(x), alpha, cfg.ops, make_partial_mask(8, 4), bank,
                                   true)
                       .value();
  REQUIRE(y.shape() == x.shape());
  for (int n = 0; n < 2; ++n)
    for (int c = 2; c < 8; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) CHECK(y.at(n, c, h, w) == x.at(n, c, h, w));
}

TEST_CASE("partial mask rejects indivisible widths") {
  CHECK_THROWS_AS(make_partial_mask(6, 4), ShapeError);
  CHECK(make_partial_mask(8, 4).selected() == 2);
}

TEST_CASE("dominant zero operator silences the selected channels") {
  std::mt19937_64 rng(7);
  Rng init = derive_stream(3, "init");
  const CellConfig cfg;
  OperatorBank bank("bank", 4, cfg.ops, init);
  Param alpha("alpha", Tensor({1, 5, 1, 1}, 0.0), false);
  alpha.value[4] = 50.0;
  const Tensor x = oracle::random_tensor({1, 4, 4, 4}, rng);
  Tape t(false);
  const Tensor y =
      partial_connect(t.constant(x), alpha, cfg.ops, make_partial_mask(4, 1), bank, true).value();
  for (double v : y.data()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("skip-only cell reduces to the projection of its input") {
  std::mt19937_64 rng(9);
  CellConfig cfg;
  cfg.blocks = 1;
  cfg.k = 1;
  cfg.ops = {OperatorKind::SkipConnect};
  CellArchParams arch(CellKind::NonScaling, cfg);
  Rng init = derive_stream(4, "init");
  CellWeights weights("cell", CellKind::NonScaling, 4, 8, cfg, init);
  const Tensor x = oracle::random_tensor({2, 4, 4, 4}, rng);
  Tape t(false);
  const Tensor got = cell_forward(CellKind::NonScaling, t.constant(x), arch, weights, true).value();
  Tape t2(false);
  const Tensor want = weights.projection.forward(t2.constant(x), true).value();
  CHECK(max_abs_diff(got, want) == 0.0);
}

TEST_CASE("cell kinds resample as their names say") {
  std::mt19937_64 rng(11);
  CellConfig cfg;
  cfg.k = 2;
  Rng init = derive_stream(5, "init");
  const Tensor x = oracle::random_tensor({1, 4, 8, 8}, rng);
  struct Case {
    CellKind kind;
    int side;
  };
  for (Case c : {Case{CellKind::Contracting, 4}, Case{CellKind::Expanding, 16},
                 Case{CellKind::NonScaling, 8}}) {
    CellArchParams arch(c.kind, cfg);
    CellWeights w("cell", c.kind, 4, 6, cfg, init);
    Tape t(false);
    const Shape s = cell_forward(c.kind, t.constant(x), arch, w, true).shape();
    CHECK(s == Shape{1, 6, c.side, c.side});
  }
}

TEST_CASE("channel plan doubles width per scale") {
  const SupernetGraph g(3, 3);
  const auto w = channel_plan(g, 8, 4);
  CHECK(w[g.input()] == 8);
  CHECK(w[*g.site(0, 0)] == 8);
  CHECK(w[*g.site(1, 1)] == 16);
  CHECK(w[*g.site(2, 2)] == 32);
  CHECK(w[g.output()] == 0);
  CHECK_THROWS_AS(channel_plan(g, 6, 4), std::invalid_argument);
}

TEST_CASE("supernet forward shape and input checks") {
  SupernetConfig cfg;
  cfg.layers = 3;
  cfg.scales = 3;
  cfg.base_channels = 4;
  cfg.num_classes = 3;
  RelaxedSupernet net(cfg, 1);
  std::mt19937_64 rng(1);
  Tape t(false);
  CHECK(net.forward(t.constant(oracle::random_tensor({2, 1, 8, 8}, rng)), true).shape() ==
        Shape{2, 3, 8, 8});
  CHECK_THROWS_AS(net.forward(t.constant(oracle::random_tensor({1, 1, 6, 6}, rng)), true),
                  ShapeError);
  CHECK_THROWS_AS(net.forward(t.constant(oracle::random_tensor({1, 2, 8, 8}, rng)), true),
                  ShapeError);
}

TEST_CASE("mixing weights at every vertex sum to one") {
  SupernetConfig cfg;
  cfg.layers = 4;
  cfg.scales = 3;
  cfg.base_channels = 4;
  RelaxedSupernet net(cfg, 2);
  std::mt19937_64 rng(13);
  for (int draw = 0; draw < 20; ++draw) {
    for (Param* p : net.network_arch_params()) randomize(*p, rng, 3.0);
    MixingTrace trace;
    Tape t(false);
    net.forward(t.constant(oracle::random_tensor({1, 1, 8, 8}, rng)), false, &trace);
    CHECK(trace.vertex_weights.size() == net.graph().vertices().size() - 2);
    for (const auto& [v, w] : trace.vertex_weights) {
      double s = 0.0;
      for (double x : w) s += x;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("non-finite activations name the vertex") {
  SupernetConfig cfg;
  cfg.layers = 2;
  cfg.scales = 2;
  cfg.base_channels = 4;
  RelaxedSupernet net(cfg, 3);
  net.beta(*net.graph().site(1, 0)).value[0] = std::nan("");
  std::mt19937_64 rng(1);
  Tape t(false);
  CHECK_THROWS_WITH_AS(net.forward(t.constant(oracle::random_tensor({1, 1, 4, 4}, rng)), true),
                       doctest::Contains("L1S0"), NonFiniteActivation);
}

TEST_CASE("relaxed supernet gradients match finite differences") {
  SupernetConfig cfg;
  cfg.layers = 2;
  cfg.scales = 2;
  cfg.base_channels = 4;
  cfg.num_classes = 2;
  cfg.cell.blocks = 2;
  RelaxedSupernet net(cfg, 4);
  std::mt19937_64 rng(17);
  for (Param* p : net.cell_arch_params()) randomize(*p, rng, 0.5);
  for (Param* p : net.network_arch_params()) randomize(*p, rng, 0.5);
  const Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng);
  const auto labels = random_labels(2 * 64, 2, rng);
  auto build = [&](Tape& t) {
    return segmentation_loss(net.forward(t.constant(x), true), labels);
  };
  SUBCASE("architecture scalars") {
    std::vector<Param*> ps = net.cell_arch_params();
    for (Param* p : net.network_arch_params()) ps.push_back(p);
    const auto r = oracle::check_grads(build, ps);
    CAPTURE(r.worst_name);
    CAPTURE(r.worst_analytic);
    CAPTURE(r.worst_numeric);
    CHECK(r.ok());
  }
  SUBCASE("kernels, first entries of each tensor") {
    const auto ps = net.kernel_state().params;
    const auto r = oracle::check_grads(build, ps, 1e-5, 1e-5, 1e-8, 3);
    CAPTURE(r.worst_name);
    CAPTURE(r.worst_analytic);
    CAPTURE(r.worst_numeric);
    CHECK(r.ok());
  }
}

TEST_CASE("parameter groups are disjoint and named uniquely") {
  SupernetConfig cfg;
  cfg.layers = 3;
  cfg.scales = 2;
  RelaxedSupernet net(cfg, 5);
  StateRefs all = net.full_state();
  std::set<std::string> names;
  for (Param* p : all.params) CHECK(names.insert(p->name).second);
  for (auto& [name, t] : all.buffers) CHECK(names.insert(name).second);
  for (Param* p : net.cell_arch_params()) CHECK_FALSE(p->decay);
  for (Param* p : net.network_arch_params()) CHECK_FALSE(p->decay);
  CHECK(net.network_arch_params().size() == net.graph().vertices().size() - 2);
}
