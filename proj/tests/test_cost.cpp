#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cost.hpp"

using namespace msnas;

namespace {

std::array<CellGenotype, 3> uniform_genotypes(int blocks, OperatorKind op) {
  std::array<CellGenotype, 3> g;
  for (CellKind k : kAllCellKinds) {
    g[index_of(k)].kind = k;
    g[index_of(k)].blocks.assign(blocks, Block{0, op});
  }
  return g;
}

DecodedArch single_site_arch(const std::array<CellGenotype, 3>& gen) {
  const SupernetGraph g(1, 1);
  return assemble_architecture(enumerate_paths(g.dag()), gen, g);
}

CostSpec spec_for(const SupernetGraph& g, int base, int classes) {
  return {channel_plan(g, base, 4), 1, classes};
}

void check_rows_sum(const CostReport& r) {
  std::int64_t conv = 0, norm = 0, flops = 0;
  for (const CostRow& row : r.rows) {
    conv += row.conv_params;
    norm += row.norm_params;
    flops += row.flops;
  }
  CHECK(conv == r.conv_params);
  CHECK(norm == r.norm_params);
  CHECK(flops == r.flops);
}

}  // namespace

TEST_CASE("depthwise-separable conv hand count") {
  const OpCost c = operator_cost(OperatorKind::SepConv3x3, 4, 8, 8, 8);
  CHECK(c.conv_params == 36 + 32);
  CHECK(c.residual_params == 32 + 8);
  CHECK(c.norm_params == 16);
  const OpCost same = operator_cost(OperatorKind::DilConv3x3r2, 4, 4, 8, 8);
  CHECK(same.conv_params == 36 + 16);
  CHECK(same.residual_params == 0);
}

TEST_CASE("pointwise conv flop closed form") {
  CHECK(conv_flops(1, 4, 8, 8, 8) == 2 * 1 * 4 * 8 * 8 * 8);
  CHECK(conv_flops(1, 4, 8, 8, 8) == 4096);
  CHECK(conv_flops(1, 4, 4, 4, 8) * 4 == conv_flops(1, 4, 8, 8, 8));
}

TEST_CASE("parameter-free operators") {
  CHECK(operator_cost(OperatorKind::Zero, 4, 4, 8, 8).flops == 0);
  const OpCost skip = operator_cost(OperatorKind::SkipConnect, 4, 4, 8, 8);
  CHECK(skip.conv_params == 0);
  CHECK(skip.flops == 0);
  CHECK(operator_cost(OperatorKind::AvgPool3x3, 4, 4, 8, 8).flops == 9 * 4 * 64);
  CHECK_THROWS_AS(operator_cost(OperatorKind::SkipConnect, 4, 8, 8, 8), std::invalid_argument);
}

TEST_CASE("skip-only single-site network by hand") {
  const DecodedArch a = single_site_arch(uniform_genotypes(3, OperatorKind::SkipConnect));
  const SupernetGraph g(1, 1);
  const CostReport r = count_cost(a, spec_for(g, 4, 2), 8);
  // stem 9*1*4, projection 12*4, head 4*2+2
  CHECK(r.conv_params == 36 + 48 + 10);
  CHECK(r.norm_params == 8 + 8);
  CHECK(r.flops == 4608 + 512 + 6144 + 512 + 1024 + 128);
  for (const CostRow& row : r.rows)
    if (row.component.find(".b") != std::string::npos) CHECK(row.conv_params == 0);
  check_rows_sum(r);
}

TEST_CASE("one separable conv block adds its hand count") {
  auto gen = uniform_genotypes(3, OperatorKind::SkipConnect);
  gen[index_of(CellKind::NonScaling)].blocks[0].op = OperatorKind::SepConv3x3;
  const DecodedArch a = single_site_arch(gen);
  const SupernetGraph g(1, 1);
  const CostReport base = count_cost(single_site_arch(uniform_genotypes(3, OperatorKind::SkipConnect)),
                                     spec_for(g, 4, 2), 8);
  const CostReport r = count_cost(a, spec_for(g, 4, 2), 8);
  CHECK(r.conv_params - base.conv_params == 36 + 16);
  CHECK(r.norm_params - base.norm_params == 8);
  CHECK(r.flops - base.flops == 256 + 4608 + 2048 + 512 + 256);
}

TEST_CASE("params do not depend on input size, flops scale with area") {
  const SupernetGraph g(5, 3);
  Rng rng = derive_stream(4, "t");
  const ArchScalars s = random_arch(g, CellConfig{}, 1.0, rng);
  const DecodedArch a = decode_architecture(g, s, 4);
  const CostSpec spec = spec_for(g, 8, 3);
  const CostReport small = count_cost(a, spec, 16);
  const CostReport big = count_cost(a, spec, 32);
  CHECK(small.params() == big.params());
  CHECK(big.flops == 4 * small.flops);
  CHECK(count_params(a, spec).params() == small.params());
  check_rows_sum(big);
  CHECK_THROWS_AS(count_cost(a, spec, 18), std::invalid_argument);
}

TEST_CASE("duplicated paths cost exactly the same") {
  const SupernetGraph g(5, 3);
  Rng rng = derive_stream(5, "t");
  const ArchScalars s = random_arch(g, CellConfig{}, 1.0, rng);
  const DecodedArch a = decode_architecture(g, s, 3);
  auto doubled = a.paths;
  doubled.insert(doubled.end(), a.paths.begin(), a.paths.end());
  const DecodedArch b = assemble_architecture(doubled, a.genotypes, g);
  const CostSpec spec = spec_for(g, 8, 2);
  const CostReport ra = count_cost(a, spec, 32), rb = count_cost(b, spec, 32);
  CHECK(ra.params() == rb.params());
  CHECK(ra.flops == rb.flops);
}

TEST_CASE("union of paths costs no more than the paths separately") {
  const SupernetGraph g(5, 3);
  const CostSpec spec = spec_for(g, 8, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = derive_stream(seed, "t");
    const ArchScalars s = random_arch(g, CellConfig{}, 1.0, rng);
    const DecodedArch a = decode_architecture(g, s, 4);
    std::int64_t params = 0;
    for (const Path& p : a.paths) params += count_cost(assemble_architecture({p}, a.genotypes, g), spec, 16).params();
    // All paths share the stem and the first cell, so the union is strictly cheaper.
    CHECK(count_cost(a, spec, 16).params() < params);
  }
}

TEST_CASE("variant comparison is monotone in N_l") {
  const SupernetGraph g(5, 3);
  const CostSpec spec = spec_for(g, 8, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = derive_stream(seed, "v");
    const ArchScalars s = random_arch(g, CellConfig{}, 1.0, rng);
    const auto rows = compare_variants(g, s, spec, {3, 4, 5}, 32);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(rows[i].params >= rows[i - 1].params);
      CHECK(rows[i].flops >= rows[i - 1].flops);
    }
    const int total = static_cast<int>(enumerate_paths(g.dag()).size());
    const auto ends = compare_variants(g, s, spec, {1, total}, 32);
    CHECK(ends[0].params < ends[1].params);
  }
  Rng rng = derive_stream(0, "v");
  const ArchScalars s = random_arch(g, CellConfig{}, 1.0, rng);
  CHECK_THROWS_AS(compare_variants(g, s, spec, {4, 3}, 32), std::invalid_argument);
}

TEST_CASE("reports state their convention") {
  const DecodedArch a = single_site_arch(uniform_genotypes(1, OperatorKind::SkipConnect));
  const CostReport r = count_cost(a, spec_for(SupernetGraph(1, 1), 4, 2), 8);
  const std::string csv = cost_csv(r);
  CHECK(csv.rfind("# msnas-cost v1", 0) == 0);
  CHECK(csv.find("1 MAC = 2 FLOPs") != std::string::npos);
  CHECK(cost_table(r).find("1 MAC = 2 FLOPs") != std::string::npos);
}
