#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "decode.hpp"

namespace msnas {

inline constexpr const char* kFlopConvention =
    "1 MAC = 2 FLOPs; conv = 2*kernel_elems*C_group*H_out*W_out*C_out; "
    "per output element: norm 2, activation 1, residual/merge add 1, avg-pool 9, "
    "max-pool 3, bilinear 8; normalization and activation included";

struct OpCost {
  std::int64_t conv_params = 0;
  std::int64_t residual_params = 0;  // 1x1 residual projection (weight + bias)
  std::int64_t norm_params = 0;
  std::int64_t flops = 0;
};

std::int64_t conv_flops(int kernel_elems, int channels_per_group, int h_out, int w_out,
                        int c_out);

// Cost of one candidate operator on an h x w map.
OpCost operator_cost(OperatorKind op, int c_in, int c_out, int h, int w);

struct CostRow {
  std::string component;
  std::int64_t conv_params = 0;
  std::int64_t norm_params = 0;
  std::int64_t flops = 0;

  std::int64_t params() const { return conv_params + norm_params; }
};

struct CostReport {
  std::vector<CostRow> rows;
  std::int64_t conv_params = 0;
  std::int64_t norm_params = 0;
  std::int64_t flops = 0;
  int input_size = 0;
  std::string convention = kFlopConvention;

  std::int64_t params() const { return conv_params + norm_params; }
};

struct CostSpec {
  std::vector<int> widths;  // channel plan, one per supernet vertex
  int image_channels = 1;
  int num_classes = 2;
};

// Parameters and FLOPs of a decoded network at an input_size x input_size
// image: stem, every deduplicated cell instance, merges and output heads.
CostReport count_cost(const DecodedArch& arch, const CostSpec& spec, int input_size);
CostReport count_params(const DecodedArch& arch, const CostSpec& spec);
CostReport count_flops(const DecodedArch& arch, const CostSpec& spec, int input_size);

struct VariantCost {
  int n_paths = 0;
  bool capped = false;
  std::size_t cells = 0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

class MonotonicityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decodes every N_l in `n_paths` (ascending) and reports its cost. Throws
// MonotonicityError when params or FLOPs decrease with N_l.
std::vector<VariantCost> compare_variants(const SupernetGraph& g, const ArchScalars& s,
                                          const CostSpec& spec, const std::vector<int>& n_paths,
                                          int input_size);

std::string cost_csv(const CostReport& r);
std::string variants_csv(const std::vector<VariantCost>& v, int input_size);
std::string cost_table(const CostReport& r);

}  // namespace msnas
