#include "cost.hpp"

#include <map>
#include <sstream>

namespace msnas {

std::int64_t conv_flops(int kernel_elems, int channels_per_group, int h_out, int w_out,
                        int c_out) {
  return 2LL * kernel_elems * channels_per_group * h_out * w_out * c_out;
}

OpCost operator_cost(OperatorKind op, int c_in, int c_out, int h, int w) {
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  OpCost c;
  switch (op) {
    case OperatorKind::SepConv3x3:
    case OperatorKind::DilConv3x3r2:
      c.conv_params = 9LL * c_in + static_cast<std::int64_t>(c_in) * c_out;
      c.norm_params = 2LL * c_out;
      c.flops = c_in * hw + conv_flops(9, 1, h, w, c_in) + conv_flops(1, c_in, h, w, c_out) +
                2 * c_out * hw + c_out * hw;
      if (c_in != c_out) {
        c.residual_params = static_cast<std::int64_t>(c_in) * c_out + c_out;
        c.flops += conv_flops(1, c_in, h, w, c_out) + c_out * hw;
      }
      return c;
    case OperatorKind::AvgPool3x3:
    case OperatorKind::SkipConnect:
      if (c_in != c_out) throw std::invalid_argument("parameter-free operator changes width");
      if (op == OperatorKind::AvgPool3x3) c.flops = 9 * c_in * hw;
      return c;
    case OperatorKind::Zero:
      return c;
  }
  return c;
}

namespace {

class Builder {
 public:
  void add(std::string name, std::int64_t conv, std::int64_t norm, std::int64_t flops) {
    r.rows.push_back({std::move(name), conv, norm, flops});
    r.conv_params += conv;
    r.norm_params += norm;
    r.flops += flops;
  }
  CostReport r;
};

}  // namespace

CostReport count_cost(const DecodedArch& arch, const CostSpec& spec, int input_size) {
  const SupernetGraph g(arch.layers, arch.scales);
  const int div = 1 << (arch.scales - 1);
  if (input_size < div || input_size % div != 0) {
    throw std::invalid_argument("input size " + std::to_string(input_size) +
                                " not divisible by " + std::to_string(div));
  }
  if (spec.widths.size() != g.vertices().size()) {
    throw std::invalid_argument("channel plan does not match the supernet");
  }
  const auto& vs = g.vertices();
  const auto& es = g.edges();
  auto side = [&](int v) { return input_size >> vs[v].scale; };
  const int base = spec.widths[g.input()];
  const std::int64_t full = static_cast<std::int64_t>(input_size) * input_size;

  Builder b;
  b.r.input_size = input_size;
  b.add("stem", 9LL * spec.image_channels * base, 2LL * base,
        conv_flops(9, spec.image_channels, input_size, input_size, base) + 2 * base * full);

  std::map<int, int> inbound;
  for (int e : arch.edges) ++inbound[es[e].to];

  for (const CellInstance& ci : arch.cell_instances) {
    const Edge& edge = es[ci.edge];
    const int cin = spec.widths[edge.from];
    const int cout = spec.widths[ci.vertex];
    const int s = side(ci.vertex);
    const std::int64_t hw = static_cast<std::int64_t>(s) * s;
    const std::string name = g.vertex_name(ci.vertex) + "." + to_string(ci.kind);
    if (ci.kind == CellKind::Contracting) b.add(name + ".resample", 0, 0, 3 * cin * hw);
    if (ci.kind == CellKind::Expanding) b.add(name + ".resample", 0, 0, 8 * cin * hw);
    const CellGenotype& gt = arch.genotype(ci.kind);
    for (std::size_t i = 0; i < gt.blocks.size(); ++i) {
      const OpCost c = operator_cost(gt.blocks[i].op, cin, cin, s, s);
      b.add(name + ".b" + std::to_string(i) + "." + to_string(gt.blocks[i].op),
            c.conv_params + c.residual_params, c.norm_params, c.flops);
    }
    const int cat = static_cast<int>(gt.blocks.size()) * cin;
    b.add(name + ".proj", static_cast<std::int64_t>(cat) * cout, 2LL * cout,
          conv_flops(1, cat, s, s, cout) + 2 * cout * hw);
  }
  for (auto [v, m] : inbound) {
    if (m < 2 || v == g.output()) continue;
    const std::int64_t hw = static_cast<std::int64_t>(side(v)) * side(v);
    b.add(g.vertex_name(v) + ".merge", 0, 0, (m - 1) * spec.widths[v] * hw);
  }
  int heads = 0;
  for (int e : arch.edges) {
    if (es[e].kind != EdgeKind::Output) continue;
    ++heads;
    const int u = es[e].from;
    const int c = spec.widths[u];
    const int k = spec.num_classes;
    int s = side(u);
    std::int64_t flops = conv_flops(1, c, s, s, k) + static_cast<std::int64_t>(k) * s * s;
    for (int step = 0; step < vs[u].scale; ++step) {
      s *= 2;
      flops += 8LL * k * s * s;
    }
    b.add("head." + g.vertex_name(u), static_cast<std::int64_t>(c) * k + k, 0, flops);
  }
  if (heads > 1) b.add("output.sum", 0, 0, (heads - 1) * spec.num_classes * full);
  return b.r;
}

CostReport count_params(const DecodedArch& arch, const CostSpec& spec) {
  return count_cost(arch, spec, 1 << (arch.scales - 1));
}

CostReport count_flops(const DecodedArch& arch, const CostSpec& spec, int input_size) {
  return count_cost(arch, spec, input_size);
}

std::vector<VariantCost> compare_variants(const SupernetGraph& g, const ArchScalars& s,
                                          const CostSpec& spec, const std::vector<int>& n_paths,
                                          int input_size) {
  std::vector<VariantCost> out;
  for (int n : n_paths) {
    if (!out.empty() && n < out.back().n_paths) {
      throw std::invalid_argument("compare_variants: N_l list must be ascending");
    }
    const DecodedArch a = decode_architecture(g, s, n);
    const CostReport r = count_cost(a, spec, input_size);
    VariantCost v{n, a.capped, a.cell_instances.size(), r.params(), r.flops};
    if (!out.empty() && (v.params < out.back().params || v.flops < out.back().flops)) {
      throw MonotonicityError("cost decreased from N_l=" + std::to_string(out.back().n_paths) +
                              " to N_l=" + std::to_string(n));
    }
    out.push_back(v);
  }
  return out;
}

std::string cost_csv(const CostReport& r) {
  std::ostringstream os;
  os << "# msnas-cost v1\n# convention: " << r.convention << "\n# input_size: " << r.input_size
     << "\ncomponent,conv_params,norm_params,params,flops\n";
  for (const CostRow& row : r.rows) {
    os << row.component << ',' << row.conv_params << ',' << row.norm_params << ','
       << row.params() << ',' << row.flops << '\n';
  }
  os << "total," << r.conv_params << ',' << r.norm_params << ',' << r.params() << ','
     << r.flops << '\n';
  return os.str();
}

std::string variants_csv(const std::vector<VariantCost>& v, int input_size) {
  std::ostringstream os;
  os << "# msnas-variants v1\n# convention: " << kFlopConvention << "\n# input_size: "
     << input_size << "\nn_paths,capped,cells,params,flops\n";
  for (const VariantCost& x : v) {
    os << x.n_paths << ',' << (x.capped ? 1 : 0) << ',' << x.cells << ',' << x.params << ','
       << x.flops << '\n';
  }
  return os.str();
}

std::string cost_table(const CostReport& r) {
  std::ostringstream os;
  std::size_t width = 9;
  for (const CostRow& row : r.rows) width = std::max(width, row.component.size());
  auto line = [&](const std::string& name, std::int64_t conv, std::int64_t norm,
                  std::int64_t flops) {
    os << name << std::string(width + 2 - name.size(), ' ') << conv << '\t' << norm << '\t'
       << flops << '\n';
  };
  os << "convention: " << r.convention << "\ninput size: " << r.input_size << "x"
     << r.input_size << "\n";
  os << "component" << std::string(width - 7, ' ') << "conv\tnorm\tflops\n";
  for (const CostRow& row : r.rows) line(row.component, row.conv_params, row.norm_params, row.flops);
  line("total", r.conv_params, r.norm_params, r.flops);
  os << "params: " << r.params() << " (" << r.params() / 1e6 << " M), flops: " << r.flops
     << " (" << r.flops / 1e9 << " G)\n";
  return os.str();
}

}  // namespace msnas
