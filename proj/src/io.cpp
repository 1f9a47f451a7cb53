#include "io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

namespace msnas {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

std::string sha256_raw(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  return std::string(reinterpret_cast<const char*>(md), len);
}

std::string hex_of(std::string_view raw) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : raw) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

}  // namespace

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + p.string());
  }
  fs::rename(tmp, p);
}

// ---------------------------------------------------------------- config

namespace {

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(const std::string& v) { return v; }
std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(std::string_view s, const std::string& key) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(key, "cannot parse '" + std::string(s) + "'");
  }
  return v;
}

void parse_into(int& dst, std::string_view s, const std::string& key) {
  dst = parse_number<int>(s, key);
}
void parse_into(std::uint64_t& dst, std::string_view s, const std::string& key) {
  dst = parse_number<std::uint64_t>(s, key);
}
void parse_into(double& dst, std::string_view s, const std::string& key) {
  dst = parse_number<double>(s, key);
  if (!std::isfinite(dst)) throw ConfigError(key, "must be finite");
}
void parse_into(std::string& dst, std::string_view s, const std::string& key) {
  if (s.find_first_of("\r\n") != std::string_view::npos) {
    throw ConfigError(key, "value must be a single line");
  }
  dst = std::string(s);
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;

  std::string qualified() const { return section + "." + key; }
};

template <class Acc>
Field make_field(const char* section, const char* key, Acc acc) {
  Field f{section, key, {}, {}};
  f.get = [acc](const RunConfig& c) { return format_value(acc(const_cast<RunConfig&>(c))); };
  const std::string q = f.qualified();
  f.set = [acc, q](RunConfig& c, std::string_view v) { parse_into(acc(c), v, q); };
  return f;
}

#define MSNAS_FIELD(sec, key, member) \
  make_field(sec, key, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MSNAS_FIELD("supernet", "layers", search.layers),
      MSNAS_FIELD("supernet", "scales", search.scales),
      MSNAS_FIELD("supernet", "blocks", search.blocks),
      MSNAS_FIELD("supernet", "k", search.k),
      MSNAS_FIELD("supernet", "base_channels", search.base_channels),
      MSNAS_FIELD("data", "dir", dataset_dir),
      MSNAS_FIELD("data", "image_size", search.image_size),
      MSNAS_FIELD("data", "image_channels", search.image_channels),
      MSNAS_FIELD("data", "num_classes", search.num_classes),
      MSNAS_FIELD("search", "epochs_total", search.epochs_total),
      MSNAS_FIELD("search", "epochs_phase1", search.epochs_phase1),
      MSNAS_FIELD("search", "lr_start", search.lr_start),
      MSNAS_FIELD("search", "lr_end", search.lr_end),
      MSNAS_FIELD("search", "momentum", search.momentum),
      MSNAS_FIELD("search", "weight_decay", search.weight_decay),
      MSNAS_FIELD("search", "batch_size", search.batch_size),
      MSNAS_FIELD("search", "arch_init_noise", search.arch_init_noise),
      MSNAS_FIELD("search", "arch_lr_scale", search.arch_lr_scale),
      MSNAS_FIELD("decode", "n_paths", search.n_paths),
      MSNAS_FIELD("train", "folds", train.folds),
      MSNAS_FIELD("train", "epochs", train.epochs),
      MSNAS_FIELD("train", "batch_size", train.batch_size),
      MSNAS_FIELD("train", "lr_start", train.lr_start),
      MSNAS_FIELD("train", "lr_end", train.lr_end),
      MSNAS_FIELD("train", "momentum", train.momentum),
      MSNAS_FIELD("train", "weight_decay", train.weight_decay),
      MSNAS_FIELD("run", "seed", search.seed),
      MSNAS_FIELD("run", "output_dir", output_dir),
  };
  return table;
}

#undef MSNAS_FIELD

const Field& find_field(std::string_view qualified) {
  for (const Field& f : fields()) {
    if (f.qualified() == qualified) return f;
  }
  throw ConfigError(std::string(qualified), "unknown key");
}

std::string search_section(const std::string& field) {
  for (const Field& f : fields()) {
    if (f.key == field && f.section != "train") return f.section;
  }
  return field == "dataset" ? "data" : "search";
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
  try {
    search.validate();
  } catch (const ConfigError& e) {
    const std::string prefix = e.field() + ": ";
    std::string msg = e.what();
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    throw ConfigError(search_section(e.field()) + "." + e.field(), msg);
  }
  if (train.folds < 2) throw ConfigError("train.folds", "must be >= 2");
  if (train.epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (train.batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(train.lr_end > 0.0)) throw ConfigError("train.lr_end", "must be > 0");
  if (!(train.lr_start >= train.lr_end)) throw ConfigError("train.lr_start", "must be >= lr_end");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) {
    throw ConfigError("train.momentum", "must be in [0, 1)");
  }
  if (!(train.weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find_field(trim(key)).set(*this, trim(value));
  train.seed = search.seed;
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(std::string(trim(assignment)), "expected section.key=value");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.qualified());
  return out;
}

RunConfig parse_config(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(ini_text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "key outside any section");
    for (const auto& [key, value] : body) {
      find_field(section + "." + key).set(c, trim(value.data()));
    }
  }
  c.train.seed = c.search.seed;
  return c;
}

RunConfig load_config(const fs::path& p) {
  std::string text;
  try {
    text = read_file(p);
  } catch (const std::runtime_error&) {
    throw ConfigError("config", "cannot read " + p.string());
  }
  return parse_config(text);
}

std::string config_to_ini(const RunConfig& c) {
  std::string out = "; msnas-config v1\n";
  std::string current;
  for (const Field& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- binary helpers

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw FormatError(what_ + ": truncated");
    const std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const std::string_view s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::uint64_t u64() {
    const std::string_view s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

constexpr std::string_view kCheckpointMagic = "MSNASCKP";

void write_tensor(Writer& w, const Tensor& t) {
  for (double v : t.data()) w.f64(v);
}

Tensor read_tensor(Reader& r, Shape s) {
  if (r.remaining() / 8 < s.numel()) throw FormatError("checkpoint: truncated tensor");
  Tensor t(s);
  for (double& v : t.data()) v = r.f64();
  return t;
}

}  // namespace

// ---------------------------------------------------------------- checkpoint

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const std::string meta = c.meta.dump();
  w.u64(meta.size());
  w.bytes(meta);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const TensorRecord& t : c.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(t.is_param ? 1 : 0);
    const Shape s = t.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    write_tensor(w, t.value);
    if (t.is_param) {
      if (t.momentum.shape() == s) {
        write_tensor(w, t.momentum);
      } else {
        for (std::size_t i = 0; i < s.numel(); ++i) w.f64(0.0);
      }
    }
  }
  const std::string digest = sha256_raw(w.str());
  w.bytes(digest);
  return std::move(w.str());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 12 + 32 ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("checkpoint: bad magic (not an msnas checkpoint)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 32);
  const std::string stored = hex_of(bytes.substr(bytes.size() - 32));
  const std::string computed = sha256_hex(body);
  if (stored != computed) {
    throw FormatError("checkpoint: digest mismatch (stored " + stored + ", computed " + computed +
                      ")");
  }
  Reader r(body, "checkpoint");
  r.take(kCheckpointMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const std::uint64_t meta_len = r.u64();
  if (meta_len > r.remaining()) throw FormatError("checkpoint: truncated");
  try {
    c.meta = json::parse(r.take(meta_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    t.name = std::string(r.take(r.u32()));
    t.is_param = r.u8() != 0;
    Shape s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    t.value = read_tensor(r, s);
    if (t.is_param) t.momentum = read_tensor(r, s);
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

std::vector<TensorRecord> capture_state(const StateRefs& s) {
  std::vector<TensorRecord> out;
  for (const Param* p : s.params) out.push_back({p->name, true, p->value, p->momentum});
  for (const auto& [name, t] : s.buffers) out.push_back({name, false, *t, Tensor()});
  return out;
}

void apply_state(StateRefs& s, const std::vector<TensorRecord>& records) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const TensorRecord& r : records) {
    if (!by_name.emplace(r.name, &r).second) throw FormatError("duplicate tensor " + r.name);
  }
  auto lookup = [&](const std::string& name, const Shape& shape, bool param) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("missing tensor " + name);
    const TensorRecord& r = *it->second;
    if (!(r.value.shape() == shape) || r.is_param != param) {
      throw FormatError("tensor " + name + " has shape " + r.value.shape().str() + ", expected " +
                        shape.str());
    }
    by_name.erase(it);
    return &r;
  };
  for (Param* p : s.params) {
    const TensorRecord* r = lookup(p->name, p->value.shape(), true);
    p->value = r->value;
    p->momentum = r->momentum;
    p->grad.fill(0.0);
  }
  for (auto& [name, t] : s.buffers) *t = lookup(name, t->shape(), false)->value;
  if (!by_name.empty()) throw FormatError("unexpected tensor " + by_name.begin()->first);
}

Checkpoint search_checkpoint(SearchRun& run, const RunConfig& cfg) {
  Checkpoint c;
  json history = json::array();
  for (const LossRecord& r : run.history()) {
    history.push_back({{"epoch", r.epoch},
                       {"phase", r.phase},
                       {"weight_loss", r.weight_loss},
                       {"arch_loss", r.arch_loss},
                       {"lr", r.lr}});
  }
  c.meta = {{"format", "msnas-checkpoint"},
            {"kind", "search"},
            {"tool_version", kToolVersion},
            {"config", config_to_ini(cfg)},
            {"epoch", run.epoch()},
            {"rng", save_rng(run.rng())},
            {"history", history},
            {"error", run.error()}};
  c.tensors = capture_state(run.net().full_state());
  return c;
}

LoadedSearch read_search_checkpoint(const Checkpoint& c) {
  LoadedSearch s;
  try {
    if (c.meta.at("kind") != "search") throw FormatError("checkpoint is not a search checkpoint");
    s.config = parse_config(c.meta.at("config").get<std::string>());
    s.epoch = c.meta.at("epoch").get<int>();
    s.rng = c.meta.at("rng").get<std::string>();
    s.error = c.meta.at("error").get<std::string>();
    for (const json& h : c.meta.at("history")) {
      s.history.push_back({h.at("epoch").get<int>(), h.at("phase").get<int>(),
                           h.at("weight_loss").get<double>(), h.at("arch_loss").get<double>(),
                           h.at("lr").get<double>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  s.tensors = c.tensors;
  return s;
}

// ---------------------------------------------------------------- arch file

std::string arch_to_json(const ArchFile& a) {
  const DecodedArch& d = a.arch;
  const SupernetGraph g(d.layers, d.scales);
  ojson ops = ojson::array();
  for (OperatorKind op : a.cell.ops) ops.push_back(to_string(op));
  ojson paths = ojson::array();
  for (std::size_t i = 0; i < d.paths.size(); ++i) {
    paths.push_back({{"edges", d.paths[i].arcs},
                     {"vertices", d.paths[i].vertices(g.dag())},
                     {"score", d.scores[i]}});
  }
  ojson genotypes = ojson::object();
  for (const CellGenotype& geno : d.genotypes) {
    ojson blocks = ojson::array();
    for (const Block& b : geno.blocks) blocks.push_back({{"input", b.input}, {"op", to_string(b.op)}});
    genotypes[to_string(geno.kind)] = blocks;
  }
  ojson cells = ojson::array();
  for (const CellInstance& c : d.cell_instances) {
    cells.push_back({{"vertex", c.vertex}, {"kind", to_string(c.kind)}, {"edge", c.edge}});
  }
  const ojson doc = {
      {"format", "msnas-arch"},
      {"version", kArchVersion},
      {"supernet",
       {{"layers", d.layers},
        {"scales", d.scales},
        {"blocks", a.cell.blocks},
        {"k", a.cell.k},
        {"operators", ops},
        {"base_channels", a.spec.base_channels},
        {"image_channels", a.spec.image_channels},
        {"num_classes", a.spec.num_classes}}},
      {"n_paths_requested", a.n_paths_requested},
      {"capped", d.capped},
      {"paths", paths},
      {"genotypes", genotypes},
      {"edges", d.edges},
      {"cells", cells},
      {"merge_vertices", d.merge_vertices},
      {"channel_plan", a.widths},
      {"provenance",
       {{"checkpoint_sha256", a.checkpoint_sha256},
        {"seed", a.seed},
        {"search_epochs", a.search_epochs},
        {"tool_version", kToolVersion}}}};
  return doc.dump(2) + "\n";
}

ArchFile arch_from_json(std::string_view text) {
  ArchFile a;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("arch file: not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "msnas-arch") throw FormatError("arch file: wrong format tag");
    const int version = doc.at("version").get<int>();
    if (version != kArchVersion) {
      throw FormatError("arch file: unsupported format version " + std::to_string(version) +
                        " (expected " + std::to_string(kArchVersion) + ")");
    }
    const json& sn = doc.at("supernet");
    DecodedArch& d = a.arch;
    d.layers = sn.at("layers").get<int>();
    d.scales = sn.at("scales").get<int>();
    a.cell.blocks = sn.at("blocks").get<int>();
    a.cell.k = sn.at("k").get<int>();
    a.cell.ops.clear();
    for (const json& o : sn.at("operators")) {
      const auto op = parse_operator(o.get<std::string>());
      if (!op) throw FormatError("arch file: unknown operator " + o.dump());
      a.cell.ops.push_back(*op);
    }
    a.spec.base_channels = sn.at("base_channels").get<int>();
    a.spec.image_channels = sn.at("image_channels").get<int>();
    a.spec.num_classes = sn.at("num_classes").get<int>();
    a.spec.k = a.cell.k;
    if (d.layers < 1 || d.scales < 1 || d.scales > 24 || a.cell.blocks < 1 || a.cell.k < 1 ||
        a.spec.num_classes < 2 || a.spec.image_channels < 1) {
      throw FormatError("arch file: invalid supernet dimensions");
    }
    const SupernetGraph g(d.layers, d.scales);
    const int n_edges = static_cast<int>(g.edges().size());

    a.n_paths_requested = doc.at("n_paths_requested").get<int>();
    std::vector<Path> paths;
    for (const json& p : doc.at("paths")) {
      Path path{p.at("edges").get<std::vector<int>>()};
      for (int e : path.arcs) {
        if (e < 0 || e >= n_edges) throw InvalidArchitecture("edge id out of range");
      }
      validate_path(g, path);
      if (path.vertices(g.dag()) != p.at("vertices").get<std::vector<int>>()) {
        throw InvalidArchitecture("path vertices disagree with its edges");
      }
      paths.push_back(std::move(path));
      d.scores.push_back(p.at("score").get<double>());
    }
    if (paths.empty()) throw InvalidArchitecture("no paths");
    if (static_cast<int>(paths.size()) > a.n_paths_requested) {
      throw InvalidArchitecture("more paths than requested");
    }
    for (std::size_t i = 1; i < d.scores.size(); ++i) {
      if (d.scores[i] > d.scores[i - 1]) throw InvalidArchitecture("paths not ranked by score");
    }
    const bool capped = doc.at("capped").get<bool>();
    if (capped != (static_cast<int>(paths.size()) < a.n_paths_requested)) {
      throw InvalidArchitecture("capped flag disagrees with the path count");
    }

    std::array<CellGenotype, 3> genos;
    const json& gj = doc.at("genotypes");
    for (CellKind kind : kAllCellKinds) {
      CellGenotype& geno = genos[index_of(kind)];
      geno.kind = kind;
      const json& blocks = gj.at(to_string(kind));
      if (static_cast<int>(blocks.size()) != a.cell.blocks) {
        throw InvalidArchitecture(std::string(to_string(kind)) + " genotype has wrong block count");
      }
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        Block b;
        b.input = blocks[i].at("input").get<int>();
        const auto op = parse_operator(blocks[i].at("op").get<std::string>());
        if (!op || *op == OperatorKind::Zero ||
            std::find(a.cell.ops.begin(), a.cell.ops.end(), *op) == a.cell.ops.end()) {
          throw InvalidArchitecture("invalid operator in " + std::string(to_string(kind)) +
                                    " genotype");
        }
        if (b.input < 0 || b.input > static_cast<int>(i)) {
          throw InvalidArchitecture("block input out of range in " +
                                    std::string(to_string(kind)) + " genotype");
        }
        b.op = *op;
        geno.blocks.push_back(b);
      }
    }

    DecodedArch rebuilt = assemble_architecture(paths, genos, g);
    std::vector<CellInstance> cells;
    for (const json& c : doc.at("cells")) {
      const auto kind = parse_cell_kind(c.at("kind").get<std::string>());
      if (!kind) throw InvalidArchitecture("unknown cell kind " + c.at("kind").dump());
      cells.push_back({c.at("vertex").get<int>(), *kind, c.at("edge").get<int>()});
    }
    if (cells != rebuilt.cell_instances) throw InvalidArchitecture("cell list disagrees with paths");
    if (doc.at("edges").get<std::vector<int>>() != rebuilt.edges) {
      throw InvalidArchitecture("edge union disagrees with paths");
    }
    if (doc.at("merge_vertices").get<std::vector<int>>() != rebuilt.merge_vertices) {
      throw InvalidArchitecture("merge vertices disagree with paths");
    }
    rebuilt.scores = d.scores;
    rebuilt.capped = capped;
    d = std::move(rebuilt);

    a.widths = doc.at("channel_plan").get<std::vector<int>>();
    if (a.widths != channel_plan(g, a.spec.base_channels, a.cell.k)) {
      throw InvalidArchitecture("channel plan disagrees with base_channels");
    }
    const json& prov = doc.at("provenance");
    a.checkpoint_sha256 = prov.at("checkpoint_sha256").get<std::string>();
    a.seed = prov.at("seed").get<std::uint64_t>();
    a.search_epochs = prov.at("search_epochs").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("arch file: ") + e.what());
  } catch (const ShapeError& e) {
    throw InvalidArchitecture(e.what());
  } catch (const std::invalid_argument& e) {
    throw InvalidArchitecture(e.what());
  }
  return a;
}

// ---------------------------------------------------------------- datasets

namespace {

std::string sample_name(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu.bin", stem, i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& d, const fs::path& dir, const json& generator) {
  d.validate();
  if (d.num_classes > 256) throw std::invalid_argument("label files hold at most 256 classes");
  fs::create_directories(dir);
  ojson samples = ojson::array();
  for (std::size_t i = 0; i < d.count(); ++i) {
    const SegSample& s = d.samples[i];
    Writer img;
    img.bytes("MSNI");
    img.u32(kDatasetVersion);
    img.u32(d.channels);
    img.u32(d.size);
    img.u32(d.size);
    write_tensor(img, s.image);
    Writer lbl;
    lbl.bytes("MSNL");
    lbl.u32(kDatasetVersion);
    lbl.u32(d.size);
    lbl.u32(d.size);
    for (std::int32_t c : s.label) lbl.u8(static_cast<std::uint8_t>(c));
    const std::string iname = sample_name("image", i), lname = sample_name("label", i);
    write_file(dir / iname, img.str());
    write_file(dir / lname, lbl.str());
    samples.push_back({{"image", iname}, {"label", lname}});
  }
  const ojson manifest = {{"format", "msnas-dataset"},
                         {"version", kDatasetVersion},
                         {"size", d.size},
                         {"channels", d.channels},
                         {"num_classes", d.num_classes},
                         {"count", d.count()},
                         {"generator", ojson(generator)},
                         {"samples", samples}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw FormatError("dataset: no manifest.json in " + dir.string());
  Dataset d;
  try {
    const json m = json::parse(read_file(mpath));
    if (m.at("format") != "msnas-dataset") throw FormatError("dataset: wrong format tag");
    const int version = m.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw FormatError("dataset: unsupported format version " + std::to_string(version));
    }
    d.size = m.at("size").get<int>();
    d.channels = m.at("channels").get<int>();
    d.num_classes = m.at("num_classes").get<int>();
    const auto& samples = m.at("samples");
    if (samples.size() != m.at("count").get<std::size_t>()) {
      throw FormatError("dataset: manifest count disagrees with its sample list");
    }
    if (d.size < 1 || d.channels < 1) throw FormatError("dataset: bad dimensions");
    for (const json& s : samples) {
      const std::string iname = s.at("image").get<std::string>();
      const std::string lname = s.at("label").get<std::string>();
      const std::string ib = read_file(dir / iname), lb = read_file(dir / lname);
      Reader ir(ib, iname), lr(lb, lname);
      if (ir.take(4) != "MSNI" || ir.u32() != static_cast<std::uint32_t>(kDatasetVersion)) {
        throw FormatError("dataset: bad header in " + iname);
      }
      const int c = static_cast<int>(ir.u32()), h = static_cast<int>(ir.u32()),
                w = static_cast<int>(ir.u32());
      if (c != d.channels || h != d.size || w != d.size) {
        throw FormatError("dataset: " + iname + " has the wrong shape");
      }
      SegSample sample;
      sample.image = read_tensor(ir, {1, c, h, w});
      if (!ir.done()) throw FormatError("dataset: trailing bytes in " + iname);
      if (lr.take(4) != "MSNL" || lr.u32() != static_cast<std::uint32_t>(kDatasetVersion) ||
          static_cast<int>(lr.u32()) != d.size || static_cast<int>(lr.u32()) != d.size) {
        throw FormatError("dataset: bad header in " + lname);
      }
      if (lr.remaining() != static_cast<std::size_t>(d.size) * d.size) {
        throw FormatError("dataset: " + lname + " has the wrong size");
      }
      sample.label.resize(static_cast<std::size_t>(d.size) * d.size);
      for (auto& v : sample.label) v = lr.u8();
      d.samples.push_back(std::move(sample));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const FormatError*>(&e)) throw;
    throw FormatError(std::string("dataset: ") + e.what());
  }
  try {
    d.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  return d;
}

// ---------------------------------------------------------------- reports

namespace {

std::string fmt(double v) { return format_value(v); }

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

void metric_rows(std::string& out, const std::string& fold, const Metrics& m, int num_classes) {
  for (int c = 0; c < num_classes; ++c) {
    out += fold + "," + std::to_string(c) + "," + opt(m.class_iou[c]) + "," +
           opt(m.class_dice[c]) + ",ok\n";
  }
  out += fold + ",mean," + fmt(m.mean_iou) + "," + fmt(m.mean_dice) + ",ok\n";
}

constexpr const char* kMetricsHeader = "# msnas-metrics v1\nfold,class,iou,dice,status\n";

}  // namespace

std::string metrics_csv(const CrossValResult& r, int num_classes) {
  std::string out = kMetricsHeader;
  for (const FoldResult& f : r.folds) {
    const std::string fold = std::to_string(f.fold);
    if (f.failed) {
      const std::string status = "failed: " + sanitize(f.error);
      for (int c = 0; c < num_classes; ++c) out += fold + "," + std::to_string(c) + ",,," + status + "\n";
      out += fold + ",mean,,," + status + "\n";
      continue;
    }
    metric_rows(out, fold, f.metrics, num_classes);
  }
  const bool any = r.failed < static_cast<int>(r.folds.size());
  const std::string status = any ? "ok" : "failed: all folds failed";
  out += "summary,mean," + (any ? fmt(r.mean_iou) : "") + "," + (any ? fmt(r.mean_dice) : "") +
         "," + status + "\n";
  out += "summary,std," + (any ? fmt(r.std_iou) : "") + "," + (any ? fmt(r.std_dice) : "") + "," +
         status + "\n";
  return out;
}

std::string eval_csv(const Metrics& m, int num_classes) {
  std::string out = kMetricsHeader;
  metric_rows(out, "eval", m, num_classes);
  return out;
}

std::string run_manifest(const std::string& command, std::uint64_t seed,
                         const std::string& config_sha256,
                         const std::map<std::string, std::string>& artifact_sha256) {
  const ojson m = {{"format", "msnas-run"},
                  {"version", 1},
                  {"tool_version", kToolVersion},
                  {"command", command},
                  {"seed", seed},
                  {"config_sha256", config_sha256},
                  {"artifacts", artifact_sha256}};
  return m.dump(2) + "\n";
}

}  // namespace msnas
