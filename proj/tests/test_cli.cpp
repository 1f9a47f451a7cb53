#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path r = [] {
    const fs::path p = fs::temp_directory_path() / ("msnas_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  static const struct Sweep {
    fs::path p;
    ~Sweep() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } sweep{r};
  return r;
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Result run(const std::string& args, const std::string& env = "") {
  const fs::path out = root() / "stdout.txt", err = root() / "stderr.txt";
  const std::string cmd = "cd '" + root().string() + "' && " + env + " '" MSNAS_CLI "' " + args +
                          " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

const char* kSmoke =
    "[supernet]\nlayers = 3\nscales = 2\nbase_channels = 4\n"
    "[data]\ndir = data\nimage_size = 16\nnum_classes = 2\n"
    "[search]\nepochs_total = 2\nepochs_phase1 = 1\nbatch_size = 2\n"
    "[train]\nfolds = 2\nepochs = 2\n";

// Dataset, smoke config and one search run shared by the later cases.
void ensure_search() {
  static bool done = false;
  if (done) return;
  REQUIRE(run("synth --seed 1 --count 8 --size 16 --classes 2 --out data").code == 0);
  write(root() / "smoke.ini", kSmoke);
  REQUIRE(run("search --config smoke.ini --out s1 --quiet").code == 0);
  done = true;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("count") {
  Result r = run("count");
  CHECK(r.code == 0);
  CHECK(r.out.find("paper: 3.89e9 / 4.22e8 / 1.64e18") != std::string::npos);
  CHECK(r.out.find("match: ") != std::string::npos);
  r = run("count --layers 1 --scales 1 --blocks 1 --ops 1");
  CHECK(r.code == 0);
  CHECK(r.out.find("paths: 1\n") != std::string::npos);
  CHECK(r.out.find("architectures: 1\n") != std::string::npos);
  CHECK(run("count --layers 0").code == 2);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("search").code == 2);
  CHECK(run("decode --checkpoint x --paths notanumber").code == 2);
  CHECK(run("eval --arch a.json --dataset data").code == 2);
  CHECK(run("--version").code == 0);
}

TEST_CASE("synth writes a reproducible dataset directory") {
  REQUIRE(run("synth --seed 3 --count 8 --size 16 --out syn_a").code == 0);
  REQUIRE(run("synth --seed 3 --count 8 --size 16 --out syn_b").code == 0);
  int images = 0, labels = 0;
  for (const auto& e : fs::directory_iterator(root() / "syn_a")) {
    const std::string name = e.path().filename().string();
    images += name.rfind("image_", 0) == 0;
    labels += name.rfind("label_", 0) == 0;
    CHECK(slurp(e.path()) == slurp(root() / "syn_b" / name));
  }
  CHECK(images == 8);
  CHECK(labels == 8);
  const auto m = nlohmann::json::parse(slurp(root() / "syn_a/manifest.json"));
  CHECK(m["format"] == "msnas-dataset");
  CHECK(m["version"] == 1);
  CHECK(m["count"] == 8);
  CHECK(m["samples"].size() == 8);
  CHECK(run("synth --classes 1 --out syn_c").code == 2);
}

TEST_CASE("search artifacts, determinism and failure codes") {
  ensure_search();
  for (const char* f : {"checkpoint.bin", "loss.csv", "manifest.json"}) {
    CHECK(fs::exists(root() / "s1" / f));
  }
  REQUIRE(run("search --config smoke.ini --out s2 --quiet").code == 0);
  CHECK(slurp(root() / "s1/checkpoint.bin") == slurp(root() / "s2/checkpoint.bin"));
  CHECK(slurp(root() / "s1/loss.csv") == slurp(root() / "s2/loss.csv"));
  CHECK(slurp(root() / "s1/manifest.json") == slurp(root() / "s2/manifest.json"));
  CHECK(slurp(root() / "s1/loss.csv").rfind("# msnas-loss v1\n", 0) == 0);
  CHECK(slurp(root() / "s1/checkpoint.bin").rfind("MSNASCKP", 0) == 0);

  Result r = run("search --config smoke.ini --set data.dir=missing --out s3");
  CHECK(r.code == 2);
  CHECK(r.err.find("data.dir") != std::string::npos);
  r = run("search --config smoke.ini --set search.epochs_phase1=5 --out s3");
  CHECK(r.code == 2);
  CHECK(r.err.find("search.epochs_phase1") != std::string::npos);
  write(root() / "bad.ini", std::string(kSmoke) + "[search]\nwarmup = 1\n");
  CHECK(run("search --config bad.ini --out s3").code == 2);
  write(root() / "typo.ini", std::string(kSmoke) + "[extra]\nwarmup = 1\n");
  r = run("search --config typo.ini --out s3");
  CHECK(r.code == 2);
  CHECK(r.err.find("extra.warmup: unknown key") != std::string::npos);
  CHECK(run("search --config nowhere.ini --out s3").code == 2);
  CHECK_FALSE(fs::exists(root() / "s3"));
}

TEST_CASE("a diverging search exits 1 and still writes its checkpoint") {
  ensure_search();
  CHECK(run("search --config smoke.ini --set search.lr_start=1e300 --set search.lr_end=1e299 "
            "--out div --quiet")
            .code == 1);
  CHECK(fs::exists(root() / "div/checkpoint.bin"));
  CHECK(run("decode --checkpoint div/checkpoint.bin --out div_dec").code == 0);
}

TEST_CASE("output directory override from the environment") {
  ensure_search();
  REQUIRE(run("search --config smoke.ini --quiet", "MSNAS_OUTPUT_DIR=env_out").code == 0);
  CHECK(slurp(root() / "env_out/checkpoint.bin") == slurp(root() / "s1/checkpoint.bin"));
  REQUIRE(run("search --config smoke.ini --quiet --set run.output_dir=cfg_out").code == 0);
  CHECK(fs::exists(root() / "cfg_out/checkpoint.bin"));
}

TEST_CASE("decode") {
  ensure_search();
  REQUIRE(run("decode --checkpoint s1/checkpoint.bin --paths 3 --out d1").code == 0);
  REQUIRE(run("decode --checkpoint s1/checkpoint.bin --paths 3 --out d2").code == 0);
  CHECK(slurp(root() / "d1/arch.json") == slurp(root() / "d2/arch.json"));
  const auto a = nlohmann::json::parse(slurp(root() / "d1/arch.json"));
  CHECK(a["format"] == "msnas-arch");
  CHECK(a["paths"].size() == 3);
  CHECK(slurp(root() / "d1/arch.dot").rfind("// msnas-dot v1\n", 0) == 0);

  Result r = run("decode --checkpoint s1/checkpoint.bin --paths 1000 --out d3");
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(nlohmann::json::parse(slurp(root() / "d3/arch.json"))["paths"].size() == 9);

  std::string bytes = slurp(root() / "s1/checkpoint.bin");
  bytes[bytes.size() / 2] ^= 1;
  write(root() / "corrupt.bin", bytes);
  r = run("decode --checkpoint corrupt.bin --out d4");
  CHECK(r.code == 1);
  CHECK(r.err.find("digest mismatch") != std::string::npos);
  CHECK(run("decode --checkpoint s1/loss.csv --out d4").code == 1);
}

TEST_CASE("cost") {
  ensure_search();
  REQUIRE(run("decode --checkpoint s1/checkpoint.bin --paths 3 --out c1").code == 0);
  Result r = run("cost --arch c1/arch.json --input-size 16");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("# convention: 1 MAC = 2 FLOPs") != std::string::npos);

  // Skip-only genotypes put no parameters in any block.
  auto doc = nlohmann::json::parse(slurp(root() / "c1/arch.json"));
  for (auto& [kind, blocks] : doc["genotypes"].items()) {
    for (auto& b : blocks) b["op"] = "skip_connect";
  }
  write(root() / "skip.json", doc.dump());
  r = run("cost --arch skip.json --input-size 16");
  REQUIRE(r.code == 0);
  int block_rows = 0;
  for (const auto& row : csv_rows(r.out)) {
    if (row[0].find(".b") == std::string::npos) continue;
    ++block_rows;
    CHECK(row[1] == "0");
    CHECK(row[2] == "0");
  }
  CHECK(block_rows > 0);

  r = run("cost --checkpoint s1/checkpoint.bin --sweep 1,2,3,4,5 --input-size 16");
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 2; i < rows.size(); ++i) {
    CHECK(std::stoll(rows[i][3]) >= std::stoll(rows[i - 1][3]));
    CHECK(std::stoll(rows[i][4]) >= std::stoll(rows[i - 1][4]));
  }
  CHECK(run("cost --checkpoint s1/checkpoint.bin --sweep 3,2").code == 2);
  CHECK(run("cost").code == 2);
}

TEST_CASE("train and eval") {
  ensure_search();
  REQUIRE(run("decode --checkpoint s1/checkpoint.bin --paths 2 --out t_dec").code == 0);
  REQUIRE(run("train --arch t_dec/arch.json --config smoke.ini --out t1 --quiet").code == 0);
  REQUIRE(run("train --arch t_dec/arch.json --config smoke.ini --out t2 --quiet").code == 0);
  const std::string csv = slurp(root() / "t1/metrics.csv");
  CHECK(csv == slurp(root() / "t2/metrics.csv"));
  CHECK(csv.rfind("# msnas-metrics v1\nfold,class,iou,dice,status\n", 0) == 0);
  int per_class[2] = {0, 0};
  for (const auto& row : csv_rows(csv)) {
    if (row[0] == "0" || row[0] == "1") {
      if (row[1] == "0") ++per_class[0];
      if (row[1] == "1") ++per_class[1];
    }
  }
  CHECK(per_class[0] == 2);
  CHECK(per_class[1] == 2);
  CHECK(fs::exists(root() / "t1/weights_fold1.bin"));

  Result r = run("eval --arch t_dec/arch.json --weights t1/weights_fold0.bin --dataset data");
  CHECK(r.code == 0);
  CHECK(r.out.find("eval,mean,") != std::string::npos);
  r = run("eval --arch t_dec/arch.json --oracle --dataset data --out oracle.csv");
  CHECK(r.code == 0);
  CHECK(slurp(root() / "oracle.csv").find("eval,0,1,1,ok\neval,1,1,1,ok\neval,mean,1,1,ok\n") !=
        std::string::npos);
  CHECK(run("eval --arch t_dec/arch.json --oracle --dataset nowhere").code == 2);
  CHECK(run("train --arch t_dec/arch.json --config smoke.ini --set train.folds=5 --out t3").code ==
        2);
  CHECK(run("train --arch missing.json --config smoke.ini --out t3").code == 1);
}

TEST_CASE("export-dot") {
  ensure_search();
  Result r = run("export-dot --layers 2 --scales 2");
  CHECK(r.code == 0);
  CHECK(r.out.find("digraph") != std::string::npos);
  REQUIRE(run("decode --checkpoint s1/checkpoint.bin --paths 1 --out x_dec").code == 0);
  CHECK(run("export-dot --arch x_dec/arch.json --out x.dot").code == 0);
  CHECK(slurp(root() / "x.dot").find("digraph") != std::string::npos);
  CHECK(run("export-dot --arch missing.json").code == 1);
}
