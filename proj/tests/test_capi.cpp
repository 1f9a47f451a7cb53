#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <thread>

#include "msnas/msnas.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  msnas_free_string(s);
  return out;
}

fs::path temp(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("msnas_capi_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("status codes map to exit codes") {
  CHECK(msnas_exit_code(MSNAS_OK) == 0);
  CHECK(msnas_exit_code(MSNAS_ERR_CONFIG) == 2);
  CHECK(msnas_exit_code(MSNAS_ERR_RUNTIME) == 1);
  CHECK(msnas_exit_code(MSNAS_ERR_FORMAT) == 1);
  CHECK(msnas_exit_code(MSNAS_ERR_ARCH) == 1);
  CHECK(std::strlen(msnas_version()) > 0);
  CHECK(std::string(msnas_status_name(MSNAS_ERR_CONFIG)) == "configuration error");
}

TEST_CASE("null arguments are rejected with a message") {
  CHECK(msnas_config_new(nullptr) == MSNAS_ERR_ARGUMENT);
  CHECK(std::string(msnas_last_error()).find("out") != std::string::npos);
  CHECK(msnas_count(1, 1, 1, 1, nullptr) == MSNAS_ERR_ARGUMENT);
  CHECK(msnas_arch_num_paths(nullptr) == 0);
  msnas_config_free(nullptr);
  msnas_free_string(nullptr);
}

TEST_CASE("config handle get, set and validate") {
  msnas_config* cfg = nullptr;
  REQUIRE(msnas_config_new(&cfg) == MSNAS_OK);
  char* v = nullptr;
  REQUIRE(msnas_config_get(cfg, "supernet.layers", &v) == MSNAS_OK);
  CHECK(take(v) == "10");
  CHECK(msnas_config_set(cfg, "supernet.layers", "4") == MSNAS_OK);
  CHECK(msnas_config_assign(cfg, "search.lr_start = 0.05") == MSNAS_OK);
  REQUIRE(msnas_config_get(cfg, "search.lr_start", &v) == MSNAS_OK);
  CHECK(take(v) == "0.050000000000000003");
  CHECK(msnas_config_set(cfg, "supernet.nothing", "1") == MSNAS_ERR_CONFIG);
  CHECK(std::string(msnas_last_error()) == "supernet.nothing: unknown key");
  CHECK(msnas_config_validate(cfg) == MSNAS_OK);
  CHECK(std::string(msnas_last_error()).empty());
  CHECK(msnas_config_set(cfg, "supernet.k", "3") == MSNAS_OK);
  CHECK(msnas_config_validate(cfg) == MSNAS_ERR_CONFIG);
  CHECK(std::string(msnas_last_error()).rfind("supernet.base_channels:", 0) == 0);

  char* ini = nullptr;
  REQUIRE(msnas_config_to_ini(cfg, &ini) == MSNAS_OK);
  msnas_config* back = nullptr;
  const std::string text = take(ini);
  REQUIRE(msnas_config_parse(text.c_str(), &back) == MSNAS_OK);
  REQUIRE(msnas_config_to_ini(back, &ini) == MSNAS_OK);
  CHECK(take(ini) == text);
  msnas_config_free(back);
  msnas_config_free(cfg);

  CHECK(msnas_config_load("/nonexistent/run.ini", &cfg) == MSNAS_ERR_CONFIG);
}

TEST_CASE("last error is per thread") {
  CHECK(msnas_config_set(nullptr, "a", "b") == MSNAS_ERR_ARGUMENT);
  std::string other = "unset";
  std::thread t([&] { other = msnas_last_error(); });
  t.join();
  CHECK(other.empty());
  CHECK_FALSE(std::string(msnas_last_error()).empty());
}

TEST_CASE("count through the C API") {
  char* r = nullptr;
  REQUIRE(msnas_count(3, 2, 1, 1, &r) == MSNAS_OK);
  CHECK(take(r).find("paths: 9\n") != std::string::npos);
  CHECK(msnas_count(0, 2, 1, 1, &r) == MSNAS_ERR_CONFIG);
}

TEST_CASE("pipeline stages through the C API") {
  const fs::path root = temp("pipe");
  const std::string data = (root / "data").string();
  REQUIRE(msnas_synth(4, 8, 16, 2, 0.05, 1, data.c_str()) == MSNAS_OK);
  CHECK(msnas_synth(4, 8, 16, 1, 0.05, 1, data.c_str()) == MSNAS_ERR_CONFIG);

  msnas_config* cfg = nullptr;
  const std::string ini = "[supernet]\nlayers = 3\nscales = 2\nbase_channels = 4\n[data]\ndir = " +
                          data +
                          "\nimage_size = 16\n[search]\nepochs_total = 2\nepochs_phase1 = 1\n"
                          "batch_size = 2\n[train]\nepochs = 1\n";
  REQUIRE(msnas_config_parse(ini.c_str(), &cfg) == MSNAS_OK);
  const std::string run = (root / "run").string();
  REQUIRE(msnas_search(cfg, run.c_str(), nullptr, 0) == MSNAS_OK);
  CHECK(fs::exists(root / "run/checkpoint.bin"));
  CHECK(fs::exists(root / "run/loss.csv"));
  CHECK(fs::exists(root / "run/manifest.json"));

  const std::string ckpt = (root / "run/checkpoint.bin").string();
  int capped = -1;
  REQUIRE(msnas_decode(ckpt.c_str(), 0, (root / "dec").string().c_str(), &capped) == MSNAS_OK);
  CHECK(capped == 0);
  msnas_arch* arch = nullptr;
  const std::string arch_path = (root / "dec/arch.json").string();
  REQUIRE(msnas_arch_load(arch_path.c_str(), &arch) == MSNAS_OK);
  CHECK(msnas_arch_num_paths(arch) == 3);
  CHECK(msnas_arch_num_cells(arch) > 0);
  CHECK(msnas_arch_capped(arch) == 0);
  msnas_arch_free(arch);

  char* csv = nullptr;
  REQUIRE(msnas_cost(arch_path.c_str(), 16, &csv) == MSNAS_OK);
  CHECK(take(csv).rfind("# msnas-cost v1", 0) == 0);
  const int sweep[] = {1, 2, 3};
  REQUIRE(msnas_compare(ckpt.c_str(), sweep, 3, 16, &csv) == MSNAS_OK);
  CHECK(take(csv).find("n_paths,capped,cells,params,flops") != std::string::npos);
  const int descending[] = {3, 2};
  CHECK(msnas_compare(ckpt.c_str(), descending, 2, 16, &csv) == MSNAS_ERR_CONFIG);

  REQUIRE(msnas_train(arch_path.c_str(), cfg, (root / "train").string().c_str(), 0) == MSNAS_OK);
  CHECK(fs::exists(root / "train/metrics.csv"));
  const std::string w = (root / "train/weights_fold0.bin").string();
  REQUIRE(msnas_eval(arch_path.c_str(), w.c_str(), data.c_str(), 0, &csv) == MSNAS_OK);
  CHECK(take(csv).find("eval,mean,") != std::string::npos);
  REQUIRE(msnas_eval(arch_path.c_str(), nullptr, data.c_str(), 1, &csv) == MSNAS_OK);
  CHECK(take(csv).find("eval,mean,1,1,ok") != std::string::npos);
  CHECK(msnas_eval(arch_path.c_str(), nullptr, data.c_str(), 0, &csv) == MSNAS_ERR_CONFIG);

  char* dot = nullptr;
  REQUIRE(msnas_export_dot(0, 0, arch_path.c_str(), &dot) == MSNAS_OK);
  CHECK(take(dot).find("digraph") != std::string::npos);
  REQUIRE(msnas_export_dot(2, 2, nullptr, &dot) == MSNAS_OK);
  take(dot);

  CHECK(msnas_decode((root / "missing.bin").string().c_str(), 1, run.c_str(), nullptr) ==
        MSNAS_ERR_FORMAT);
  CHECK(msnas_config_set(cfg, "data.dir", (root / "none").string().c_str()) == MSNAS_OK);
  CHECK(msnas_search(cfg, run.c_str(), nullptr, 0) == MSNAS_ERR_CONFIG);
  CHECK(std::string(msnas_last_error()).find("data.dir") != std::string::npos);
  msnas_config_free(cfg);
  fs::remove_all(root);
}
