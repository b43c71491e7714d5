#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "rampmeter/rampmeter.h"

namespace fs = std::filesystem;

namespace {

const char* kFixture = RAMPMETER_FIXTURES "/tiny_policy.bin";

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("rampmeter_capi_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::vector<char> bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string get(const rm_config* c, const char* key) {
  size_t needed = 0;
  REQUIRE(rm_config_get(c, key, nullptr, 0, &needed) == RM_OK);
  std::string s(needed, '\0');
  REQUIRE(rm_config_get(c, key, s.data(), s.size(), &needed) == RM_OK);
  s.resize(needed - 1);
  return s;
}

}  // namespace

TEST_CASE("metadata") {
  CHECK(std::string(rm_version()) == "0.1.0");
  CHECK(rm_observation_dim() == 54);
  CHECK(rm_action_dim() == 2);
  CHECK(std::string(rm_case_name(RM_CASE_RL_NOISE_TRAINED)) == "RL_NOISE_TRAINED");
  CHECK(std::string(rm_status_string(RM_ERR_POLICY_FORMAT)) == "malformed policy file");
}

TEST_CASE("config handles") {
  rm_config* c = nullptr;
  REQUIRE(rm_config_default(&c) == RM_OK);
  CHECK(get(c, "train.batch_size") == "20000");
  CHECK(rm_config_set(c, "train.horizon", "50") == RM_OK);
  CHECK(get(c, "train.horizon") == "50");

  CHECK(rm_config_set(c, "nope.key", "1") == RM_ERR_CONFIG);
  CHECK(std::string(rm_last_error()).find("nope.key") != std::string::npos);
  CHECK(rm_config_set(c, "train.horizon", "abc") == RM_ERR_CONFIG);

  CHECK(rm_config_set_seed(c, 99) == RM_OK);
  uint64_t seed = 0;
  CHECK(rm_config_get_seed(c, &seed) == RM_OK);
  CHECK(seed == 99);

  size_t needed = 0;
  CHECK(rm_config_dump(c, nullptr, 0, &needed) == RM_OK);
  std::string dump(needed, '\0');
  char tiny[4] = {'x', 'x', 'x', 'x'};
  CHECK(rm_config_dump(c, tiny, sizeof tiny, &needed) == RM_OK);
  CHECK(tiny[0] == 'x');  // too small: untouched
  CHECK(rm_config_dump(c, dump.data(), dump.size(), &needed) == RM_OK);
  CHECK(dump.find("horizon: 50") != std::string::npos);
  CHECK(dump.find("master_seed: 99") != std::string::npos);

  CHECK(rm_config_validate(c) == RM_OK);
  CHECK(rm_config_set(c, "reward.v_max", "-1") == RM_OK);
  CHECK(rm_config_validate(c) == RM_ERR_CONFIG);
  CHECK(std::string(rm_last_error()).find("reward.v_max") != std::string::npos);
  rm_config_free(c);

  TempDir tmp;
  std::ofstream(tmp.path / "c.yaml") << "train:\n  iterations: 7\n";
  rm_config* loaded = nullptr;
  REQUIRE(rm_config_load((tmp.path / "c.yaml").c_str(), &loaded) == RM_OK);
  CHECK(get(loaded, "train.iterations") == "7");
  rm_config_free(loaded);
  rm_config* none = nullptr;
  CHECK(rm_config_load((tmp.path / "missing.yaml").c_str(), &none) != RM_OK);
  CHECK(none == nullptr);
  CHECK(rm_config_default(nullptr) == RM_ERR_INVALID_ARGUMENT);
}

TEST_CASE("policy handles") {
  rm_policy* p = nullptr;
  REQUIRE(rm_policy_load(kFixture, &p) == RM_OK);
  size_t n = 0;
  CHECK(rm_policy_num_params(p, &n) == RM_OK);
  CHECK(n == 6 + 2 + 2 + 1 + 1);

  const double x[3] = {0.1, -0.2, 0.3};
  double mean = 0, sd = 0;
  CHECK(rm_policy_forward(p, x, 3, &mean, &sd, 1) == RM_OK);
  const double h0 = std::tanh(0.5 * 0.1 + 1.25 * 0.2 + 2.0 * 0.3 + 0.25);
  const double h1 = std::tanh(-0.75 * 0.2 - 0.125 * 0.3 - 0.5);
  CHECK(mean == doctest::Approx(1.5 * h0 - 2.0 * h1 + 0.0625).epsilon(1e-15));
  CHECK(sd == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(rm_policy_forward(p, x, 2, &mean, &sd, 1) == RM_ERR_INVALID_ARGUMENT);

  TempDir tmp;
  const fs::path out = tmp.path / "copy.bin";
  CHECK(rm_policy_save(p, out.c_str()) == RM_OK);
  CHECK(bytes(out) == bytes(kFixture));
  rm_policy_free(p);

  rm_policy* bad = nullptr;
  std::ofstream(tmp.path / "junk.bin") << "RNDP but not really";
  CHECK(rm_policy_load((tmp.path / "junk.bin").c_str(), &bad) == RM_ERR_POLICY_FORMAT);
  CHECK(rm_policy_load((tmp.path / "missing.bin").c_str(), &bad) == RM_ERR_IO);
  CHECK(bad == nullptr);

  rm_policy* fresh = nullptr;
  REQUIRE(rm_policy_create(1, &fresh) == RM_OK);
  CHECK(rm_policy_num_params(fresh, &n) == RM_OK);
  CHECK(n == 11879);
  rm_policy_free(fresh);
}

TEST_CASE("environment handles") {
  rm_config* c = nullptr;
  REQUIRE(rm_config_default(&c) == RM_OK);
  REQUIRE(rm_config_set(c, "train.horizon", "5") == RM_OK);
  rm_env* a = nullptr;
  rm_env* b = nullptr;
  REQUIRE(rm_env_create(c, 3, &a) == RM_OK);
  REQUIRE(rm_env_create(c, 3, &b) == RM_OK);
  std::vector<double> oa(54), ob(54);
  CHECK(rm_env_reset(a, oa.data(), oa.size()) == RM_OK);
  CHECK(rm_env_reset(b, ob.data(), ob.size()) == RM_OK);
  CHECK(oa == ob);
  CHECK(rm_env_reset(a, oa.data(), 10) == RM_ERR_INVALID_ARGUMENT);

  const double act[2] = {0.5, -0.5};
  int done = 0, steps = 0;
  while (!done) {
    double ra = 0, rb = 0;
    int db = 0;
    REQUIRE(rm_env_step(a, act, 2, oa.data(), oa.size(), &ra, &done) == RM_OK);
    REQUIRE(rm_env_step(b, act, 2, ob.data(), ob.size(), &rb, &db) == RM_OK);
    CHECK(ra == rb);
    CHECK(oa == ob);
    CHECK(ra <= 1.0);
    ++steps;
  }
  CHECK(steps == 5);
  CHECK(rm_env_step(a, act, 2, nullptr, 0, nullptr, nullptr) == RM_ERR_STATE);
  const double nan_act[2] = {std::nan(""), 0.0};
  CHECK(rm_env_reset(a, oa.data(), oa.size()) == RM_OK);
  CHECK(rm_env_step(a, nan_act, 2, nullptr, 0, nullptr, nullptr) == RM_ERR_RUNTIME);
  rm_env_free(a);
  rm_env_free(b);
  rm_config_free(c);
}

TEST_CASE("commands") {
  TempDir tmp;
  rm_config* c = nullptr;
  REQUIRE(rm_config_default(&c) == RM_OK);
  REQUIRE(rm_config_set(c, "train.batch_size", "600") == RM_OK);
  REQUIRE(rm_config_set(c, "train.iterations", "1") == RM_OK);
  REQUIRE(rm_config_set(c, "eval.trials", "2") == RM_OK);

  std::vector<std::string> lines;
  rm_set_log_callback(
      [](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }, &lines);

  rm_policy* trained = nullptr;
  REQUIRE(rm_train(c, (tmp.path / "t").c_str(), &trained) == RM_OK);
  REQUIRE(trained != nullptr);
  CHECK_FALSE(lines.empty());
  rm_policy_free(trained);

  rm_report_row row{};
  REQUIRE(rm_baseline(c, (tmp.path / "b").c_str(), &row) == RM_OK);
  CHECK(row.eval_case == RM_CASE_BASELINE);
  CHECK(row.trials == 2);
  CHECK(row.max_travel_time >= row.avg_travel_time);
  CHECK(rm_baseline(c, (tmp.path / "b").c_str(), &row) == RM_ERR_IO);

  const std::string pol = (tmp.path / "t" / "policy.bin").string();
  rm_report_row rows[3];
  size_t n_rows = 0;
  REQUIRE(rm_transfer_eval(c, pol.c_str(), nullptr, (tmp.path / "te").c_str(), rows, &n_rows) == RM_OK);
  CHECK(n_rows == 2);
  CHECK(rows[0].eval_case == RM_CASE_BASELINE);
  CHECK(rows[1].eval_case == RM_CASE_RL_NOISE_TRAINED);

  REQUIRE(rm_eval(c, pol.c_str(), (tmp.path / "e").c_str(), &row) == RM_OK);
  CHECK(row.eval_case == RM_CASE_RL_NOISE_FREE);

  const std::string traj = (tmp.path / "b" / "trajectory_trial0.csv").string();
  const char* paths[] = {traj.c_str()};
  CHECK(rm_export_plots(c, paths, 1, (tmp.path / "p").c_str()) == RM_OK);
  CHECK(fs::exists(tmp.path / "p" / "spacetime_trajectory_trial0.csv"));
  CHECK(rm_export_plots(c, paths, 0, (tmp.path / "p2").c_str()) != RM_OK);

  rm_set_log_callback(nullptr, nullptr);
  rm_config_free(c);
}
