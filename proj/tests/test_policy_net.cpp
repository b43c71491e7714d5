#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <vector>

#include "policy_net.hpp"
#include "rng.hpp"

using namespace rampmeter;
namespace fs = std::filesystem;

namespace {
Observation wave_obs() {
  Observation o;
  for (std::size_t k = 0; k < kObsDim; ++k) o[k] = 0.9 * std::sin(0.7 * static_cast<double>(k) + 0.3);
  return o;
}

PolicyParameters random_policy(std::uint64_t seed, const std::vector<int>& sizes = PolicyParameters::default_sizes()) {
  Rng rng(seed);
  PolicyParameters p = PolicyParameters::glorot(sizes, rng);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& l : p.layers)
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = u(rng);
  for (Eigen::Index k = 0; k < p.log_std.size(); ++k) p.log_std[k] = u(rng);
  return p;
}

// Loop-based forward pass, independent of the Eigen implementation.
std::vector<double> oracle_mean(const PolicyParameters& p, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<double> y(static_cast<std::size_t>(L.weight.rows()));
    for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
      double s = L.bias[i];
      for (Eigen::Index j = 0; j < L.weight.cols(); ++j) s += L.weight(i, j) * h[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = l + 1 < p.layers.size() ? std::tanh(s) : s;
    }
    h = std::move(y);
  }
  return h;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path kFixture = fs::path(RAMPMETER_FIXTURES) / "tiny_policy.bin";

// Values written by fixtures/make_tiny_policy.py.
PolicyParameters tiny_policy() {
  PolicyParameters p = PolicyParameters::zeros({3, 2, 1});
  p.layers[0].weight << 0.5, -1.25, 2.0, 0.0, 0.75, -0.125;
  p.layers[0].bias << 0.25, -0.5;
  p.layers[1].weight << 1.5, -2.0;
  p.layers[1].bias << 0.0625;
  p.log_std << -0.5;
  return p;
}

// Element `k` of the flatten() layout.
double& param_ref(PolicyParameters& p, Eigen::Index k) {
  for (auto& l : p.layers) {
    if (k < l.weight.size()) return l.weight(k / l.weight.cols(), k % l.weight.cols());
    k -= l.weight.size();
    if (k < l.bias.size()) return l.bias[k];
    k -= l.bias.size();
  }
  return p.log_std[k];
}

fs::path temp_path(const char* name) { return fs::temp_directory_path() / (std::string("rampmeter_") + name); }
}  // namespace

TEST_CASE("zero network") {
  const auto p = PolicyParameters::zeros(PolicyParameters::default_sizes());
  const auto d = forward(p, wave_obs());
  CHECK(d.mean[0] == 0.0);
  CHECK(d.mean[1] == 0.0);
  CHECK(d.std[0] == 1.0);
  CHECK(d.std[1] == 1.0);
  CHECK(p.size() == 54 * 100 + 100 + 100 * 50 + 50 + 50 * 25 + 25 + 25 * 2 + 2 + 2);
}

TEST_CASE("zero observation yields the output bias") {
  Rng rng(3);
  auto p = PolicyParameters::glorot(PolicyParameters::default_sizes(), rng);  // hidden biases are zero
  p.layers.back().bias << 0.25, -0.75;
  const Observation zero{};
  const auto d = forward(p, zero);
  CHECK(d.mean[0] == p.layers.back().bias[0]);
  CHECK(d.mean[1] == p.layers.back().bias[1]);
}

TEST_CASE("forward matches a loop oracle and is deterministic") {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto p = random_policy(s);
    const Observation o = wave_obs();
    const auto d = forward(p, o);
    const auto m = oracle_mean(p, {o.begin(), o.end()});
    CHECK(d.mean[0] == doctest::Approx(m[0]).epsilon(1e-12));
    CHECK(d.mean[1] == doctest::Approx(m[1]).epsilon(1e-12));
    const auto again = forward(p, o);
    CHECK(again.mean == d.mean);
    CHECK(again.std == d.std);
  }
}

TEST_CASE("golden forward value") {
  Rng rng = make_stream({1234}, Stream::Init);
  const auto p = PolicyParameters::glorot(PolicyParameters::default_sizes(), rng);
  const auto d = forward(p, wave_obs());
  CHECK(d.mean[0] == doctest::Approx(-0.020792665194965171).epsilon(1e-13));
  CHECK(d.mean[1] == doctest::Approx(-0.81994353116192664).epsilon(1e-13));
}

TEST_CASE("forward rejects bad input") {
  const auto p = random_policy(1);
  Observation o = wave_obs();
  o[7] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward(p, o), std::invalid_argument);
  std::vector<double> short_obs(10, 0.0);
  CHECK_THROWS_AS(forward(p, short_obs), std::invalid_argument);
}

TEST_CASE("log density") {
  auto p = PolicyParameters::zeros(PolicyParameters::default_sizes());
  const Observation o = wave_obs();
  const std::array<double, 2> mode{0.0, 0.0};
  CHECK(log_prob(p, o, mode) == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
  const double base = log_prob(p, o, mode);
  p.log_std.setConstant(std::log(2.0));
  CHECK(log_prob(p, o, mode) - base == doctest::Approx(-2 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("density integrates to one") {
  const auto p = random_policy(4);
  const Observation o = wave_obs();
  const auto d = forward(p, o);
  // Midpoint rule over +-8 sigma.
  const int n = 400;
  double total = 0.0;
  const double h0 = 16 * d.std[0] / n, h1 = 16 * d.std[1] / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const std::array<double, 2> a{d.mean[0] - 8 * d.std[0] + (i + 0.5) * h0, d.mean[1] - 8 * d.std[1] + (j + 0.5) * h1};
      total += std::exp(log_prob(p, o, a)) * h0 * h1;
    }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto p = random_policy(100 + static_cast<std::uint64_t>(inst));
    Observation o;
    for (double& x : o) x = u(rng);
    const auto d = forward(p, o);
    const std::array<double, 2> a{d.mean[0] + d.std[0] * u(rng), d.mean[1] + d.std[1] * u(rng)};
    const Eigen::VectorXd g = grad_log_prob(p, o, a);
    const Eigen::VectorXd theta = p.flatten();
    REQUIRE(g.size() == theta.size());
    const double eps = 1e-5;
    PolicyParameters q = p;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      // Perturb one coordinate in place.
      double& x = param_ref(q, k);
      x = theta[k] + eps;
      const double up = log_prob(q, o, a);
      x = theta[k] - eps;
      const double down = log_prob(q, o, a);
      x = theta[k];
      const double fd = (up - down) / (2 * eps);
      const double rel = std::abs(g[k] - fd) / std::max({std::abs(fd), std::abs(g[k]), 1e-3});
      worst = std::max(worst, rel);
    }
    CHECK(q.flatten() == theta);
  }
  MESSAGE("max relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("log_std gradient at the mode") {
  const auto p = PolicyParameters::zeros(PolicyParameters::default_sizes());
  const Observation o = wave_obs();
  const Eigen::VectorXd g = grad_log_prob(p, o, std::array<double, 2>{0.0, 0.0});
  CHECK(g[g.size() - 2] == doctest::Approx(-1.0));
  CHECK(g[g.size() - 1] == doctest::Approx(-1.0));
}

TEST_CASE("sampling statistics") {
  auto p = PolicyParameters::zeros(PolicyParameters::default_sizes());
  p.layers.back().bias << 0.5, -0.3;
  p.log_std << std::log(0.6), std::log(1.2);
  const Observation o = wave_obs();
  Rng rng(5);
  const int n = 100000;
  double s[2] = {0, 0}, sq[2] = {0, 0};
  for (int k = 0; k < n; ++k) {
    const Action a = sample_action(p, o, rng);
    for (int j = 0; j < 2; ++j) {
      s[j] += a[static_cast<std::size_t>(j)];
      sq[j] += a[static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(j)];
    }
  }
  const double mu[2] = {0.5, -0.3}, sd[2] = {0.6, 1.2};
  for (int j = 0; j < 2; ++j) {
    const double m = s[j] / n;
    CHECK(std::abs(m - mu[j]) < 0.01 * sd[j]);
    CHECK(std::sqrt(sq[j] / n - m * m) == doctest::Approx(sd[j]).epsilon(0.01));
  }
  const Action mean = mean_action(p, o);
  CHECK(mean[0] == 0.5);
  CHECK(mean[1] == -0.3);
}

TEST_CASE("outputs stay finite at the box corners") {
  auto p = random_policy(9);
  for (auto& l : p.layers) l.weight *= 50.0;
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.5);
  for (int k = 0; k < 200; ++k) {
    Observation o;
    for (double& x : o) x = coin(rng) ? 1.0 : -1.0;
    const auto d = forward(p, o);
    CHECK(std::isfinite(d.mean[0]));
    CHECK(std::isfinite(d.mean[1]));
    const Eigen::VectorXd g = grad_log_prob(p, o, std::array<double, 2>{0.0, 0.0});
    CHECK(g.allFinite());
  }
}

TEST_CASE("save and load are bit-exact") {
  const auto p = random_policy(11);
  const auto path = temp_path("roundtrip.bin");
  save_policy(p, path);
  const auto q = load_policy(path);
  CHECK(q.bit_equal(p));
  CHECK(encode_policy(q) == encode_policy(p));
  fs::remove(path);
}

TEST_CASE("malformed files are rejected") {
  const auto bytes = encode_policy(random_policy(12, {3, 4, 2}));
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_policy(b);
    } catch (const PolicyFormatError& e) {
      return e.kind();
    }
    FAIL("decoded a malformed file");
    return PolicyFormatError::Kind::Io;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == PolicyFormatError::Kind::BadMagic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(kind_of(bad_version) == PolicyFormatError::Kind::BadVersion);
  CHECK(kind_of({bytes.begin(), bytes.begin() + 40}) == PolicyFormatError::Kind::Truncated);
  auto flipped = bytes;
  flipped[30] ^= 0x01;
  CHECK(kind_of(flipped) == PolicyFormatError::Kind::Checksum);
  auto longer = bytes;
  longer.push_back(0);
  CHECK(kind_of(longer) == PolicyFormatError::Kind::TrailingData);
  auto shape = bytes;
  shape[8] = 0;  // zero layers
  CHECK(kind_of(shape) == PolicyFormatError::Kind::ShapeMismatch);

  try {
    load_policy(temp_path("does_not_exist.bin"));
    FAIL("loaded a missing file");
  } catch (const PolicyFormatError& e) {
    CHECK(e.kind() == PolicyFormatError::Kind::Io);
  }
}

TEST_CASE("committed byte fixture") {
  const auto fixture = read_bytes(kFixture);
  REQUIRE(fixture.size() == 128);
  const auto p = load_policy(kFixture);
  CHECK(p.bit_equal(tiny_policy()));
  CHECK(encode_policy(tiny_policy()) == fixture);

  // Hand-evaluated forward pass of the fixture network.
  const std::vector<double> x{0.1, -0.2, 0.3};
  const double h0 = std::tanh(0.5 * 0.1 + 1.25 * 0.2 + 2.0 * 0.3 + 0.25);
  const double h1 = std::tanh(-0.75 * 0.2 - 0.125 * 0.3 - 0.5);
  const auto d = forward(p, x);
  CHECK(d.mean[0] == doctest::Approx(1.5 * h0 - 2.0 * h1 + 0.0625).epsilon(1e-15));
  CHECK(d.std[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
}
