#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "trpo_trainer.hpp"

using namespace rampmeter;

namespace {
std::shared_ptr<const RoadNetwork> network() {
  static auto n = std::make_shared<const RoadNetwork>(RoadNetwork::from_geometry({}));
  return n;
}

EnvConfig env_config() {
  EnvConfig c;
  c.network = network();
  return c;
}

// Speed tracking: one AV per entry on a long road, rewarded for holding 8 m/s.
EnvConfig toy_env() {
  EnvConfig c;
  c.network = std::make_shared<const RoadNetwork>(RoadNetwork::from_geometry(GeometrySpec{3000.0, 74.3, 86.6, 80.0}));
  c.sim.scenario.west_platoon = 1;
  c.sim.scenario.north_platoon = 1;
  c.sim.scenario.spawn_period = 0.0;
  c.reward.v_max = 8.0;
  return c;
}

// Near-deterministic policy that keeps the AVs parked: no collisions, full-length episodes.
PolicyParameters parked_policy() {
  auto p = PolicyParameters::zeros(PolicyParameters::default_sizes());
  p.log_std.setConstant(-4.0);
  return p;
}

PolicyParameters random_policy(std::uint64_t seed, const std::vector<int>& sizes) {
  Rng rng(seed);
  auto p = PolicyParameters::glorot(sizes, rng);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& l : p.layers)
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = u(rng);
  for (Eigen::Index k = 0; k < p.log_std.size(); ++k) p.log_std[k] = u(rng);
  return p;
}

SampleMatrix random_samples(std::uint64_t seed, Eigen::Index n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SampleMatrix s;
  s.obs = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(kObsDim), n, [&] { return u(rng); });
  s.actions = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(kActionDim), n, [&] { return u(rng); });
  return s;
}

TrajectoryBatch batch_from(const SampleMatrix& s) {
  TrajectoryBatch b;
  Episode ep;
  for (Eigen::Index i = 0; i < s.obs.cols(); ++i) {
    Observation o;
    for (std::size_t k = 0; k < kObsDim; ++k) o[k] = s.obs(static_cast<Eigen::Index>(k), i);
    ep.observations.push_back(o);
    ep.actions.push_back({s.actions(0, i), s.actions(1, i)});
    ep.rewards.push_back(0.0);
  }
  b.total_steps = ep.size();
  b.episodes.push_back(std::move(ep));
  return b;
}

Eigen::VectorXd normalized(Eigen::VectorXd a) {
  a.array() -= a.mean();
  return a / std::sqrt(a.squaredNorm() / static_cast<double>(a.size()));
}

bool same_batch(const TrajectoryBatch& a, const TrajectoryBatch& b) {
  if (a.total_steps != b.total_steps || a.episodes.size() != b.episodes.size()) return false;
  for (std::size_t e = 0; e < a.episodes.size(); ++e) {
    if (a.episodes[e].rewards != b.episodes[e].rewards) return false;
    if (a.episodes[e].actions != b.episodes[e].actions) return false;
    if (a.episodes[e].observations != b.episodes[e].observations) return false;
  }
  return true;
}
}  // namespace

TEST_CASE("discounted returns") {
  auto g = discounted_returns({1, 1, 1}, 1.0);
  CHECK(g == std::vector<double>{3, 2, 1});
  g = discounted_returns({1, 0, 0}, 0.5);
  CHECK(g == std::vector<double>{1, 0, 0});
  g = discounted_returns(std::vector<double>(500, 1.0), 0.999);
  CHECK(g[0] == doctest::Approx((1 - std::pow(0.999, 500)) / 0.001).epsilon(1e-12));
  CHECK(g[0] == doctest::Approx(393.6).epsilon(1e-3));
}

TEST_CASE("surrogate and KL at identical parameters") {
  const auto p = random_policy(1, PolicyParameters::default_sizes());
  const auto s = random_samples(2, 200);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  const Eigen::VectorXd a = normalized(Eigen::VectorXd::NullaryExpr(200, [&] { return n(rng); }));
  const auto r = surrogate_and_kl(p, p, s, a);
  CHECK(r.surrogate == doctest::Approx(a.mean()).epsilon(1e-12));
  CHECK(std::abs(r.surrogate) < 1e-12);
  CHECK(r.mean_kl == 0.0);
}

TEST_CASE("KL of a doubled standard deviation") {
  const auto p = random_policy(4, PolicyParameters::default_sizes());
  auto q = p;
  q.log_std.array() += std::log(2.0);
  const auto s = random_samples(5, 50);
  const double per_dim = std::log(2.0) + 1.0 / 8.0 - 0.5;
  CHECK(per_dim == doctest::Approx(0.3181).epsilon(1e-4));
  CHECK(surrogate_and_kl(q, p, s, Eigen::VectorXd::Zero(50)).mean_kl == doctest::Approx(2 * per_dim).epsilon(1e-12));
}

TEST_CASE("KL is non-negative") {
  const auto s = random_samples(6, 40);
  for (std::uint64_t k = 0; k < 30; ++k) {
    const auto p = random_policy(100 + k, {54, 8, 2});
    const auto q = random_policy(200 + k, {54, 8, 2});
    CHECK(surrogate_and_kl(q, p, s, Eigen::VectorXd::Zero(40)).mean_kl >= 0.0);
  }
}

TEST_CASE("surrogate gradient matches finite differences") {
  const auto p = random_policy(7, {54, 6, 2});
  const auto s = random_samples(8, 30);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  const Eigen::VectorXd a = Eigen::VectorXd::NullaryExpr(30, [&] { return n(rng); });
  const Eigen::VectorXd g = surrogate_gradient(p, s, a);
  const Eigen::VectorXd theta = p.flatten();
  const double eps = 1e-6;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += eps;
    tm[k] -= eps;
    const double fd =
        (surrogate_and_kl(p.with(tp), p, s, a).surrogate - surrogate_and_kl(p.with(tm), p, s, a).surrogate) / (2 * eps);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("Fisher-vector product matches the finite-difference KL Hessian") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = random_policy(seed, {54, 6, 4, 2});
    const auto s = random_samples(seed + 10, 25);
    std::mt19937_64 rng(seed + 20);
    std::normal_distribution<double> n;
    const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(p.size()), [&] { return n(rng); });
    const Eigen::VectorXd fv = FisherOperator(p, s.obs).apply(v);
    const Eigen::VectorXd theta = p.flatten();
    const double eps = 1e-5;
    const Eigen::VectorXd fd =
        (kl_gradient(p.with(theta + eps * v), p, s.obs) - kl_gradient(p.with(theta - eps * v), p, s.obs)) / (2 * eps);
    CHECK((fv - fd).norm() / fd.norm() < 1e-3);
  }
}

TEST_CASE("KL gradient matches finite differences") {
  const auto p = random_policy(31, {54, 5, 2});
  const auto q = random_policy(32, {54, 5, 2});
  const auto s = random_samples(33, 20);
  const Eigen::VectorXd g = kl_gradient(q, p, s.obs);
  const Eigen::VectorXd theta = q.flatten();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(20);
  const double eps = 1e-6;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += eps;
    tm[k] -= eps;
    const double fd =
        (surrogate_and_kl(q.with(tp), p, s, zero).mean_kl - surrogate_and_kl(q.with(tm), p, s, zero).mean_kl) / (2 * eps);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("conjugate gradient against a dense solve") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n;
  const Eigen::MatrixXd m = Eigen::MatrixXd::NullaryExpr(10, 10, [&] { return n(rng); });
  const Eigen::MatrixXd a = m * m.transpose() + Eigen::MatrixXd::Identity(10, 10);
  const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(10, [&] { return n(rng); });
  const Eigen::VectorXd exact = a.llt().solve(b);
  const Eigen::VectorXd x = conjugate_gradient([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, b, 10);
  CHECK((x - exact).norm() / exact.norm() < 1e-6);
}

TEST_CASE("zero advantages leave the policy unchanged") {
  const auto p = random_policy(51, PolicyParameters::default_sizes());
  const auto s = random_samples(52, 100);
  StepStats st;
  const auto q = trpo_step(p, batch_from(s), Eigen::VectorXd::Zero(100), TrainConfig{}, &st);
  CHECK(q.bit_equal(p));
  CHECK_FALSE(st.accepted);
}

TEST_CASE("non-finite gradient aborts the step") {
  const auto p = random_policy(53, PolicyParameters::default_sizes());
  const auto s = random_samples(54, 20);
  Eigen::VectorXd a = Eigen::VectorXd::Ones(20);
  a[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(trpo_step(p, batch_from(s), a, TrainConfig{}), std::runtime_error);
}

TEST_CASE("accepted steps respect the trust region and improve the surrogate") {
  const auto p = random_policy(61, PolicyParameters::default_sizes());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = random_samples(62 + seed, 300);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    const Eigen::VectorXd a = normalized(Eigen::VectorXd::NullaryExpr(300, [&] { return n(rng); }));
    StepStats st;
    const TrainConfig cfg;
    const auto q = trpo_step(p, batch_from(s), a, cfg, &st);
    REQUIRE(st.accepted);
    const auto r = surrogate_and_kl(q, p, s, a);
    CHECK(r.mean_kl <= 1.5 * cfg.kl_limit);
    CHECK(r.mean_kl == doctest::Approx(st.mean_kl));
    CHECK(r.surrogate > surrogate_and_kl(p, p, s, a).surrogate);
  }
}

TEST_CASE("batch collection") {
  TrainConfig cfg;
  cfg.batch_size = 500;
  cfg.horizon = 500;
  auto b = collect_batch(parked_policy(), env_config(), cfg, 0);
  REQUIRE(b.episodes.size() == 1);
  CHECK(b.total_steps == 500);
  CHECK_FALSE(b.episodes[0].terminated_early);

  cfg.batch_size = 20000;
  b = collect_batch(parked_policy(), env_config(), cfg, 0);
  CHECK(b.episodes.size() >= 40);
  std::size_t sum = 0;
  for (const auto& e : b.episodes) sum += e.size();
  CHECK(sum == b.total_steps);
  CHECK(b.total_steps >= 20000);
}

TEST_CASE("batches are reproducible and independent of the worker count") {
  TrainConfig cfg;
  cfg.batch_size = 1500;
  cfg.horizon = 300;
  cfg.master_seed = 5;
  const auto p = initial_policy(5);
  const auto a = collect_batch(p, env_config(), cfg, 2);
  const auto b = collect_batch(p, env_config(), cfg, 2);
  CHECK(same_batch(a, b));
  cfg.workers = 3;
  CHECK(same_batch(a, collect_batch(p, env_config(), cfg, 2)));
  CHECK_FALSE(same_batch(a, collect_batch(p, env_config(), cfg, 3)));
}

TEST_CASE("fitted baseline reduces advantage variance on held-out episodes") {
  TrainConfig cfg;
  cfg.batch_size = 3000;
  cfg.horizon = 300;
  // Full-length episodes: with early collisions the return is dominated by an unpredictable end time.
  const auto p = parked_policy();
  const auto train_batch = collect_batch(p, env_config(), cfg, 0);
  const auto held_out = collect_batch(p, env_config(), cfg, 1);
  LinearBaseline none(cfg.horizon, cfg.baseline_ridge), fitted(cfg.horizon, cfg.baseline_ridge);
  fitted.fit(train_batch, compute_advantages(train_batch, none, cfg.discount).returns);
  auto variance = [](const Eigen::VectorXd& x) { return (x.array() - x.mean()).square().mean(); };
  const double raw = variance(compute_advantages(held_out, none, cfg.discount, false).advantages);
  const double with = variance(compute_advantages(held_out, fitted, cfg.discount, false).advantages);
  CHECK(with < raw);
  const double in_raw = variance(compute_advantages(train_batch, none, cfg.discount, false).advantages);
  const double in_fit = variance(compute_advantages(train_batch, fitted, cfg.discount, false).advantages);
  CHECK(in_fit < in_raw);
  CHECK(fitted.coefficients().allFinite());
}

TEST_CASE("normalized advantages") {
  TrainConfig cfg;
  cfg.batch_size = 600;
  cfg.horizon = 200;
  const auto b = collect_batch(initial_policy(2), env_config(), cfg, 0);
  const auto a = compute_advantages(b, LinearBaseline(200, 1e-5), cfg.discount);
  CHECK(std::abs(a.advantages.mean()) < 1e-9);
  CHECK((a.advantages.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("configuration checks") {
  TrainConfig cfg;
  cfg.batch_size = 100;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.discount = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.kl_limit = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero iterations return the initial policy") {
  TrainConfig cfg;
  cfg.iterations = 0;
  cfg.master_seed = 8;
  const auto r = train(env_config(), cfg);
  CHECK(r.curve.empty());
  CHECK(r.params.bit_equal(initial_policy(8)));
}

TEST_CASE("training on a toy task improves the return") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.horizon = 100;
    cfg.batch_size = 1000;
    cfg.iterations = 30;
    cfg.master_seed = seed;
    int calls = 0;
    const auto a = train(toy_env(), cfg, [&](const IterationRecord& rec, const PolicyParameters&) {
      ++calls;
      CHECK(rec.iteration == calls);
      if (rec.accepted) CHECK(rec.mean_kl <= 1.5 * cfg.kl_limit);
    });
    REQUIRE(a.curve.size() == 30);
    double first = 0, last = 0;
    for (std::size_t k = 0; k < 10; ++k) {
      first += a.curve[k].mean_return / 10;
      last += a.curve[20 + k].mean_return / 10;
    }
    INFO("seed " << seed << " first " << first << " last " << last);
    CHECK(last - first >= 0.5 * std::abs(first));
  }
}

TEST_CASE("training is reproducible") {
  TrainConfig cfg;
  cfg.horizon = 100;
  cfg.batch_size = 1000;
  cfg.iterations = 5;
  cfg.master_seed = 3;
  const auto a = train(toy_env(), cfg);
  const auto b = train(toy_env(), cfg);
  CHECK(b.params.bit_equal(a.params));
  for (std::size_t k = 0; k < a.curve.size(); ++k) CHECK(a.curve[k].mean_return == b.curve[k].mean_return);
}
