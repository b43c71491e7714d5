#include "trpo_trainer.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

#include "rng.hpp"

namespace rampmeter {

void TrainConfig::validate() const {
  if (!(discount > 0 && discount <= 1)) throw std::invalid_argument("train.discount: must be in (0, 1]");
  if (!(kl_limit > 0)) throw std::invalid_argument("train.kl_limit: must be positive");
  if (horizon < 1) throw std::invalid_argument("train.horizon: must be >= 1");
  if (batch_size < horizon) throw std::invalid_argument("train.batch_size: must be >= train.horizon");
  if (iterations < 0) throw std::invalid_argument("train.iterations: must be >= 0");
  if (cg_iters < 1) throw std::invalid_argument("train.cg_iters: must be >= 1");
  if (!(cg_damping >= 0)) throw std::invalid_argument("train.cg_damping: must be >= 0");
  if (!(backtrack_ratio > 0 && backtrack_ratio < 1)) throw std::invalid_argument("train.backtrack_ratio: must be in (0, 1)");
  if (max_backtracks < 1) throw std::invalid_argument("train.max_backtracks: must be >= 1");
  if (!(baseline_ridge > 0)) throw std::invalid_argument("train.baseline_ridge: must be positive");
  if (workers < 1) throw std::invalid_argument("train.workers: must be >= 1");
}

std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t iteration, std::uint64_t episode) {
  auto g = make_stream({master_seed, iteration, episode}, Stream::Init);
  return g();
}

TrajectoryBatch collect_batch(const PolicyParameters& policy, const EnvConfig& env, const TrainConfig& cfg,
                              int iteration) {
  EnvConfig ec = env;
  ec.horizon = cfg.horizon;
  const ActionFn act = stochastic_policy(policy);
  const auto target = static_cast<std::size_t>(cfg.batch_size);
  const int workers = cfg.workers;

  TrajectoryBatch batch;
  std::uint64_t next = 0;
  while (batch.total_steps < target) {
    std::vector<Episode> wave(static_cast<std::size_t>(workers));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto run = [&](int i) {
      try {
        const auto seed = episode_seed(cfg.master_seed, static_cast<std::uint64_t>(iteration), next + static_cast<std::uint64_t>(i));
        wave[static_cast<std::size_t>(i)] = run_episode(act, ec, seed);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    };
    if (workers == 1) {
      run(0);
    } else {
      std::vector<std::thread> threads;
      for (int i = 0; i < workers; ++i) threads.emplace_back(run, i);
      for (auto& t : threads) t.join();
    }
    for (std::size_t i = 0; i < wave.size(); ++i) {
      if (errors[i]) {
        try {
          std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
          throw std::runtime_error("rollout worker failed in iteration " + std::to_string(iteration) +
                                   ", episode " + std::to_string(next + i) + ": " + e.what());
        }
      }
      if (batch.total_steps >= target) break;
      batch.total_steps += wave[i].size();
      batch.episodes.push_back(std::move(wave[i]));
    }
    next += static_cast<std::uint64_t>(workers);
  }
  return batch;
}

std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

Eigen::VectorXd LinearBaseline::features(const Observation& o, std::size_t t, int horizon) {
  constexpr Eigen::Index d = static_cast<Eigen::Index>(kObsDim);
  Eigen::VectorXd f(2 * d + 4);
  for (Eigen::Index k = 0; k < d; ++k) {
    f[k] = o[static_cast<std::size_t>(k)];
    f[d + k] = o[static_cast<std::size_t>(k)] * o[static_cast<std::size_t>(k)];
  }
  const double s = static_cast<double>(t) / static_cast<double>(horizon);
  f[2 * d] = s;
  f[2 * d + 1] = s * s;
  f[2 * d + 2] = s * s * s;
  f[2 * d + 3] = 1.0;
  return f;
}

void LinearBaseline::fit(const TrajectoryBatch& batch, const Eigen::VectorXd& returns) {
  const Eigen::Index n = static_cast<Eigen::Index>(batch.total_steps);
  if (returns.size() != n) throw std::invalid_argument("baseline fit: returns size mismatch");
  const Eigen::Index d = static_cast<Eigen::Index>(2 * kObsDim + 4);
  Eigen::MatrixXd x(n, d);
  Eigen::Index row = 0;
  for (const auto& ep : batch.episodes)
    for (std::size_t t = 0; t < ep.size(); ++t) x.row(row++) = features(ep.observations[t], t, horizon_).transpose();
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd xty = x.transpose() * returns;
  double ridge = ridge_;
  for (int attempt = 0; attempt < 5; ++attempt, ridge *= 10) {
    Eigen::MatrixXd a = xtx;
    a.diagonal().array() += ridge;
    Eigen::VectorXd c = a.ldlt().solve(xty);
    if (c.allFinite()) {
      coef_ = std::move(c);
      return;
    }
  }
  // Singular features: keep the previous fit.
}

std::vector<double> LinearBaseline::predict(const Episode& ep) const {
  std::vector<double> out(ep.size(), 0.0);
  if (!fitted()) return out;
  for (std::size_t t = 0; t < ep.size(); ++t) out[t] = features(ep.observations[t], t, horizon_).dot(coef_);
  return out;
}

Advantages compute_advantages(const TrajectoryBatch& batch, const LinearBaseline& baseline, double gamma,
                              bool normalize) {
  Advantages a;
  const Eigen::Index n = static_cast<Eigen::Index>(batch.total_steps);
  a.returns.resize(n);
  a.advantages.resize(n);
  Eigen::Index k = 0;
  for (const auto& ep : batch.episodes) {
    const auto g = discounted_returns(ep.rewards, gamma);
    const auto b = baseline.predict(ep);
    for (std::size_t t = 0; t < ep.size(); ++t, ++k) {
      a.returns[k] = g[t];
      a.advantages[k] = g[t] - b[t];
    }
  }
  if (normalize && n > 0) {
    const double mean = a.advantages.mean();
    const double var = (a.advantages.array() - mean).square().mean();
    a.advantages = ((a.advantages.array() - mean) / (std::sqrt(var) + 1e-8)).matrix();
  }
  return a;
}

SampleMatrix SampleMatrix::from(const TrajectoryBatch& batch) {
  SampleMatrix s;
  const Eigen::Index n = static_cast<Eigen::Index>(batch.total_steps);
  s.obs.resize(static_cast<Eigen::Index>(kObsDim), n);
  s.actions.resize(static_cast<Eigen::Index>(kActionDim), n);
  Eigen::Index col = 0;
  for (const auto& ep : batch.episodes) {
    for (std::size_t t = 0; t < ep.size(); ++t, ++col) {
      for (std::size_t k = 0; k < kObsDim; ++k) s.obs(static_cast<Eigen::Index>(k), col) = ep.observations[t][k];
      for (std::size_t k = 0; k < kActionDim; ++k) s.actions(static_cast<Eigen::Index>(k), col) = ep.actions[t][k];
    }
  }
  return s;
}

SurrogateKl surrogate_and_kl(const PolicyParameters& params_new, const PolicyParameters& params_old,
                             const SampleMatrix& samples, const Eigen::VectorXd& advantages) {
  const ForwardCache cn = forward_batch(params_new, samples.obs);
  const ForwardCache co = forward_batch(params_old, samples.obs);
  const Eigen::Index n = samples.obs.cols();
  if (advantages.size() != n) throw std::invalid_argument("surrogate: advantages size mismatch");
  const Eigen::Index out = params_new.output_dim();

  Eigen::ArrayXd log_ratio = Eigen::ArrayXd::Zero(n);
  double kl = 0.0;
  for (Eigen::Index k = 0; k < out; ++k) {
    const double ls_n = params_new.log_std[k];
    const double ls_o = params_old.log_std[k];
    const double var_n = std::exp(2.0 * ls_n);
    const double var_o = std::exp(2.0 * ls_o);
    const Eigen::ArrayXd dn = samples.actions.row(k).array() - cn.mean.row(k).array();
    const Eigen::ArrayXd dold = samples.actions.row(k).array() - co.mean.row(k).array();
    log_ratio += (-0.5 * dn.square() / var_n - ls_n) - (-0.5 * dold.square() / var_o - ls_o);
    const Eigen::ArrayXd dmu = co.mean.row(k).array() - cn.mean.row(k).array();
    kl += ((ls_n - ls_o) + (var_o + dmu.square()) / (2.0 * var_n) - 0.5).sum();
  }
  SurrogateKl r;
  r.surrogate = (log_ratio.exp() * advantages.array()).mean();
  r.mean_kl = kl / static_cast<double>(n);
  return r;
}

SurrogateKl surrogate_and_kl(const PolicyParameters& params_new, const PolicyParameters& params_old,
                             const TrajectoryBatch& batch, const Eigen::VectorXd& advantages) {
  return surrogate_and_kl(params_new, params_old, SampleMatrix::from(batch), advantages);
}

Eigen::VectorXd surrogate_gradient(const PolicyParameters& p, const SampleMatrix& samples,
                                   const Eigen::VectorXd& advantages) {
  const ForwardCache c = forward_batch(p, samples.obs);
  const Eigen::Index n = samples.obs.cols();
  const Eigen::Index out = p.output_dim();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd dmean(out, n);
  Eigen::VectorXd dlogstd(out);
  for (Eigen::Index k = 0; k < out; ++k) {
    const double var = std::exp(2.0 * p.log_std[k]);
    const Eigen::ArrayXd diff = samples.actions.row(k).array() - c.mean.row(k).array();
    dmean.row(k) = (advantages.array() * diff / var * inv_n).matrix().transpose();
    dlogstd[k] = (advantages.array() * (diff.square() / var - 1.0)).sum() * inv_n;
  }
  Eigen::VectorXd g = backprop_mean(p, c, dmean);
  g.tail(out) = dlogstd;
  return g;
}

FisherOperator::FisherOperator(const PolicyParameters& p, const Eigen::MatrixXd& obs)
    : p_(p), cache_(forward_batch(p, obs)), inv_var_((-2.0 * p.log_std.array()).exp().matrix()) {}

Eigen::VectorXd FisherOperator::apply(const Eigen::VectorXd& v) const {
  const Eigen::Index n = cache_.input.cols();
  const Eigen::Index out = p_.output_dim();
  Eigen::MatrixXd jv = mean_jvp(p_, cache_, v);
  for (Eigen::Index k = 0; k < out; ++k) jv.row(k) *= inv_var_[k] / static_cast<double>(n);
  Eigen::VectorXd r = backprop_mean(p_, cache_, jv);
  // The Gaussian Fisher block for log-std is 2 I; cross terms vanish.
  r.tail(out) = 2.0 * v.tail(out);
  return r;
}

Eigen::VectorXd kl_gradient(const PolicyParameters& params_new, const PolicyParameters& params_old,
                            const Eigen::MatrixXd& obs) {
  const ForwardCache cn = forward_batch(params_new, obs);
  const ForwardCache co = forward_batch(params_old, obs);
  const Eigen::Index n = obs.cols();
  const Eigen::Index out = params_new.output_dim();
  Eigen::MatrixXd dmean(out, n);
  Eigen::VectorXd dlogstd(out);
  for (Eigen::Index k = 0; k < out; ++k) {
    const double var_n = std::exp(2.0 * params_new.log_std[k]);
    const double var_o = std::exp(2.0 * params_old.log_std[k]);
    const Eigen::ArrayXd dmu = cn.mean.row(k).array() - co.mean.row(k).array();
    dmean.row(k) = (dmu / var_n / static_cast<double>(n)).matrix().transpose();
    dlogstd[k] = (1.0 - (var_o + dmu.square()) / var_n).mean();
  }
  Eigen::VectorXd g = backprop_mean(params_new, cn, dmean);
  g.tail(out) = dlogstd;
  return g;
}

Eigen::VectorXd conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                                   const Eigen::VectorXd& b, int iters, double residual_tol) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = b;
  double rr = r.squaredNorm();
  for (int i = 0; i < iters && rr > residual_tol; ++i) {
    const Eigen::VectorXd ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0)) break;
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return x;
}

PolicyParameters trpo_step(const PolicyParameters& params_old, const TrajectoryBatch& batch,
                           const Eigen::VectorXd& advantages, const TrainConfig& cfg, StepStats* stats) {
  StepStats local;
  StepStats& st = stats ? *stats : local;
  st = {};
  const SampleMatrix samples = SampleMatrix::from(batch);
  if (samples.obs.cols() == 0) throw std::invalid_argument("trpo_step: empty batch");

  const Eigen::VectorXd g = surrogate_gradient(params_old, samples, advantages);
  if (!g.allFinite()) throw std::runtime_error("trpo_step: non-finite policy gradient");
  if (g.squaredNorm() == 0.0) return params_old;

  const FisherOperator fisher(params_old, samples.obs);
  auto damped = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return fisher.apply(v) + cfg.cg_damping * v; };

  Eigen::VectorXd dir = conjugate_gradient(damped, g, cfg.cg_iters);
  double shs = dir.dot(damped(dir));
  if (!dir.allFinite() || !(shs > 0) || !std::isfinite(shs)) {
    st.cg_fallback = true;
    dir = g;
    shs = dir.dot(damped(dir));
    if (!(shs > 0) || !std::isfinite(shs)) return params_old;
  }
  const Eigen::VectorXd full_step = std::sqrt(2.0 * cfg.kl_limit / shs) * dir;
  const Eigen::VectorXd theta0 = params_old.flatten();
  const double surr_old = surrogate_and_kl(params_old, params_old, samples, advantages).surrogate;

  double frac = 1.0;
  for (int k = 0; k < cfg.max_backtracks; ++k, frac *= cfg.backtrack_ratio) {
    const PolicyParameters cand = params_old.with(theta0 + frac * full_step);
    const SurrogateKl sk = surrogate_and_kl(cand, params_old, samples, advantages);
    if (!std::isfinite(sk.surrogate) || !std::isfinite(sk.mean_kl)) continue;
    if (sk.mean_kl <= cfg.kl_limit && sk.surrogate > surr_old) {
      st.accepted = true;
      st.backtracks = k;
      st.mean_kl = sk.mean_kl;
      st.surrogate_gain = sk.surrogate - surr_old;
      return cand;
    }
  }
  st.backtracks = cfg.max_backtracks;
  return params_old;
}

PolicyParameters initial_policy(std::uint64_t master_seed) {
  auto rng = make_stream({master_seed}, Stream::Init);
  return PolicyParameters::glorot(PolicyParameters::default_sizes(), rng);
}

TrainResult train(const EnvConfig& env, const TrainConfig& cfg, const IterationCallback& on_iteration,
                  const PolicyParameters* init) {
  cfg.validate();
  env.validate();
  TrainResult result;
  result.params = init ? *init : initial_policy(cfg.master_seed);
  LinearBaseline baseline(cfg.horizon, cfg.baseline_ridge);

  for (int it = 0; it < cfg.iterations; ++it) {
    const TrajectoryBatch batch = collect_batch(result.params, env, cfg, it);
    const Advantages adv = compute_advantages(batch, baseline, cfg.discount);
    baseline.fit(batch, adv.returns);

    StepStats stats;
    PolicyParameters next = trpo_step(result.params, batch, adv.advantages, cfg, &stats);

    IterationRecord rec;
    rec.iteration = it + 1;
    rec.steps = batch.total_steps;
    rec.episodes = batch.episodes.size();
    rec.accepted = stats.accepted;
    rec.mean_kl = stats.accepted ? stats.mean_kl : 0.0;
    Eigen::ArrayXd totals(static_cast<Eigen::Index>(batch.episodes.size()));
    for (std::size_t e = 0; e < batch.episodes.size(); ++e) {
      double sum = 0.0;
      for (double r : batch.episodes[e].rewards) sum += r;
      totals[static_cast<Eigen::Index>(e)] = sum;
      if (batch.episodes[e].terminated_early) ++rec.collisions;
    }
    rec.mean_return = totals.mean();
    rec.std_return = std::sqrt((totals - rec.mean_return).square().mean());

    result.params = std::move(next);
    result.curve.push_back(rec);
    if (on_iteration) on_iteration(rec, result.params);
  }
  return result;
}

}  // namespace rampmeter
