#pragma once

// Adaptive bias calibration from on-policy returns.
//
// A bias-controlling parameter beta in [beta_min, beta_max] selects a member of a
// family of value estimators that increases monotonically in beta. After each
// finished episode, once enough steps have passed, the signed residual sum
// C = sum (Q(s,a) - R(s,a)) over recent on-policy records nudges beta:
//
//   ma   <- (1 - tau_d) * ma + tau_d * |C|
//   beta <- clip(beta - lr * C / ma, beta_min, beta_max)
//
// For truncated quantile critics beta = d_max - d, so overestimation (C > 0)
// raises the number d of dropped targets.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <span>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "acc/errors.hpp"

namespace acc {

/// R_t = r_t (+ bonus_t) + gamma * R_{t+1}, accumulated backwards from the episode end.
inline std::vector<double> discounted_returns(std::span<const double> rewards, std::span<const double> entropy_bonuses,
                                              double gamma, bool include_entropy) {
  if (include_entropy && entropy_bonuses.size() != rewards.size())
    throw ArgumentError("discounted_returns: rewards and entropy bonuses differ in length");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ArgumentError("discounted_returns: gamma must be in [0, 1]");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + (include_entropy ? entropy_bonuses[t] : 0.0) + gamma * acc;
    out[t] = acc;
  }
  return out;
}

inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  return discounted_returns(rewards, {}, gamma, false);
}

struct EpisodeReturnRecord {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double ret = 0.0;  // discounted return-to-go
  long episode_id = 0;
  int step = 0;
};

struct CalibratorConfig {
  double beta_min = 0.0;
  double beta_max = 5.0;
  double beta_init = 2.5;
  double lr = 0.1;               // step size for beta
  long min_steps_between = 1000;  // T_d
  long warmup_steps = 25000;      // T_d^init
  std::size_t batch_cap = 5000;   // S_R
  double ma_rate = 0.05;          // tau_d
  int timeout_exclude = 0;        // trailing steps of timed-out episodes left out of the batch

  /// Truncated quantile critics: beta in [0, d_max], d = d_max - beta.
  static CalibratorConfig for_truncation(double d_init, double d_max) {
    CalibratorConfig c;
    c.beta_min = 0.0;
    c.beta_max = d_max;
    c.beta_init = d_max - d_init;
    return c;
  }
};

/// One row of the calibrator trace.
struct CalibrationUpdate {
  long env_step = 0;
  double residual_sum = 0.0;  // C
  double ma = 0.0;
  double beta = 0.0;
  std::size_t batch_size = 0;  // |B_R| used for this update, before pruning
};

struct UpdateOutcome {
  bool did_update = false;
  bool empty_batch = false;  // schedule fired but there was nothing to compare against
  CalibrationUpdate row;
};

class Calibrator {
 public:
  Calibrator() : Calibrator(CalibratorConfig{}) {}

  explicit Calibrator(const CalibratorConfig& cfg) : cfg_(cfg), beta_(cfg.beta_init) {
    if (!(cfg.beta_min <= cfg.beta_max)) throw ConfigError("calibrator: beta_min exceeds beta_max");
    if (cfg.beta_init < cfg.beta_min || cfg.beta_init > cfg.beta_max)
      throw ConfigError("calibrator: initial beta outside its bounds");
    if (!(cfg.ma_rate > 0.0 && cfg.ma_rate <= 1.0)) throw ConfigError("calibrator: moving-average rate must be in (0, 1]");
    if (cfg.lr < 0.0) throw ConfigError("calibrator: step size must be non-negative");
    if (cfg.min_steps_between < 0 || cfg.warmup_steps < 0 || cfg.timeout_exclude < 0)
      throw ConfigError("calibrator: step counts must be non-negative");
  }

  const CalibratorConfig& config() const noexcept { return cfg_; }
  double beta() const noexcept { return beta_; }
  /// Dropped targets per network when beta = d_max - d.
  double d() const noexcept { return cfg_.beta_max - beta_; }
  double ma() const noexcept { return ma_; }
  bool ma_initialized() const noexcept { return ma_init_; }
  long steps_since_update() const noexcept { return t_d_; }
  long updates() const noexcept { return updates_; }

  std::size_t batch_size() const noexcept { return record_count_; }
  const std::deque<std::vector<EpisodeReturnRecord>>& episodes() const noexcept { return episodes_; }

  void tick(long env_steps = 1) noexcept { t_d_ += env_steps; }

  /// Appends one finished episode. No pruning happens here.
  void record_episode(std::vector<EpisodeReturnRecord> records, bool timed_out = false) {
    if (timed_out && cfg_.timeout_exclude > 0) {
      const auto drop = std::min<std::size_t>(records.size(), static_cast<std::size_t>(cfg_.timeout_exclude));
      records.resize(records.size() - drop);
    }
    if (records.empty()) return;
    for (const auto& r : records)
      if (!std::isfinite(r.ret)) throw ArgumentError("record_episode: non-finite return");
    record_count_ += records.size();
    episodes_.push_back(std::move(records));
  }

  bool due(long total_env_steps) const noexcept {
    return t_d_ >= cfg_.min_steps_between && total_env_steps > cfg_.warmup_steps;
  }

  /// Call at episode boundaries. `estimator` is either
  ///   std::vector<double>(std::span<const EpisodeReturnRecord>)   (batched) or
  ///   double(const Eigen::VectorXd& state, const Eigen::VectorXd& action).
  template <class Estimator>
  UpdateOutcome maybe_update(Estimator&& estimator, long total_env_steps) {
    UpdateOutcome out;
    if (!due(total_env_steps)) return out;
    if (record_count_ == 0) {
      out.empty_batch = true;
      return out;
    }

    double c = 0.0;
    for (const auto& ep : episodes_) {
      const std::span<const EpisodeReturnRecord> view(ep);
      if constexpr (std::is_invocable_r_v<std::vector<double>, Estimator&, std::span<const EpisodeReturnRecord>>) {
        const std::vector<double> q = estimator(view);
        if (q.size() != ep.size()) throw ArgumentError("maybe_update: estimator returned the wrong number of values");
        for (std::size_t i = 0; i < ep.size(); ++i) c += q[i] - ep[i].ret;
      } else {
        for (const auto& r : ep) c += static_cast<double>(estimator(r.state, r.action)) - r.ret;
      }
    }
    if (!std::isfinite(c)) throw TrainingAborted("calibrator: non-finite residual sum");

    if (!ma_init_) {
      ma_ = std::abs(c);
      ma_init_ = true;
    } else {
      ma_ = (1.0 - cfg_.ma_rate) * ma_ + cfg_.ma_rate * std::abs(c);
    }
    const double step = ma_ > 0.0 ? cfg_.lr * c / ma_ : 0.0;
    beta_ = std::clamp(beta_ - step, cfg_.beta_min, cfg_.beta_max);

    out.did_update = true;
    out.row = {total_env_steps, c, ma_, beta_, record_count_};
    t_d_ = 0;
    ++updates_;
    prune();
    return out;
  }

  /// Pins beta, e.g. to disable adaptation while keeping the bookkeeping.
  void set_beta(double beta) {
    if (beta < cfg_.beta_min || beta > cfg_.beta_max) throw ArgumentError("set_beta: outside bounds");
    beta_ = beta;
  }

 private:
  // Oldest episodes go first; the most recent episode always stays.
  void prune() {
    while (record_count_ > cfg_.batch_cap && episodes_.size() > 1) {
      record_count_ -= episodes_.front().size();
      episodes_.pop_front();
    }
  }

  CalibratorConfig cfg_;
  double beta_ = 0.0;
  double ma_ = 0.0;
  bool ma_init_ = false;
  long t_d_ = 0;
  long updates_ = 0;
  std::size_t record_count_ = 0;
  std::deque<std::vector<EpisodeReturnRecord>> episodes_;
};

/// Generic monotone family around any value estimate: beta * |q| / K + q.
inline double generic_qbeta(double q_hat, double beta, double k = 100.0) {
  if (!(k > 0.0)) throw ArgumentError("generic_qbeta: K must be positive");
  return beta * std::abs(q_hat) / k + q_hat;
}

/// argmin over beta in [beta_min, beta_max] of |Q_beta - mean(samples)| for a
/// continuous family increasing in beta. Bisection to a bracket width of `tol`.
template <class Family>
double beta_star(std::span<const double> samples, Family&& q_family, double beta_min, double beta_max,
                 double tol = 1e-10) {
  if (samples.empty()) throw ArgumentError("beta_star: no samples");
  if (!(beta_min <= beta_max)) throw ArgumentError("beta_star: empty interval");
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());

  if (mean <= q_family(beta_min)) return beta_min;
  if (mean >= q_family(beta_max)) return beta_max;
  double lo = beta_min;
  double hi = beta_max;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (q_family(mid) < mean)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace acc
