#pragma once

// Offline evaluation: interquartile mean, stratified bootstrap intervals,
// normalized value error of on-policy estimates, and a Monte-Carlo check of the
// clamped-mean estimator's unbiasedness.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "acc/calibrator.hpp"
#include "acc/errors.hpp"
#include "acc/rng.hpp"

namespace acc {

/// Mean of the middle 50%: floor(n/4) values are discarded from each end.
inline double iqm(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("iqm: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t cut = v.size() / 4;
  double sum = 0.0;
  for (std::size_t i = cut; i < v.size() - cut; ++i) sum += v[i];
  return sum / static_cast<double>(v.size() - 2 * cut);
}

/// Score relative to a task's best (and worst) score in the run set: x / best
/// when best > 0, otherwise min-max scaled to [0, 1].
inline double normalize_score(double x, double best, double worst) {
  if (best > 0.0) return x / best;
  return best > worst ? (x - worst) / (best - worst) : 1.0;
}

/// runs x tasks x eval-points. Every task has the same number of runs.
class ScoreMatrix {
 public:
  ScoreMatrix(int runs, int tasks, int points)
      : runs_(runs), tasks_(tasks), points_(points), data_(static_cast<std::size_t>(runs * tasks * points), 0.0) {
    if (runs < 1 || tasks < 1 || points < 1) throw ArgumentError("ScoreMatrix: all dimensions must be positive");
  }

  int runs() const noexcept { return runs_; }
  int tasks() const noexcept { return tasks_; }
  int points() const noexcept { return points_; }

  double& at(int run, int task, int point) { return data_[index(run, task, point)]; }
  double at(int run, int task, int point) const { return data_[index(run, task, point)]; }

  /// All run x task scores at one eval point.
  std::vector<double> column(int point) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(runs_ * tasks_));
    for (int t = 0; t < tasks_; ++t)
      for (int r = 0; r < runs_; ++r) out.push_back(at(r, t, point));
    return out;
  }

  /// Divides each task by its best score over all runs and points. When a
  /// task's best score is not positive the ratio is meaningless, and the task
  /// is min-max scaled to [0, 1] instead. Scores are relative to this run set.
  ScoreMatrix normalized() const {
    ScoreMatrix out = *this;
    for (int t = 0; t < tasks_; ++t) {
      double best = -INFINITY, worst = INFINITY;
      for (int r = 0; r < runs_; ++r)
        for (int p = 0; p < points_; ++p) {
          best = std::max(best, at(r, t, p));
          worst = std::min(worst, at(r, t, p));
        }
      for (int r = 0; r < runs_; ++r)
        for (int p = 0; p < points_; ++p) {
          double& x = out.at(r, t, p);
          x = normalize_score(x, best, worst);
        }
    }
    return out;
  }

 private:
  std::size_t index(int run, int task, int point) const {
    if (run < 0 || run >= runs_ || task < 0 || task >= tasks_ || point < 0 || point >= points_)
      throw ArgumentError("ScoreMatrix: index out of range");
    return (static_cast<std::size_t>(run) * tasks_ + task) * points_ + point;
  }

  int runs_;
  int tasks_;
  int points_;
  std::vector<double> data_;
};

struct Interval {
  double point = 0.0;  // statistic on the original data
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate = false;  // a single run per task cannot be resampled meaningfully
};

/// Linear-interpolated empirical quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ArgumentError("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const auto j = std::min(i + 1, sorted.size() - 1);
  return sorted[i] + (pos - static_cast<double>(i)) * (sorted[j] - sorted[i]);
}

using Statistic = std::function<double(std::span<const double>)>;

/// Pointwise percentile intervals. Each resample draws runs with replacement
/// independently within every task; the same draw is used at all eval points.
inline std::vector<Interval> stratified_bootstrap_ci(const ScoreMatrix& scores, const Statistic& statistic,
                                                     int n_resamples, double level, Rng& rng) {
  if (n_resamples < 100) throw ArgumentError("stratified_bootstrap_ci: need at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("stratified_bootstrap_ci: level must be in (0, 1)");
  const int runs = scores.runs(), tasks = scores.tasks(), points = scores.points();

  std::vector<std::vector<double>> draws(static_cast<std::size_t>(points));
  for (auto& d : draws) d.reserve(static_cast<std::size_t>(n_resamples));
  std::uniform_int_distribution<int> pick(0, runs - 1);
  std::vector<int> idx(static_cast<std::size_t>(runs * tasks));
  std::vector<double> buf(static_cast<std::size_t>(runs * tasks));
  for (int s = 0; s < n_resamples; ++s) {
    for (auto& i : idx) i = pick(rng);
    for (int p = 0; p < points; ++p) {
      for (int t = 0; t < tasks; ++t)
        for (int r = 0; r < runs; ++r)
          buf[static_cast<std::size_t>(t * runs + r)] = scores.at(idx[static_cast<std::size_t>(t * runs + r)], t, p);
      draws[static_cast<std::size_t>(p)].push_back(statistic(buf));
    }
  }

  std::vector<Interval> out(static_cast<std::size_t>(points));
  const double tail = 0.5 * (1.0 - level);
  for (int p = 0; p < points; ++p) {
    auto& d = draws[static_cast<std::size_t>(p)];
    std::sort(d.begin(), d.end());
    auto& iv = out[static_cast<std::size_t>(p)];
    iv.point = statistic(scores.column(p));
    iv.lo = sorted_quantile(d, tail);
    iv.hi = sorted_quantile(d, 1.0 - tail);
    iv.degenerate = runs < 2;
  }
  return out;
}

/// A value estimate taken when the action was chosen, paired with the return
/// that followed it.
struct ValuePair {
  long env_step = 0;
  double estimate = 0.0;
  double ret = 0.0;
  bool timeout_episode = false;
  int steps_to_end = 0;  // 0 for the episode's last step
};

struct BiasPoint {
  long env_step = 0;  // end of the window
  double error = 0.0;
  std::size_t count = 0;
};

/// Mean of |estimate - R| / max(|R|, eps) over windows (k*W, (k+1)*W] of env
/// steps. The last `exclude_last` steps of timed-out episodes are dropped;
/// empty windows are skipped.
inline std::vector<BiasPoint> value_bias_curve(std::span<const ValuePair> pairs, long window = 1000,
                                               int exclude_last = 100, double eps = 1e-6) {
  if (window < 1) throw ArgumentError("value_bias_curve: window must be positive");
  std::vector<BiasPoint> out;
  std::vector<double> sum;
  std::vector<std::size_t> count;
  for (const auto& p : pairs) {
    if (p.timeout_episode && p.steps_to_end < exclude_last) continue;
    if (p.env_step < 1) continue;
    const auto w = static_cast<std::size_t>((p.env_step - 1) / window);
    if (w >= sum.size()) {
      sum.resize(w + 1, 0.0);
      count.resize(w + 1, 0);
    }
    sum[w] += std::abs(p.estimate - p.ret) / std::max(std::abs(p.ret), eps);
    ++count[w];
  }
  for (std::size_t w = 0; w < sum.size(); ++w)
    if (count[w] > 0) out.push_back({static_cast<long>(w + 1) * window, sum[w] / static_cast<double>(count[w]), count[w]});
  return out;
}

struct MonteCarloBias {
  double bias = 0.0;
  double std_error = 0.0;
  double mean_estimate = 0.0;
  long trials = 0;
};

/// Draws one return per trial, picks beta* for the linear family
/// Q_beta = q_min + beta * (q_max - q_min) on [0, 1], and averages Q_{beta*}.
/// Under a symmetric return distribution with bounds equidistant from the mean
/// the bias is zero in expectation.
template <class Sampler>
MonteCarloBias theorem1_mc(Sampler&& sample, double true_mean, double q_min, double q_max, long n_trials, Rng& rng) {
  if (!(q_min <= true_mean && true_mean <= q_max)) throw ArgumentError("theorem1_mc: need q_min <= Q <= q_max");
  if (n_trials < 2) throw ArgumentError("theorem1_mc: need at least two trials");
  const auto family = [&](double beta) { return q_min + beta * (q_max - q_min); };
  double mean = 0.0, m2 = 0.0;
  for (long i = 0; i < n_trials; ++i) {
    const double r = sample(rng);
    const double est = family(beta_star(std::span<const double>(&r, 1), family, 0.0, 1.0));
    const double delta = est - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (est - mean);
  }
  MonteCarloBias out;
  out.trials = n_trials;
  out.mean_estimate = mean;
  out.bias = mean - true_mean;
  out.std_error = std::sqrt(m2 / static_cast<double>(n_trials - 1) / static_cast<double>(n_trials));
  return out;
}

/// Centered moving average for plotting; shrinks at the edges.
inline std::vector<double> uniform_filter(std::span<const double> values, int size) {
  if (size < 1) throw ArgumentError("uniform_filter: size must be positive");
  std::vector<double> out(values.size());
  const long half = size / 2;
  const long n = static_cast<long>(values.size());
  for (long i = 0; i < n; ++i) {
    const long lo = std::max(0L, i - half), hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (long j = lo; j <= hi; ++j) s += values[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace acc
