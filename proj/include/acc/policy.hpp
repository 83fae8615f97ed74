#pragma once

// Policies over box-bounded actions and the learned entropy temperature.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "acc/envs.hpp"
#include "acc/nn.hpp"

namespace acc {

enum class ActMode { explore, evaluate };

/// Tanh-squashed diagonal Gaussian. The trunk emits [mean; log_std] per action
/// dimension; log_std is clamped to [-20, 2].
class StochasticPolicy {
 public:
  static constexpr double log_std_min = -20.0;
  static constexpr double log_std_max = 2.0;

  /// Everything backward() needs from a sampling pass.
  struct Sample {
    Matrix actions;    // A x B
    Vector log_probs;  // B
    Matrix mean;
    Matrix log_std;  // after clamping
    Matrix clamp_mask;  // 1 where log_std was inside the clamp range
    Matrix noise;
    Matrix tanh_u;
    DenseNet::Cache cache;
  };

  StochasticPolicy() = default;

  StochasticPolicy(const EnvSpec& env, const std::vector<Index>& hidden, Rng& rng, double lr = 3e-4)
      : center_(0.5 * (env.action_high + env.action_low)), half_(0.5 * (env.action_high - env.action_low)) {
    std::vector<Index> widths{env.state_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(2 * env.action_dim);
    net_ = DenseNet::initialized(widths, Activation::relu, Activation::linear, rng);
    adam_ = AdamState(net_.num_params(), lr);
  }

  Index action_dim() const noexcept { return center_.size(); }
  DenseNet& net() noexcept { return net_; }
  const DenseNet& net() const noexcept { return net_; }
  AdamState& optimizer() noexcept { return adam_; }
  const Vector& action_center() const noexcept { return center_; }
  const Vector& action_half_range() const noexcept { return half_; }

  /// Reparameterized sample with externally supplied standard-normal noise (A x B).
  Sample sample_with_noise(const Matrix& states, const Matrix& noise) const {
    const Index a_dim = action_dim();
    Sample s;
    const Matrix out = net_.forward(states, s.cache);
    s.mean = out.topRows(a_dim);
    const Matrix raw = out.bottomRows(a_dim);
    s.log_std = raw.cwiseMax(log_std_min).cwiseMin(log_std_max);
    s.clamp_mask = ((raw.array() >= log_std_min) && (raw.array() <= log_std_max)).cast<double>();
    s.noise = noise;
    const Matrix u = s.mean + (s.log_std.array().exp() * noise.array()).matrix();
    s.tanh_u = u.array().tanh();
    s.actions = (s.tanh_u.array().colwise() * half_.array()).colwise() + center_.array();

    constexpr double half_log_2pi = 0.91893853320467274178;
    const double log_half_sum = half_.array().log().sum();
    s.log_probs.resize(states.cols());
    for (Index j = 0; j < states.cols(); ++j) {
      double lp = -log_half_sum;
      for (Index i = 0; i < a_dim; ++i) {
        const double e = noise(i, j);
        lp += -0.5 * e * e - s.log_std(i, j) - half_log_2pi - log1m_tanh_sq(u(i, j));
      }
      s.log_probs(j) = lp;
    }
    return s;
  }

  Sample sample(const Matrix& states, Rng& rng) const {
    std::normal_distribution<double> n01;
    Matrix noise(action_dim(), states.cols());
    for (Index j = 0; j < noise.cols(); ++j)
      for (Index i = 0; i < noise.rows(); ++i) noise(i, j) = n01(rng);
    return sample_with_noise(states, noise);
  }

  /// Squashed mean action.
  Matrix deterministic(const Matrix& states) const {
    const Matrix out = net_.forward(states);
    return (out.topRows(action_dim()).array().tanh().colwise() * half_.array()).colwise() + center_.array();
  }

  /// Accumulates dLoss/dparams given dLoss/dactions (A x B) and dLoss/dlog_probs (B),
  /// with the noise held fixed.
  void backward(const Sample& s, const Matrix& d_actions, const Vector& d_log_probs, Vector& grad) const {
    const Index a_dim = action_dim();
    const Index b = s.actions.cols();
    Matrix upstream(2 * a_dim, b);
    for (Index j = 0; j < b; ++j) {
      for (Index i = 0; i < a_dim; ++i) {
        const double t = s.tanh_u(i, j);
        const double g_u = d_actions(i, j) * half_(i) * (1.0 - t * t) + d_log_probs(j) * 2.0 * t;
        const double sigma = std::exp(s.log_std(i, j));
        upstream(i, j) = g_u;
        upstream(a_dim + i, j) = (g_u * sigma * s.noise(i, j) - d_log_probs(j)) * s.clamp_mask(i, j);
      }
    }
    net_.backward(s.cache, upstream, grad);
  }

 private:
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  static double log1m_tanh_sq(double u) {
    const double x = -2.0 * u;
    const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return 2.0 * (std::numbers::ln2 - u - softplus);
  }

  DenseNet net_;
  AdamState adam_;
  Vector center_;
  Vector half_;
};

/// Learned entropy weight alpha = exp(log_alpha), tuned toward a target entropy.
struct TemperatureState {
  double log_alpha = 0.0;
  double target_entropy = 0.0;
  AdamState adam;

  TemperatureState() : adam(1) {}
  TemperatureState(double target, double lr, double init_log_alpha = 0.0)
      : log_alpha(init_log_alpha), target_entropy(target), adam(1, lr) {}

  double alpha() const { return std::exp(log_alpha); }

  /// Loss -log_alpha * (mean log pi + target). Returns the loss before the step.
  /// Entropy (-mean log pi) below target raises alpha.
  double update(double mean_log_prob) {
    const double gap = mean_log_prob + target_entropy;
    Vector p(1), g(1);
    p << log_alpha;
    g << -gap;
    adam_step(adam, p, g);
    const double loss = -log_alpha * gap;
    log_alpha = p(0);
    return loss;
  }
};

/// Tanh head scaled to the action box.
class DeterministicPolicy {
 public:
  DeterministicPolicy() = default;

  DeterministicPolicy(const EnvSpec& env, const std::vector<Index>& hidden, Rng& rng, double lr = 3e-4)
      : center_(0.5 * (env.action_high + env.action_low)), half_(0.5 * (env.action_high - env.action_low)) {
    std::vector<Index> widths{env.state_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(env.action_dim);
    net_ = DenseNet::initialized(widths, Activation::relu, Activation::tanh, rng);
    target_ = net_;
    adam_ = AdamState(net_.num_params(), lr);
  }

  Index action_dim() const noexcept { return center_.size(); }
  DenseNet& net() noexcept { return net_; }
  const DenseNet& net() const noexcept { return net_; }
  DenseNet& target() noexcept { return target_; }
  const DenseNet& target() const noexcept { return target_; }
  AdamState& optimizer() noexcept { return adam_; }
  const Vector& action_center() const noexcept { return center_; }
  const Vector& action_half_range() const noexcept { return half_; }

  Matrix scale(const Matrix& squashed) const {
    return (squashed.array().colwise() * half_.array()).colwise() + center_.array();
  }
  Matrix clip(const Matrix& actions) const {
    const Vector lo = center_ - half_;
    const Vector hi = center_ + half_;
    return actions.cwiseMax(lo.replicate(1, actions.cols())).cwiseMin(hi.replicate(1, actions.cols()));
  }

  Matrix act(const Matrix& states) const { return scale(net_.forward(states)); }
  Matrix act(const Matrix& states, DenseNet::Cache& cache) const { return scale(net_.forward(states, cache)); }
  Matrix act_target(const Matrix& states) const { return scale(target_.forward(states)); }

  void backward(const DenseNet::Cache& cache, const Matrix& d_actions, Vector& grad) const {
    net_.backward(cache, (d_actions.array().colwise() * half_.array()).matrix(), grad);
  }

 private:
  DenseNet net_;
  DenseNet target_;
  AdamState adam_;
  Vector center_;
  Vector half_;
};

}  // namespace acc
