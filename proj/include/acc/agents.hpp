#pragma once

// Update rules for the five agent variants.
//
//   sac        two point critics (one atom each), target = min over both
//   tqc_fixed  truncated quantile critics with a constant d
//   acc_tqc    truncated quantile critics with d driven by the calibrator
//   td3        twin critics, target = min over both
//   acc_td3    twin critics, target = beta * own + (1 - beta) * min, beta calibrated
//
// sac / tqc_fixed / acc_tqc share TqcAgent: the SAC member is N = 2, M = 1 with
// d = 0.5, so round(d * N) = 1 of the two pooled targets is dropped and the
// minimum survives. td3 / acc_td3 share Td3Agent.

#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "acc/critic.hpp"
#include "acc/envs.hpp"
#include "acc/policy.hpp"
#include "acc/replay.hpp"

namespace acc {

enum class AgentVariant { sac, tqc_fixed, acc_tqc, td3, acc_td3 };

inline AgentVariant variant_from_string(const std::string& s) {
  if (s == "sac") return AgentVariant::sac;
  if (s == "tqc_fixed") return AgentVariant::tqc_fixed;
  if (s == "acc_tqc") return AgentVariant::acc_tqc;
  if (s == "td3") return AgentVariant::td3;
  if (s == "acc_td3") return AgentVariant::acc_td3;
  throw ConfigError("unknown agent '" + s + "' (expected sac | tqc_fixed | acc_tqc | td3 | acc_td3)");
}

inline const char* to_string(AgentVariant v) {
  switch (v) {
    case AgentVariant::sac: return "sac";
    case AgentVariant::tqc_fixed: return "tqc_fixed";
    case AgentVariant::acc_tqc: return "acc_tqc";
    case AgentVariant::td3: return "td3";
    case AgentVariant::acc_td3: return "acc_td3";
  }
  return "?";
}

inline bool is_td3_family(AgentVariant v) { return v == AgentVariant::td3 || v == AgentVariant::acc_td3; }
inline bool is_calibrated(AgentVariant v) { return v == AgentVariant::acc_tqc || v == AgentVariant::acc_td3; }

/// Order-sensitive FNV-1a over the raw bytes of parameter vectors.
class Fingerprint {
 public:
  void add(const Vector& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()) * sizeof(double); ++i) {
      h_ ^= p[i];
      h_ *= 1099511628211ull;
    }
  }
  void add(double x) {
    Vector v(1);
    v << x;
    add(v);
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

/// Stacks states over actions, one column per sample.
inline Matrix stack_inputs(const Matrix& states, const Matrix& actions) {
  Matrix x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

inline Matrix records_to_inputs(std::span<const EpisodeReturnRecord> records) {
  if (records.empty()) return {};
  const Index s = records.front().state.size();
  const Index a = records.front().action.size();
  Matrix x(s + a, static_cast<Index>(records.size()));
  for (std::size_t j = 0; j < records.size(); ++j) {
    x.col(static_cast<Index>(j)).head(s) = records[j].state;
    x.col(static_cast<Index>(j)).tail(a) = records[j].action;
  }
  return x;
}

struct TqcSettings {
  int n_critics = 5;
  int n_atoms = 25;
  std::vector<Index> critic_hidden{512, 512, 512};
  std::vector<Index> policy_hidden{256, 256};
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double kappa = 1.0;
  std::optional<double> target_entropy;  // defaults to -dim(A)
};

struct ActorStats {
  double policy_loss = 0.0;
  double temperature_loss = 0.0;
  double entropy = 0.0;  // -mean log pi over the batch
};

/// Entropy-regularized actor with a truncated quantile critic ensemble.
class TqcAgent {
 public:
  TqcAgent(const EnvSpec& env, const TqcSettings& s, Rng& init_rng)
      : settings_(s),
        state_dim_(env.state_dim),
        action_dim_(env.action_dim),
        critic_(s.n_critics, s.n_atoms, env.state_dim + env.action_dim, s.critic_hidden, init_rng, s.lr),
        policy_(env, s.policy_hidden, init_rng, s.lr),
        temperature_(s.target_entropy.value_or(-static_cast<double>(env.action_dim)), s.lr) {}

  const TqcSettings& settings() const noexcept { return settings_; }
  QuantileEnsemble& critic() noexcept { return critic_; }
  const QuantileEnsemble& critic() const noexcept { return critic_; }
  StochasticPolicy& policy() noexcept { return policy_; }
  const StochasticPolicy& policy() const noexcept { return policy_; }
  TemperatureState& temperature() noexcept { return temperature_; }
  const TemperatureState& temperature() const noexcept { return temperature_; }
  double alpha() const { return temperature_.alpha(); }

  /// Explore samples from the policy; evaluate returns the squashed mean.
  /// `log_prob`, when given, receives log pi(a|s) of an explore sample (0 in evaluate mode).
  Vector act(const Vector& state, ActMode mode, Rng& rng, double* log_prob = nullptr) const {
    const Matrix s = state;
    if (mode == ActMode::evaluate) {
      if (log_prob) *log_prob = 0.0;
      return policy_.deterministic(s).col(0);
    }
    const auto smp = policy_.sample(s, rng);
    if (log_prob) *log_prob = smp.log_probs(0);
    return smp.actions.col(0);
  }

  Vector values(const Matrix& states, const Matrix& actions) const {
    return critic_.mean_values(stack_inputs(states, actions));
  }

  /// Pooled, truncated targets for every sample, from a fresh next-action sample.
  std::vector<TargetSet> critic_targets(const Batch& batch, double d, Rng& rng) const {
    const Index b = batch.size();
    const int n = critic_.n_nets();
    const int m = critic_.n_atoms();
    const double alpha = temperature_.alpha();
    const auto next = policy_.sample(batch.next_states, rng);
    const auto next_atoms = critic_.target_atoms(stack_inputs(batch.next_states, next.actions));

    std::vector<TargetSet> targets;
    targets.reserve(static_cast<std::size_t>(b));
    std::vector<double> pooled(static_cast<std::size_t>(n * m));
    for (Index j = 0; j < b; ++j) {
      for (int k = 0; k < n; ++k)
        for (int a = 0; a < m; ++a) pooled[static_cast<std::size_t>(k * m + a)] = next_atoms[k](a, j);
      targets.push_back(build_truncated_targets(pooled, n, batch.rewards(j), settings_.gamma, batch.terminal(j) > 0.5,
                                                alpha * next.log_probs(j), d));
    }
    return targets;
  }

  struct CriticObjective {
    double loss = 0.0;  // batch mean of the quantile Huber loss
    Vector grad;        // with respect to the network's parameters
  };

  /// Loss of critic k against fixed targets, with its parameter gradient.
  CriticObjective critic_objective(int k, const Matrix& input, const std::vector<TargetSet>& targets) const {
    const auto& net = critic_.nets()[static_cast<std::size_t>(k)];
    const Index b = input.cols();
    const int m = critic_.n_atoms();
    if (static_cast<Index>(targets.size()) != b) throw ArgumentError("critic_objective: one target set per sample");
    DenseNet::Cache cache;
    const Matrix atoms = net.forward(input, cache);
    Matrix upstream(m, b);
    CriticObjective out;
    for (Index j = 0; j < b; ++j) {
      const auto q = quantile_huber_loss(std::span<const double>(atoms.col(j).data(), static_cast<std::size_t>(m)),
                                         targets[static_cast<std::size_t>(j)], critic_.fractions(), settings_.kappa);
      upstream.col(j) = q.grad / static_cast<double>(b);
      out.loss += q.loss / static_cast<double>(b);
    }
    out.grad = net.zero_grad();
    net.backward(cache, upstream, out.grad);
    return out;
  }

  /// Quantile Huber regression of every critic onto the pooled, truncated
  /// targets; Adam step on each critic, then Polyak averaging. Returns the mean loss over critics.
  double critic_update(const Batch& batch, double d, Rng& rng) {
    const auto targets = critic_targets(batch, d, rng);
    const Matrix input = stack_inputs(batch.states, batch.actions);
    const int n = critic_.n_nets();
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
      const auto obj = critic_objective(k, input, targets);
      if (!std::isfinite(obj.loss)) throw TrainingAborted("non-finite critic loss");
      adam_step(critic_.optimizers()[static_cast<std::size_t>(k)], critic_.nets()[static_cast<std::size_t>(k)].params(),
                obj.grad);
      total += obj.loss;
    }
    critic_.update_targets(settings_.tau);
    return total / n;
  }

  /// Policy loss E[alpha log pi(a|s) - mean_atoms(s, a)], a reparameterized
  /// sample. Gradients for the policy only; the critic is held fixed.
  struct PolicyObjective {
    double loss = 0.0;
    Vector grad;
    StochasticPolicy::Sample sample;
  };

  PolicyObjective policy_objective(const Matrix& states, const Matrix& noise) const {
    PolicyObjective out;
    out.sample = policy_.sample_with_noise(states, noise);
    const Index b = states.cols();
    const double alpha = temperature_.alpha();
    const Matrix input = stack_inputs(states, out.sample.actions);
    const double w = 1.0 / static_cast<double>(b * critic_.n_nets() * critic_.n_atoms());

    Matrix d_actions = Matrix::Zero(action_dim_, b);
    double q_mean = 0.0;
    for (const auto& net : critic_.nets()) {
      DenseNet::Cache cache;
      const Matrix atoms = net.forward(input, cache);
      q_mean += atoms.sum() * w;
      Vector scratch = net.zero_grad();
      const Matrix d_in = net.backward(cache, Matrix::Constant(atoms.rows(), b, -w), scratch);
      d_actions += d_in.bottomRows(action_dim_);
    }
    out.loss = alpha * out.sample.log_probs.mean() - q_mean;
    out.grad = policy_.net().zero_grad();
    policy_.backward(out.sample, d_actions, Vector::Constant(b, alpha / static_cast<double>(b)), out.grad);
    return out;
  }

  /// One actor step followed by one temperature step.
  ActorStats actor_update(const Batch& batch, Rng& rng) {
    std::normal_distribution<double> n01;
    Matrix noise(action_dim_, batch.size());
    for (Index j = 0; j < noise.cols(); ++j)
      for (Index i = 0; i < noise.rows(); ++i) noise(i, j) = n01(rng);
    auto obj = policy_objective(batch.states, noise);
    if (!std::isfinite(obj.loss) || !obj.sample.log_probs.allFinite()) throw TrainingAborted("non-finite policy loss");
    adam_step(policy_.optimizer(), policy_.net().params(), obj.grad);
    ActorStats st;
    st.policy_loss = obj.loss;
    const double mean_lp = obj.sample.log_probs.mean();
    st.entropy = -mean_lp;
    st.temperature_loss = temperature_.update(mean_lp);
    return st;
  }

  std::uint64_t fingerprint() const {
    Fingerprint f;
    for (const auto& net : critic_.nets()) f.add(net.params());
    for (const auto& net : critic_.targets()) f.add(net.params());
    f.add(policy_.net().params());
    f.add(temperature_.log_alpha);
    return f.value();
  }

  std::vector<NamedNet<double>> named_nets() const {
    std::vector<NamedNet<double>> out;
    for (std::size_t k = 0; k < critic_.nets().size(); ++k) {
      out.push_back({"critic" + std::to_string(k), critic_.nets()[k]});
      out.push_back({"critic_target" + std::to_string(k), critic_.targets()[k]});
    }
    out.push_back({"policy", policy_.net()});
    return out;
  }

 private:
  TqcSettings settings_;
  Index state_dim_;
  Index action_dim_;
  QuantileEnsemble critic_;
  StochasticPolicy policy_;
  TemperatureState temperature_;
};

struct Td3Settings {
  std::vector<Index> critic_hidden{256, 256};
  std::vector<Index> policy_hidden{256, 256};
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double target_noise = 0.2;   // fraction of the action half-range
  double noise_clip = 0.5;     // fraction of the action half-range
  double explore_noise = 0.1;  // fraction of the action half-range
};

/// Per-critic targets r + gamma * (beta * Q_k' + (1 - beta) * min(Q_1', Q_2')).
/// beta = 0 is the clipped double-Q target.
struct TwinTargets {
  double y1 = 0.0;
  double y2 = 0.0;
};

inline TwinTargets td3_targets(double q1, double q2, double reward, double gamma, bool true_terminal, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("td3_targets: beta must be in [0, 1]");
  if (true_terminal) return {reward, reward};
  const double lo = std::min(q1, q2);
  return {reward + gamma * (beta * q1 + (1.0 - beta) * lo), reward + gamma * (beta * q2 + (1.0 - beta) * lo)};
}

/// Twin-critic deterministic policy gradient with delayed actor updates.
class Td3Agent {
 public:
  Td3Agent(const EnvSpec& env, const Td3Settings& s, Rng& init_rng)
      : settings_(s), state_dim_(env.state_dim), action_dim_(env.action_dim) {
    std::vector<Index> widths{env.state_dim + env.action_dim};
    widths.insert(widths.end(), s.critic_hidden.begin(), s.critic_hidden.end());
    widths.push_back(1);
    for (int k = 0; k < 2; ++k) {
      critics_[k] = DenseNet::initialized(widths, Activation::relu, Activation::linear, init_rng);
      targets_[k] = critics_[k];
      optim_[k] = AdamState(critics_[k].num_params(), s.lr);
    }
    policy_ = DeterministicPolicy(env, s.policy_hidden, init_rng, s.lr);
    if (s.policy_delay < 1) throw ConfigError("policy delay must be at least 1");
  }

  const Td3Settings& settings() const noexcept { return settings_; }
  DenseNet& critic(int k) { return critics_[static_cast<std::size_t>(k)]; }
  const DenseNet& critic(int k) const { return critics_[static_cast<std::size_t>(k)]; }
  const DenseNet& critic_target(int k) const { return targets_[static_cast<std::size_t>(k)]; }
  DeterministicPolicy& policy() noexcept { return policy_; }
  const DeterministicPolicy& policy() const noexcept { return policy_; }
  long actor_updates() const noexcept { return actor_updates_; }

  Vector act(const Vector& state, ActMode mode, Rng& rng, double* log_prob = nullptr) const {
    if (log_prob) *log_prob = 0.0;
    Matrix a = policy_.act(Matrix(state));
    if (mode == ActMode::explore) {
      std::normal_distribution<double> n01;
      for (Index i = 0; i < a.rows(); ++i) a(i, 0) += settings_.explore_noise * policy_.action_half_range()(i) * n01(rng);
      a = policy_.clip(a);
    }
    return a.col(0);
  }

  /// Mean of the two online critics.
  Vector values(const Matrix& states, const Matrix& actions) const {
    const Matrix x = stack_inputs(states, actions);
    return 0.5 * (critics_[0].forward(x).row(0) + critics_[1].forward(x).row(0)).transpose();
  }

  /// Squared-error regression of both critics onto the convex-combination
  /// targets. Returns the summed loss.
  double critic_update(const Batch& batch, double beta, Rng& rng) {
    const Index b = batch.size();
    std::normal_distribution<double> n01;
    Matrix next_a = policy_.act_target(batch.next_states);
    const Vector& half = policy_.action_half_range();
    for (Index j = 0; j < b; ++j)
      for (Index i = 0; i < next_a.rows(); ++i) {
        const double limit = settings_.noise_clip * half(i);
        next_a(i, j) += std::clamp(settings_.target_noise * half(i) * n01(rng), -limit, limit);
      }
    next_a = policy_.clip(next_a);
    const Matrix next_in = stack_inputs(batch.next_states, next_a);
    const Matrix q1 = targets_[0].forward(next_in);
    const Matrix q2 = targets_[1].forward(next_in);

    Matrix y(2, b);
    for (Index j = 0; j < b; ++j) {
      const auto t = td3_targets(q1(0, j), q2(0, j), batch.rewards(j), settings_.gamma, batch.terminal(j) > 0.5, beta);
      y(0, j) = t.y1;
      y(1, j) = t.y2;
    }

    const Matrix input = stack_inputs(batch.states, batch.actions);
    double total = 0.0;
    for (int k = 0; k < 2; ++k) {
      auto& net = critics_[static_cast<std::size_t>(k)];
      DenseNet::Cache cache;
      const Matrix q = net.forward(input, cache);
      const Matrix diff = q - y.row(k);
      const double loss = diff.squaredNorm() / static_cast<double>(b);
      if (!std::isfinite(loss)) throw TrainingAborted("non-finite critic loss");
      Vector grad = net.zero_grad();
      net.backward(cache, 2.0 * diff / static_cast<double>(b), grad);
      adam_step(optim_[static_cast<std::size_t>(k)], net.params(), grad);
      total += loss;
    }
    ++pending_;
    return total;
  }

  /// -mean Q_1(s, pi(s)) and its gradient with respect to the policy parameters.
  struct PolicyObjective {
    double loss = 0.0;
    Vector grad;
  };

  PolicyObjective policy_objective(const Matrix& states) const {
    PolicyObjective out;
    DenseNet::Cache pcache;
    const Matrix a = policy_.act(states, pcache);
    const Matrix input = stack_inputs(states, a);
    DenseNet::Cache ccache;
    const Matrix q = critics_[0].forward(input, ccache);
    const double b = static_cast<double>(states.cols());
    out.loss = -q.sum() / b;
    Vector scratch = critics_[0].zero_grad();
    const Matrix d_in = critics_[0].backward(ccache, Matrix::Constant(1, states.cols(), -1.0 / b), scratch);
    out.grad = policy_.net().zero_grad();
    policy_.backward(pcache, d_in.bottomRows(action_dim_), out.grad);
    return out;
  }

  /// Runs once every `policy_delay` critic updates: actor step, then Polyak
  /// averaging of the actor and both critics. Returns the policy loss when it ran.
  std::optional<double> actor_update(const Batch& batch, Rng& /*rng*/) {
    if (pending_ < settings_.policy_delay) return std::nullopt;
    pending_ = 0;
    auto obj = policy_objective(batch.states);
    if (!std::isfinite(obj.loss)) throw TrainingAborted("non-finite policy loss");
    adam_step(policy_.optimizer(), policy_.net().params(), obj.grad);
    polyak_update(policy_.target(), policy_.net(), settings_.tau);
    for (int k = 0; k < 2; ++k) polyak_update(targets_[k], critics_[k], settings_.tau);
    ++actor_updates_;
    return obj.loss;
  }

  std::uint64_t fingerprint() const {
    Fingerprint f;
    for (int k = 0; k < 2; ++k) {
      f.add(critics_[k].params());
      f.add(targets_[k].params());
    }
    f.add(policy_.net().params());
    f.add(policy_.target().params());
    return f.value();
  }

  std::vector<NamedNet<double>> named_nets() const {
    return {{"critic0", critics_[0]},      {"critic1", critics_[1]},         {"critic_target0", targets_[0]},
            {"critic_target1", targets_[1]}, {"policy", policy_.net()}, {"policy_target", policy_.target()}};
  }

 private:
  Td3Settings settings_;
  Index state_dim_;
  Index action_dim_;
  std::array<DenseNet, 2> critics_;
  std::array<DenseNet, 2> targets_;
  std::array<AdamState, 2> optim_;
  DeterministicPolicy policy_;
  int pending_ = 0;
  long actor_updates_ = 0;
};

}  // namespace acc
