#pragma once

// Distributional quantile critics: ensemble prediction, pooled-and-truncated
// Bellman targets and the quantile Huber loss.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "acc/errors.hpp"
#include "acc/nn.hpp"

namespace acc {

/// Quantile midpoints tau_m = (2m - 1) / (2M), m = 1..M.
inline std::vector<double> quantile_fractions(int n_atoms) {
  if (n_atoms < 1) throw ArgumentError("quantile_fractions: need at least one atom");
  std::vector<double> taus(static_cast<std::size_t>(n_atoms));
  for (int m = 1; m <= n_atoms; ++m) taus[m - 1] = (2.0 * m - 1.0) / (2.0 * n_atoms);
  return taus;
}

/// Number of pooled targets dropped for a per-network truncation d over N networks.
/// d*N is rounded to the nearest integer with halves rounded up (2.5 * 5 -> 13).
inline int dropped_target_count(double d, int n_nets) {
  if (!(d >= 0.0) || !std::isfinite(d)) throw ArgumentError("truncation d must be finite and non-negative");
  if (n_nets < 1) throw ArgumentError("need at least one network");
  return static_cast<int>(std::floor(d * n_nets + 0.5));
}

struct TargetSet {
  std::vector<double> values;  // ascending
  double reward = 0.0;
  double gamma = 0.0;
  double entropy_term = 0.0;
  bool terminal = false;
};

/// Pools the N*M next-state atoms, drops the round(d*N) largest and maps each
/// kept atom z to r + gamma * (z - entropy_term), or to r on a true terminal.
/// `entropy_term` is alpha * log pi(a'|s'). Timeouts are not terminal.
inline TargetSet build_truncated_targets(std::span<const double> next_atoms, int n_nets, double reward,
                                         double gamma, bool true_terminal, double entropy_term, double d) {
  if (n_nets < 1 || next_atoms.empty() || next_atoms.size() % static_cast<std::size_t>(n_nets) != 0)
    throw ArgumentError("build_truncated_targets: atom count is not a multiple of the network count");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ArgumentError("build_truncated_targets: gamma must be in [0, 1]");
  const auto pooled = next_atoms.size();
  const auto dropped = static_cast<std::size_t>(dropped_target_count(d, n_nets));
  if (dropped >= pooled) throw ArgumentError("build_truncated_targets: truncation leaves no targets");

  TargetSet out;
  out.reward = reward;
  out.gamma = gamma;
  out.entropy_term = entropy_term;
  out.terminal = true_terminal;
  const auto kept = pooled - dropped;
  out.values.assign(next_atoms.begin(), next_atoms.end());
  if (kept < pooled) std::nth_element(out.values.begin(), out.values.begin() + kept, out.values.end());
  out.values.resize(kept);
  std::sort(out.values.begin(), out.values.end());
  for (auto& z : out.values) z = true_terminal ? reward : reward + gamma * (z - entropy_term);
  return out;
}

inline TargetSet build_truncated_targets(const Matrix& next_atoms, double reward, double gamma, bool true_terminal,
                                         double entropy_term, double d) {
  const Matrix copy = next_atoms;  // N x M, any storage order works after pooling
  return build_truncated_targets(std::span<const double>(copy.data(), static_cast<std::size_t>(copy.size())),
                                 static_cast<int>(copy.rows()), reward, gamma, true_terminal, entropy_term, d);
}

struct QuantileLoss {
  double loss = 0.0;
  Vector grad;  // dLoss / dpred_atoms
};

/// Huber loss with threshold kappa.
inline double huber(double u, double kappa = 1.0) {
  const double a = std::abs(u);
  return a <= kappa ? 0.5 * u * u : kappa * (a - 0.5 * kappa);
}

/// L = 1/(K*M) * sum_{m,i} |tau_m - 1(u < 0)| * Huber(u),  u = y_i - theta_m.
inline QuantileLoss quantile_huber_loss(std::span<const double> pred_atoms, std::span<const double> targets,
                                        std::span<const double> fractions, double kappa = 1.0) {
  if (targets.empty()) throw ArgumentError("quantile_huber_loss: empty target set");
  if (pred_atoms.size() != fractions.size()) throw ArgumentError("quantile_huber_loss: fractions do not match atoms");
  const auto n_atoms = pred_atoms.size();
  const double scale = 1.0 / (static_cast<double>(targets.size()) * static_cast<double>(n_atoms));
  QuantileLoss out;
  out.grad = Vector::Zero(static_cast<Index>(n_atoms));
  // Atoms in the inner loop, so the accumulation vectorizes without reordering any sum.
  std::vector<double> acc_loss(n_atoms, 0.0), acc_grad(n_atoms, 0.0), flip(n_atoms);
  for (std::size_t m = 0; m < n_atoms; ++m) flip[m] = 1.0 - 2.0 * fractions[m];
  const double* theta = pred_atoms.data();
  const double* tau = fractions.data();
  double* l = acc_loss.data();
  double* g = acc_grad.data();
  for (double y : targets) {
    for (std::size_t m = 0; m < n_atoms; ++m) {
      const double u = y - theta[m];
      const double w = tau[m] + static_cast<double>(u < 0.0) * flip[m];  // |tau - 1(u < 0)|
      const double c = std::min(std::max(u, -kappa), kappa);
      l[m] += w * (c * (u - 0.5 * c));  // Huber(u)
      g[m] -= w * c;
    }
  }
  double total = 0.0;
  for (std::size_t m = 0; m < n_atoms; ++m) {
    total += acc_loss[m];
    out.grad[static_cast<Index>(m)] = acc_grad[m] * scale;
  }
  out.loss = total * scale;
  return out;
}

inline QuantileLoss quantile_huber_loss(std::span<const double> pred_atoms, const TargetSet& targets,
                                        std::span<const double> fractions, double kappa = 1.0) {
  return quantile_huber_loss(pred_atoms, std::span<const double>(targets.values), fractions, kappa);
}

/// N networks, each mapping (state ++ action) to M quantile atoms, plus target copies.
class QuantileEnsemble {
 public:
  QuantileEnsemble() = default;

  QuantileEnsemble(int n_nets, int n_atoms, Index input_dim, const std::vector<Index>& hidden, Rng& rng,
                   double lr = 3e-4)
      : n_atoms_(n_atoms), fractions_(quantile_fractions(n_atoms)) {
    if (n_nets < 1) throw ConfigError("ensemble needs at least one network");
    std::vector<Index> widths{input_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(n_atoms);
    for (int n = 0; n < n_nets; ++n) {
      nets_.push_back(DenseNet::initialized(widths, Activation::relu, Activation::linear, rng));
      optim_.emplace_back(nets_.back().num_params(), lr);
    }
    targets_ = nets_;
  }

  int n_nets() const noexcept { return static_cast<int>(nets_.size()); }
  int n_atoms() const noexcept { return n_atoms_; }
  Index input_dim() const noexcept { return nets_.empty() ? 0 : nets_.front().input_size(); }
  const std::vector<double>& fractions() const noexcept { return fractions_; }

  std::vector<DenseNet>& nets() noexcept { return nets_; }
  const std::vector<DenseNet>& nets() const noexcept { return nets_; }
  std::vector<DenseNet>& targets() noexcept { return targets_; }
  const std::vector<DenseNet>& targets() const noexcept { return targets_; }
  std::vector<AdamState>& optimizers() noexcept { return optim_; }

  /// Atoms of every online network for a batch of inputs; element n is M x B.
  std::vector<Matrix> atoms(const Matrix& input) const { return run(nets_, input); }
  std::vector<Matrix> target_atoms(const Matrix& input) const { return run(targets_, input); }

  /// Mean over all N*M atoms for each column of `input`.
  Vector mean_values(const Matrix& input) const {
    Vector sum = Vector::Zero(input.cols());
    for (const auto& z : atoms(input)) sum += z.colwise().sum().transpose();
    return sum / static_cast<double>(n_nets() * n_atoms_);
  }

  void update_targets(double tau) {
    for (std::size_t n = 0; n < nets_.size(); ++n) polyak_update(targets_[n], nets_[n], tau);
  }

 private:
  std::vector<Matrix> run(const std::vector<DenseNet>& nets, const Matrix& input) const {
    std::vector<Matrix> out;
    out.reserve(nets.size());
    for (const auto& net : nets) out.push_back(net.forward(input));
    return out;
  }

  int n_atoms_ = 0;
  std::vector<double> fractions_;
  std::vector<DenseNet> nets_;
  std::vector<DenseNet> targets_;
  std::vector<AdamState> optim_;
};

inline Vector concat(const Vector& state, const Vector& action) {
  Vector x(state.size() + action.size());
  x << state, action;
  return x;
}

/// Row n holds the M atoms of network n.
inline Matrix predict_atoms(const QuantileEnsemble& ens, const Vector& state, const Vector& action) {
  const Vector x = concat(state, action);
  if (x.size() != ens.input_dim()) throw ConfigError("predict_atoms: state/action dimensions do not match critic");
  const auto per_net = ens.atoms(Matrix(x));
  Matrix out(ens.n_nets(), ens.n_atoms());
  for (int n = 0; n < ens.n_nets(); ++n) out.row(n) = per_net[n].col(0).transpose();
  return out;
}

inline double mean_value(const QuantileEnsemble& ens, const Vector& state, const Vector& action) {
  const Vector x = concat(state, action);
  if (x.size() != ens.input_dim()) throw ConfigError("mean_value: state/action dimensions do not match critic");
  return ens.mean_values(Matrix(x))(0);
}

}  // namespace acc
