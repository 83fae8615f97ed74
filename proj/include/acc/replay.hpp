#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "acc/calibrator.hpp"
#include "acc/errors.hpp"
#include "acc/rng.hpp"

namespace acc {

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool true_terminal = false;
  bool timeout = false;
};

/// Column-major minibatch: one column per transition.
struct Batch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd terminal;  // 1 for a true terminal, 0 otherwise (timeouts bootstrap)

  Eigen::Index size() const noexcept { return rewards.size(); }
};

/// Fixed-capacity ring of transitions with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  /// i-th stored transition counting from the oldest.
  const Transition& at(std::size_t i) const {
    if (i >= data_.size()) throw ArgumentError("replay index out of range");
    const std::size_t oldest = data_.size() < capacity_ ? 0 : cursor_;
    return data_[(oldest + i) % data_.size()];
  }

  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw ArgumentError("sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    return idx;
  }

  std::vector<Transition> sample(std::size_t n, Rng& rng) const {
    std::vector<Transition> out;
    out.reserve(n);
    for (auto i : sample_indices(n, rng)) out.push_back(data_[i]);
    return out;
  }

  Batch sample_batch(std::size_t n, Rng& rng) const {
    const auto idx = sample_indices(n, rng);
    const auto& first = data_[idx.front()];
    const auto b = static_cast<Eigen::Index>(n);
    Batch out;
    out.states.resize(first.state.size(), b);
    out.actions.resize(first.action.size(), b);
    out.rewards.resize(b);
    out.next_states.resize(first.next_state.size(), b);
    out.terminal.resize(b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto& t = data_[idx[static_cast<std::size_t>(j)]];
      out.states.col(j) = t.state;
      out.actions.col(j) = t.action;
      out.rewards(j) = t.reward;
      out.next_states.col(j) = t.next_state;
      out.terminal(j) = t.true_terminal ? 1.0 : 0.0;
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> data_;
};

/// Collects the steps of the in-flight episode and turns them into return
/// records once the episode has ended.
class ReturnTracker {
 public:
  void append(const Eigen::VectorXd& state, const Eigen::VectorXd& action, double reward, double entropy_bonus,
              bool episode_ended) {
    if (ended_) throw UsageError("append after the episode ended; call finish_episode() first");
    states_.push_back(state);
    actions_.push_back(action);
    rewards_.push_back(reward);
    bonuses_.push_back(entropy_bonus);
    ended_ = episode_ended;
  }

  std::size_t size() const noexcept { return rewards_.size(); }
  bool episode_ended() const noexcept { return ended_; }
  long episodes_finished() const noexcept { return episode_counter_; }
  const std::vector<double>& rewards() const noexcept { return rewards_; }

  /// One record per step, in step order. Clears the tracker.
  std::vector<EpisodeReturnRecord> finish_episode(double gamma, bool include_entropy) {
    if (!ended_) throw UsageError("finish_episode called mid-episode");
    const auto returns = discounted_returns(rewards_, bonuses_, gamma, include_entropy);
    std::vector<EpisodeReturnRecord> out(returns.size());
    for (std::size_t t = 0; t < returns.size(); ++t) {
      out[t].state = std::move(states_[t]);
      out[t].action = std::move(actions_[t]);
      out[t].ret = returns[t];
      out[t].episode_id = episode_counter_;
      out[t].step = static_cast<int>(t);
    }
    ++episode_counter_;
    states_.clear();
    actions_.clear();
    rewards_.clear();
    bonuses_.clear();
    ended_ = false;
    return out;
  }

 private:
  std::vector<Eigen::VectorXd> states_;
  std::vector<Eigen::VectorXd> actions_;
  std::vector<double> rewards_;
  std::vector<double> bonuses_;
  bool ended_ = false;
  long episode_counter_ = 0;
};

}  // namespace acc
