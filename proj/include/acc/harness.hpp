#pragma once

// Training loop, evaluation, run logs and the parallel suite runner.
//
// Output of a run with a non-empty out_dir, for stem <env>_<agent>[_d<d>]_seed<seed>:
//
//   <stem>.csv         header
//                        kind,env_step,eval_return,d,beta,alpha,critic_loss,value_error,residual_sum,ma,batch_size
//                      kind = eval: evaluation row (calibration columns empty)
//                      kind = calib: calibrator update (evaluation columns empty except d/beta)
//                      Rows appear in the order they happened. Missing values are empty.
//   <stem>.summary     key=value lines: configuration echo plus final statistics
//   <stem>_values.csv  only with log_values: env_step,estimate,return,timeout_episode,steps_to_end
//   <stem>.ckpt        only with save_checkpoint: every network, see save_checkpoint() in nn.hpp
//
// Every number is a pure function of (config, seed).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "acc/agents.hpp"
#include "acc/analysis.hpp"
#include "acc/calibrator.hpp"
#include "acc/config.hpp"
#include "acc/envs.hpp"
#include "acc/replay.hpp"
#include "acc/rng.hpp"

namespace acc {

/// Training allocates and frees many mid-sized Eigen temporaries per step. With
/// glibc's default trimming each of those round-trips through the kernel; this
/// keeps freed memory in the process instead. Call once from main().
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
#endif
}

struct LogRow {
  enum class Kind { eval, calib };
  static constexpr double missing = std::numeric_limits<double>::quiet_NaN();

  Kind kind = Kind::eval;
  long env_step = 0;
  double eval_return = missing;
  double d = missing;
  double beta = missing;
  double alpha = missing;
  double critic_loss = missing;
  double value_error = missing;
  double residual_sum = missing;
  double ma = missing;
  double batch_size = missing;
};

struct RunLog {
  RunConfig config;
  std::vector<LogRow> rows;
  std::vector<ValuePair> values;  // filled when config.log_values
  long gradient_steps = 0;
  long calibration_updates = 0;
  long episodes = 0;
  std::uint64_t fingerprint = 0;  // hash of all network parameters at the end
  bool ok = true;
  std::string error;

  std::vector<LogRow> eval_rows() const { return filtered(LogRow::Kind::eval); }
  std::vector<LogRow> calib_rows() const { return filtered(LogRow::Kind::calib); }

  double final_eval_return() const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
      if (it->kind == LogRow::Kind::eval) return it->eval_return;
    return LogRow::missing;
  }

 private:
  std::vector<LogRow> filtered(LogRow::Kind k) const {
    std::vector<LogRow> out;
    for (const auto& r : rows)
      if (r.kind == k) out.push_back(r);
    return out;
  }
};

inline std::string format_number(double x) {
  if (std::isnan(x)) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline std::string run_stem(const RunConfig& c) {
  std::string s = c.env + "_" + c.agent;
  if (c.agent == "tqc_fixed") s += "_d" + format_number(c.d_init);
  return s + "_seed" + std::to_string(c.seed);
}

inline constexpr const char* run_csv_header =
    "kind,env_step,eval_return,d,beta,alpha,critic_loss,value_error,residual_sum,ma,batch_size";

inline std::string to_csv(const RunLog& log) {
  std::string out = std::string(run_csv_header) + "\n";
  for (const auto& r : log.rows) {
    out += r.kind == LogRow::Kind::eval ? "eval," : "calib,";
    out += std::to_string(r.env_step);
    for (double x : {r.eval_return, r.d, r.beta, r.alpha, r.critic_loss, r.value_error, r.residual_sum, r.ma,
                     r.batch_size})
      out += "," + format_number(x);
    out += "\n";
  }
  return out;
}

/// The configuration echo leaves out out_dir, so the same run written to two
/// places produces identical files.
inline std::string to_summary(const RunLog& log) {
  RunConfig echoed = log.config;
  echoed.out_dir.clear();
  std::string out = to_config_text(echoed);
  const auto evals = log.eval_rows();
  out += "final_eval_return = " + format_number(log.final_eval_return()) + "\n";
  if (!evals.empty()) {
    out += "final_d = " + format_number(evals.back().d) + "\n";
    out += "final_beta = " + format_number(evals.back().beta) + "\n";
  }
  out += "gradient_steps = " + std::to_string(log.gradient_steps) + "\n";
  out += "calibration_updates = " + std::to_string(log.calibration_updates) + "\n";
  out += "episodes = " + std::to_string(log.episodes) + "\n";
  char fp[32];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(log.fingerprint));
  out += std::string("param_fingerprint = ") + fp + "\n";
  out += "status = " + std::string(log.ok ? "ok" : "aborted: " + log.error) + "\n";
  return out;
}

inline std::string values_csv(const RunLog& log) {
  std::string out = "env_step,estimate,return,timeout_episode,steps_to_end\n";
  for (const auto& p : log.values)
    out += std::to_string(p.env_step) + "," + format_number(p.estimate) + "," + format_number(p.ret) + "," +
           (p.timeout_episode ? "1" : "0") + "," + std::to_string(p.steps_to_end) + "\n";
  return out;
}

inline void write_run_files(const RunLog& log) {
  namespace fs = std::filesystem;
  const fs::path dir(log.config.out_dir);
  fs::create_directories(dir);
  const auto stem = run_stem(log.config);
  auto write = [](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + p.string());
    f << text;
  };
  write(dir / (stem + ".csv"), to_csv(log));
  write(dir / (stem + ".summary"), to_summary(log));
  if (log.config.log_values) write(dir / (stem + "_values.csv"), values_csv(log));
}

namespace harness_detail {

inline TqcSettings tqc_settings(const RunConfig& c) {
  TqcSettings s;
  const bool sac = c.agent == "sac";
  s.n_critics = sac ? 2 : c.n_critics;
  s.n_atoms = sac ? 1 : c.n_atoms;
  s.critic_hidden = c.critic_hidden;
  s.policy_hidden = c.policy_hidden;
  s.lr = c.lr;
  s.gamma = c.gamma;
  s.tau = c.tau;
  s.kappa = c.huber_kappa;
  if (!std::isnan(c.target_entropy)) s.target_entropy = c.target_entropy;
  return s;
}

inline Td3Settings td3_settings(const RunConfig& c) {
  Td3Settings s;
  s.critic_hidden = c.td3_critic_hidden;
  s.policy_hidden = c.td3_policy_hidden;
  s.lr = c.lr;
  s.gamma = c.gamma;
  s.tau = c.tau;
  s.policy_delay = c.td3_policy_delay;
  s.target_noise = c.td3_target_noise;
  s.noise_clip = c.td3_noise_clip;
  s.explore_noise = c.td3_explore_noise;
  return s;
}

inline CalibratorConfig calibrator_config(const RunConfig& c, const EnvSpec& spec) {
  CalibratorConfig k = is_td3_family(variant_from_string(c.agent))
                           ? CalibratorConfig{0.0, 1.0, c.td3_beta_init, c.td3_calib_lr}
                           : CalibratorConfig::for_truncation(c.d_init, c.d_max);
  if (!is_td3_family(variant_from_string(c.agent))) k.lr = c.calib_lr;
  k.min_steps_between = c.calib_interval > 0 ? c.calib_interval : spec.max_episode_steps;
  k.warmup_steps = c.calib_warmup;
  k.batch_cap = static_cast<std::size_t>(c.calib_batch);
  k.ma_rate = c.calib_ma_rate;
  k.timeout_exclude = c.calib_timeout_exclude;
  return k;
}

template <class Agent>
double evaluate(const Agent& agent, const Environment& env, Rng& rng, int episodes) {
  if (episodes == 0) return LogRow::missing;
  Episode ep(env);
  Rng unused(0);
  double total = 0.0;
  for (int k = 0; k < episodes; ++k) {
    Vector obs = ep.reset(rng);
    while (!ep.done()) {
      const auto r = ep.step(agent.act(obs, ActMode::evaluate, unused));
      total += r.reward;
      obs = r.next_state;
    }
  }
  return total / episodes;
}

template <class Agent>
void train(const RunConfig& cfg, Agent& agent, RunStreams& rng, const Environment& env, RunLog& log) {
  const auto variant = variant_from_string(cfg.agent);
  const auto& spec = env.spec();
  const bool td3 = is_td3_family(variant);
  const bool calibrated = is_calibrated(variant);

  std::optional<Calibrator> calib;
  if (calibrated) calib.emplace(calibrator_config(cfg, spec));

  const auto bias_parameter = [&]() -> double {
    if (calib) return td3 ? calib->beta() : calib->d();
    if (variant == AgentVariant::sac) return 0.5;
    if (variant == AgentVariant::td3) return 0.0;
    return cfg.d_init;
  };
  const auto estimator = [&](std::span<const EpisodeReturnRecord> recs) {
    const Matrix x = records_to_inputs(recs);
    const Vector q = agent.values(x.topRows(spec.state_dim), x.bottomRows(spec.action_dim));
    return std::vector<double>(q.data(), q.data() + q.size());
  };

  ReplayBuffer buffer(static_cast<std::size_t>(cfg.replay_size));
  ReturnTracker tracker;
  Episode ep(env);
  Vector obs = ep.reset(rng.env);
  std::vector<double> episode_estimates;
  std::vector<long> episode_steps;
  std::map<long, std::pair<double, long>> error_windows;  // window index -> (sum, count)
  double loss_sum = 0.0;
  long loss_count = 0;

  std::vector<std::uniform_real_distribution<double>> warmup_dist;
  for (int i = 0; i < spec.action_dim; ++i) warmup_dist.emplace_back(spec.action_low(i), spec.action_high(i));

  for (long t = 1; t <= cfg.total_steps; ++t) {
    Vector action(spec.action_dim);
    double log_prob = 0.0;
    if (t <= cfg.warmup_steps) {
      for (int i = 0; i < spec.action_dim; ++i) action(i) = warmup_dist[static_cast<std::size_t>(i)](rng.warmup);
    } else {
      action = agent.act(obs, ActMode::explore, rng.policy, &log_prob);
    }
    const double estimate = agent.values(Matrix(obs), Matrix(action))(0);

    const StepResult step = ep.step(action);
    const bool ended = step.true_terminal || step.timeout;
    buffer.push({obs, action, step.reward, step.next_state, step.true_terminal, step.timeout});
    double bonus = 0.0;
    if constexpr (std::is_same_v<Agent, TqcAgent>)
      if (cfg.calib_include_entropy && t > cfg.warmup_steps) bonus = -agent.alpha() * log_prob;
    tracker.append(obs, action, step.reward, bonus, ended);
    episode_estimates.push_back(estimate);
    episode_steps.push_back(t);
    if (calib) calib->tick();

    if (ended) {
      auto records = tracker.finish_episode(cfg.gamma, cfg.calib_include_entropy);
      const auto len = static_cast<int>(records.size());
      for (int i = 0; i < len; ++i) {
        ValuePair p{episode_steps[static_cast<std::size_t>(i)], episode_estimates[static_cast<std::size_t>(i)],
                    records[static_cast<std::size_t>(i)].ret, step.timeout, len - 1 - i};
        if (!(p.timeout_episode && p.steps_to_end < cfg.bias_exclude)) {
          auto& w = error_windows[(p.env_step - 1) / cfg.bias_window];
          w.first += std::abs(p.estimate - p.ret) / std::max(std::abs(p.ret), 1e-6);
          ++w.second;
        }
        if (cfg.log_values) log.values.push_back(p);
      }
      episode_estimates.clear();
      episode_steps.clear();
      ++log.episodes;
      if (calib) {
        calib->record_episode(std::move(records), step.timeout);
        const auto outcome = calib->maybe_update(estimator, t);
        if (outcome.did_update) {
          LogRow row;
          row.kind = LogRow::Kind::calib;
          row.env_step = t;
          row.beta = outcome.row.beta;
          if (!td3) row.d = cfg.d_max - outcome.row.beta;
          row.residual_sum = outcome.row.residual_sum;
          row.ma = outcome.row.ma;
          row.batch_size = static_cast<double>(outcome.row.batch_size);
          log.rows.push_back(row);
          ++log.calibration_updates;
        }
      }
      obs = ep.reset(rng.env);
    } else {
      obs = step.next_state;
    }

    if (t > cfg.warmup_steps) {
      Batch batch;
      for (int q = 0; q < cfg.critic_updates; ++q) {
        batch = buffer.sample_batch(static_cast<std::size_t>(cfg.batch_size), rng.replay);
        loss_sum += agent.critic_update(batch, bias_parameter(), rng.policy);
        ++loss_count;
        ++log.gradient_steps;
      }
      for (int k = 0; k < cfg.actor_updates; ++k) {
        if (k > 0) batch = buffer.sample_batch(static_cast<std::size_t>(cfg.batch_size), rng.replay);
        agent.actor_update(batch, rng.policy);
      }
    }

    if (t % cfg.eval_interval == 0) {
      LogRow row;
      row.kind = LogRow::Kind::eval;
      row.env_step = t;
      row.eval_return = evaluate(agent, env, rng.eval, cfg.eval_episodes);
      const double p = bias_parameter();
      if (td3) {
        row.beta = p;
      } else {
        row.d = p;
        if (variant != AgentVariant::sac) row.beta = cfg.d_max - p;
      }
      if constexpr (std::is_same_v<Agent, TqcAgent>) row.alpha = agent.alpha();
      if (loss_count > 0) row.critic_loss = loss_sum / static_cast<double>(loss_count);
      loss_sum = 0.0;
      loss_count = 0;
      if (auto it = error_windows.find((t - 1) / cfg.bias_window); it != error_windows.end() && it->second.second > 0)
        row.value_error = it->second.first / static_cast<double>(it->second.second);
      log.rows.push_back(row);
    }
  }
  log.fingerprint = agent.fingerprint();
  if (cfg.save_checkpoint && !cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = std::filesystem::path(cfg.out_dir) / (run_stem(cfg) + ".ckpt");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    save_checkpoint(f, agent.named_nets());
  }
}

}  // namespace harness_detail

/// One full training run. Non-finite losses or states end the run early with
/// ok = false; the partial log is still returned (and written).
inline RunLog run_training(const RunConfig& cfg) {
  validate(cfg);
  RunLog log;
  log.config = cfg;
  const Environment env(cfg.env, cfg.max_episode_steps);
  RunStreams rng(cfg.seed);
  try {
    if (is_td3_family(variant_from_string(cfg.agent))) {
      Td3Agent agent(env.spec(), harness_detail::td3_settings(cfg), rng.init);
      harness_detail::train(cfg, agent, rng, env, log);
    } else {
      TqcAgent agent(env.spec(), harness_detail::tqc_settings(cfg), rng.init);
      harness_detail::train(cfg, agent, rng, env, log);
    }
  } catch (const TrainingAborted& e) {
    log.ok = false;
    log.error = e.what();
  } catch (const EnvironmentFault& e) {
    log.ok = false;
    log.error = e.what();
  }
  if (!cfg.out_dir.empty()) write_run_files(log);
  return log;
}

/// Runs independent configurations on up to `parallelism` threads. Results come
/// back in input order; a failing run is reported in its log and the rest continue.
inline std::vector<RunLog> run_suite(const std::vector<RunConfig>& cfgs, int parallelism = 1) {
  std::vector<RunLog> out(cfgs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfgs.size(); i = next++) {
      try {
        out[i] = run_training(cfgs[i]);
      } catch (const std::exception& e) {
        out[i] = RunLog{};
        out[i].config = cfgs[i];
        out[i].ok = false;
        out[i].error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(parallelism, static_cast<int>(cfgs.size())));
  if (n == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (int k = 0; k < n; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

// ---------------------------------------------------------------------------
// Reading run files back

inline std::vector<LogRow> read_run_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != run_csv_header) throw ConfigError("run CSV: unexpected header");
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    while (f.size() < 11) f.emplace_back();
    LogRow r;
    if (f[0] == "eval")
      r.kind = LogRow::Kind::eval;
    else if (f[0] == "calib")
      r.kind = LogRow::Kind::calib;
    else
      throw ConfigError("run CSV: unknown row kind '" + f[0] + "'");
    r.env_step = std::stol(f[1]);
    auto num = [](const std::string& s) { return s.empty() ? LogRow::missing : std::stod(s); };
    r.eval_return = num(f[2]);
    r.d = num(f[3]);
    r.beta = num(f[4]);
    r.alpha = num(f[5]);
    r.critic_loss = num(f[6]);
    r.value_error = num(f[7]);
    r.residual_sum = num(f[8]);
    r.ma = num(f[9]);
    r.batch_size = num(f[10]);
    rows.push_back(r);
  }
  return rows;
}

inline std::map<std::string, std::string> read_summary(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[config_detail::trim(line.substr(0, eq))] = config_detail::trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace acc
