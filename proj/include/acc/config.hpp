#pragma once

// Run configuration: every hyperparameter of a training run, with defaults,
// a flat `key = value` text format and string-level setters shared with the CLI.

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "acc/agents.hpp"
#include "acc/errors.hpp"

namespace acc {

struct RunConfig {
  std::string env = "pendulum";
  std::string agent = "acc_tqc";
  std::uint64_t seed = 0;
  long total_steps = 1000000;
  long warmup_steps = 5000;
  long eval_interval = 1000;
  int eval_episodes = 10;
  int max_episode_steps = 0;  // 0: environment default
  int critic_updates = 1;     // critic gradient steps per env step
  int actor_updates = 1;      // actor gradient steps per env step
  int batch_size = 256;
  double gamma = 0.99;
  double lr = 3e-4;
  long replay_size = 1000000;

  int n_critics = 5;
  int n_atoms = 25;
  double huber_kappa = 1.0;
  std::vector<Index> critic_hidden{512, 512, 512};
  std::vector<Index> policy_hidden{256, 256};
  double tau = 0.005;
  double target_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN: -dim(A)

  double d_init = 2.5;  // also the constant d of tqc_fixed
  double d_max = 5.0;
  double calib_lr = 0.1;
  long calib_interval = 0;  // 0: max episode length
  long calib_warmup = 25000;
  long calib_batch = 5000;
  double calib_ma_rate = 0.05;
  bool calib_include_entropy = false;
  int calib_timeout_exclude = 0;

  std::vector<Index> td3_critic_hidden{256, 256};
  std::vector<Index> td3_policy_hidden{256, 256};
  double td3_beta_init = 0.5;
  double td3_calib_lr = 0.02;
  int td3_policy_delay = 2;
  double td3_target_noise = 0.2;
  double td3_noise_clip = 0.5;
  double td3_explore_noise = 0.1;

  long bias_window = 1000;
  int bias_exclude = 100;
  bool log_values = false;
  bool save_checkpoint = false;  // write <stem>.ckpt at the end of training
  std::string out_dir;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
  if (v == "auto") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<Index> parse_widths(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = parse_int(key, trim(item));
    if (x <= 0) throw ConfigError(key + ": layer widths must be positive");
    out.push_back(static_cast<Index>(x));
  }
  if (out.empty()) throw ConfigError(key + ": need at least one hidden layer");
  return out;
}

inline std::string format_real(double x) {
  if (std::isnan(x)) return "auto";
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline std::string format_widths(const std::vector<Index>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

}  // namespace config_detail

/// One documented configuration key.
struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto str = [&](const char* name, const char* doc, std::string RunConfig::*f) {
      k.push_back({name, doc, [f](RunConfig& c, const std::string& v) { c.*f = v; },
                   [f](const RunConfig& c) { return c.*f; }});
    };
    auto integer = [&](const char* name, const char* doc, auto f) {
      k.push_back({name, doc,
                   [f, name](RunConfig& c, const std::string& v) {
                     c.*f = static_cast<std::remove_reference_t<decltype(c.*f)>>(parse_int(name, v));
                   },
                   [f](const RunConfig& c) { return std::to_string(c.*f); }});
    };
    auto real = [&](const char* name, const char* doc, double RunConfig::*f) {
      k.push_back({name, doc, [f, name](RunConfig& c, const std::string& v) { c.*f = parse_real(name, v); },
                   [f](const RunConfig& c) { return format_real(c.*f); }});
    };
    auto boolean = [&](const char* name, const char* doc, bool RunConfig::*f) {
      k.push_back({name, doc, [f, name](RunConfig& c, const std::string& v) { c.*f = parse_bool(name, v); },
                   [f](const RunConfig& c) { return std::string(c.*f ? "true" : "false"); }});
    };
    auto widths = [&](const char* name, const char* doc, std::vector<Index> RunConfig::*f) {
      k.push_back({name, doc, [f, name](RunConfig& c, const std::string& v) { c.*f = parse_widths(name, v); },
                   [f](const RunConfig& c) { return format_widths(c.*f); }});
    };

    str("env", "environment id: pendulum | pointmass", &RunConfig::env);
    str("agent", "agent variant: sac | tqc_fixed | acc_tqc | td3 | acc_td3", &RunConfig::agent);
    k.push_back({"seed", "root random seed",
                 [](RunConfig& c, const std::string& v) {
                   const auto x = parse_int("seed", v);
                   if (x < 0) throw ConfigError("seed must be non-negative");
                   c.seed = static_cast<std::uint64_t>(x);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    integer("total_steps", "environment steps to train for", &RunConfig::total_steps);
    integer("warmup_steps", "initial steps with uniform random actions and no updates", &RunConfig::warmup_steps);
    integer("eval_interval", "environment steps between evaluations", &RunConfig::eval_interval);
    integer("eval_episodes", "deterministic rollouts per evaluation", &RunConfig::eval_episodes);
    integer("max_episode_steps", "episode step limit, 0 for the environment default", &RunConfig::max_episode_steps);
    integer("critic_updates", "critic gradient steps per environment step", &RunConfig::critic_updates);
    integer("actor_updates", "actor gradient steps per environment step", &RunConfig::actor_updates);
    integer("batch_size", "minibatch size", &RunConfig::batch_size);
    real("gamma", "discount factor", &RunConfig::gamma);
    real("lr", "Adam learning rate for all networks and the temperature", &RunConfig::lr);
    integer("replay_size", "replay buffer capacity", &RunConfig::replay_size);
    integer("n_critics", "critic networks in the quantile ensemble", &RunConfig::n_critics);
    integer("n_atoms", "quantile atoms per critic", &RunConfig::n_atoms);
    real("huber_kappa", "quantile Huber threshold", &RunConfig::huber_kappa);
    widths("critic_hidden", "comma-separated hidden widths of quantile critics", &RunConfig::critic_hidden);
    widths("policy_hidden", "comma-separated hidden widths of the stochastic policy", &RunConfig::policy_hidden);
    real("tau", "target smoothing coefficient", &RunConfig::tau);
    real("target_entropy", "entropy target, auto for -dim(A)", &RunConfig::target_entropy);
    real("d_init", "initial dropped targets per network (constant for tqc_fixed)", &RunConfig::d_init);
    real("d_max", "upper bound on dropped targets per network", &RunConfig::d_max);
    real("calib_lr", "step size of the d update", &RunConfig::calib_lr);
    integer("calib_interval", "minimum steps between calibration updates, 0 for the episode limit",
            &RunConfig::calib_interval);
    integer("calib_warmup", "steps before the first calibration update", &RunConfig::calib_warmup);
    integer("calib_batch", "return records kept after pruning", &RunConfig::calib_batch);
    real("calib_ma_rate", "moving-average rate of the residual normalizer", &RunConfig::calib_ma_rate);
    boolean("calib_include_entropy", "add entropy bonuses to observed returns", &RunConfig::calib_include_entropy);
    integer("calib_timeout_exclude", "trailing steps of timed-out episodes left out of calibration",
            &RunConfig::calib_timeout_exclude);
    widths("td3_critic_hidden", "hidden widths of the twin critics", &RunConfig::td3_critic_hidden);
    widths("td3_policy_hidden", "hidden widths of the deterministic policy", &RunConfig::td3_policy_hidden);
    real("td3_beta_init", "initial convex-combination weight for acc_td3 (fixed 0 for td3)", &RunConfig::td3_beta_init);
    real("td3_calib_lr", "step size of the beta update for acc_td3", &RunConfig::td3_calib_lr);
    integer("td3_policy_delay", "critic updates per actor update", &RunConfig::td3_policy_delay);
    real("td3_target_noise", "target policy smoothing std, fraction of action half-range", &RunConfig::td3_target_noise);
    real("td3_noise_clip", "target smoothing clip, fraction of action half-range", &RunConfig::td3_noise_clip);
    real("td3_explore_noise", "exploration noise std, fraction of action half-range", &RunConfig::td3_explore_noise);
    integer("bias_window", "environment steps per value-error window", &RunConfig::bias_window);
    integer("bias_exclude", "trailing steps of timed-out episodes excluded from value error", &RunConfig::bias_exclude);
    boolean("log_values", "write per-step (estimate, return) pairs next to the run CSV", &RunConfig::log_values);
    boolean("save_checkpoint", "write all networks to <stem>.ckpt after training", &RunConfig::save_checkpoint);
    str("out_dir", "directory for CSV and summary files (empty: no files)", &RunConfig::out_dir);
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto* k = find_config_key(key);
  if (!k) throw ConfigError("unknown configuration key '" + key + "'");
  k->set(cfg, config_detail::trim(value));
}

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are rejected.
inline void apply_config_text(RunConfig& cfg, std::istream& is) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      set_config_value(cfg, config_detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config_text(cfg, in);
}

inline std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

/// Cross-field checks; throws ConfigError.
inline void validate(const RunConfig& c) {
  (void)variant_from_string(c.agent);
  if (c.env != "pendulum" && c.env != "pointmass")
    throw ConfigError("unknown environment '" + c.env + "' (expected pendulum | pointmass)");
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  positive(c.total_steps >= 0, "total_steps must be non-negative");
  positive(c.warmup_steps >= 0, "warmup_steps must be non-negative");
  positive(c.eval_interval > 0, "eval_interval must be positive");
  positive(c.eval_episodes >= 0, "eval_episodes must be non-negative");
  positive(c.max_episode_steps >= 0, "max_episode_steps must be non-negative");
  positive(c.critic_updates >= 1, "critic_updates must be at least 1");
  positive(c.actor_updates >= 0, "actor_updates must be non-negative");
  positive(c.batch_size >= 1, "batch_size must be positive");
  positive(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma must be in [0, 1]");
  positive(c.lr > 0.0, "lr must be positive");
  positive(c.replay_size >= 1, "replay_size must be positive");
  positive(c.n_critics >= 1 && c.n_atoms >= 1, "n_critics and n_atoms must be positive");
  positive(c.huber_kappa > 0.0, "huber_kappa must be positive");
  positive(c.tau > 0.0 && c.tau <= 1.0, "tau must be in (0, 1]");
  positive(c.d_max >= 0.0 && c.d_max <= c.n_atoms, "d_max must be in [0, n_atoms]");
  positive(c.d_init >= 0.0 && c.d_init <= c.d_max, "d_init must be in [0, d_max]");
  positive(c.calib_lr >= 0.0 && c.td3_calib_lr >= 0.0, "calibration step sizes must be non-negative");
  positive(c.calib_interval >= 0 && c.calib_warmup >= 0 && c.calib_batch >= 1, "calibration schedule out of range");
  positive(c.calib_ma_rate > 0.0 && c.calib_ma_rate <= 1.0, "calib_ma_rate must be in (0, 1]");
  positive(c.calib_timeout_exclude >= 0, "calib_timeout_exclude must be non-negative");
  positive(c.td3_beta_init >= 0.0 && c.td3_beta_init <= 1.0, "td3_beta_init must be in [0, 1]");
  positive(c.td3_policy_delay >= 1, "td3_policy_delay must be at least 1");
  positive(std::isfinite(c.td3_target_noise) && c.td3_target_noise >= 0.0 && std::isfinite(c.td3_noise_clip) &&
               c.td3_noise_clip >= 0.0 && std::isfinite(c.td3_explore_noise) && c.td3_explore_noise >= 0.0,
           "TD3 noise scales must be finite and non-negative");
  positive(!std::isinf(c.target_entropy), "target_entropy must be finite or auto");
  positive(std::isfinite(c.lr) && std::isfinite(c.huber_kappa), "lr and huber_kappa must be finite");
  positive(c.bias_window >= 1 && c.bias_exclude >= 0, "bias window settings out of range");
}

}  // namespace acc
