// acc: train one run, a suite of runs, or aggregate finished runs.
//
//   acc train   [--config FILE] [--KEY VALUE ...]
//   acc suite   [--config FILE] [--KEY VALUE ...] --seeds 0,1,2 --agents acc_tqc,tqc_fixed
//               [--envs pendulum,pointmass] [--d-values 0,2.5,5] [--jobs N]
//   acc analyze --input DIR [--output DIR] [--resamples N] [--level L] [--smooth K]
//
// Every configuration key is also a flag; flags override the config file.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "acc/acc.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App& app, ConfigFlags& flags) {
  app.add_option("--config", flags.file, "flat key = value configuration file");
  for (const auto& k : acc::config_keys())
    app.add_option("--" + k.name, flags.values[k.name], k.doc + " (default " + k.get(acc::RunConfig{}) + ")");
}

acc::RunConfig resolve(const CLI::App& app, const ConfigFlags& flags) {
  acc::RunConfig cfg;
  if (!flags.file.empty()) acc::apply_config_file(cfg, flags.file);
  for (const auto& [key, value] : flags.values)
    if (app.count("--" + key) > 0) acc::set_config_value(cfg, key, value);
  return cfg;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void report(const acc::RunLog& log) {
  std::cout << acc::run_stem(log.config) << ": ";
  if (log.ok)
    std::cout << "final eval return " << acc::format_number(log.final_eval_return());
  else
    std::cout << "FAILED (" << log.error << ")";
  std::cout << ", " << log.calibration_updates << " calibration updates\n";
}

// ---------------------------------------------------------------------------
// analyze

struct LoadedRun {
  std::string label;
  std::string env;
  std::uint64_t seed = 0;
  std::vector<acc::LogRow> rows;
};

std::vector<LoadedRun> load_runs(const fs::path& dir) {
  std::vector<fs::path> summaries;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".summary") summaries.push_back(e.path());
  std::sort(summaries.begin(), summaries.end());

  std::vector<LoadedRun> runs;
  for (const auto& path : summaries) {
    std::ifstream sf(path);
    const auto summary = acc::read_summary(sf);
    auto csv_path = path;
    csv_path.replace_extension(".csv");
    std::ifstream cf(csv_path);
    if (!cf) {
      std::cerr << "skipping " << path << ": no matching CSV\n";
      continue;
    }
    LoadedRun r;
    r.env = summary.at("env");
    r.label = summary.at("agent");
    if (r.label == "tqc_fixed") r.label += "_d" + acc::format_number(std::stod(summary.at("d_init")));
    r.seed = std::stoull(summary.at("seed"));
    r.rows = acc::read_run_csv(cf);
    runs.push_back(std::move(r));
  }
  return runs;
}

std::vector<acc::LogRow> evals_of(const LoadedRun& r) {
  std::vector<acc::LogRow> out;
  for (const auto& row : r.rows)
    if (row.kind == acc::LogRow::Kind::eval) out.push_back(row);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int analyze(const fs::path& input, const fs::path& output, int resamples, double level, int smooth,
            std::uint64_t seed) {
  const auto runs = load_runs(input);
  if (runs.empty()) {
    std::cerr << "no runs found in " << input << "\n";
    return 1;
  }
  fs::create_directories(output);

  // Per-environment normalization over the whole run set.
  std::map<std::string, std::pair<double, double>> range;  // env -> (best, worst)
  for (const auto& r : runs)
    for (const auto& e : evals_of(r)) {
      auto [it, fresh] = range.try_emplace(r.env, e.eval_return, e.eval_return);
      it->second.first = std::max(it->second.first, e.eval_return);
      it->second.second = std::min(it->second.second, e.eval_return);
    }

  std::map<std::string, std::map<std::string, std::vector<const LoadedRun*>>> groups;  // label -> env -> runs
  for (const auto& r : runs) groups[r.label][r.env].push_back(&r);

  std::ofstream curves(output / "curves.csv");
  curves << "algorithm,env_step,iqm,ci_lo,ci_hi,runs,tasks\n";
  std::ofstream finals(output / "final.csv");
  finals << "algorithm,env,runs,median_final,iqm_final,mean_final\n";
  std::ofstream errors(output / "value_error.csv");
  errors << "algorithm,env,env_step,median_value_error,runs\n";
  std::ofstream traj(output / "d_trajectory.csv");
  traj << "algorithm,env,seed,env_step,d,beta\n";

  acc::Rng rng = acc::make_stream(seed, "analyze");
  for (const auto& [label, by_env] : groups) {
    int n_runs = std::numeric_limits<int>::max();
    std::size_t n_points = std::numeric_limits<std::size_t>::max();
    for (const auto& [env, rs] : by_env) {
      n_runs = std::min<int>(n_runs, static_cast<int>(rs.size()));
      for (const auto* r : rs) n_points = std::min(n_points, evals_of(*r).size());
    }
    if (n_points == 0) continue;
    const int n_tasks = static_cast<int>(by_env.size());

    acc::ScoreMatrix scores(n_runs, n_tasks, static_cast<int>(n_points));
    std::vector<long> steps;
    int t = 0;
    for (const auto& [env, rs] : by_env) {
      const auto [best, worst] = range.at(env);
      std::vector<double> final_returns;
      for (int k = 0; k < n_runs; ++k) {
        const auto ev = evals_of(*rs[static_cast<std::size_t>(k)]);
        for (std::size_t p = 0; p < n_points; ++p)
          scores.at(k, t, static_cast<int>(p)) = acc::normalize_score(ev[p].eval_return, best, worst);
        if (steps.empty())
          for (std::size_t p = 0; p < n_points; ++p) steps.push_back(ev[p].env_step);
        final_returns.push_back(ev[n_points - 1].eval_return);
      }
      double mean = 0.0;
      for (double x : final_returns) mean += x / static_cast<double>(final_returns.size());
      finals << label << ',' << env << ',' << n_runs << ',' << acc::format_number(median(final_returns)) << ','
             << acc::format_number(acc::iqm(final_returns)) << ',' << acc::format_number(mean) << '\n';

      for (std::size_t p = 0; p < n_points; ++p) {
        std::vector<double> errs;
        for (const auto* r : rs) {
          const double e = evals_of(*r)[p].value_error;
          if (!std::isnan(e)) errs.push_back(e);
        }
        if (!errs.empty())
          errors << label << ',' << env << ',' << steps[p] << ',' << acc::format_number(median(errs)) << ','
                 << errs.size() << '\n';
      }
      for (const auto* r : rs)
        for (const auto& row : r->rows)
          if (row.kind == acc::LogRow::Kind::calib)
            traj << label << ',' << env << ',' << r->seed << ',' << row.env_step << ','
                 << acc::format_number(row.d) << ',' << acc::format_number(row.beta) << '\n';
      ++t;
    }

    const auto ci = acc::stratified_bootstrap_ci(
        scores, [](std::span<const double> v) { return acc::iqm(v); }, resamples, level, rng);
    std::vector<double> point, lo, hi;
    for (const auto& iv : ci) {
      point.push_back(iv.point);
      lo.push_back(iv.lo);
      hi.push_back(iv.hi);
    }
    point = acc::uniform_filter(point, smooth);
    lo = acc::uniform_filter(lo, smooth);
    hi = acc::uniform_filter(hi, smooth);
    for (std::size_t p = 0; p < n_points; ++p)
      curves << label << ',' << steps[p] << ',' << acc::format_number(point[p]) << ',' << acc::format_number(lo[p])
             << ',' << acc::format_number(hi[p]) << ',' << n_runs << ',' << n_tasks << '\n';
  }
  std::cout << "wrote curves.csv, final.csv, value_error.csv, d_trajectory.csv to " << output << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  acc::tune_allocator();
  CLI::App app{"Adaptively calibrated critics: training and analysis"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train one agent");
  ConfigFlags train_flags;
  add_config_flags(*train, train_flags);
  bool print_config = false;
  train->add_flag("--print-config", print_config, "print the resolved configuration and exit");

  auto* suite = app.add_subcommand("suite", "train every combination of seeds, agents and environments");
  ConfigFlags suite_flags;
  add_config_flags(*suite, suite_flags);
  std::string seeds = "0,1,2,3,4", agents = "acc_tqc", envs, d_values = "0,2.5,5";
  int jobs = 1;
  suite->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  suite->add_option("--agents", agents, "comma-separated agent variants")->capture_default_str();
  suite->add_option("--envs", envs, "comma-separated environments (default: the configured env)");
  suite->add_option("--d-values", d_values, "d values expanded for tqc_fixed")->capture_default_str();
  suite->add_option("--jobs", jobs, "runs in parallel")->capture_default_str()->check(CLI::PositiveNumber);

  auto* an = app.add_subcommand("analyze", "aggregate run CSVs into curves with bootstrap intervals");
  std::string input, output;
  int resamples = 2000, smooth = 1;
  double level = 0.95;
  std::uint64_t analyze_seed = 0;
  an->add_option("--input", input, "directory containing run CSV and summary files")->required();
  an->add_option("--output", output, "directory for aggregate CSVs (default: INPUT/analysis)");
  an->add_option("--resamples", resamples, "bootstrap resamples")->capture_default_str();
  an->add_option("--level", level, "confidence level")->capture_default_str();
  an->add_option("--smooth", smooth, "uniform filter width applied to curves")->capture_default_str();
  an->add_option("--seed", analyze_seed, "bootstrap seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;  // --help is a ParseError with code 0
  }

  try {
    if (*train) {
      const auto cfg = resolve(*train, train_flags);
      acc::validate(cfg);
      if (print_config) {
        std::cout << acc::to_config_text(cfg);
        return 0;
      }
      const auto log = acc::run_training(cfg);
      report(log);
      return log.ok ? 0 : 2;
    }
    if (*suite) {
      const auto base = resolve(*suite, suite_flags);
      std::vector<acc::RunConfig> cfgs;
      const auto env_list = envs.empty() ? std::vector<std::string>{base.env} : split(envs);
      for (const auto& env : env_list)
        for (const auto& agent : split(agents))
          for (const auto& s : split(seeds)) {
            auto cfg = base;
            acc::set_config_value(cfg, "env", env);
            acc::set_config_value(cfg, "agent", agent);
            acc::set_config_value(cfg, "seed", s);
            if (agent == "tqc_fixed") {
              for (const auto& d : split(d_values)) {
                auto c = cfg;
                acc::set_config_value(c, "d_init", d);
                acc::validate(c);
                cfgs.push_back(c);
              }
            } else {
              acc::validate(cfg);
              cfgs.push_back(cfg);
            }
          }
      if (base.out_dir.empty()) std::cerr << "warning: out_dir is empty, no files will be written\n";
      const auto logs = acc::run_suite(cfgs, jobs);
      int failed = 0;
      for (const auto& log : logs) {
        report(log);
        failed += !log.ok;
      }
      return failed ? 2 : 0;
    }
    if (*an) return analyze(input, output.empty() ? fs::path(input) / "analysis" : fs::path(output), resamples, level,
                            smooth, analyze_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
