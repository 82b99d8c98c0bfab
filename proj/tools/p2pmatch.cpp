// Command-line entry point: generate, run, verify, report.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "p2pmatch/config.hpp"
#include "p2pmatch/harness.hpp"
#include "p2pmatch/io.hpp"
#include "p2pmatch/verify.hpp"

namespace {

using namespace p2pmatch;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kCounterexample = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

ExperimentConfig resolve(const Overrides& o) {
  auto c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.threads) c.threads = *o.threads;
  c.validate();
  return c;
}

int cmd_generate(const Overrides& o) {
  const auto c = resolve(o);
  const auto inst = generate_instance(c.generation, c.seed);
  if (!o.out) {
    write_instance(std::cout, inst);
    return kOk;
  }
  std::ofstream out(*o.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + *o.out);
  write_instance(out, inst);
  return kOk;
}

void dump_models(const std::filesystem::path& dir, const ExperimentConfig& c) {
  const auto inst = generate_instance(c.generation, c.seed);
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "opt.lp", std::ios::binary);
    write_lp_format(build_opt(inst, c.lambda1, c.lambda2), out);
  }
  // First per-round program: every upper bound is still infinite.
  const auto state = BanditState::initial(inst);
  std::ofstream out(dir / "mq1_round1.lp", std::ios::binary);
  write_lp_format(build_mq1(inst, state.cu, inst.borrower_utility, c.lambda1, c.lambda2), out);
}

int cmd_run(const Overrides& o, bool dump_lp, bool plots) {
  const auto c = resolve(o);
  for (const auto& w : c.warnings()) std::cerr << "warning: " << w << "\n";
  const std::filesystem::path dir = c.out_dir;
  std::filesystem::create_directories(dir);
  std::filesystem::remove(dir / "DONE");
  if (dump_lp) dump_models(dir, c);
  const auto result = run_experiment(c);
  for (const auto& a : result.algorithms)
    std::cout << a.spec.name << ": mean final sum of regret " << format_number(a.regret.sum_mean.back()) << "\n";
  write_experiment(dir, c, result, plots);
  return kOk;
}

int cmd_verify(std::size_t instances, std::size_t solver_instances, std::size_t k_max, std::size_t n_max,
               std::uint64_t seed, bool corrupt) {
  const auto th = verify_equivalence_suite(instances, 2, 3, seed, corrupt);
  const auto sv = verify_solver_suite(solver_instances, k_max, n_max, seed);
  for (const auto& line : th.counterexamples) std::cout << line << "\n";
  for (const auto& line : sv.counterexamples) std::cout << line << "\n";
  std::cout << "theorem1: " << th.cases << " cases, " << th.mismatched_cases << " mismatches; solver: "
            << sv.instances << " instances, " << sv.gaps << " gaps\n";
  return th.mismatched_cases == 0 && sv.gaps == 0 ? kOk : kCounterexample;
}

int cmd_report(const std::string& dir, bool plots) {
  const auto traces = read_regret_files(dir);
  if (traces.empty()) throw std::runtime_error("no regret_<alg>.csv files in " + dir);
  std::vector<std::string> names;
  std::vector<const RegretTrace*> ptrs;
  for (const auto& [name, trace] : traces) {
    names.push_back(name);
    ptrs.push_back(&trace);
  }
  std::ofstream out(std::filesystem::path(dir) / "summary.csv", std::ios::binary);
  write_summary(out, names, ptrs);
  if (plots) write_regret_plots(dir, names, ptrs);
  for (std::size_t i = 0; i < names.size(); ++i)
    std::cout << names[i] << ": mean final sum of regret " << format_number(ptrs[i]->sum_mean.back()) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bandit-driven matching for peer lending markets"};
  app.require_subcommand(1);

  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI experiment config");
    sub->add_option("--seed", o.seed, "root seed (overrides the config)");
  };

  auto* generate = app.add_subcommand("generate", "write a generated market instance");
  add_common(generate);
  generate->add_option("--out", o.out, "instance file (default: stdout)");

  bool dump_lp = false, plots = false;
  auto* run = app.add_subcommand("run", "run an experiment and write CSVs");
  add_common(run);
  run->add_option("--out", o.out, "output directory (overrides the config)");
  run->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--dump-lp", dump_lp, "also write the benchmark and first-round programs in LP format");
  run->add_flag("--plots", plots, "also write SVG plots");

  std::size_t instances = 20, solver_instances = 100, k_max = 3, n_max = 5;
  std::uint64_t verify_seed = 1;
  bool corrupt = false;
  auto* verify = app.add_subcommand("verify", "exhaustive stability and solver checks");
  verify->add_option("--instances", instances, "markets for the blocking-pair check (K=2, N=3)");
  verify->add_option("--solver-instances", solver_instances, "markets for the solver check");
  verify->add_option("--k-max", k_max, "largest K in the solver check")->check(CLI::Range(1, 4));
  verify->add_option("--n-max", n_max, "largest N in the solver check")->check(CLI::Range(1, 6));
  verify->add_option("--seed", verify_seed, "first instance seed");
  verify->add_flag("--corrupt-inequality", corrupt, "use a deliberately wrong inequality")->group("");

  std::string report_dir;
  bool report_plots = false;
  auto* report = app.add_subcommand("report", "re-aggregate regret CSVs into summary.csv");
  report->add_option("--out", report_dir, "directory holding regret_<alg>.csv")->required();
  report->add_flag("--plots", report_plots, "also write SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*generate) return cmd_generate(o);
    if (*run) return cmd_run(o, dump_lp, plots);
    if (*verify) {
      if (n_max < k_max) throw std::invalid_argument("--n-max must be at least --k-max");
      return cmd_verify(instances, solver_instances, k_max, n_max, verify_seed, corrupt);
    }
    if (*report) return cmd_report(report_dir, report_plots);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ExperimentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
