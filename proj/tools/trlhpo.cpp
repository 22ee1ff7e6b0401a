// Command-line front end: run a search, build reports from a run log, or
// evaluate a single architecture.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "trlhpo/analysis/reports.hpp"
#include "trlhpo/analysis/run_config.hpp"
#include "trlhpo/analysis/search.hpp"

namespace fs = std::filesystem;
using namespace trlhpo;

namespace {

nlohmann::json read_json_arg(const std::string& arg) {
  if (fs::exists(arg)) {
    std::ifstream in(arg);
    return nlohmann::json::parse(in);
  }
  return nlohmann::json::parse(arg);
}

int cmd_run(const std::string& config_path, bool surrogate, std::optional<std::uint64_t> seed,
            std::optional<double> budget_s, const std::string& out, bool resume) {
  analysis::RunConfig cfg = config_path.empty() ? analysis::RunConfig{} : analysis::load_config(config_path);
  if (surrogate) cfg.evaluator = analysis::EvaluatorMode::Surrogate;
  if (seed) cfg.seed = *seed;
  if (budget_s) cfg.wallclock_budget_s = *budget_s;
  if (!out.empty()) cfg.out_dir = out;

  const auto result = analysis::run_search(cfg, {.evaluator = nullptr, .resume = resume});
  std::cout << "episodes: " << result.episodes_completed << " (stopped by " << result.stopped_by << ")\n";
  std::cout << "evaluations: " << result.evaluations << ", incidents: " << result.incidents << "\n";
  std::cout << "best accuracy: " << result.best_accuracy << "\n";
  if (!result.best_arch.is_null()) std::cout << "best architecture: " << arch_from_json(result.best_arch).describe() << "\n";
  std::cout << "run log: " << result.log_path.string() << "\n";
  return 0;
}

int cmd_report(const std::string& log_path, const std::string& out, std::optional<double> budget_s, std::size_t k) {
  const auto log = analysis::read_run_log(log_path);
  const auto bundle = analysis::compute_reports(log, budget_s, k);
  analysis::export_reports(bundle, out);

  const auto& a = bundle.acctime;
  if (a.empty) {
    std::cout << "AccTime: " << a.message << "\n";
  } else {
    std::cout << "AccTime (" << a.budget_s << " s): best " << a.best << ", top-" << a.k << " " << a.top_k_mean
              << " +/- " << a.top_k_sd << "\n";
  }
  std::cout << "negative-reward layer pairs:";
  if (bundle.affinity.empty()) std::cout << " none";
  for (const auto& r : bundle.affinity) std::cout << " (" << r.previous << "," << r.current << ")=" << r.count;
  std::cout << "\n";
  if (bundle.attention.empty) {
    std::cout << "attention difference: " << bundle.attention.message << "\n";
  } else {
    std::cout << "attention difference: mean " << bundle.attention.mean << ", sd " << bundle.attention.sd << " over "
              << bundle.attention.pairs << " pairs\n";
  }
  std::cout << "reports written to " << out << "\n";
  return 0;
}

int cmd_eval_one(const std::string& arch_arg, bool surrogate, const std::string& config_path,
                 std::optional<std::uint64_t> seed) {
  analysis::RunConfig cfg = config_path.empty() ? analysis::RunConfig{} : analysis::load_config(config_path);
  if (surrogate) cfg.evaluator = analysis::EvaluatorMode::Surrogate;
  if (seed) {
    cfg.budget.seed = *seed;
    cfg.surrogate_seed = *seed;
  }
  const auto arch = arch_from_json(read_json_arg(arch_arg));
  std::cout << "architecture: " << arch.describe() << "\n";
  std::cout << "digest: " << arch_hash(arch) << "\n";
  auto eval = analysis::make_evaluator(cfg);
  const auto outcome = eval->evaluate(arch);
  std::cout << evaluator::outcome_to_json(outcome).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer actor-critic search over CNN architectures"};
  app.require_subcommand(1);

  std::string config, out, log, arch;
  bool surrogate = false, resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget_s;
  std::size_t top_k = 10;

  auto* run = app.add_subcommand("run", "Run a search and write out_dir/run_log.jsonl");
  run->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
  run->add_flag("--surrogate", surrogate, "Use the analytic surrogate instead of training");
  run->add_option("--seed", seed, "Run seed");
  run->add_option("--budget-s", budget_s, "Wall-clock budget in seconds");
  run->add_option("--out", out, "Output directory (overrides out_dir)");
  run->add_flag("--resume", resume, "Continue from the last checkpoint in the output directory");

  auto* report = app.add_subcommand("report", "Compute AccTime and transparency reports from a run log");
  report->add_option("--log", log, "Run log (JSON lines)")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "Report directory")->required();
  report->add_option("--budget-s", budget_s, "AccTime budget; default covers the whole log");
  report->add_option("--top-k", top_k, "Models averaged for AccTime dispersion");

  auto* eval_one = app.add_subcommand("eval-one", "Evaluate one architecture");
  eval_one->add_option("--arch", arch, "Architecture JSON, inline or a file path")->required();
  eval_one->add_flag("--surrogate", surrogate, "Use the analytic surrogate instead of training");
  eval_one->add_option("--config", config, "JSON config file (dataset, budget)")->check(CLI::ExistingFile);
  eval_one->add_option("--seed", seed, "Training or surrogate seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, surrogate, seed, budget_s, out, resume);
    if (*report) return cmd_report(log, out, budget_s, top_k);
    if (*eval_one) return cmd_eval_one(arch, surrogate, config, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
