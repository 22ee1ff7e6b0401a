#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trlhpo/analysis/run_log.hpp"

namespace trlhpo::analysis {

struct ModelEntry {
  std::string digest;
  double accuracy = 0.0;
  double completed_at = 0.0;
  nlohmann::json arch;
};

/// Distinct evaluated models, first completion per digest, in log order.
inline std::vector<ModelEntry> completed_models(const RunLog& log) {
  std::vector<ModelEntry> out;
  std::map<std::string, std::size_t> seen;
  for (const auto& s : log.steps) {
    auto [it, fresh] = seen.emplace(s.digest, out.size());
    if (fresh) {
      out.push_back({s.digest, s.overall_accuracy, s.t_end, s.arch});
    } else if (s.t_end < out[it->second].completed_at) {
      out[it->second].completed_at = s.t_end;
    }
  }
  return out;
}

struct AccTimeResult {
  bool empty = true;
  std::string message;  // "no models in budget" when empty
  double budget_s = 0.0;
  std::size_t models_in_budget = 0;
  std::size_t k = 0;  // models actually averaged (≤ requested top-k)
  double best = 0.0;
  double top_k_mean = 0.0;
  double top_k_sd = 0.0;  // sample sd (n − 1); 0 for a single model
  bool operator==(const AccTimeResult&) const = default;
};

/// Best accuracy among models completed by `budget_s`, plus mean and sd over the top k.
inline AccTimeResult metric_acctime(const RunLog& log, double budget_s, std::size_t k = 10) {
  AccTimeResult r;
  r.budget_s = budget_s;
  std::vector<double> accs;
  for (const auto& m : completed_models(log)) {
    if (m.completed_at <= budget_s) accs.push_back(m.accuracy);
  }
  r.models_in_budget = accs.size();
  if (accs.empty() || k == 0) {
    r.message = "no models in budget";
    return r;
  }
  std::sort(accs.begin(), accs.end(), std::greater<>());
  r.empty = false;
  r.best = accs.front();
  r.k = std::min(k, accs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < r.k; ++i) sum += accs[i];
  r.top_k_mean = sum / static_cast<double>(r.k);
  if (r.k > 1) {
    double ss = 0.0;
    for (std::size_t i = 0; i < r.k; ++i) ss += (accs[i] - r.top_k_mean) * (accs[i] - r.top_k_mean);
    r.top_k_sd = std::sqrt(ss / static_cast<double>(r.k - 1));
  }
  return r;
}

inline nlohmann::json acctime_to_json(const AccTimeResult& r) {
  return {{"empty", r.empty},         {"message", r.message}, {"budget_s", r.budget_s},
          {"models_in_budget", r.models_in_budget}, {"k", r.k}, {"best", r.best},
          {"top_k_mean", r.top_k_mean}, {"top_k_sd", r.top_k_sd}};
}

inline AccTimeResult acctime_from_json(const nlohmann::json& j) {
  AccTimeResult r;
  r.empty = j.at("empty").get<bool>();
  r.message = j.at("message").get<std::string>();
  r.budget_s = j.at("budget_s").get<double>();
  r.models_in_budget = j.at("models_in_budget").get<std::size_t>();
  r.k = j.at("k").get<std::size_t>();
  r.best = j.at("best").get<double>();
  r.top_k_mean = j.at("top_k_mean").get<double>();
  r.top_k_sd = j.at("top_k_sd").get<double>();
  return r;
}

inline constexpr const char* kStartKind = "START";

using KindPair = std::pair<std::string, std::string>;

struct AffinityRow {
  std::string previous;
  std::string current;
  std::size_t count = 0;
  bool operator==(const AffinityRow&) const = default;
};

/// Counts (previous kind, current kind) over negative-reward steps, most
/// frequent first; ties ordered by the pair itself.
inline std::vector<AffinityRow> report_layer_affinity(const RunLog& log) {
  std::map<KindPair, std::size_t> counts;
  for (const auto& s : log.steps) {
    if (!(s.reward < 0.0)) continue;
    const auto& layers = s.arch.at("layers");
    const std::string prev = s.step == 0 || layers.size() < 2 ? kStartKind
                                                               : layers[layers.size() - 2].at("kind").get<std::string>();
    ++counts[{prev, layer_kind(s)}];
  }
  std::vector<AffinityRow> rows;
  for (const auto& [pair, n] : counts) rows.push_back({pair.first, pair.second, n});
  std::stable_sort(rows.begin(), rows.end(), [](const AffinityRow& a, const AffinityRow& b) { return a.count > b.count; });
  return rows;
}

inline std::string affinity_to_csv(const std::vector<AffinityRow>& rows) {
  std::string s = "previous,current,count\n";
  for (const auto& r : rows) s += r.previous + "," + r.current + "," + std::to_string(r.count) + "\n";
  return s;
}

inline std::vector<AffinityRow> affinity_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  if (line != "previous,current,count") throw std::runtime_error("layer_affinity.csv: bad header '" + line + "'");
  std::vector<AffinityRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw std::runtime_error("layer_affinity.csv: bad row '" + line + "'");
    rows.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), std::stoul(line.substr(b + 1))});
  }
  return rows;
}

inline constexpr std::size_t kAttentionBins = 20;

struct AttentionDiffResult {
  bool empty = true;
  std::string message;  // "insufficient data" when empty
  std::size_t pairs = 0;
  std::size_t rollouts = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample sd (n − 1)
  /// Bin i counts differences in [-1 + i·0.1, -1 + (i+1)·0.1); 1.0 falls in the last bin.
  std::vector<std::size_t> histogram = std::vector<std::size_t>(kAttentionBins, 0);
  std::vector<double> differences;
  bool operator==(const AttentionDiffResult&) const = default;
};

/// Per rollout, the final recorded attention row (whose query sees every
/// generated slot) is read at the slot of the best-reward layer and at the
/// slot of each negative-reward layer; each pair contributes best − negative.
inline AttentionDiffResult report_attention_diff(const RunLog& log) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<const StepRecord*>> by_rollout;
  for (const auto& s : log.steps) by_rollout[{s.episode, s.rollout}].push_back(&s);
  AttentionDiffResult r;
  for (auto& [key, steps] : by_rollout) {
    std::sort(steps.begin(), steps.end(), [](const StepRecord* a, const StepRecord* b) { return a->step < b->step; });
    const StepRecord* last = steps.back();
    const auto& row = last->next_attention;
    if (row.empty()) continue;
    const StepRecord* best = nullptr;
    for (const auto* s : steps) {
      if (!best || s->reward > best->reward) best = s;
    }
    if (!best || !(best->reward > 0.0) || best->step >= row.size()) continue;
    bool used = false;
    for (const auto* s : steps) {
      if (!(s->reward < 0.0) || s->step >= row.size()) continue;
      r.differences.push_back(row[best->step] - row[s->step]);
      used = true;
    }
    if (used) ++r.rollouts;
  }
  r.pairs = r.differences.size();
  if (r.differences.empty()) {
    r.message = "insufficient data";
    return r;
  }
  r.empty = false;
  double sum = 0.0;
  for (double d : r.differences) sum += d;
  r.mean = sum / static_cast<double>(r.pairs);
  if (r.pairs > 1) {
    double ss = 0.0;
    for (double d : r.differences) ss += (d - r.mean) * (d - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(r.pairs - 1));
  }
  for (double d : r.differences) {
    const auto bin = static_cast<std::size_t>(std::clamp((d + 1.0) / 2.0 * kAttentionBins, 0.0, kAttentionBins - 1.0));
    ++r.histogram[bin];
  }
  return r;
}

inline nlohmann::json attention_diff_to_json(const AttentionDiffResult& r) {
  return {{"empty", r.empty}, {"message", r.message}, {"pairs", r.pairs},         {"rollouts", r.rollouts},
          {"mean", r.mean},   {"sd", r.sd},           {"histogram", r.histogram}, {"differences", r.differences}};
}

inline AttentionDiffResult attention_diff_from_json(const nlohmann::json& j) {
  AttentionDiffResult r;
  r.empty = j.at("empty").get<bool>();
  r.message = j.at("message").get<std::string>();
  r.pairs = j.at("pairs").get<std::size_t>();
  r.rollouts = j.at("rollouts").get<std::size_t>();
  r.mean = j.at("mean").get<double>();
  r.sd = j.at("sd").get<double>();
  r.histogram = j.at("histogram").get<std::vector<std::size_t>>();
  r.differences = j.at("differences").get<std::vector<double>>();
  return r;
}

/// Summary line plus the histogram, one bin per row.
inline std::string attention_diff_to_csv(const AttentionDiffResult& r) {
  std::ostringstream s;
  s.precision(17);
  s << "# pairs=" << r.pairs << ",mean=" << r.mean << ",sd=" << r.sd << (r.empty ? ",insufficient data" : "") << "\n";
  s << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < r.histogram.size(); ++i) {
    const double lo = -1.0 + 2.0 * static_cast<double>(i) / kAttentionBins;
    s << lo << "," << lo + 2.0 / kAttentionBins << "," << r.histogram[i] << "\n";
  }
  return s.str();
}

/// Top distinct models by accuracy, canonical architectures included.
inline nlohmann::json best_models(const RunLog& log, std::size_t k = 10) {
  auto models = completed_models(log);
  std::stable_sort(models.begin(), models.end(), [](const ModelEntry& a, const ModelEntry& b) { return a.accuracy > b.accuracy; });
  if (models.size() > k) models.resize(k);
  auto arr = nlohmann::json::array();
  for (const auto& m : models) {
    arr.push_back({{"digest", m.digest}, {"accuracy", m.accuracy}, {"completed_at", m.completed_at}, {"arch", m.arch}});
  }
  return {{"models", arr}};
}

struct ReportBundle {
  AccTimeResult acctime;
  std::vector<AffinityRow> affinity;
  AttentionDiffResult attention;
  nlohmann::json best;
  bool operator==(const ReportBundle&) const = default;
};

/// AccTime budget defaults to the whole log (latest completion).
inline ReportBundle compute_reports(const RunLog& log, std::optional<double> budget_s = std::nullopt, std::size_t k = 10) {
  double budget = 0.0;
  for (const auto& s : log.steps) budget = std::max(budget, s.t_end);
  ReportBundle b;
  b.acctime = metric_acctime(log, budget_s.value_or(budget), k);
  b.affinity = report_layer_affinity(log);
  b.attention = report_attention_diff(log);
  b.best = best_models(log, k);
  return b;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("report: write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace detail

/// Writes acctime.json, layer_affinity.csv, attention_diff.csv (plus the
/// full attention_diff.json) and best_models.json. The directory is probed
/// for writability first so a failure leaves no partial set behind.
inline void export_reports(const ReportBundle& b, const std::filesystem::path& outdir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(outdir, ec);
  const auto probe = outdir / ".write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw std::runtime_error("report: output directory " + outdir.string() + " is not writable");
  }
  fs::remove(probe, ec);
  detail::write_text(outdir / "acctime.json", acctime_to_json(b.acctime).dump(2) + "\n");
  detail::write_text(outdir / "layer_affinity.csv", affinity_to_csv(b.affinity));
  detail::write_text(outdir / "attention_diff.csv", attention_diff_to_csv(b.attention));
  detail::write_text(outdir / "attention_diff.json", attention_diff_to_json(b.attention).dump(2) + "\n");
  detail::write_text(outdir / "best_models.json", b.best.dump(2) + "\n");
}

inline ReportBundle load_reports(const std::filesystem::path& outdir) {
  ReportBundle b;
  b.acctime = acctime_from_json(nlohmann::json::parse(detail::read_text(outdir / "acctime.json")));
  b.affinity = affinity_from_csv(detail::read_text(outdir / "layer_affinity.csv"));
  b.attention = attention_diff_from_json(nlohmann::json::parse(detail::read_text(outdir / "attention_diff.json")));
  b.best = nlohmann::json::parse(detail::read_text(outdir / "best_models.json"));
  return b;
}

}  // namespace trlhpo::analysis
