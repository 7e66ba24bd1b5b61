#include "flhc/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace flhc {

namespace {

void check_rounds(std::span<const RoundMetrics> run) {
  if (run.empty()) throw std::invalid_argument("no rounds to write");
  for (std::size_t i = 1; i < run.size(); ++i)
    if (run[i].round != run[i - 1].round + 1)
      throw std::invalid_argument("rounds must increase by one");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  return out;
}

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

nlohmann::json ratio_json(const std::optional<double>& r) {
  return r ? nlohmann::json(*r) : nlohmann::json(nullptr);
}

}  // namespace

void write_csv(std::span<const RoundMetrics> run, const std::filesystem::path& path) {
  check_rounds(run);
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& r : run)
    out << r.round << ',' << fixed6(r.mean_test_accuracy) << ',' << fixed6(r.pct_clients_at_target)
        << ',' << r.num_clusters << ',' << r.wall_time_ms << '\n';
}

void write_cluster_csv(std::span<const RoundMetrics> run, const std::filesystem::path& path) {
  check_rounds(run);
  auto out = open_out(path);
  out << kClustersHeader << '\n';
  for (const auto& r : run)
    for (const auto& c : r.per_cluster)
      out << r.round << ',' << c.cluster_id << ',' << c.size << ',' << fixed6(c.mean_accuracy)
          << '\n';
}

std::vector<RoundMetrics> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<RoundMetrics> run;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 5) throw std::runtime_error(path.string() + ": malformed row");
    RoundMetrics r;
    r.round = std::stoi(cells[0]);
    r.mean_test_accuracy = std::stod(cells[1]);
    r.pct_clients_at_target = std::stod(cells[2]);
    r.num_clusters = std::stoi(cells[3]);
    r.wall_time_ms = std::stoll(cells[4]);
    run.push_back(r);
  }
  return run;
}

bool same_metrics(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a), fb(b);
  if (!fa || !fb) throw std::runtime_error("cannot read metrics files for comparison");
  std::string la, lb;
  while (true) {
    const bool ga = bool(std::getline(fa, la));
    const bool gb = bool(std::getline(fb, lb));
    if (ga != gb) return false;
    if (!ga) return true;
    auto ca = split(la), cb = split(lb);
    if (ca.size() != cb.size() || ca.empty()) return false;
    ca.pop_back();  // wall_time_ms
    cb.pop_back();
    if (ca != cb) return false;
  }
}

const RoundMetrics& at_round(std::span<const RoundMetrics> run, int round) {
  for (const auto& r : run)
    if (r.round == round) return r;
  throw std::out_of_range("run has no round " + std::to_string(round));
}

ComparisonReport compare(std::span<const RoundMetrics> flhc_run, std::span<const RoundMetrics> fl_run,
                         int post_cluster_round, int final_round) {
  const auto& hp = at_round(flhc_run, post_cluster_round);
  const auto& hf = at_round(flhc_run, final_round);
  const auto& bp = at_round(fl_run, post_cluster_round);
  const auto& bf = at_round(fl_run, final_round);
  return {ratio(hp.mean_test_accuracy, bp.mean_test_accuracy),
          ratio(hf.mean_test_accuracy, bf.mean_test_accuracy),
          ratio(hp.pct_clients_at_target, bp.pct_clients_at_target),
          ratio(hf.pct_clients_at_target, bf.pct_clients_at_target)};
}

std::string format_ratio(const std::optional<double>& r) {
  if (!r) return "--";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fx", *r);
  return buf;
}

std::string comparison_json(const ComparisonReport& report, int post_cluster_round,
                            int final_round) {
  nlohmann::json j{
      {"post_cluster_round", post_cluster_round},
      {"final_round", final_round},
      {"post_cluster_acc_ratio", ratio_json(report.post_cluster_acc_ratio)},
      {"final_acc_ratio", ratio_json(report.final_acc_ratio)},
      {"post_cluster_pct_ratio", ratio_json(report.post_cluster_pct_ratio)},
      {"final_pct_ratio", ratio_json(report.final_pct_ratio)},
      {"display",
       {{"post_cluster_acc", format_ratio(report.post_cluster_acc_ratio)},
        {"final_acc", format_ratio(report.final_acc_ratio)},
        {"post_cluster_pct", format_ratio(report.post_cluster_pct_ratio)},
        {"final_pct", format_ratio(report.final_pct_ratio)}}}};
  return j.dump(2);
}

}  // namespace flhc
