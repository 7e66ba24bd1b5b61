#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flhc {

struct ClusterMetrics {
  int cluster_id = 0;
  int size = 0;
  double mean_accuracy = 0.0;

  bool operator==(const ClusterMetrics&) const = default;
};

struct RoundMetrics {
  int round = 0;
  double mean_test_accuracy = 0.0;     // [0, 1]
  double pct_clients_at_target = 0.0;  // [0, 100]
  int num_clusters = 1;
  std::vector<ClusterMetrics> per_cluster;
  std::int64_t wall_time_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "round,mean_test_accuracy,pct_clients_at_target,num_clusters,wall_time_ms";
inline constexpr const char* kClustersHeader = "round,cluster_id,size,mean_accuracy";

/// Accuracies are written with six fractional digits. Rounds must be
/// strictly increasing without gaps.
void write_csv(std::span<const RoundMetrics> run, const std::filesystem::path& path);
void write_cluster_csv(std::span<const RoundMetrics> run, const std::filesystem::path& path);

/// Reads a file produced by write_csv (per-cluster detail is not restored).
std::vector<RoundMetrics> read_csv(const std::filesystem::path& path);

/// True when the two metrics files agree on every column except wall_time_ms.
bool same_metrics(const std::filesystem::path& a, const std::filesystem::path& b);

/// FL+HC over FL ratios at matching rounds. A ratio is empty when the FL
/// value is zero.
struct ComparisonReport {
  std::optional<double> post_cluster_acc_ratio;
  std::optional<double> final_acc_ratio;
  std::optional<double> post_cluster_pct_ratio;
  std::optional<double> final_pct_ratio;
};

ComparisonReport compare(std::span<const RoundMetrics> flhc_run, std::span<const RoundMetrics> fl_run,
                         int post_cluster_round, int final_round);

/// "1.2x" style (one decimal), or "--" when undefined.
std::string format_ratio(const std::optional<double>& ratio);

std::string comparison_json(const ComparisonReport& report, int post_cluster_round,
                            int final_round);

const RoundMetrics& at_round(std::span<const RoundMetrics> run, int round);

}  // namespace flhc
