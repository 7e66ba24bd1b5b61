#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flhc {

enum class Metric { L1, L2, Cosine };
enum class Linkage { Single, Complete, Average, Ward };

std::string to_string(Metric m);
std::string to_string(Linkage l);

struct ClusteringConfig {
  Metric metric = Metric::L2;
  Linkage linkage = Linkage::Ward;
  double threshold = 3.0;

  /// Ward is only defined on the Euclidean metric; the threshold must be positive.
  void validate() const;
};

struct Merge {
  int a = 0;  // a < b
  int b = 0;
  double distance = 0.0;
  int new_id = 0;

  bool operator==(const Merge&) const = default;
};

/// Leaves are ids 0..leaf_count-1; merge i creates id leaf_count + i.
struct Dendrogram {
  std::vector<Merge> merges;
  int leaf_count = 0;
};

/// Each cluster lists leaf indices ascending; clusters are ordered by
/// their smallest leaf.
struct ClusterAssignment {
  std::vector<std::vector<int>> clusters;

  std::size_t size() const { return clusters.size(); }
};

template <typename DerivedA, typename DerivedB>
double pairwise_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                         Metric metric) {
  if (a.size() != b.size()) throw std::invalid_argument("vectors differ in length");
  switch (metric) {
    case Metric::L1:
      return double((a - b).template lpNorm<1>());
    case Metric::L2:
      return double((a - b).norm());
    case Metric::Cosine: {
      const double na = double(a.norm());
      const double nb = double(b.norm());
      if (na == 0.0 || nb == 0.0)
        throw std::domain_error("cosine distance is undefined for a zero vector");
      return std::clamp(1.0 - double(a.dot(b)) / (na * nb), 0.0, 2.0);
    }
  }
  return 0.0;
}

/// Agglomerative clustering with a full distance matrix, O(n^3).
///
/// Single and complete linkage take the min / max pairwise distance across
/// two clusters. Average linkage is the distance between the two cluster
/// means (centroid linkage), not the mean of pairwise distances. Ward runs
/// the Lance-Williams recurrence on squared Euclidean distances and reports
/// sqrt(2 * increase in within-cluster sum of squares), which equals the
/// plain Euclidean distance when two singletons merge.
///
/// Ties go to the lexicographically smallest (a, b) cluster-id pair.
template <typename Scalar>
Dendrogram build_dendrogram(const std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& points,
                            Metric metric, Linkage linkage) {
  ClusteringConfig{metric, linkage, 1.0}.validate();
  const int n = int(points.size());
  if (n == 0) throw std::invalid_argument("clustering needs at least one point");
  for (const auto& p : points)
    if (p.size() != points.front().size()) throw std::invalid_argument("points differ in length");

  Dendrogram d;
  d.leaf_count = n;
  const int total = 2 * n - 1;
  const bool ward = linkage == Linkage::Ward;
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(total, total);
  std::vector<int> sizes(total, 1);
  std::vector<Eigen::VectorXd> centroids;
  if (linkage == Linkage::Average) {
    centroids.resize(total);
    for (int i = 0; i < n; ++i) centroids[i] = points[i].template cast<double>();
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = pairwise_distance(points[i], points[j], metric);
      dist(i, j) = dist(j, i) = ward ? v * v : v;
    }

  std::vector<int> active(n);
  for (int i = 0; i < n; ++i) active[i] = i;

  for (int step = 0; step < n - 1; ++step) {
    int best_a = -1, best_b = -1;
    double best = 0.0;
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const double v = dist(active[i], active[j]);
        if (best_a < 0 || v < best) {
          best = v;
          best_a = active[i];
          best_b = active[j];
        }
      }

    const int merged = n + step;
    const double na = sizes[best_a], nb = sizes[best_b];
    sizes[merged] = sizes[best_a] + sizes[best_b];
    if (linkage == Linkage::Average)
      centroids[merged] = (na * centroids[best_a] + nb * centroids[best_b]) / (na + nb);
    d.merges.push_back({best_a, best_b, ward ? std::sqrt(std::max(best, 0.0)) : best, merged});

    std::erase(active, best_a);
    std::erase(active, best_b);
    for (int k : active) {
      double v = 0.0;
      switch (linkage) {
        case Linkage::Single:
          v = std::min(dist(best_a, k), dist(best_b, k));
          break;
        case Linkage::Complete:
          v = std::max(dist(best_a, k), dist(best_b, k));
          break;
        case Linkage::Average:
          v = pairwise_distance(centroids[merged], centroids[k], metric);
          break;
        case Linkage::Ward: {
          const double nk = sizes[k];
          v = ((na + nk) * dist(best_a, k) + (nb + nk) * dist(best_b, k) - nk * best) /
              (na + nb + nk);
          break;
        }
      }
      dist(merged, k) = dist(k, merged) = v;
    }
    active.push_back(merged);
    if (linkage == Linkage::Average) {
      centroids[best_a] = Eigen::VectorXd();
      centroids[best_b] = Eigen::VectorXd();
    }
  }
  return d;
}

/// Applies merges in order while their distance is below `threshold`;
/// merging stops at the first merge at or above it.
ClusterAssignment cut_by_threshold(const Dendrogram& d, double threshold);

/// {"leaf_count": n, "merges": [{"a": .., "b": .., "distance": .., "new_id": ..}, ...]}
std::string dendrogram_json(const Dendrogram& d);

/// Label of every leaf under the given assignment.
std::vector<int> leaf_labels(const ClusterAssignment& assignment, int leaf_count);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace flhc
