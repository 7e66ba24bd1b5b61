#include "flhc/hac.hpp"

#include <map>
#include <numeric>

#include <json.hpp>

namespace flhc {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::L1: return "l1";
    case Metric::L2: return "l2";
    case Metric::Cosine: return "cosine";
  }
  return "?";
}

std::string to_string(Linkage l) {
  switch (l) {
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
    case Linkage::Average: return "average";
    case Linkage::Ward: return "ward";
  }
  return "?";
}

void ClusteringConfig::validate() const {
  if (linkage == Linkage::Ward && metric != Metric::L2)
    throw std::invalid_argument("ward linkage requires the l2 metric");
  if (!(threshold > 0.0)) throw std::invalid_argument("clustering.threshold must be positive");
}

ClusterAssignment cut_by_threshold(const Dendrogram& d, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("threshold must be positive");
  const int n = d.leaf_count;
  // Union-find over node ids; merged nodes point at their new id.
  std::vector<int> parent(std::size_t(std::max(2 * n - 1, 1)));
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const Merge& m : d.merges) {
    if (!(m.distance < threshold)) break;
    parent[root(m.a)] = m.new_id;
    parent[root(m.b)] = m.new_id;
  }

  std::map<int, std::vector<int>> by_root;
  for (int leaf = 0; leaf < n; ++leaf) by_root[root(leaf)].push_back(leaf);
  ClusterAssignment out;
  for (auto& [r, members] : by_root) out.clusters.push_back(std::move(members));
  std::sort(out.clusters.begin(), out.clusters.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });
  return out;
}

std::string dendrogram_json(const Dendrogram& d) {
  nlohmann::json merges = nlohmann::json::array();
  for (const Merge& m : d.merges)
    merges.push_back({{"a", m.a}, {"b", m.b}, {"distance", m.distance}, {"new_id", m.new_id}});
  return nlohmann::json{{"leaf_count", d.leaf_count}, {"merges", merges}}.dump(2);
}

std::vector<int> leaf_labels(const ClusterAssignment& assignment, int leaf_count) {
  std::vector<int> labels(leaf_count, -1);
  for (std::size_t c = 0; c < assignment.clusters.size(); ++c)
    for (int leaf : assignment.clusters[c]) labels.at(leaf) = int(c);
  return labels;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("labelings differ in length");
  const double n = double(a.size());
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  double index = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : joint) index += pairs(v);
  for (auto& [k, v] : ra) sum_a += pairs(v);
  for (auto& [k, v] : rb) sum_b += pairs(v);
  if (n < 2) return 1.0;
  const double expected = sum_a * sum_b / pairs(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  // Degenerate when both labelings are all-one-cluster or all-singletons.
  if (max_index == expected) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace flhc
