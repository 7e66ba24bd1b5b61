#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flhc/model.hpp"

namespace flhc {

/// Labelled examples, one per column of `examples`, pixels in [0, 1].
struct LabelledDataset {
  Eigen::MatrixXd examples;
  std::vector<int> labels;
  int class_count = 10;
  InputShape shape;

  Eigen::Index size() const { return Eigen::Index(labels.size()); }
  /// Columns `idx` of this dataset, in the given order.
  LabelledDataset subset(const std::vector<Eigen::Index>& idx) const;
  void validate() const;
};

struct ClientDataset {
  int client_id = 0;
  std::string name;  // source id for pre-partitioned data
  LabelledDataset train;
  LabelledDataset test;
  std::optional<int> group;  // ground-truth group (label-swapped partitions)

  Eigen::Index n_k() const { return train.size(); }
};

enum class PartitionKind { Iid, Pathological, LabelSwapped, Prepartitioned };

/// Labels exchanged inside one group of a label-swapped partition. An
/// empty list leaves the group's labels untouched.
using SwapGroup = std::vector<std::pair<int, int>>;

std::vector<SwapGroup> default_swap_groups();

struct PartitionScheme {
  PartitionKind kind = PartitionKind::Iid;
  int num_clients = 100;
  int labels_per_client = 2;
  std::vector<SwapGroup> swap_groups = default_swap_groups();
  std::uint64_t seed = 0;

  void validate() const;
};

class DataError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, CountMismatch, Schema };

  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an IDX image/label file pair. Pixel bytes are divided by 255.
LabelledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                         int class_count = 10);

/// Number of items declared in an IDX header, without reading the payload.
std::uint32_t idx_item_count(const std::filesystem::path& file);

/// Pre-partitioned clients from the JSON exchange format:
/// {"class_count": int, "shape": [h, w, c],
///  "clients": [{"id": str, "examples": [{"x": [...], "label": int}, ...],
///               "test": [...optional, same layout as examples...]}, ...]}
/// Clients without a "test" list hold out floor(n/7) of their examples
/// (at least one when n >= 2) so the local test set is about train/6.
std::vector<ClientDataset> load_prepartitioned(const std::filesystem::path& path);

/// Local test sets hold floor(n_k / 6) examples (at least 1), drawn from
/// `test_pool` under the same rule that built the client's training data.
Eigen::Index test_size_for(Eigen::Index n_k);

std::vector<ClientDataset> partition_iid(const LabelledDataset& data,
                                         const LabelledDataset& test_pool, int num_clients,
                                         std::uint64_t seed);

/// Sort by label, cut into num_clients * labels_per_client equal contiguous
/// shards and deal labels_per_client shards to each client. Shards that
/// straddle a label boundary are dealt together with pure shards of their
/// own labels so no client ever sees more than labels_per_client labels.
std::vector<ClientDataset> partition_pathological(const LabelledDataset& data,
                                                  const LabelledDataset& test_pool,
                                                  int num_clients, int labels_per_client,
                                                  std::uint64_t seed);

/// Shuffle, split into one group per swap group, exchange the group's
/// labels, then split each group evenly among num_clients / groups clients.
std::vector<ClientDataset> partition_label_swapped(const LabelledDataset& data,
                                                   const LabelledDataset& test_pool,
                                                   int num_clients,
                                                   const std::vector<SwapGroup>& swap_groups,
                                                   std::uint64_t seed);

std::vector<ClientDataset> make_partition(const PartitionScheme& scheme,
                                          const LabelledDataset& data,
                                          const LabelledDataset& test_pool);

int apply_swap(const SwapGroup& group, int label);

/// Per-client (train, test) sizes a synthetic scheme would produce for a
/// pool of `pool_size` examples, without touching the data.
std::pair<Eigen::Index, Eigen::Index> planned_client_size(const PartitionScheme& scheme,
                                                          Eigen::Index pool_size);

}  // namespace flhc
