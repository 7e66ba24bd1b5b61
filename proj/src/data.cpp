#include "flhc/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "flhc/rng.hpp"

namespace flhc {

namespace {

using Eigen::Index;
using json = nlohmann::json;
using IndexList = std::vector<Index>;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at) {
  return (std::uint32_t(buf[at]) << 24) | (std::uint32_t(buf[at + 1]) << 16) |
         (std::uint32_t(buf[at + 2]) << 8) | std::uint32_t(buf[at + 3]);
}

void expect_magic(const std::vector<unsigned char>& buf, std::uint32_t magic,
                  const std::filesystem::path& path) {
  if (buf.size() < 8) throw DataError(DataError::Kind::Truncated, path.string() + ": short header");
  const std::uint32_t got = read_be32(buf, 0);
  if (got != magic) {
    char msg[96];
    std::snprintf(msg, sizeof msg, ": magic 0x%08x, expected 0x%08x", got, magic);
    throw DataError(DataError::Kind::BadMagic, path.string() + msg);
  }
}

IndexList iota(Index n) {
  IndexList v(n);
  std::iota(v.begin(), v.end(), Index(0));
  return v;
}

// k distinct columns of `pool` among `candidates`, uniformly at random.
IndexList sample_from(IndexList candidates, Index k, Rng& rng) {
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min<Index>(k, Index(candidates.size())));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

Rng client_rng(std::uint64_t seed, int client_id) {
  return make_rng(derive_seed({seed, std::uint64_t(Stream::Partition), std::uint64_t(client_id)}));
}

void log_dropped(const char* scheme, Index dropped) {
  if (dropped > 0) spdlog::info("{} partition: dropped {} remainder examples", scheme, dropped);
}

void check_pools(const LabelledDataset& data, const LabelledDataset& test_pool, int num_clients) {
  if (num_clients < 1) throw std::invalid_argument("num_clients must be positive");
  if (data.size() < num_clients)
    throw std::invalid_argument("fewer examples than clients");
  if (test_pool.size() == 0) throw std::invalid_argument("empty test pool");
  if (test_pool.examples.rows() != data.examples.rows())
    throw std::invalid_argument("test pool example size differs from training data");
}

std::map<int, Index> label_histogram(const LabelledDataset& d) {
  std::map<int, Index> h;
  for (int y : d.labels) ++h[y];
  return h;
}

LabelledDataset relabel(LabelledDataset d, const SwapGroup& group) {
  for (int& y : d.labels) y = apply_swap(group, y);
  return d;
}

// ------------------------------------------------------------------ JSON

[[noreturn]] void schema_error(const std::string& field, const std::string& what) {
  throw DataError(DataError::Kind::Schema, field + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) schema_error(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(where + "." + key, "missing");
  return *it;
}

LabelledDataset parse_examples(const json& list, const std::string& where, int class_count,
                               const InputShape& shape) {
  if (!list.is_array()) schema_error(where, "expected an array");
  LabelledDataset d;
  d.class_count = class_count;
  d.shape = shape;
  d.examples.resize(shape.size(), Index(list.size()));
  d.labels.reserve(list.size());
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    const json& x = require(list[i], "x", at);
    const json& y = require(list[i], "label", at);
    if (!x.is_array() || Index(x.size()) != shape.size())
      schema_error(at + ".x", "expected " + std::to_string(shape.size()) + " reals");
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (!x[j].is_number()) schema_error(at + ".x", "non-numeric pixel");
      const double v = x[j].get<double>();
      if (!(v >= 0.0 && v <= 1.0)) schema_error(at + ".x", "pixel outside [0, 1]");
      d.examples(Index(j), Index(i)) = v;
    }
    if (!y.is_number_integer()) schema_error(at + ".label", "expected an integer");
    const int label = y.get<int>();
    if (label < 0 || label >= class_count) schema_error(at + ".label", "outside [0, class_count)");
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace

// ------------------------------------------------------------ datasets

LabelledDataset LabelledDataset::subset(const std::vector<Index>& idx) const {
  LabelledDataset out;
  out.class_count = class_count;
  out.shape = shape;
  out.examples = examples(Eigen::all, idx);
  out.labels.reserve(idx.size());
  for (Index i : idx) out.labels.push_back(labels[i]);
  return out;
}

void LabelledDataset::validate() const {
  if (examples.cols() != size()) throw std::invalid_argument("example/label count mismatch");
  if (examples.rows() != shape.size()) throw std::invalid_argument("example size mismatch");
  for (int y : labels)
    if (y < 0 || y >= class_count) throw std::invalid_argument("label out of range");
  if (size() > 0 && (examples.minCoeff() < 0.0 || examples.maxCoeff() > 1.0))
    throw std::invalid_argument("pixel outside [0, 1]");
}

std::vector<SwapGroup> default_swap_groups() { return {{{0, 8}}, {{1, 7}}, {{3, 9}}, {{4, 6}}}; }

int apply_swap(const SwapGroup& group, int label) {
  for (auto [a, b] : group) {
    if (label == a) return b;
    if (label == b) return a;
  }
  return label;
}

void PartitionScheme::validate() const {
  if (num_clients < 1) throw std::invalid_argument("partition.num_clients must be positive");
  if (kind == PartitionKind::Pathological && labels_per_client < 1)
    throw std::invalid_argument("partition.labels_per_client must be positive");
  if (kind == PartitionKind::LabelSwapped) {
    if (swap_groups.empty()) throw std::invalid_argument("partition.swap_groups is empty");
    if (num_clients % int(swap_groups.size()) != 0)
      throw std::invalid_argument("partition.num_clients must be divisible by the swap group count");
    std::set<int> seen;
    for (const auto& g : swap_groups)
      for (auto [a, b] : g) {
        if (a == b || a < 0 || b < 0)
          throw std::invalid_argument("partition.swap_groups: invalid pair");
        if (!seen.insert(a).second || !seen.insert(b).second)
          throw std::invalid_argument("partition.swap_groups: pairs must be disjoint");
      }
  }
}

// ----------------------------------------------------------------- IDX

std::uint32_t idx_item_count(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open " + file.string());
  std::vector<unsigned char> head(8);
  in.read(reinterpret_cast<char*>(head.data()), 8);
  if (in.gcount() != 8) throw DataError(DataError::Kind::Truncated, file.string() + ": short header");
  return read_be32(head, 4);
}

LabelledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                         int class_count) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  expect_magic(img, kIdxImagesMagic, images);
  expect_magic(lab, kIdxLabelsMagic, labels);
  if (img.size() < 16) throw DataError(DataError::Kind::Truncated, images.string() + ": short header");

  const std::uint32_t count = read_be32(img, 4);
  const std::uint32_t rows = read_be32(img, 8);
  const std::uint32_t cols = read_be32(img, 12);
  const std::uint32_t label_count = read_be32(lab, 4);
  if (count != label_count)
    throw DataError(DataError::Kind::CountMismatch,
                    "images declare " + std::to_string(count) + " items, labels declare " +
                        std::to_string(label_count));
  const std::size_t pixels = std::size_t(rows) * cols;
  if (img.size() < 16 + pixels * count)
    throw DataError(DataError::Kind::Truncated, images.string() + ": truncated pixel data");
  if (lab.size() < 8 + std::size_t(count))
    throw DataError(DataError::Kind::Truncated, labels.string() + ": truncated label data");

  LabelledDataset d;
  d.class_count = class_count;
  d.shape = {int(rows), int(cols), 1};
  d.examples.resize(Index(pixels), Index(count));
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* src = img.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) d.examples(Index(p), Index(i)) = src[p] / 255.0;
    d.labels[i] = lab[8 + i];
    if (d.labels[i] >= class_count)
      throw DataError(DataError::Kind::Schema, labels.string() + ": label " +
                                                   std::to_string(d.labels[i]) + " out of range");
  }
  return d;
}

// ------------------------------------------------------- pre-partitioned

std::vector<ClientDataset> load_prepartitioned(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(DataError::Kind::Schema, path.string() + ": " + e.what());
  }

  const json& cc = require(doc, "class_count", "$");
  if (!cc.is_number_integer() || cc.get<int>() < 2) schema_error("$.class_count", "expected an integer >= 2");
  const int class_count = cc.get<int>();
  const json& sh = require(doc, "shape", "$");
  if (!sh.is_array() || sh.size() != 3) schema_error("$.shape", "expected [h, w, c]");
  InputShape shape;
  try {
    shape = {sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>()};
  } catch (const json::exception&) {
    schema_error("$.shape", "expected integers");
  }
  if (shape.height < 1 || shape.width < 1 || shape.channels < 1)
    schema_error("$.shape", "dimensions must be positive");

  const json& clients = require(doc, "clients", "$");
  if (!clients.is_array() || clients.empty()) schema_error("$.clients", "expected a non-empty array");

  std::vector<ClientDataset> out;
  std::set<std::string> ids;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const std::string at = "$.clients[" + std::to_string(k) + "]";
    const json& id = require(clients[k], "id", at);
    if (!id.is_string()) schema_error(at + ".id", "expected a string");
    if (!ids.insert(id.get<std::string>()).second)
      schema_error(at + ".id", "duplicate client id '" + id.get<std::string>() + "'");

    LabelledDataset all = parse_examples(require(clients[k], "examples", at), at + ".examples",
                                         class_count, shape);
    if (all.size() == 0) schema_error(at + ".examples", "client has no examples");

    ClientDataset c;
    c.client_id = int(k);
    c.name = id.get<std::string>();
    if (auto t = clients[k].find("test"); t != clients[k].end()) {
      c.train = std::move(all);
      c.test = parse_examples(*t, at + ".test", class_count, shape);
    } else {
      IndexList train_idx, test_idx;
      for (Index i = 0; i < all.size(); ++i) (i % 7 == 6 ? test_idx : train_idx).push_back(i);
      if (test_idx.empty() && all.size() >= 2) {
        test_idx.push_back(train_idx.back());
        train_idx.pop_back();
      }
      c.train = all.subset(train_idx);
      // A single-example client is evaluated on that example.
      c.test = test_idx.empty() ? c.train : all.subset(test_idx);
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------- partitions

Index test_size_for(Index n_k) { return std::max<Index>(1, n_k / 6); }

std::vector<ClientDataset> partition_iid(const LabelledDataset& data,
                                         const LabelledDataset& test_pool, int num_clients,
                                         std::uint64_t seed) {
  check_pools(data, test_pool, num_clients);
  Rng rng = make_rng(derive_seed({seed, std::uint64_t(Stream::Partition)}));
  IndexList order = iota(data.size());
  std::shuffle(order.begin(), order.end(), rng);
  const Index per = data.size() / num_clients;
  log_dropped("iid", data.size() - per * num_clients);

  const IndexList pool = iota(test_pool.size());
  std::vector<ClientDataset> clients(num_clients);
  for (int k = 0; k < num_clients; ++k) {
    ClientDataset& c = clients[k];
    c.client_id = k;
    c.train = data.subset(IndexList(order.begin() + k * per, order.begin() + (k + 1) * per));
    Rng trng = client_rng(seed, k);
    c.test = test_pool.subset(sample_from(pool, test_size_for(per), trng));
  }
  return clients;
}

std::vector<ClientDataset> partition_pathological(const LabelledDataset& data,
                                                  const LabelledDataset& test_pool,
                                                  int num_clients, int labels_per_client,
                                                  std::uint64_t seed) {
  check_pools(data, test_pool, num_clients);
  if (labels_per_client < 1) throw std::invalid_argument("labels_per_client must be positive");
  const Index shard_count = Index(num_clients) * labels_per_client;
  const Index shard_size = data.size() / shard_count;
  if (shard_size == 0) throw std::invalid_argument("not enough examples for the requested shards");

  Rng rng = make_rng(derive_seed({seed, std::uint64_t(Stream::Partition)}));
  IndexList order = iota(data.size());
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(shard_count * shard_size);
  log_dropped("pathological", data.size() - Index(order.size()));
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return data.labels[a] < data.labels[b]; });

  std::vector<std::set<int>> shard_labels(shard_count);
  for (Index s = 0; s < shard_count; ++s)
    for (Index i = 0; i < shard_size; ++i) shard_labels[s].insert(data.labels[order[s * shard_size + i]]);

  std::vector<Index> mixed;
  std::vector<Index> pure;
  for (Index s = 0; s < shard_count; ++s) {
    if (Index(shard_labels[s].size()) > labels_per_client)
      throw std::invalid_argument("a shard spans more labels than labels_per_client allows");
    (shard_labels[s].size() > 1 ? mixed : pure).push_back(s);
  }

  // Mixed shards open a hand first; each hand is topped up with shards that
  // keep it within labels_per_client. The greedy pass can paint itself into
  // a corner, so retry with fresh shuffles.
  std::vector<std::vector<Index>> dealt;
  constexpr int kDealAttempts = 64;
  for (int attempt = 0; attempt < kDealAttempts && dealt.empty(); ++attempt) {
    std::shuffle(mixed.begin(), mixed.end(), rng);
    std::vector<Index> left = pure;
    std::shuffle(left.begin(), left.end(), rng);
    left.insert(left.begin(), mixed.begin(), mixed.end());
    std::vector<std::vector<Index>> hands;
    bool stuck = false;
    while (!left.empty() && !stuck) {
      std::vector<Index> hand{left.front()};
      std::set<int> allowed = shard_labels[left.front()];
      left.erase(left.begin());
      while (Index(hand.size()) < labels_per_client) {
        std::vector<std::size_t> fits;
        for (std::size_t i = 0; i < left.size(); ++i) {
          std::set<int> u = allowed;
          u.insert(shard_labels[left[i]].begin(), shard_labels[left[i]].end());
          if (Index(u.size()) <= labels_per_client) fits.push_back(i);
        }
        if (fits.empty()) {
          stuck = true;
          break;
        }
        const std::size_t pick =
            fits[std::uniform_int_distribution<std::size_t>(0, fits.size() - 1)(rng)];
        hand.push_back(left[pick]);
        allowed.insert(shard_labels[left[pick]].begin(), shard_labels[left[pick]].end());
        left.erase(left.begin() + std::ptrdiff_t(pick));
      }
      hands.push_back(std::move(hand));
    }
    if (!stuck) dealt = std::move(hands);
  }
  if (dealt.empty())
    throw std::invalid_argument("cannot deal shards without exceeding labels_per_client");
  std::shuffle(dealt.begin(), dealt.end(), rng);

  std::vector<IndexList> pool_by_label(std::max(data.class_count, test_pool.class_count));
  for (Index i = 0; i < test_pool.size(); ++i) pool_by_label[test_pool.labels[i]].push_back(i);

  std::vector<ClientDataset> clients(num_clients);
  for (int k = 0; k < num_clients; ++k) {
    ClientDataset& c = clients[k];
    c.client_id = k;
    IndexList idx;
    for (Index s : dealt[k])
      idx.insert(idx.end(), order.begin() + s * shard_size, order.begin() + (s + 1) * shard_size);
    c.train = data.subset(idx);

    // Test labels follow the client's label mix (largest-remainder rounding).
    const auto hist = label_histogram(c.train);
    const Index want = test_size_for(c.n_k());
    std::vector<std::pair<int, Index>> quota;
    std::vector<std::pair<double, int>> remainders;
    Index given = 0;
    for (auto [y, n] : hist) {
      const double exact = double(want) * double(n) / double(c.n_k());
      quota.emplace_back(y, Index(exact));
      given += Index(exact);
      remainders.emplace_back(-(exact - std::floor(exact)), int(quota.size() - 1));
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t i = 0; given < want && i < remainders.size(); ++i, ++given)
      ++quota[remainders[i].second].second;

    Rng trng = client_rng(seed, k);
    IndexList test_idx;
    for (auto [y, n] : quota) {
      if (y >= Index(pool_by_label.size())) continue;
      IndexList got = sample_from(pool_by_label[y], n, trng);
      test_idx.insert(test_idx.end(), got.begin(), got.end());
    }
    if (test_idx.empty()) throw std::invalid_argument("test pool has none of a client's labels");
    c.test = test_pool.subset(test_idx);
  }
  return clients;
}

std::vector<ClientDataset> partition_label_swapped(const LabelledDataset& data,
                                                   const LabelledDataset& test_pool,
                                                   int num_clients,
                                                   const std::vector<SwapGroup>& swap_groups,
                                                   std::uint64_t seed) {
  check_pools(data, test_pool, num_clients);
  PartitionScheme check{PartitionKind::LabelSwapped, num_clients, 2, swap_groups, seed};
  check.validate();
  const int groups = int(swap_groups.size());
  const int per_group_clients = num_clients / groups;
  const Index per_client = data.size() / groups / per_group_clients;
  if (per_client == 0) throw std::invalid_argument("not enough examples for the requested clients");

  Rng rng = make_rng(derive_seed({seed, std::uint64_t(Stream::Partition)}));
  IndexList order = iota(data.size());
  std::shuffle(order.begin(), order.end(), rng);
  log_dropped("label-swapped", data.size() - per_client * num_clients);

  const IndexList pool = iota(test_pool.size());
  std::vector<ClientDataset> clients(num_clients);
  for (int k = 0; k < num_clients; ++k) {
    ClientDataset& c = clients[k];
    const int g = k / per_group_clients;
    c.client_id = k;
    c.group = g;
    c.train = relabel(
        data.subset(IndexList(order.begin() + k * per_client, order.begin() + (k + 1) * per_client)),
        swap_groups[g]);
    Rng trng = client_rng(seed, k);
    c.test = relabel(test_pool.subset(sample_from(pool, test_size_for(per_client), trng)),
                     swap_groups[g]);
  }
  return clients;
}

std::vector<ClientDataset> make_partition(const PartitionScheme& scheme,
                                          const LabelledDataset& data,
                                          const LabelledDataset& test_pool) {
  scheme.validate();
  switch (scheme.kind) {
    case PartitionKind::Iid:
      return partition_iid(data, test_pool, scheme.num_clients, scheme.seed);
    case PartitionKind::Pathological:
      return partition_pathological(data, test_pool, scheme.num_clients, scheme.labels_per_client,
                                    scheme.seed);
    case PartitionKind::LabelSwapped:
      return partition_label_swapped(data, test_pool, scheme.num_clients, scheme.swap_groups,
                                     scheme.seed);
    case PartitionKind::Prepartitioned:
      break;
  }
  throw std::invalid_argument("pre-partitioned data is loaded, not partitioned");
}

std::pair<Index, Index> planned_client_size(const PartitionScheme& scheme, Index pool_size) {
  Index train = 0;
  switch (scheme.kind) {
    case PartitionKind::Iid:
      train = pool_size / scheme.num_clients;
      break;
    case PartitionKind::Pathological:
      train = pool_size / (Index(scheme.num_clients) * scheme.labels_per_client) *
              scheme.labels_per_client;
      break;
    case PartitionKind::LabelSwapped: {
      const Index groups = Index(scheme.swap_groups.size());
      train = pool_size / groups / (scheme.num_clients / groups);
      break;
    }
    case PartitionKind::Prepartitioned:
      throw std::invalid_argument("pre-partitioned sizes come from the data file");
  }
  return {train, test_size_for(train)};
}

}  // namespace flhc
