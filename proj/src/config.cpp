#include "flhc/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace flhc {

using json = nlohmann::json;

namespace {

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

constexpr EnumName<PartitionKind> kPartitionKinds[] = {
    {PartitionKind::Iid, "iid"},
    {PartitionKind::Pathological, "pathological"},
    {PartitionKind::LabelSwapped, "label_swapped"},
    {PartitionKind::Prepartitioned, "prepartitioned"}};
constexpr EnumName<Architecture> kArchitectures[] = {{Architecture::PaperCnn, "paper_cnn"},
                                                     {Architecture::FastMlp, "fast_mlp"}};
constexpr EnumName<Metric> kMetrics[] = {
    {Metric::L1, "l1"}, {Metric::L2, "l2"}, {Metric::Cosine, "cosine"}};
constexpr EnumName<Linkage> kLinkages[] = {{Linkage::Single, "single"},
                                           {Linkage::Complete, "complete"},
                                           {Linkage::Average, "average"},
                                           {Linkage::Ward, "ward"}};

template <typename Enum, std::size_t N>
const char* enum_name(const EnumName<Enum> (&table)[N], Enum v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename Enum, std::size_t N>
Enum enum_value(const EnumName<Enum> (&table)[N], const json& j, const std::string& field) {
  const auto s = j.get<std::string>();
  std::string allowed;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  }
  throw ConfigError(field + ": unknown value '" + s + "' (expected one of " + allowed + ")");
}

json swap_group_json(const SwapGroup& g) {
  if (g.empty()) return json::array();
  if (g.size() == 1) return json::array({g[0].first, g[0].second});
  json out = json::array();
  for (auto [a, b] : g) out.push_back({a, b});
  return out;
}

SwapGroup parse_swap_group(const json& j, const std::string& field) {
  auto pair_of = [&](const json& p) -> std::pair<int, int> {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
      throw ConfigError(field + ": expected [label_a, label_b]");
    return {p[0].get<int>(), p[1].get<int>()};
  };
  if (!j.is_array()) throw ConfigError(field + ": expected an array");
  if (j.empty()) return {};
  if (j[0].is_number_integer()) return {pair_of(j)};
  SwapGroup g;
  for (const auto& p : j) g.push_back(pair_of(p));
  return g;
}

bool compatible(const json& value, const json& like) {
  if (like.is_null()) return value.is_null() || value.is_number_integer();
  if (like.is_boolean()) return value.is_boolean();
  if (like.is_string()) return value.is_string();
  if (like.is_number_integer()) return value.is_number_integer();
  if (like.is_number()) return value.is_number();
  if (like.is_array()) return value.is_array();
  if (like.is_object()) return value.is_object();
  return false;
}

// Overlays `in` on the canonical template, rejecting unknown keys and
// values of the wrong JSON type.
void overlay(json& tmpl, const json& in, const std::string& path) {
  if (!in.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (auto it = in.begin(); it != in.end(); ++it) {
    const std::string field = path.empty() ? it.key() : path + "." + it.key();
    if (!tmpl.contains(it.key())) throw ConfigError(field + ": unknown key");
    json& slot = tmpl[it.key()];
    if (!compatible(it.value(), slot))
      throw ConfigError(field + ": expected " + std::string(slot.is_null() ? "integer or null"
                                                                           : slot.type_name()));
    if (slot.is_object())
      overlay(slot, it.value(), field);
    else
      slot = it.value();
  }
}

std::optional<std::int64_t> opt_int(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::int64_t>();
}

json opt_json(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

ExperimentConfig from_canonical(const json& j) {
  ExperimentConfig c;
  const json& d = j["data"];
  c.data.train_images = d["train_images"];
  c.data.train_labels = d["train_labels"];
  c.data.test_images = d["test_images"];
  c.data.test_labels = d["test_labels"];
  c.data.max_examples = opt_int(d["max_examples"]);
  c.data.max_test_examples = opt_int(d["max_test_examples"]);
  c.data.prepartitioned = d["prepartitioned"];

  const json& p = j["partition"];
  c.partition.kind = enum_value(kPartitionKinds, p["kind"], "partition.kind");
  c.partition.num_clients = p["num_clients"];
  c.partition.labels_per_client = p["labels_per_client"];
  c.partition.swap_groups.clear();
  for (std::size_t i = 0; i < p["swap_groups"].size(); ++i)
    c.partition.swap_groups.push_back(
        parse_swap_group(p["swap_groups"][i], "partition.swap_groups[" + std::to_string(i) + "]"));
  c.partition.seed = p["seed"];

  const json& m = j["model"];
  c.model.architecture = enum_value(kArchitectures, m["architecture"], "model.architecture");
  const json& shape = m["input_shape"];
  if (shape.size() != 3 || !shape[0].is_number_integer() || !shape[1].is_number_integer() ||
      !shape[2].is_number_integer())
    throw ConfigError("model.input_shape: expected [height, width, channels]");
  c.model.input_shape = {shape[0], shape[1], shape[2]};
  c.model.num_classes = m["num_classes"];
  c.model.hidden_units = m["hidden_units"];

  const json& h = j["hp"];
  c.hp.local_epochs = h["local_epochs"];
  c.hp.batch_size = h["batch_size"];
  c.hp.learning_rate = h["learning_rate"];
  c.hp.client_fraction = h["client_fraction"];

  c.rounds_before_cluster = j["rounds_before_cluster"];
  c.total_rounds = j["total_rounds"];
  const json& cl = j["clustering"];
  c.clustering.metric = enum_value(kMetrics, cl["metric"], "clustering.metric");
  c.clustering.linkage = enum_value(kLinkages, cl["linkage"], "clustering.linkage");
  c.clustering.threshold = cl["threshold"];
  c.target_accuracy = j["target_accuracy"];
  c.baseline_mode = j["baseline_mode"];
  c.weight_accuracy_by_samples = j["weight_accuracy_by_samples"];
  c.experiment_seed = j["experiment_seed"];
  return c;
}

json::json_pointer pointer_of(const std::string& dotted) {
  std::string ptr;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    ptr += "/" + dotted.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return json::json_pointer(ptr);
}

std::filesystem::path resolve_one(const std::string& p, const std::filesystem::path& config_dir) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  const auto local = config_dir / path;
  if (std::filesystem::exists(local)) return local;
  if (const char* root = std::getenv("FLHC_DATA_DIR"); root && *root) {
    const auto fallback = std::filesystem::path(root) / path;
    if (std::filesystem::exists(fallback)) return fallback;
  }
  return local;
}

}  // namespace

std::string to_string(PartitionKind k) { return enum_name(kPartitionKinds, k); }
std::string to_string(Architecture a) { return enum_name(kArchitectures, a); }

json to_json(const ExperimentConfig& c) {
  json groups = json::array();
  for (const auto& g : c.partition.swap_groups) groups.push_back(swap_group_json(g));
  return {
      {"data",
       {{"train_images", c.data.train_images},
        {"train_labels", c.data.train_labels},
        {"test_images", c.data.test_images},
        {"test_labels", c.data.test_labels},
        {"max_examples", opt_json(c.data.max_examples)},
        {"max_test_examples", opt_json(c.data.max_test_examples)},
        {"prepartitioned", c.data.prepartitioned}}},
      {"partition",
       {{"kind", enum_name(kPartitionKinds, c.partition.kind)},
        {"num_clients", c.partition.num_clients},
        {"labels_per_client", c.partition.labels_per_client},
        {"swap_groups", groups},
        {"seed", c.partition.seed}}},
      {"model",
       {{"architecture", enum_name(kArchitectures, c.model.architecture)},
        {"input_shape",
         {c.model.input_shape.height, c.model.input_shape.width, c.model.input_shape.channels}},
        {"num_classes", c.model.num_classes},
        {"hidden_units", c.model.hidden_units}}},
      {"hp",
       {{"local_epochs", c.hp.local_epochs},
        {"batch_size", c.hp.batch_size},
        {"learning_rate", c.hp.learning_rate},
        {"client_fraction", c.hp.client_fraction}}},
      {"rounds_before_cluster", c.rounds_before_cluster},
      {"total_rounds", c.total_rounds},
      {"clustering",
       {{"metric", enum_name(kMetrics, c.clustering.metric)},
        {"linkage", enum_name(kLinkages, c.clustering.linkage)},
        {"threshold", c.clustering.threshold}}},
      {"target_accuracy", c.target_accuracy},
      {"baseline_mode", c.baseline_mode},
      {"weight_accuracy_by_samples", c.weight_accuracy_by_samples},
      {"experiment_seed", c.experiment_seed}};
}

ExperimentConfig parse_experiment_config(const json& j) {
  json canonical = to_json(ExperimentConfig{});
  overlay(canonical, j, "");
  ExperimentConfig c;
  try {
    c = from_canonical(canonical);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

SweepSpec parse_sweep(const json& j) {
  SweepSpec s;
  if (!j.is_object()) throw ConfigError("config: expected an object");
  if (!j.contains("base")) {
    s.base = j;
    return s;
  }
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "base" && it.key() != "axes" && it.key() != "max_runs")
      throw ConfigError(it.key() + ": unknown key");
  s.base = j["base"];
  if (j.contains("max_runs")) {
    if (!j["max_runs"].is_number_unsigned()) throw ConfigError("max_runs: expected a positive integer");
    s.max_runs = j["max_runs"];
  }
  if (j.contains("axes")) {
    if (!j["axes"].is_object()) throw ConfigError("axes: expected an object");
    const json canonical = to_json(ExperimentConfig{});
    for (auto it = j["axes"].begin(); it != j["axes"].end(); ++it) {
      if (!canonical.contains(pointer_of(it.key())))
        throw ConfigError("axes." + it.key() + ": not a config field");
      if (!it.value().is_array() || it.value().empty())
        throw ConfigError("axes." + it.key() + ": expected a non-empty list of values");
      s.axes[it.key()] = std::vector<json>(it.value().begin(), it.value().end());
    }
  }
  if (planned_runs(s) > s.max_runs)
    throw ConfigError("sweep has " + std::to_string(planned_runs(s)) + " runs, over max_runs " +
                      std::to_string(s.max_runs));
  return s;
}

std::size_t planned_runs(const SweepSpec& sweep) {
  std::size_t n = 1;
  for (const auto& [key, values] : sweep.axes) n *= values.size();
  return n;
}

std::vector<ExperimentConfig> expand(const SweepSpec& sweep) {
  std::vector<json> configs{sweep.base};
  for (const auto& [key, values] : sweep.axes) {
    std::vector<json> next;
    for (const auto& base : configs)
      for (const auto& v : values) {
        json c = base;
        c[pointer_of(key)] = v;
        next.push_back(std::move(c));
      }
    configs = std::move(next);
  }
  std::vector<ExperimentConfig> out;
  for (const auto& c : configs) out.push_back(parse_experiment_config(c));
  return out;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void resolve_data_paths(ExperimentConfig& cfg, const std::filesystem::path& config_dir) {
  for (std::string* p : {&cfg.data.train_images, &cfg.data.train_labels, &cfg.data.test_images,
                         &cfg.data.test_labels, &cfg.data.prepartitioned})
    *p = resolve_one(*p, config_dir).string();
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

}  // namespace flhc
