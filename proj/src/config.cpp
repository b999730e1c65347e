#include "medusa/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "medusa/checkpoint.hpp"

namespace medusa {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

template <typename V>
bool parse_number(std::string_view s, V& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no") {
    out = false;
    return true;
  }
  return false;
}

std::vector<int> parse_list(std::string_view s, bool& ok) {
  std::vector<int> out;
  ok = !s.empty();
  std::size_t start = 0;
  while (ok && start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    int v = 0;
    ok = parse_number(std::string_view(item), v);
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void check_value(const ConfigKey& key, const std::string& value) {
  bool ok = true;
  switch (key.type) {
    case KeyType::integer: {
      std::int64_t v;
      ok = parse_number(std::string_view(value), v);
      break;
    }
    case KeyType::unsigned_integer: {
      std::uint64_t v;
      ok = parse_number(std::string_view(value), v);
      break;
    }
    case KeyType::real: {
      double v;
      ok = parse_number(std::string_view(value), v);
      break;
    }
    case KeyType::boolean: {
      bool v;
      ok = parse_bool(value, v);
      break;
    }
    case KeyType::int_list:
      parse_list(value, ok);
      break;
    case KeyType::text:
      ok = value.find('\n') == std::string::npos;
      break;
  }
  if (!ok) throw ConfigError("invalid value '" + value + "' for key '" + key.name + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", KeyType::unsigned_integer, "0", "seed for data generation, initialization and batch order"},
      {"variant", KeyType::text, "medusa", "model variant: plain, se or medusa"},
      {"data", KeyType::text, "", "dataset manifest path"},
      {"init_global", KeyType::text, "", "global-module checkpoint used to initialize a medusa model"},
      {"width", KeyType::integer, "64", "image width"},
      {"height", KeyType::integer, "64", "image height"},
      {"train_count", KeyType::integer, "1600", "synthetic training samples"},
      {"val_count", KeyType::integer, "200", "synthetic validation samples"},
      {"test_count", KeyType::integer, "200", "synthetic test samples"},
      {"positive_fraction", KeyType::real, "0.5", "fraction of positive samples per split"},
      {"lesion_count_min", KeyType::integer, "1", ""},
      {"lesion_count_max", KeyType::integer, "3", ""},
      {"lesion_radius_min", KeyType::real, "2", "pixels"},
      {"lesion_radius_max", KeyType::real, "6", "pixels"},
      {"lesion_contrast_min", KeyType::real, "0.08", "fraction of the intensity range"},
      {"lesion_contrast_max", KeyType::real, "0.25", "fraction of the intensity range"},
      {"distractor_probability", KeyType::real, "0.3", ""},
      {"noise_sigma", KeyType::real, "0.05", ""},
      {"stage_count", KeyType::integer, "3", "backbone stages"},
      {"stage_channels", KeyType::int_list, "16,32,64", "channels per stage"},
      {"blocks_per_stage", KeyType::integer, "2", "residual blocks per stage"},
      {"num_classes", KeyType::integer, "2", ""},
      {"global_depth", KeyType::integer, "3", "encoder-decoder levels"},
      {"global_base_channels", KeyType::integer, "8", "channels of the first encoder level"},
      {"se_reduction", KeyType::integer, "4", "SE bottleneck reduction"},
      {"schedule", KeyType::text, "alternating", "alternating or joint (medusa only)"},
      {"lr", KeyType::real, "0.001", "Adam learning rate"},
      {"batch_size", KeyType::integer, "16", ""},
      {"epochs", KeyType::integer, "20", ""},
      {"cadence", KeyType::integer, "1", "epochs per alternating phase"},
      {"attention_enabled", KeyType::boolean, "true", "gate the backbone with attention while training"},
      {"pretrain_lr", KeyType::real, "0.001", ""},
      {"pretrain_batch_size", KeyType::integer, "16", ""},
      {"pretrain_epochs", KeyType::integer, "10", ""},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::merge_text(std::string_view text, const std::string& source) {
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' repeated");
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  merge_text(os.str(), path.string());
}

void RunConfig::merge_env() {
  if (const char* seed = std::getenv("MEDUSA_SEED"); seed != nullptr && *seed != '\0') {
    try {
      set("seed", seed);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("MEDUSA_SEED: ") + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const ConfigKey* k = find_key(key);
  if (k == nullptr) throw ConfigError("unknown config key '" + key + "'");
  check_value(*k, value);
  values_[key] = value;
  explicit_[key] = true;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_number(std::string_view(get(key)), v)) throw ConfigError("key '" + key + "' is not an integer");
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_number(std::string_view(get(key)), v)) throw ConfigError("key '" + key + "' is not an unsigned integer");
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  double v = 0;
  if (!parse_number(std::string_view(get(key)), v)) throw ConfigError("key '" + key + "' is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  if (!parse_bool(get(key), v)) throw ConfigError("key '" + key + "' is not a boolean");
  return v;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  bool ok = true;
  auto v = parse_list(get(key), ok);
  if (!ok) throw ConfigError("key '" + key + "' is not an integer list");
  return v;
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  for (const auto& k : config_keys()) os << k.name << '=' << values_.at(k.name) << '\n';
  return os.str();
}

std::uint64_t RunConfig::digest() const { return fnv1a(resolved()); }

namespace {
int as_int(std::int64_t v, const char* key) {
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(std::string("key '") + key + "' out of range");
  return static_cast<int>(v);
}
}  // namespace

SyntheticConfig RunConfig::synthetic() const {
  SyntheticConfig c;
  c.width = as_int(get_int("width"), "width");
  c.height = as_int(get_int("height"), "height");
  c.train_count = as_int(get_int("train_count"), "train_count");
  c.val_count = as_int(get_int("val_count"), "val_count");
  c.test_count = as_int(get_int("test_count"), "test_count");
  c.positive_fraction = get_real("positive_fraction");
  c.lesion_count_min = as_int(get_int("lesion_count_min"), "lesion_count_min");
  c.lesion_count_max = as_int(get_int("lesion_count_max"), "lesion_count_max");
  c.lesion_radius_min = get_real("lesion_radius_min");
  c.lesion_radius_max = get_real("lesion_radius_max");
  c.lesion_contrast_min = get_real("lesion_contrast_min");
  c.lesion_contrast_max = get_real("lesion_contrast_max");
  c.distractor_probability = get_real("distractor_probability");
  c.noise_sigma = get_real("noise_sigma");
  c.seed = get_uint("seed");
  c.validate();
  return c;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  auto& b = m.backbone;
  b.stage_count = as_int(get_int("stage_count"), "stage_count");
  b.stage_channels = get_int_list("stage_channels");
  b.in_channels = 1;
  b.height = as_int(get_int("height"), "height");
  b.width = as_int(get_int("width"), "width");
  b.blocks_per_stage = as_int(get_int("blocks_per_stage"), "blocks_per_stage");
  b.num_classes = as_int(get_int("num_classes"), "num_classes");
  b.validate();
  m.global.depth = as_int(get_int("global_depth"), "global_depth");
  m.global.base_channels = as_int(get_int("global_base_channels"), "global_base_channels");
  m.se_reduction = as_int(get_int("se_reduction"), "se_reduction");
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.lr = get_real("lr");
  t.batch_size = as_int(get_int("batch_size"), "batch_size");
  t.epochs = as_int(get_int("epochs"), "epochs");
  t.cadence = as_int(get_int("cadence"), "cadence");
  t.seed = get_uint("seed");
  t.attention_enabled = get_bool("attention_enabled");
  t.validate();
  return t;
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.lr = get_real("pretrain_lr");
  p.batch_size = as_int(get_int("pretrain_batch_size"), "pretrain_batch_size");
  p.epochs = as_int(get_int("pretrain_epochs"), "pretrain_epochs");
  p.seed = get_uint("seed");
  p.validate();
  return p;
}

}  // namespace medusa
