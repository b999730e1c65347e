#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "medusa/data.hpp"
#include "medusa/model.hpp"
#include "medusa/train.hpp"

namespace medusa {

enum class KeyType { integer, unsigned_integer, real, boolean, text, int_list };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

/// Every key a run configuration accepts, in resolved-file order.
const std::vector<ConfigKey>& config_keys();

/// Flat key=value run configuration. Values are validated against their
/// key type when set; unknown keys raise ConfigError.
class RunConfig {
 public:
  RunConfig();

  /// Parses key=value lines; "#" starts a comment. Throws ConfigError with
  /// the line number for malformed lines, unknown or repeated keys.
  void merge_text(std::string_view text, const std::string& source = "config");
  /// Throws IoError naming the path when the file cannot be read.
  void merge_file(const std::filesystem::path& path);
  /// Applies MEDUSA_SEED from the environment, if set.
  void merge_env();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_set_explicitly(const std::string& key) const { return explicit_.count(key) > 0; }

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Every key with its effective value, one per line.
  std::string resolved() const;
  std::uint64_t digest() const;

  SyntheticConfig synthetic() const;
  ModelConfig model() const;
  TrainConfig train() const;
  PretrainConfig pretrain() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

}  // namespace medusa
