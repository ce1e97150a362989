#pragma once

// Flat `key = value` run configuration shared by every command.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dlab/decoding.hpp"
#include "dlab/denoiser.hpp"
#include "dlab/diffusion.hpp"
#include "dlab/grpo.hpp"
#include "dlab/tasks.hpp"

namespace dlab::cli {

/// Bad key, bad value, missing required key or unreadable config file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KeyType { text, integer, seed, real, flag, int_list, real_list, text_list };

struct KeySpec {
  std::string key;
  KeyType type = KeyType::text;
  std::string default_value;  // empty: no default
  std::string help;
};

/// Every recognised key with its default.
const std::vector<KeySpec>& config_keys();

class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines; `#` starts a comment. Later settings win.
  void load_text(std::string_view text, std::string_view origin = "<text>");
  void load_file(const std::filesystem::path& path);
  /// Rejects unknown keys and values that do not parse as the key's type.
  void set(std::string_view key, std::string_view value);
  /// "key=value" as given on the command line.
  void set_assignment(std::string_view assignment);

  bool has(std::string_view key) const;
  /// Throws ConfigError naming the key when it has no value.
  void require(std::string_view key) const;
  const std::string& get(std::string_view key) const;

  int get_int(std::string_view key) const;
  std::uint64_t get_u64(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;
  /// Accepts "1,2,4,...,64": a trailing "..." continues the arithmetic or
  /// geometric progression of the first two entries up to the last one.
  std::vector<int> get_int_list(std::string_view key) const;
  std::vector<double> get_double_list(std::string_view key) const;

  /// Resolved configuration, sorted by key, loadable with load_text.
  std::string echo() const;

  TaskSpec task() const;
  DenoiserConfig denoiser(int vocab_size) const;
  PretrainConfig pretrain(int threads) const;
  GRPOConfig grpo(int threads) const;
  DecodeConfig decode() const;

 private:
  void check_type(std::string_view key, KeyType type) const;

  std::map<std::string, std::string, std::less<>> values_;
};

std::vector<int> expand_int_list(std::string_view text, std::string_view key = "list");

}  // namespace dlab::cli
