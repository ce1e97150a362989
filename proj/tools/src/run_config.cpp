#include "dlab/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dlab::cli {

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", KeyType::seed, "1", "master seed; every random stream is derived from it"},
      {"out_dir", KeyType::text, "", "run directory"},
      {"log_timing", KeyType::flag, "true", "write wall-clock columns (false writes zeros)"},

      {"task.kind", KeyType::text, "dag-path", "dag-path or arith"},
      {"task.gen_budget", KeyType::integer, "16", "response length L_gen"},
      {"task.min_nodes", KeyType::integer, "8", ""},
      {"task.max_nodes", KeyType::integer, "8", ""},
      {"task.edge_prob", KeyType::real, "0.35", ""},
      {"task.multi_path_fraction", KeyType::real, "0.75", ""},
      {"task.max_prompt_len", KeyType::integer, "64", ""},
      {"task.operand_digits", KeyType::integer, "2", ""},
      {"task.train_count", KeyType::integer, "2000", "training instances (corpus and RL queries)"},
      {"task.eval_count", KeyType::integer, "200", "held-out instances"},

      {"model.d_model", KeyType::integer, "64", ""},
      {"model.n_layers", KeyType::integer, "2", ""},
      {"model.n_heads", KeyType::integer, "4", ""},
      {"model.d_ff", KeyType::integer, "256", ""},
      {"model.max_len", KeyType::integer, "96", ""},
      {"model.init_std", KeyType::real, "0.02", ""},

      {"pretrain.steps", KeyType::integer, "3000", ""},
      {"pretrain.batch_size", KeyType::integer, "32", ""},
      {"pretrain.lr", KeyType::real, "3e-4", ""},
      {"pretrain.beta1", KeyType::real, "0.9", ""},
      {"pretrain.beta2", KeyType::real, "0.999", ""},
      {"pretrain.eps", KeyType::real, "1e-8", ""},
      {"pretrain.weight_decay", KeyType::real, "0", ""},
      {"pretrain.t_min", KeyType::real, "0.01", ""},

      {"rl.base_checkpoint", KeyType::text, "", "pretrained checkpoint to start from"},
      {"rl.train_instances", KeyType::text, "", "instance JSONL file; empty generates the training set"},
      {"rl.group_size", KeyType::integer, "16", ""},
      {"rl.clip_eps", KeyType::real, "0.2", ""},
      {"rl.kl_beta", KeyType::real, "0", ""},
      {"rl.lr", KeyType::real, "5e-6", ""},
      {"rl.weight_decay", KeyType::real, "0", ""},
      {"rl.beta1", KeyType::real, "0.9", ""},
      {"rl.beta2", KeyType::real, "0.999", ""},
      {"rl.batch_size", KeyType::integer, "4", "queries per update"},
      {"rl.update_steps", KeyType::integer, "1", ""},
      {"rl.temperature", KeyType::real, "1.0", "rollout temperature"},
      {"rl.entropy_top_fraction", KeyType::real, "1.0", ""},
      {"rl.updates", KeyType::integer, "200", ""},
      {"rl.checkpoint_every", KeyType::integer, "10", "updates between resumable checkpoints"},

      {"decode.mode", KeyType::text, "ar", "ar, confidence, neg_entropy, margin or eb_parallel"},
      {"decode.block_size", KeyType::integer, "16", ""},
      {"decode.tokens_per_step", KeyType::integer, "1", ""},
      {"decode.temperature", KeyType::real, "0", ""},
      {"decode.eb_gamma", KeyType::real, "0", ""},
      {"decode.confidence_uses_max_prob", KeyType::flag, "false", ""},
      {"decode.samples", KeyType::integer, "1", "decodes per instance for the decode command"},

      {"eval.checkpoint", KeyType::text, "", "checkpoint evaluated by decode and eval"},
      {"eval.instances", KeyType::text, "", "instance JSONL file; empty generates the held-out set"},
      {"eval.modes", KeyType::text_list, "ar,confidence", ""},
      {"eval.n", KeyType::integer, "64", "samples per instance"},
      {"eval.k", KeyType::int_list, "1,2,4,...,64", "Pass@k grid"},
      {"eval.temperature", KeyType::real, "0.6", ""},
      {"eval.coverage_k", KeyType::integer, "0", "0 uses eval.n"},
      {"eval.eb_sweep", KeyType::flag, "false", "run the entropy-bounded gamma sweep"},
      {"eval.eb_gammas", KeyType::real_list, "0,0.05,0.1,0.2,0.5,1,2", ""},

      {"analyze.run", KeyType::text, "", "run directory written by eval"},
  };
  return keys;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) {
      break;
    }
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text, std::string_view key) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

std::vector<int> expand_int_list(std::string_view text, std::string_view key) {
  std::vector<int> out;
  const auto parts = split(text, ',');
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] != "...") {
      out.push_back(parse_number<int>(parts[i], key));
      continue;
    }
    if (out.size() < 2 || i + 2 != parts.size()) {
      throw ConfigError("'...' in " + std::string(key) + " needs two leading entries and one final entry");
    }
    const int last = parse_number<int>(parts[i + 1], key);
    const int a = out[out.size() - 2];
    const int b = out.back();
    // Three entries such as 1,2,4 fix a ratio; two entries fix a step.
    bool geometric = false;
    if (out.size() >= 3) {
      const long z = out[out.size() - 3];
      geometric = z > 0 && a % z == 0 && b % a == 0 && a / z == b / a && a / z > 1;
      if (!geometric && a - z != b - a) {
        throw ConfigError("entries before '...' in " + std::string(key) + " form no progression");
      }
    }
    if (b <= a) {
      throw ConfigError("'...' in " + std::string(key) + " needs an increasing progression");
    }
    while (true) {
      const long next = geometric ? static_cast<long>(out.back()) * (b / a) : static_cast<long>(out.back()) + (b - a);
      if (next > last) {
        break;
      }
      out.push_back(static_cast<int>(next));
    }
    if (out.back() != last) {
      throw ConfigError("progression in " + std::string(key) + " does not reach " + std::to_string(last));
    }
    break;
  }
  return out;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) {
    values_.emplace(k.key, k.default_value);
  }
}

void RunConfig::load_text(std::string_view text, std::string_view origin) {
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = trim(line.substr(0, hash));
    }
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  load_text(text.str(), path.string());
}

void RunConfig::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown key: " + std::string(key));
  }
  const auto& specs = config_keys();
  const auto spec = std::find_if(specs.begin(), specs.end(), [&](const KeySpec& k) { return k.key == key; });
  const std::string previous = it->second;
  it->second = std::string(value);
  try {
    if (!value.empty() || !spec->default_value.empty()) {
      check_type(spec->key, spec->type);
    }
  } catch (const ConfigError&) {
    it->second = previous;
    throw;
  }
}

void RunConfig::check_type(std::string_view key, KeyType type) const {
  switch (type) {
    case KeyType::text:
      break;
    case KeyType::integer:
      get_int(key);
      break;
    case KeyType::seed:
      get_u64(key);
      break;
    case KeyType::real:
      get_double(key);
      break;
    case KeyType::flag:
      get_bool(key);
      break;
    case KeyType::int_list:
      get_int_list(key);
      break;
    case KeyType::real_list:
      get_double_list(key);
      break;
    case KeyType::text_list:
      get_list(key);
      break;
  }
}

void RunConfig::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool RunConfig::has(std::string_view key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

void RunConfig::require(std::string_view key) const {
  if (!has(key)) {
    throw ConfigError("missing required key: " + std::string(key));
  }
}

const std::string& RunConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown key: " + std::string(key));
  }
  return it->second;
}

int RunConfig::get_int(std::string_view key) const { return parse_number<int>(get(key), key); }

std::uint64_t RunConfig::get_u64(std::string_view key) const { return parse_number<std::uint64_t>(get(key), key); }

double RunConfig::get_double(std::string_view key) const {
  const double v = parse_number<double>(get(key), key);
  if (!std::isfinite(v)) {
    throw ConfigError("non-finite value for " + std::string(key));
  }
  return v;
}

bool RunConfig::get_bool(std::string_view key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") {
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    return false;
  }
  throw ConfigError("invalid boolean for " + std::string(key) + ": '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(std::string_view key) const {
  std::vector<std::string> out;
  for (auto part : split(get(key), ',')) {
    if (part.empty()) {
      throw ConfigError("empty entry in " + std::string(key));
    }
    out.emplace_back(part);
  }
  return out;
}

std::vector<int> RunConfig::get_int_list(std::string_view key) const { return expand_int_list(get(key), key); }

std::vector<double> RunConfig::get_double_list(std::string_view key) const {
  std::vector<double> out;
  for (auto part : split(get(key), ',')) {
    out.push_back(parse_number<double>(part, key));
  }
  return out;
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) {
    out << k << " = " << v << '\n';
  }
  return out.str();
}

TaskSpec RunConfig::task() const {
  TaskSpec spec;
  try {
    spec.kind = parse_task_kind(get("task.kind"));
  } catch (const std::invalid_argument&) {
    throw ConfigError("invalid value for task.kind: '" + get("task.kind") + "'");
  }
  spec.gen_budget = get_int("task.gen_budget");
  spec.min_nodes = get_int("task.min_nodes");
  spec.max_nodes = get_int("task.max_nodes");
  spec.edge_prob = get_double("task.edge_prob");
  spec.multi_path_fraction = get_double("task.multi_path_fraction");
  spec.max_prompt_len = get_int("task.max_prompt_len");
  spec.operand_digits = get_int("task.operand_digits");
  spec.validate();
  return spec;
}

DenoiserConfig RunConfig::denoiser(int vocab_size) const {
  DenoiserConfig c;
  c.vocab_size = vocab_size;
  c.d_model = get_int("model.d_model");
  c.n_layers = get_int("model.n_layers");
  c.n_heads = get_int("model.n_heads");
  c.d_ff = get_int("model.d_ff");
  c.max_len = get_int("model.max_len");
  c.init_std = get_double("model.init_std");
  c.validate();
  return c;
}

PretrainConfig RunConfig::pretrain(int threads) const {
  PretrainConfig c;
  c.steps = get_int("pretrain.steps");
  c.batch_size = get_int("pretrain.batch_size");
  c.gen_budget = get_int("task.gen_budget");
  c.t_min = get_double("pretrain.t_min");
  c.adam = AdamWConfig{get_double("pretrain.lr"), get_double("pretrain.beta1"), get_double("pretrain.beta2"),
                       get_double("pretrain.eps"), get_double("pretrain.weight_decay")};
  c.threads = threads;
  if (c.steps < 0 || c.batch_size < 1 || c.t_min <= 0.0 || c.t_min > 1.0 || c.adam.lr < 0.0) {
    throw ConfigError("pretrain needs steps >= 0, batch_size >= 1, t_min in (0, 1] and lr >= 0");
  }
  return c;
}

GRPOConfig RunConfig::grpo(int threads) const {
  GRPOConfig c;
  c.group_size = get_int("rl.group_size");
  c.clip_eps = get_double("rl.clip_eps");
  c.kl_beta = get_double("rl.kl_beta");
  c.lr = get_double("rl.lr");
  c.weight_decay = get_double("rl.weight_decay");
  c.adam_beta1 = get_double("rl.beta1");
  c.adam_beta2 = get_double("rl.beta2");
  c.batch_size = get_int("rl.batch_size");
  c.update_steps = get_int("rl.update_steps");
  c.temperature = get_double("rl.temperature");
  c.gen_budget = get_int("task.gen_budget");
  c.entropy_top_fraction = get_double("rl.entropy_top_fraction");
  c.updates = get_int("rl.updates");
  c.threads = threads;
  c.validate();
  return c;
}

DecodeConfig RunConfig::decode() const {
  DecodeConfig c;
  try {
    c.mode = parse_decode_mode(get("decode.mode"));
  } catch (const std::invalid_argument&) {
    throw ConfigError("invalid value for decode.mode: '" + get("decode.mode") + "'");
  }
  c.block_size = get_int("decode.block_size");
  c.tokens_per_step = get_int("decode.tokens_per_step");
  c.temperature = get_double("decode.temperature");
  c.gen_budget = get_int("task.gen_budget");
  c.eb_gamma = get_double("decode.eb_gamma");
  c.confidence_uses_max_prob = get_bool("decode.confidence_uses_max_prob");
  c.validate();
  return c;
}

}  // namespace dlab::cli
