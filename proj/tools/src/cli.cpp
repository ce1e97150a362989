#include "dlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "dlab/analysis.hpp"
#include "dlab/jsonl.hpp"
#include "dlab/parallel.hpp"
#include "dlab/run_config.hpp"

namespace fs = std::filesystem;

namespace dlab::cli {
namespace {

inline constexpr char kRlStateMagic[8] = {'D', 'L', 'A', 'B', 'R', 'L', 'S', '1'};

struct Context {
  RunConfig config;
  int threads = 1;
  std::ostream* out = nullptr;
};

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_file(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) {
      throw std::runtime_error("cannot write " + tmp.string());
    }
    f << content;
  }
  fs::rename(tmp, path);
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream f(path, std::ios::binary | mode);
  if (!f) {
    throw std::runtime_error("cannot write " + path.string());
  }
  return f;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw ConfigError("cannot read " + path.string());
  }
  return f;
}

fs::path prepare_run_dir(const RunConfig& config) {
  config.require("out_dir");
  const fs::path dir = config.get("out_dir");
  for (const char* sub : {"checkpoints", "logs", "traces", "data"}) {
    fs::create_directories(dir / sub);
  }
  return dir;
}

void check_model(const DenoiserParams& params, const Vocabulary& vocab, const TaskSpec& spec) {
  const auto& c = params.config();
  if (c.vocab_size != vocab.size()) {
    throw ConfigError("checkpoint vocab_size " + std::to_string(c.vocab_size) + " does not match the " +
                      std::string(to_string(spec.kind)) + " vocabulary size " + std::to_string(vocab.size()));
  }
  if (c.max_len < spec.max_prompt_len + spec.gen_budget) {
    throw ConfigError("checkpoint max_len " + std::to_string(c.max_len) +
                      " is below task.max_prompt_len + task.gen_budget");
  }
}

DenoiserParams load_model(const RunConfig& config, std::string_view key) {
  config.require(key);
  const fs::path path = config.get(key);
  if (!fs::exists(path)) {
    throw ConfigError(std::string(key) + ": no such file " + path.string());
  }
  return load_checkpoint(path);
}

std::uint64_t seed_of(const RunConfig& config) { return config.get_u64("seed"); }

std::vector<Instance> train_instances(const RunConfig& config, const TaskSpec& spec) {
  return generate(spec, config.get_int("task.train_count"), seed_of(config), "train-instances").instances;
}

std::vector<Instance> held_out_instances(const RunConfig& config, const TaskSpec& spec) {
  if (config.has("eval.instances")) {
    auto in = open_in(config.get("eval.instances"));
    return read_instances(in);
  }
  return generate(spec, config.get_int("task.eval_count"), seed_of(config), "eval-instances").instances;
}

std::string instances_jsonl(std::span<const Instance> instances) {
  std::string text;
  for (const auto& inst : instances) {
    text += instance_line(inst);
    text += '\n';
  }
  return text;
}

std::string completion_text(const Completion& c, const Vocabulary& vocab) {
  std::string s;
  for (TokenId t : c.tokens()) {
    if (!s.empty()) {
      s += ' ';
    }
    s += vocab.token(t);
  }
  return s;
}

// ------------------------------- pretrain -------------------------------

int cmd_pretrain(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto dir = prepare_run_dir(cfg);
  const auto spec = cfg.task();
  const auto vocab = task_vocabulary(spec.kind);
  const auto model = cfg.denoiser(vocab.size());
  if (model.max_len < spec.max_prompt_len + spec.gen_budget) {
    throw ConfigError("model.max_len must be at least task.max_prompt_len + task.gen_budget");
  }
  const auto pcfg = cfg.pretrain(ctx.threads);
  const auto seed = seed_of(cfg);
  write_file(dir / "config.echo", cfg.echo());

  const auto task = generate(spec, cfg.get_int("task.train_count"), seed, "train-instances");
  write_file(dir / "data" / "vocab.txt", vocab.serialize());
  write_file(dir / "data" / "train_instances.jsonl", instances_jsonl(task.instances));
  std::string corpus;
  for (const auto& ex : task.corpus) {
    corpus += corpus_line(ex);
    corpus += '\n';
  }
  write_file(dir / "data" / "corpus.jsonl", corpus);

  auto csv = open_out(dir / "logs" / "pretrain.csv");
  csv << "step,loss,t_mean\n";
  std::vector<PretrainLogRow> log;
  auto params = pretrain(initial_parameters(model, seed), task.corpus, vocab, pcfg, seed, log,
                         [&](const PretrainLogRow& r) { csv << r.step << ',' << num(r.loss) << ',' << num(r.t_mean) << '\n'; });
  csv.close();
  save_checkpoint(params, dir / "checkpoints" / "final.ckpt");
  *ctx.out << "pretrain: " << pcfg.steps << " steps";
  if (!log.empty()) {
    *ctx.out << ", last loss " << log.back().loss;
  }
  *ctx.out << "\ncheckpoint: " << (dir / "checkpoints" / "final.ckpt").string() << '\n';
  return kExitOk;
}

// ------------------------------- rl-train -------------------------------

void save_rl_state(const RLState& state, const fs::path& path) {
  std::ostringstream buf(std::ios::binary);
  buf.write(kRlStateMagic, sizeof kRlStateMagic);
  const auto next = static_cast<std::uint32_t>(state.next_update);
  buf.write(reinterpret_cast<const char*>(&next), sizeof next);
  write_checkpoint(state.params, buf);
  state.optimizer.save(buf);
  write_file(path, buf.str());
}

RLState load_rl_state(const fs::path& path, const GRPOConfig& config) {
  auto in = open_in(path);
  char magic[8];
  in.read(magic, sizeof magic);
  std::uint32_t next = 0;
  in.read(reinterpret_cast<char*>(&next), sizeof next);
  if (!in || !std::equal(magic, magic + 8, kRlStateMagic)) {
    throw CheckpointError(path.string() + " is not an RL state file");
  }
  auto params = read_checkpoint(in);
  RLState state = start_rl(std::move(params), config);
  try {
    state.optimizer.load(in);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  state.next_update = static_cast<int>(next);
  return state;
}

// Keeps the first `lines` complete lines of a log written by an interrupted run.
void truncate_lines(const fs::path& path, std::size_t lines) {
  std::string kept;
  {
    auto in = open_in(path);
    std::string line;
    for (std::size_t i = 0; i < lines && std::getline(in, line); ++i) {
      if (in.eof()) {
        throw CheckpointError(path.string() + " ends before the resumed update");
      }
      kept += line;
      kept += '\n';
    }
  }
  write_file(path, kept);
}

std::string echo_without(const RunConfig& config, std::string_view key) {
  RunConfig copy = config;
  copy.set(key, "0");
  return copy.echo();
}

int cmd_rl(Context& ctx) {
  const auto& cfg = ctx.config;
  auto base = load_model(cfg, "rl.base_checkpoint");
  const auto spec = cfg.task();
  const auto vocab = task_vocabulary(spec.kind);
  check_model(base, vocab, spec);
  const auto gcfg = cfg.grpo(ctx.threads);
  const int every = cfg.get_int("rl.checkpoint_every");
  const bool timing = cfg.get_bool("log_timing");
  const auto seed = seed_of(cfg);
  const auto dir = prepare_run_dir(cfg);
  const auto state_path = dir / "checkpoints" / "latest.rlstate";
  const auto metrics_path = dir / "logs" / "metrics.csv";
  const auto rollouts_path = dir / "traces" / "rollouts.jsonl";

  RLState state;
  const bool resume = fs::exists(state_path);
  if (resume) {
    // Extending rl.updates is allowed; anything else must match the interrupted run.
    RunConfig previous;
    previous.load_file(dir / "config.echo");
    if (echo_without(previous, "rl.updates") != echo_without(cfg, "rl.updates")) {
      throw ConfigError("run directory " + dir.string() + " holds a different configuration");
    }
    state = load_rl_state(state_path, gcfg);
    if (state.params.config() != base.config()) {
      throw CheckpointError("saved RL state does not match the base checkpoint shape");
    }
    const auto rows_per_update = static_cast<std::size_t>(gcfg.batch_size) * gcfg.group_size;
    truncate_lines(metrics_path, 1 + static_cast<std::size_t>(state.next_update));
    truncate_lines(rollouts_path, rows_per_update * static_cast<std::size_t>(state.next_update));
    *ctx.out << "resuming at update " << state.next_update << '\n';
  } else {
    state = start_rl(base, gcfg);
  }
  write_file(dir / "config.echo", cfg.echo());

  auto metrics = open_out(metrics_path, resume ? std::ios::app : std::ios::trunc);
  auto rollouts = open_out(rollouts_path, resume ? std::ios::app : std::ios::trunc);
  if (!resume) {
    metrics << "update,mean_reward,objective,clip_frac,mean_entropy,rollout_secs,update_secs\n";
  }
  std::vector<Instance> train;
  if (cfg.has("rl.train_instances")) {
    auto in = open_in(cfg.get("rl.train_instances"));
    train = read_instances(in);
  } else {
    train = train_instances(cfg, spec);
  }

  RLHooks hooks;
  hooks.checkpoint_every = every;
  hooks.on_rollout = [&](const RolloutLogRow& r) { rollouts << rollout_line(r) << '\n'; };
  hooks.on_metrics = [&](const RLMetricsRow& r) {
    metrics << r.update << ',' << num(r.mean_reward) << ',' << num(r.objective) << ',' << num(r.clip_frac) << ','
            << num(r.mean_entropy) << ',' << num(timing ? r.rollout_secs : 0.0) << ','
            << num(timing ? r.update_secs : 0.0) << '\n';
  };
  hooks.on_checkpoint = [&](const RLState& s) {
    metrics.flush();
    rollouts.flush();
    save_checkpoint(s.params, dir / "checkpoints" / "latest.ckpt");
    save_rl_state(s, state_path);
  };
  state = train_rl(std::move(state), train, vocab, gcfg, seed, hooks);
  metrics.close();
  rollouts.close();
  save_checkpoint(state.params, dir / "checkpoints" / "latest.ckpt");
  save_rl_state(state, state_path);
  save_checkpoint(state.params, dir / "checkpoints" / "final.ckpt");
  *ctx.out << "rl-train: " << state.next_update << " updates\ncheckpoint: "
           << (dir / "checkpoints" / "final.ckpt").string() << '\n';
  return kExitOk;
}

// -------------------------------- decode --------------------------------

int cmd_decode(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto params = load_model(cfg, "eval.checkpoint");
  const auto spec = cfg.task();
  const auto vocab = task_vocabulary(spec.kind);
  check_model(params, vocab, spec);
  const auto dc = cfg.decode();
  const int samples = cfg.get_int("decode.samples");
  if (samples < 1) {
    throw ConfigError("decode.samples must be at least 1");
  }
  const auto seed = seed_of(cfg);
  const auto dir = prepare_run_dir(cfg);
  write_file(dir / "config.echo", cfg.echo());
  const auto instances = held_out_instances(cfg, spec);
  write_file(dir / "data" / "eval_instances.jsonl", instances_jsonl(instances));

  const auto per = static_cast<std::size_t>(samples);
  std::vector<DecodeResult> results(instances.size() * per);
  parallel_for(results.size(), ctx.threads, [&](std::size_t job) {
    const auto& inst = instances[job / per];
    auto rng = derive_stream(seed, {"decode", static_cast<std::uint64_t>(inst.id), job % per});
    results[job] = decode(params, inst.prompt, dc, vocab, rng);
  });

  const std::string mode(to_string(dc.mode));
  auto traces = open_out(dir / "traces" / ("decode_" + mode + ".jsonl"));
  traces << trace_header_line(dc) << '\n';
  auto csv = open_out(dir / "logs" / "decode.csv");
  csv << "problem_id,sample,accuracy,reward,steps,completion\n";
  double acc = 0.0;
  long tokens = 0;
  long steps = 0;
  for (std::size_t job = 0; job < results.size(); ++job) {
    const auto& inst = instances[job / per];
    const auto& r = results[job];
    const auto reward = verify(inst, r.completion);
    write_trace(traces, inst.id, static_cast<int>(job % per), r.trace);
    csv << inst.id << ',' << job % per << ',' << num(reward.accuracy) << ',' << num(reward.total) << ','
        << r.trace.steps << ',' << completion_text(r.completion, vocab) << '\n';
    acc += reward.accuracy;
    tokens += static_cast<long>(r.trace.records.size());
    steps += r.trace.steps;
  }
  const double n = results.empty() ? 1.0 : static_cast<double>(results.size());
  *ctx.out << "decode: mode=" << mode << " accuracy=" << acc / n
           << " tokens_per_step=" << (steps ? static_cast<double>(tokens) / static_cast<double>(steps) : 0.0) << '\n';
  return kExitOk;
}

// --------------------------------- eval ---------------------------------

struct ModeSamples {
  std::string name;
  std::vector<int> problem_ids;
  std::vector<std::vector<bool>> correct;
  TraceSet traces;
};

std::vector<int> checked_k_grid(const RunConfig& cfg, int n) {
  auto grid = cfg.get_int_list("eval.k");
  if (grid.empty()) {
    throw ConfigError("eval.k is empty");
  }
  for (int k : grid) {
    if (k < 1 || k > n) {
      throw ConfigError("eval.k entry " + std::to_string(k) + " lies outside [1, " + std::to_string(n) + "]");
    }
  }
  return grid;
}

void write_tables(const fs::path& logs, std::span<const ModeSamples> modes, std::span<const int> k_grid,
                  int coverage_k, std::span<const Instance> instances, std::ostream& out) {
  std::string summary = "mode,k,pass_at_k\n";
  for (const auto& m : modes) {
    const auto table = make_passk_table(m.problem_ids, m.correct, k_grid);
    write_file(logs / ("passk_" + m.name + ".csv"), table.to_csv());
    const auto mean = table.mean();
    for (std::size_t j = 0; j < k_grid.size(); ++j) {
      summary += m.name + ',' + std::to_string(k_grid[j]) + ',' + num(mean[j]) + '\n';
    }
    out << m.name << ": pass@" << k_grid.front() << '=' << mean.front() << " pass@" << k_grid.back() << '='
        << mean.back() << '\n';
  }
  write_file(logs / "passk_summary.csv", summary);

  std::string cov = "mode_a,mode_b,k,exclusive_a,exclusive_b,both,neither,total\n";
  for (std::size_t a = 0; a < modes.size(); ++a) {
    for (std::size_t b = a + 1; b < modes.size(); ++b) {
      const auto r = coverage(modes[a].name, modes[a].problem_ids, modes[a].correct, modes[b].name,
                              modes[b].problem_ids, modes[b].correct, coverage_k);
      const auto rows = r.to_csv();
      cov += rows.substr(rows.find('\n') + 1);
    }
  }
  write_file(logs / "coverage.csv", cov);

  std::vector<TraceSet> sets;
  for (const auto& m : modes) {
    sets.push_back(m.traces);
  }
  write_file(logs / "entropy.csv", entropy_degradation(sets, instances).to_csv());
}

int cmd_eval(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto params = load_model(cfg, "eval.checkpoint");
  const auto spec = cfg.task();
  const auto vocab = task_vocabulary(spec.kind);
  check_model(params, vocab, spec);
  const auto seed = seed_of(cfg);
  const int n = cfg.get_int("eval.n");
  if (n < 1) {
    throw ConfigError("eval.n must be at least 1");
  }
  const bool sweep = cfg.get_bool("eval.eb_sweep");
  const auto gammas = cfg.get_double_list("eval.eb_gammas");
  const auto k_grid = sweep ? std::vector<int>{} : checked_k_grid(cfg, n);
  int coverage_k = cfg.get_int("eval.coverage_k");
  coverage_k = coverage_k == 0 ? n : coverage_k;
  if (coverage_k < 1 || coverage_k > n) {
    throw ConfigError("eval.coverage_k must lie in [1, eval.n]");
  }
  std::vector<DecodeConfig> configs;
  std::vector<std::string> names;
  for (const auto& name : cfg.get_list("eval.modes")) {
    RunConfig per = cfg;
    per.set("decode.mode", name);
    per.set("decode.temperature", cfg.get("eval.temperature"));
    configs.push_back(per.decode());
    names.emplace_back(to_string(configs.back().mode));
    if (std::count(names.begin(), names.end(), names.back()) > 1) {
      throw ConfigError("eval.modes lists " + names.back() + " twice");
    }
  }
  const auto dir = prepare_run_dir(cfg);
  write_file(dir / "config.echo", cfg.echo());
  const auto instances = held_out_instances(cfg, spec);
  write_file(dir / "data" / "eval_instances.jsonl", instances_jsonl(instances));

  if (sweep) {
    const auto rows = eb_sweep(params, instances, gammas, vocab, spec.gen_budget, ctx.threads);
    write_file(dir / "logs" / "eb_sweep.csv", eb_sweep_csv(rows));
    for (const auto& r : rows) {
      *ctx.out << "gamma=" << r.gamma << " accuracy=" << r.accuracy << " tokens_per_step=" << r.tokens_per_step
               << '\n';
    }
    return kExitOk;
  }

  std::vector<ModeSamples> modes;
  for (std::size_t m = 0; m < configs.size(); ++m) {
    auto exp = passk_experiment(params, instances, configs[m], vocab, n, k_grid, seed, ctx.threads);
    ModeSamples s;
    s.name = names[m];
    s.problem_ids = exp.problem_ids;
    s.correct = exp.correct;
    s.traces.mode = names[m];
    auto traces = open_out(dir / "traces" / (names[m] + ".jsonl"));
    traces << trace_header_line(configs[m]) << '\n';
    for (std::size_t p = 0; p < exp.samples.size(); ++p) {
      for (std::size_t j = 0; j < exp.samples[p].size(); ++j) {
        write_trace(traces, exp.problem_ids[p], static_cast<int>(j), exp.samples[p][j].trace);
        s.traces.problem_ids.push_back(exp.problem_ids[p]);
        s.traces.traces.push_back(std::move(exp.samples[p][j].trace));
      }
    }
    modes.push_back(std::move(s));
  }
  write_tables(dir / "logs", modes, k_grid, coverage_k, instances, *ctx.out);
  return kExitOk;
}

// -------------------------------- analyze -------------------------------

bool is_trace_file(const fs::path& path) {
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  return first.find("\"type\":\"header\"") != std::string::npos;
}

int cmd_analyze(Context& ctx) {
  const auto& cfg = ctx.config;
  cfg.require("analyze.run");
  const fs::path run = cfg.get("analyze.run");
  const auto instance_path = cfg.has("eval.instances") ? fs::path(cfg.get("eval.instances"))
                                                       : run / "data" / "eval_instances.jsonl";
  auto instance_in = open_in(instance_path);
  const auto instances = read_instances(instance_in);
  if (instances.empty()) {
    throw FormatError(instance_path.string() + " holds no instances");
  }
  const auto vocab = task_vocabulary(instances.front().kind());
  std::map<int, const Instance*> by_id;
  for (const auto& inst : instances) {
    by_id[inst.id] = &inst;
  }
  std::vector<fs::path> files;
  if (fs::is_directory(run / "traces")) {
    for (const auto& e : fs::directory_iterator(run / "traces")) {
      if (e.path().extension() == ".jsonl" && is_trace_file(e.path())) {
        files.push_back(e.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw ConfigError("no trace files under " + (run / "traces").string());
  }

  std::vector<ModeSamples> modes;
  int n = 0;
  for (const auto& path : files) {
    auto in = open_in(path);
    auto tf = read_trace_file(in);
    ModeSamples s;
    s.name = path.stem().string();
    s.traces.mode = s.name;
    std::map<int, std::map<int, bool>> grid;
    for (std::size_t i = 0; i < tf.traces.size(); ++i) {
      auto it = by_id.find(tf.problem_ids[i]);
      if (it == by_id.end()) {
        throw FormatError(path.string() + ": unknown problem id " + std::to_string(tf.problem_ids[i]));
      }
      std::vector<TokenId> tokens(static_cast<std::size_t>(tf.config.gen_budget), vocab.eos_id());
      for (const auto& rec : tf.traces[i].records) {
        tokens.at(static_cast<std::size_t>(rec.position)) = rec.token;
      }
      grid[tf.problem_ids[i]][tf.samples[i]] = verify(*it->second, Completion(tokens, vocab.eos_id())).accuracy > 0.5;
      s.traces.problem_ids.push_back(tf.problem_ids[i]);
      s.traces.traces.push_back(std::move(tf.traces[i]));
    }
    for (auto& [id, row] : grid) {
      s.problem_ids.push_back(id);
      std::vector<bool> flags;
      for (auto& [j, ok] : row) {
        flags.push_back(ok);
      }
      if (n == 0) {
        n = static_cast<int>(flags.size());
      }
      if (static_cast<int>(flags.size()) != n) {
        throw FormatError(path.string() + ": every problem needs the same number of samples");
      }
      s.correct.push_back(std::move(flags));
    }
    modes.push_back(std::move(s));
  }

  std::vector<int> k_grid;
  for (int k : cfg.get_int_list("eval.k")) {
    if (k >= 1 && k <= n) {
      k_grid.push_back(k);
    }
  }
  if (k_grid.empty()) {
    k_grid.push_back(1);
  }
  int coverage_k = cfg.get_int("eval.coverage_k");
  coverage_k = coverage_k == 0 || coverage_k > n ? n : coverage_k;
  const auto dir = prepare_run_dir(cfg);
  write_file(dir / "config.echo", cfg.echo());
  write_tables(dir / "logs", modes, k_grid, coverage_k, instances, *ctx.out);
  return kExitOk;
}

// ------------------------------- dispatch -------------------------------

struct CommonOptions {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 1;
  bool list_keys = false;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("-c,--config", o.config_files, "config file(s) with key = value lines, applied in order");
  sub->add_option("--set", o.sets, "override one key: --set key=value (repeatable)");
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("-o,--out", o.out, "run directory");
  sub->add_flag("--list-keys", o.list_keys, "print the resolved configuration and exit");
  sub->add_option("-j,--threads", o.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dlab: masked-diffusion language model lab"};
  app.name("dlab");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "list every subcommand option");

  CommonOptions common;
  std::optional<int> steps, updates, n_samples, samples, coverage_k;
  std::optional<std::string> base, checkpoint, modes, mode, k_list, eb_gamma, instances, run_dir;
  std::optional<double> temperature;

  auto* pre = app.add_subcommand("pretrain", "train the denoiser on the task corpus");
  add_common(pre, common);
  pre->add_option("--steps", steps, "pretrain.steps");

  auto* rl = app.add_subcommand("rl-train", "GRPO on the exact AR policy, resumable");
  add_common(rl, common);
  rl->add_option("--updates", updates, "rl.updates");
  rl->add_option("--base", base, "rl.base_checkpoint");

  auto* dec = app.add_subcommand("decode", "decode held-out prompts and write traces");
  add_common(dec, common);
  dec->add_option("--checkpoint", checkpoint, "eval.checkpoint");
  dec->add_option("--mode", mode, "decode.mode");
  dec->add_option("--temperature", temperature, "decode.temperature");
  dec->add_option("--eb-gamma", eb_gamma, "decode.eb_gamma");
  dec->add_option("--samples", samples, "decode.samples");
  dec->add_option("--instances", instances, "eval.instances");

  auto* ev = app.add_subcommand("eval", "Pass@k, coverage and fork entropy per decode mode");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "eval.checkpoint");
  ev->add_option("--modes", modes, "eval.modes, comma separated");
  ev->add_option("--mode", mode, "a single eval mode");
  ev->add_option("--n", n_samples, "eval.n");
  ev->add_option("--k", k_list, "eval.k, e.g. 1,2,4,...,64");
  ev->add_option("--temperature", temperature, "eval.temperature");
  ev->add_option("--eb-gamma", eb_gamma, "decode.eb_gamma, or 'sweep' for the eval.eb_gammas sweep");
  ev->add_option("--coverage-k", coverage_k, "eval.coverage_k");
  ev->add_option("--instances", instances, "eval.instances");

  auto* an = app.add_subcommand("analyze", "recompute eval tables from a run's traces");
  add_common(an, common);
  an->add_option("--run", run_dir, "analyze.run");
  an->add_option("--k", k_list, "eval.k");
  an->add_option("--coverage-k", coverage_k, "eval.coverage_k");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Context ctx;
  ctx.out = &out;
  ctx.threads = common.threads;
  try {
    auto& cfg = ctx.config;
    for (const auto& f : common.config_files) {
      cfg.load_file(f);
    }
    for (const auto& s : common.sets) {
      cfg.set_assignment(s);
    }
    if (common.seed) cfg.set("seed", std::to_string(*common.seed));
    if (common.out) cfg.set("out_dir", *common.out);
    if (steps) cfg.set("pretrain.steps", std::to_string(*steps));
    if (updates) cfg.set("rl.updates", std::to_string(*updates));
    if (base) cfg.set("rl.base_checkpoint", *base);
    if (checkpoint) cfg.set("eval.checkpoint", *checkpoint);
    if (instances) cfg.set("eval.instances", *instances);
    if (samples) cfg.set("decode.samples", std::to_string(*samples));
    if (n_samples) cfg.set("eval.n", std::to_string(*n_samples));
    if (k_list) cfg.set("eval.k", *k_list);
    if (coverage_k) cfg.set("eval.coverage_k", std::to_string(*coverage_k));
    if (run_dir) cfg.set("analyze.run", *run_dir);
    if (modes) cfg.set("eval.modes", *modes);
    const bool is_eval = ev->parsed();
    if (mode) cfg.set(is_eval ? "eval.modes" : "decode.mode", *mode);
    if (temperature) cfg.set(is_eval ? "eval.temperature" : "decode.temperature", num(*temperature));
    if (eb_gamma) {
      if (*eb_gamma == "sweep" && is_eval) {
        cfg.set("eval.eb_sweep", "true");
      } else {
        cfg.set("decode.eb_gamma", *eb_gamma);
        cfg.get_double("decode.eb_gamma");
      }
    }
    if (common.list_keys) {
      out << cfg.echo();
      return kExitOk;
    }
    if (pre->parsed()) return cmd_pretrain(ctx);
    if (rl->parsed()) return cmd_rl(ctx);
    if (dec->parsed()) return cmd_decode(ctx);
    if (ev->parsed()) return cmd_eval(ctx);
    return cmd_analyze(ctx);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    args.emplace_back(argv[i]);
  }
  return run(args, out, err);
}

}  // namespace dlab::cli
