#include "dlab/jsonl.hpp"

#include <map>

#include "json.hpp"

namespace dlab {

using nlohmann::json;

namespace {

template <typename F>
void for_each_record(std::istream& in, F&& fn) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
      fn(j);
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

json config_json(const DecodeConfig& c) {
  return json{{"mode", std::string(to_string(c.mode))},
              {"block_size", c.block_size},
              {"tokens_per_step", c.tokens_per_step},
              {"temperature", c.temperature},
              {"gen_budget", c.gen_budget},
              {"eb_gamma", c.eb_gamma},
              {"confidence_uses_max_prob", c.confidence_uses_max_prob}};
}

DecodeConfig config_from_json(const json& j) {
  DecodeConfig c;
  c.mode = parse_decode_mode(j.at("mode").get<std::string>());
  c.block_size = j.at("block_size").get<int>();
  c.tokens_per_step = j.at("tokens_per_step").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.gen_budget = j.at("gen_budget").get<int>();
  c.eb_gamma = j.at("eb_gamma").get<double>();
  c.confidence_uses_max_prob = j.value("confidence_uses_max_prob", false);
  return c;
}

}  // namespace

std::string corpus_line(const TrainingExample& example) {
  return json{{"prompt", example.prompt.ids}, {"response", example.response}}.dump();
}

std::vector<TrainingExample> read_corpus(std::istream& in) {
  std::vector<TrainingExample> out;
  for_each_record(in, [&](const json& j) {
    TrainingExample ex;
    ex.prompt.ids = j.at("prompt").get<std::vector<TokenId>>();
    ex.response = j.at("response").get<std::vector<TokenId>>();
    out.push_back(std::move(ex));
  });
  return out;
}

std::string instance_line(const Instance& instance) {
  json problem;
  if (const auto* a = std::get_if<ArithProblem>(&instance.problem)) {
    problem = json{{"task", "arith"}, {"lhs", a->lhs}, {"rhs", a->rhs}, {"answer", a->answer}};
  } else {
    const auto& d = std::get<DagProblem>(instance.problem);
    json edges = json::array();
    for (const auto& [u, v] : d.edges) {
      edges.push_back(json::array({u, v}));
    }
    problem = json{{"task", "dag-path"},
                   {"nodes", d.nodes},
                   {"edges", edges},
                   {"source", d.source},
                   {"target", d.target}};
  }
  return json{{"id", instance.id},
              {"prompt", instance.prompt.ids},
              {"answer_or_graph", problem},
              {"fork_positions", instance.fork_positions}}
      .dump();
}

std::vector<Instance> read_instances(std::istream& in) {
  std::vector<Instance> out;
  for_each_record(in, [&](const json& j) {
    Instance inst;
    inst.id = j.at("id").get<int>();
    inst.prompt.ids = j.at("prompt").get<std::vector<TokenId>>();
    const auto& p = j.at("answer_or_graph");
    if (p.at("task").get<std::string>() == "arith") {
      ArithProblem a;
      a.lhs = p.at("lhs").get<int>();
      a.rhs = p.at("rhs").get<int>();
      a.answer = p.at("answer").get<std::vector<TokenId>>();
      inst.problem = std::move(a);
    } else {
      DagProblem d;
      d.nodes = p.at("nodes").get<std::vector<TokenId>>();
      for (const auto& e : p.at("edges")) {
        d.edges.emplace_back(e.at(0).get<TokenId>(), e.at(1).get<TokenId>());
      }
      d.source = p.at("source").get<TokenId>();
      d.target = p.at("target").get<TokenId>();
      inst.problem = std::move(d);
    }
    inst.fork_positions = j.at("fork_positions").get<std::vector<int>>();
    out.push_back(std::move(inst));
  });
  return out;
}

std::string trace_header_line(const DecodeConfig& config) {
  return json{{"type", "header"}, {"config", config_json(config)}}.dump();
}

void write_trace(std::ostream& out, int problem_id, int sample, const DecodeTrace& trace) {
  for (const auto& r : trace.records) {
    out << json{{"type", "token"},      {"problem_id", problem_id}, {"sample", sample},
                {"step", r.step},       {"position", r.position},   {"token", r.token},
                {"entropy", r.entropy}, {"prob", r.prob},           {"order_index", r.order_index}}
               .dump()
        << '\n';
  }
}

TraceFile read_trace_file(std::istream& in) {
  TraceFile file;
  bool have_header = false;
  std::map<std::pair<int, int>, std::size_t> slot;
  for_each_record(in, [&](const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "header") {
      file.config = config_from_json(j.at("config"));
      have_header = true;
      return;
    }
    if (!have_header) {
      throw FormatError("trace record before header");
    }
    const int pid = j.at("problem_id").get<int>();
    const int sample = j.at("sample").get<int>();
    auto [it, fresh] = slot.try_emplace({pid, sample}, file.traces.size());
    if (fresh) {
      file.problem_ids.push_back(pid);
      file.samples.push_back(sample);
      file.traces.emplace_back();
    }
    auto& trace = file.traces[it->second];
    TraceRecord r;
    r.step = j.at("step").get<int>();
    r.position = j.at("position").get<int>();
    r.token = j.at("token").get<TokenId>();
    r.entropy = j.at("entropy").get<double>();
    r.prob = j.at("prob").get<double>();
    r.order_index = j.at("order_index").get<int>();
    trace.records.push_back(r);
    trace.steps = std::max(trace.steps, r.step + 1);
  });
  if (!have_header) {
    throw FormatError("trace file has no header record");
  }
  return file;
}

std::string rollout_line(const RolloutLogRow& row) {
  return json{{"update", row.update},     {"query_id", row.query_id}, {"rollout_idx", row.rollout_idx},
              {"tokens", row.tokens},     {"reward", row.reward},     {"logprobs", row.logprobs},
              {"entropies", row.entropies}}
      .dump();
}

}  // namespace dlab
