#include "dlab/tasks.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace dlab {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::arith ? "arith" : "dag-path";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "arith") {
    return TaskKind::arith;
  }
  if (name == "dag-path") {
    return TaskKind::dag_path;
  }
  throw std::invalid_argument("unknown task: " + std::string(name));
}

void TaskSpec::validate() const {
  if (gen_budget < 2) {
    throw std::invalid_argument("task gen_budget must be at least 2");
  }
  if (kind == TaskKind::dag_path) {
    if (min_nodes < 3 || max_nodes > kMaxDagNodes || min_nodes > max_nodes) {
      throw std::invalid_argument("dag-path node count must satisfy 3 <= min_nodes <= max_nodes <= 12");
    }
    if (!(edge_prob > 0.0 && edge_prob <= 1.0) || !(multi_path_fraction >= 0.0 && multi_path_fraction <= 1.0)) {
      throw std::invalid_argument("dag-path probabilities out of range");
    }
    if (max_prompt_len < 8) {
      throw std::invalid_argument("dag-path max_prompt_len too small");
    }
  } else {
    if (operand_digits < 1 || operand_digits > 6 || operand_digits + 2 > gen_budget) {
      throw std::invalid_argument("arith operand_digits incompatible with gen_budget");
    }
  }
}

namespace {

constexpr TokenId kMask = 0;
constexpr TokenId kEos = 1;
constexpr TokenId kFirstNode = 2;
constexpr TokenId kDagBar = kFirstNode + kMaxDagNodes;
constexpr TokenId kDagQuery = kDagBar + 1;
constexpr TokenId kDagComma = kDagQuery + 1;
constexpr TokenId kFirstDigit = 2;
constexpr TokenId kPlus = kFirstDigit + 10;
constexpr TokenId kEquals = kPlus + 1;

bool is_node_token(TokenId t) { return t >= kFirstNode && t < kFirstNode + kMaxDagNodes; }

std::vector<TokenId> digits_of(int value, int width) {
  std::vector<TokenId> out;
  if (width <= 0) {
    const std::string s = std::to_string(value);
    for (char ch : s) {
      out.push_back(kFirstDigit + (ch - '0'));
    }
    return out;
  }
  out.resize(static_cast<std::size_t>(width));
  for (int i = width - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kFirstDigit + value % 10;
    value /= 10;
  }
  return out;
}

// Depth-first enumeration of source->target paths in a DAG.
void enumerate_paths(const DagProblem& g, TokenId at, std::vector<TokenId>& path,
                     std::vector<std::vector<TokenId>>& out, std::size_t budget) {
  path.push_back(at);
  if (at == g.target) {
    if (out.size() >= budget) {
      throw EnumerationBudgetExceeded("more than " + std::to_string(budget) + " correct responses");
    }
    out.push_back(path);
  } else {
    for (const auto& [u, v] : g.edges) {
      if (u == at && std::find(path.begin(), path.end(), v) == path.end()) {
        enumerate_paths(g, v, path, out, budget);
      }
    }
  }
  path.pop_back();
}

std::vector<std::vector<TokenId>> dag_paths(const DagProblem& g, std::size_t budget) {
  std::vector<std::vector<TokenId>> out;
  std::vector<TokenId> path;
  enumerate_paths(g, g.source, path, out, budget);
  return out;
}

Prompt dag_prompt(const DagProblem& g) {
  Prompt p;
  for (const auto& [u, v] : g.edges) {
    p.ids.push_back(u);
    p.ids.push_back(v);
    p.ids.push_back(kDagComma);
  }
  p.ids.push_back(kDagBar);
  p.ids.push_back(g.source);
  p.ids.push_back(g.target);
  p.ids.push_back(kDagQuery);
  return p;
}

template <typename V>
void shuffle(std::vector<V>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

// Draws graphs until one has an (s, t) pair meeting the solution-count and length
// constraints.
DagProblem sample_dag(const TaskSpec& spec, RngStream& rng) {
  const bool want_multi = rng.uniform() < spec.multi_path_fraction;
  const int max_edges = (spec.max_prompt_len - 4) / 2;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const int n = spec.min_nodes + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_nodes - spec.min_nodes + 1)));
    std::vector<TokenId> labels(kMaxDagNodes);
    for (int i = 0; i < kMaxDagNodes; ++i) {
      labels[static_cast<std::size_t>(i)] = kFirstNode + i;
    }
    shuffle(labels, rng);
    labels.resize(static_cast<std::size_t>(n));  // labels[i] is the i-th node in topological order

    DagProblem g;
    g.nodes = labels;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform() < spec.edge_prob) {
          g.edges.emplace_back(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
        }
      }
    }
    if (g.edges.empty() || static_cast<int>(g.edges.size()) > max_edges) {
      continue;
    }
    std::vector<std::pair<TokenId, TokenId>> pairs;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        DagProblem probe = g;
        probe.source = labels[static_cast<std::size_t>(i)];
        probe.target = labels[static_cast<std::size_t>(j)];
        const auto paths = dag_paths(probe, kEnumerationBudget);
        if (paths.empty() || (want_multi && paths.size() < 2)) {
          continue;
        }
        const bool fits = std::all_of(paths.begin(), paths.end(), [&](const auto& p) {
          return static_cast<int>(p.size()) + 1 <= spec.gen_budget;
        });
        // Single-edge answers make trivial instances; require at least one hop.
        const bool direct_only = paths.size() == 1 && paths.front().size() == 2;
        if (fits && !direct_only) {
          pairs.emplace_back(probe.source, probe.target);
        }
      }
    }
    if (pairs.empty()) {
      continue;
    }
    const auto [s, t] = pairs[rng.below(pairs.size())];
    g.source = s;
    g.target = t;
    shuffle(g.edges, rng);
    return g;
  }
  throw std::runtime_error("dag-path generator could not satisfy its constraints");
}

}  // namespace

Vocabulary task_vocabulary(TaskKind kind) {
  std::vector<std::string> tokens = {"[MASK]", "[EOS]"};
  if (kind == TaskKind::dag_path) {
    for (int i = 0; i < kMaxDagNodes; ++i) {
      tokens.push_back("N" + std::to_string(i));
    }
    tokens.push_back("|");
    tokens.push_back(":");
    tokens.push_back(",");
  } else {
    for (int d = 0; d < 10; ++d) {
      tokens.push_back(std::to_string(d));
    }
    tokens.push_back("+");
    tokens.push_back("=");
  }
  return Vocabulary(std::move(tokens), kMask, kEos);
}

Instance make_arith_instance(int id, int lhs, int rhs, const TaskSpec& spec) {
  Instance inst;
  inst.id = id;
  inst.prompt.ids = digits_of(lhs, 0);
  inst.prompt.ids.push_back(kPlus);
  const auto rhs_digits = digits_of(rhs, 0);
  inst.prompt.ids.insert(inst.prompt.ids.end(), rhs_digits.begin(), rhs_digits.end());
  inst.prompt.ids.push_back(kEquals);
  inst.problem = ArithProblem{lhs, rhs, digits_of(lhs + rhs, spec.operand_digits + 1)};
  return inst;
}

Instance make_dag_instance(int id, DagProblem problem, const TaskSpec& spec) {
  Instance inst;
  inst.id = id;
  inst.prompt = dag_prompt(problem);
  inst.problem = std::move(problem);
  const auto responses = correct_responses(inst);
  if (responses.empty()) {
    throw std::invalid_argument("dag-path instance has no correct response");
  }
  for (const auto& r : responses) {
    if (static_cast<int>(r.size()) > spec.gen_budget) {
      throw std::invalid_argument("dag-path instance has a correct response longer than the budget");
    }
  }
  inst.fork_positions = fork_positions(inst);
  return inst;
}

GeneratedTask generate(const TaskSpec& spec, int count, std::uint64_t seed, std::string_view purpose) {
  spec.validate();
  GeneratedTask out;
  for (int i = 0; i < count; ++i) {
    auto rng = derive_stream(seed, {purpose, static_cast<std::uint64_t>(i), 0, 0});
    Instance inst;
    if (spec.kind == TaskKind::arith) {
      int limit = 1;
      for (int d = 0; d < spec.operand_digits; ++d) {
        limit *= 10;
      }
      const int lhs = static_cast<int>(rng.below(static_cast<std::uint64_t>(limit)));
      const int rhs = static_cast<int>(rng.below(static_cast<std::uint64_t>(limit)));
      inst = make_arith_instance(i, lhs, rhs, spec);
    } else {
      inst = make_dag_instance(i, sample_dag(spec, rng), spec);
    }
    const auto responses = correct_responses(inst);
    out.corpus.push_back(TrainingExample{inst.prompt, responses[rng.below(responses.size())]});
    out.instances.push_back(std::move(inst));
  }
  return out;
}

Reward verify(const Instance& instance, const Completion& completion) {
  const auto content = completion.content();
  Reward r;
  if (const auto* arith = std::get_if<ArithProblem>(&instance.problem)) {
    r.accuracy = std::equal(content.begin(), content.end(), arith->answer.begin(), arith->answer.end()) ? 1.0 : 0.0;
    r.total = r.accuracy;
    return r;
  }
  const auto& g = std::get<DagProblem>(instance.problem);
  if (content.empty()) {
    return r;
  }
  const bool all_labels = std::all_of(content.begin(), content.end(), is_node_token);
  const bool in_graph = std::all_of(content.begin(), content.end(), [&](TokenId t) {
    return std::find(g.nodes.begin(), g.nodes.end(), t) != g.nodes.end();
  });
  const bool distinct = std::set<TokenId>(content.begin(), content.end()).size() == content.size();
  const bool well_formed = completion.has_eos() && in_graph && distinct;
  r.format = well_formed ? 1.0 : (all_labels ? 0.5 : 0.0);
  if (well_formed && content.front() == g.source && content.back() == g.target) {
    bool edges_ok = true;
    for (std::size_t i = 0; i + 1 < content.size() && edges_ok; ++i) {
      const std::pair<TokenId, TokenId> e{content[i], content[i + 1]};
      edges_ok = std::find(g.edges.begin(), g.edges.end(), e) != g.edges.end();
    }
    r.accuracy = edges_ok ? 1.0 : 0.0;
  }
  r.total = r.accuracy + r.format;
  return r;
}

std::vector<std::vector<TokenId>> correct_responses(const Instance& instance, std::size_t budget) {
  std::vector<std::vector<TokenId>> out;
  if (const auto* arith = std::get_if<ArithProblem>(&instance.problem)) {
    out.push_back(arith->answer);
  } else {
    out = dag_paths(std::get<DagProblem>(instance.problem), budget);
  }
  for (auto& r : out) {
    r.push_back(kEos);
  }
  return out;
}

ForkAnalysis fork_analysis(const Instance& instance, std::size_t budget) {
  auto responses = correct_responses(instance, budget);
  std::sort(responses.begin(), responses.end());
  // Two responses sharing a prefix of length k and differing at k imply an
  // adjacent pair in sorted order with the same property.
  ForkAnalysis out;
  for (std::size_t i = 0; i + 1 < responses.size(); ++i) {
    const auto& a = responses[i];
    const auto& b = responses[i + 1];
    const auto diff = std::mismatch(a.begin(), a.end(), b.begin(), b.end());
    if (diff.first == a.end() || diff.second == b.end()) {
      continue;
    }
    const int k = static_cast<int>(diff.first - a.begin());
    if (std::find(out.positions.begin(), out.positions.end(), k) == out.positions.end()) {
      out.positions.push_back(k);
      out.witnesses.push_back(ForkWitness{k, a, b});
    }
  }
  std::vector<std::size_t> order(out.positions.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return out.positions[x] < out.positions[y]; });
  ForkAnalysis sorted;
  for (auto i : order) {
    sorted.positions.push_back(out.positions[i]);
    sorted.witnesses.push_back(out.witnesses[i]);
  }
  return sorted;
}

std::vector<int> fork_positions(const Instance& instance, std::size_t budget) {
  return fork_analysis(instance, budget).positions;
}

}  // namespace dlab
