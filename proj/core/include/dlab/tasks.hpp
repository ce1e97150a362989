#pragma once

// Synthetic verifiable tasks with enumerable solution sets.
//
// arith:    prompt "<a>+<b>=", response the zero-padded sum in digits+1 digits.
// dag-path: prompt lists the edges of a small DAG as "u v ," triples, then
//           "| s t :"; a response is any s->t path written as node labels,
//           followed by [EOS]. Several paths may be correct, which plants
//           genuine forks in the response distribution.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/diffusion.hpp"

namespace dlab {

enum class TaskKind { arith, dag_path };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

inline constexpr int kMaxDagNodes = 12;

struct TaskSpec {
  TaskKind kind = TaskKind::dag_path;
  int gen_budget = 16;
  // dag-path
  int min_nodes = 8;
  int max_nodes = 8;
  double edge_prob = 0.35;
  double multi_path_fraction = 0.75;  // share of instances forced to have >= 2 solutions
  int max_prompt_len = 64;
  // arith
  int operand_digits = 2;

  void validate() const;
};

/// dag-path: [MASK] [EOS] N0..N11 | : ,   arith: [MASK] [EOS] 0..9 + =
Vocabulary task_vocabulary(TaskKind kind);

struct ArithProblem {
  int lhs = 0;
  int rhs = 0;
  std::vector<TokenId> answer;  // fixed-width digits, without EOS
};

struct DagProblem {
  std::vector<TokenId> nodes;
  std::vector<std::pair<TokenId, TokenId>> edges;
  TokenId source = 0;
  TokenId target = 0;
};

struct Instance {
  int id = 0;
  Prompt prompt;
  std::variant<ArithProblem, DagProblem> problem;
  std::vector<int> fork_positions;

  TaskKind kind() const { return std::holds_alternative<ArithProblem>(problem) ? TaskKind::arith : TaskKind::dag_path; }
};

struct GeneratedTask {
  std::vector<Instance> instances;
  std::vector<TrainingExample> corpus;  // one response per instance, uniform over its correct responses
};

/// Instance i is drawn from the stream (seed, purpose, i).
GeneratedTask generate(const TaskSpec& spec, int count, std::uint64_t seed, std::string_view purpose = "task");

Instance make_arith_instance(int id, int lhs, int rhs, const TaskSpec& spec);
Instance make_dag_instance(int id, DagProblem problem, const TaskSpec& spec);

struct Reward {
  double accuracy = 0.0;  // arith: exact match; dag-path: valid path
  double format = 0.0;    // dag-path only
  double total = 0.0;     // training reward
};

/// Scores the tokens before the first EOS.
Reward verify(const Instance& instance, const Completion& completion);

class EnumerationBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kEnumerationBudget = 10000;

/// Every correct response, each terminated by EOS.
std::vector<std::vector<TokenId>> correct_responses(const Instance& instance,
                                                    std::size_t budget = kEnumerationBudget);

struct ForkWitness {
  int position = 0;
  std::vector<TokenId> first;
  std::vector<TokenId> second;
};

struct ForkAnalysis {
  std::vector<int> positions;
  std::vector<ForkWitness> witnesses;  // one per position
};

/// Index k is a fork iff two correct responses share a prefix of length k and
/// differ at k.
ForkAnalysis fork_analysis(const Instance& instance, std::size_t budget = kEnumerationBudget);
std::vector<int> fork_positions(const Instance& instance, std::size_t budget = kEnumerationBudget);

}  // namespace dlab
