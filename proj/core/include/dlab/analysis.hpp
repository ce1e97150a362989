#pragma once

// Pass@k estimation, solved-set coverage between decode modes, and entropy /
// bypass statistics at fork positions, emitted as plot-ready CSV tables.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/decoding.hpp"
#include "dlab/denoiser.hpp"
#include "dlab/tasks.hpp"

namespace dlab {

/// Unbiased estimator 1 - C(n-c, k) / C(n, k), evaluated as
/// 1 - prod_{i<k} (1 - c / (n - i)). Requires 0 <= c <= n and 1 <= k <= n.
double pass_at_k(int n, int c, int k);

struct PassAtKRow {
  int problem_id = 0;
  int n = 0;
  int c = 0;
  std::vector<double> estimates;  // aligned with k_grid
};

struct PassAtKTable {
  std::vector<int> k_grid;
  std::vector<PassAtKRow> rows;

  /// Per-k average over problems.
  std::vector<double> mean() const;
  /// problem_id,n,c,pass@<k>...
  std::string to_csv() const;
};

PassAtKTable make_passk_table(std::span<const int> problem_ids, const std::vector<std::vector<bool>>& correct,
                              std::span<const int> k_grid);

struct PassAtKExperiment {
  DecodeConfig config;
  std::vector<int> problem_ids;
  std::vector<std::vector<bool>> correct;          // [problem][sample]
  std::vector<std::vector<DecodeResult>> samples;  // [problem][sample]
  PassAtKTable table;
};

/// n decodes per instance; sample j of problem p uses the stream
/// (seed, "eval-decode", p, j).
PassAtKExperiment passk_experiment(const DenoiserParams& params, std::span<const Instance> instances,
                                   const DecodeConfig& config, const Vocabulary& vocab, int n,
                                   std::span<const int> k_grid, std::uint64_t seed, int threads = 1);

struct CoverageReport {
  std::string mode_a;
  std::string mode_b;
  int k = 0;
  std::vector<int> problem_ids;
  std::vector<bool> solved_a;
  std::vector<bool> solved_b;
  int exclusive_a = 0;
  int exclusive_b = 0;
  int both = 0;
  int neither = 0;

  /// mode_a,mode_b,k,exclusive_a,exclusive_b,both,neither,total
  std::string to_csv() const;
};

/// A problem counts as solved under a mode iff one of its first k samples is correct.
CoverageReport coverage(std::string mode_a, std::span<const int> ids_a, const std::vector<std::vector<bool>>& correct_a,
                        std::string mode_b, std::span<const int> ids_b, const std::vector<std::vector<bool>>& correct_b,
                        int k);

struct TraceSet {
  std::string mode;
  std::vector<int> problem_ids;  // one per trace
  std::vector<DecodeTrace> traces;
};

struct ModeEntropy {
  std::string mode;
  double fork_mean_entropy = 0.0;
  double global_mean_entropy = 0.0;
  long fork_records = 0;
  long total_records = 0;
  long bypassed_fork = 0;
  long bypassed_nonfork = 0;
  std::map<TokenId, std::pair<long, long>> per_token;  // token -> (bypassed, finalised)

  double fork_bypass_rate() const;
  double nonfork_bypass_rate() const;
};

struct EntropyReport {
  std::vector<ModeEntropy> modes;

  /// mode,fork_mean_entropy,global_mean_entropy,fork_records,total_records,
  /// fork_bypass_rate,nonfork_bypass_rate
  std::string to_csv() const;
};

EntropyReport entropy_degradation(std::span<const TraceSet> trace_sets, std::span<const Instance> instances);

struct EbSweepRow {
  double gamma = 0.0;
  double accuracy = 0.0;
  double tokens_per_step = 0.0;
};

/// Greedy (T = 0) entropy-bounded decoding of every instance at each gamma.
std::vector<EbSweepRow> eb_sweep(const DenoiserParams& params, std::span<const Instance> instances,
                                 std::span<const double> gammas, const Vocabulary& vocab, int gen_budget,
                                 int threads = 1);

/// gamma,accuracy,tokens_per_step
std::string eb_sweep_csv(std::span<const EbSweepRow> rows);

/// Mean accuracy of one greedy decode per instance.
double greedy_accuracy(const DenoiserParams& params, std::span<const Instance> instances, const DecodeConfig& config,
                       const Vocabulary& vocab, int threads = 1);

}  // namespace dlab
