#pragma once

// Group-relative policy optimisation on the exact autoregressive policy.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/denoiser.hpp"
#include "dlab/optim.hpp"
#include "dlab/policy.hpp"
#include "dlab/tasks.hpp"

namespace dlab {

struct GRPOConfig {
  int group_size = 16;
  double clip_eps = 0.2;
  double kl_beta = 0.0;
  double lr = 5e-6;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int batch_size = 4;  // queries per update
  int update_steps = 1;
  double temperature = 1.0;
  int gen_budget = 16;
  double entropy_top_fraction = 1.0;  // 1.0 keeps every token
  int updates = 200;
  int threads = 1;

  void validate() const;
};

/// (r - mean) / std with the population std; all zero when std < 1e-8.
std::vector<double> compute_advantages(std::span<const double> rewards);

double clipped_term(double ratio, double advantage, double eps);
/// d clipped_term / d ratio (zero where the clipped branch is selected and saturated).
double clipped_term_grad(double ratio, double advantage, double eps);

/// k3 estimator exp(l_ref - l_new) - (l_ref - l_new) - 1.
double kl_token(double logp_new, double logp_ref);
double kl_token_grad(double logp_new, double logp_ref);

struct RolloutGroup {
  int query_id = 0;
  Prompt prompt;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> advantages;  // one per rollout, shared by all its tokens
};

RolloutGroup make_group(int query_id, Prompt prompt, std::vector<Rollout> rollouts, std::vector<double> rewards);

/// Token indices entering the objective: k < |o|, and with fraction < 1 only the
/// ceil(fraction * |o|) highest rollout-entropy tokens (ties to lower k).
std::vector<int> objective_tokens(const Rollout& rollout, double entropy_top_fraction);

template <typename T>
struct GRPOLoss {
  double objective = 0.0;
  double clip_fraction = 0.0;
  int tokens = 0;
  ParameterSet<T> grad;  // gradient of the objective (ascent direction)
};

/// Mean over groups of (1/G) sum_i (1/|o_i|) sum_k [clipped surrogate - beta * KL].
/// Old log-probs recorded at rollout time serve both as the ratio denominator and
/// the KL reference. Throws NumericError on a non-finite objective.
template <typename T>
GRPOLoss<T> grpo_loss(const ParameterSet<T>& params, std::span<const RolloutGroup> groups, const GRPOConfig& config,
                      const Vocabulary& vocab);

struct RLMetricsRow {
  int update = 0;
  double mean_reward = 0.0;
  double mean_accuracy = 0.0;
  double objective = 0.0;
  double clip_frac = 0.0;
  double mean_entropy = 0.0;
  double rollout_secs = 0.0;
  double update_secs = 0.0;
};

struct RolloutLogRow {
  int update = 0;
  int query_id = 0;
  int rollout_idx = 0;
  std::vector<TokenId> tokens;
  double reward = 0.0;
  std::vector<double> logprobs;
  std::vector<double> entropies;
};

struct RLState {
  DenoiserParams params;
  AdamW optimizer;
  int next_update = 0;
};

RLState start_rl(DenoiserParams base, const GRPOConfig& config);

struct RLHooks {
  std::function<void(const RLMetricsRow&)> on_metrics;
  std::function<void(const RolloutLogRow&)> on_rollout;
  std::function<void(const RLState&)> on_checkpoint;
  int checkpoint_every = 0;
};

/// Runs updates [state.next_update, config.updates). Queries, rollouts and all
/// sampling use streams keyed by (update, slot), so a resumed run reproduces an
/// uninterrupted one.
RLState train_rl(RLState state, std::span<const Instance> train, const Vocabulary& vocab, const GRPOConfig& config,
                 std::uint64_t seed, const RLHooks& hooks = {});

/// Group rollouts for one query (G draws from the streams (seed, "rollout", slot, i, update)).
RolloutGroup sample_group(const DenoiserParams& params, const Instance& instance, const Vocabulary& vocab,
                          const GRPOConfig& config, std::uint64_t seed, int update, int slot);

}  // namespace dlab
