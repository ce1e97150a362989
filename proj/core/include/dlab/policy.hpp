#pragma once

// Autoregressive policy over the denoiser: the next-token distribution at k is
// the softmax of row k when the prompt and o_<k are observed and every later
// response position is masked. Sequence likelihoods are exact products.

#include <span>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/denoiser.hpp"

namespace dlab {

struct SequenceLogProb {
  std::vector<double> per_token;
  double total = 0.0;  // left-to-right sum of per_token
};

/// Prompt + prefix observed, the remaining gen_budget - |prefix| positions masked.
MaskedSequence ar_state(const Prompt& prompt, std::span<const TokenId> prefix, int gen_budget, TokenId mask_id);

std::vector<double> ar_next_distribution(const DenoiserParams& params, const Prompt& prompt,
                                         std::span<const TokenId> prefix, int gen_budget, const Vocabulary& vocab);

/// All gen_budget states evaluated as one forward batch.
SequenceLogProb ar_sequence_logprob(const DenoiserParams& params, const Prompt& prompt,
                                    std::span<const TokenId> completion, const Vocabulary& vocab);

/// Same quantity with one forward pass per position.
SequenceLogProb ar_sequence_logprob_stepwise(const DenoiserParams& params, const Prompt& prompt,
                                             std::span<const TokenId> completion, const Vocabulary& vocab);

struct Rollout {
  Completion completion;
  SequenceLogProb logprobs;       // of the sampled tokens
  std::vector<double> entropies;  // predictive entropy at each step
};

/// Samples o_k ~ pi(. | o_<k, q) left to right for the full budget (no early
/// stop at EOS). mask_id is never emitted.
Rollout ar_rollout(const DenoiserParams& params, const Prompt& prompt, int gen_budget, double temperature,
                   const Vocabulary& vocab, RngStream& rng);

/// Log-likelihoods of selected completion tokens with their parameter gradients,
/// evaluated as one batch of future-masked states.
template <typename T>
class ARLikelihood {
 public:
  ARLikelihood(const ParameterSet<T>& params, const Prompt& prompt, std::span<const TokenId> completion,
               std::vector<int> positions, TokenId mask_id);

  const std::vector<int>& positions() const { return positions_; }
  const std::vector<double>& logprobs() const { return logprobs_; }

  /// grad += sum_i coeffs[i] * d logprobs()[i] / d theta.
  void backward(std::span<const double> coeffs, ParameterSet<T>& grad) const;

 private:
  const ParameterSet<T>& params_;
  std::vector<int> positions_;
  std::vector<TokenId> targets_;
  int offset_ = 0;
  ForwardCache<T> cache_;
  std::vector<double> probs_;  // positions x vocab
  std::vector<double> logprobs_;
};

}  // namespace dlab
