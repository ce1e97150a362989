#pragma once

// Forward masking process and the 1/t-weighted masked cross-entropy objective.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/denoiser.hpp"
#include "dlab/optim.hpp"

namespace dlab {

inline constexpr double kMinNoiseLevel = 0.01;

struct TrainingExample {
  Prompt prompt;
  std::vector<TokenId> response;  // ends with eos_id
};

/// Response right-padded with eos_id to `gen_budget` tokens.
std::vector<TokenId> pad_response(std::span<const TokenId> response, int gen_budget, TokenId eos_id);

/// Prompt followed by the padded response.
std::vector<TokenId> clean_sequence(const TrainingExample& example, int gen_budget, TokenId eos_id);

/// Masks every position at or after `prompt_len` independently with probability t.
MaskedSequence forward_mask(std::span<const TokenId> x0, int prompt_len, double t, TokenId mask_id,
                            RngStream& rng);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  int masked = 0;
  ParameterSet<T> grad;
};

/// (1/t) * sum over masked k of -log p(x0[k] | xt). Zero loss and gradient when
/// nothing is masked. Requires t in [kMinNoiseLevel, 1].
template <typename T>
LossAndGrad<T> mdm_loss_on(const ParameterSet<T>& params, std::span<const TokenId> x0, const MaskedSequence& xt,
                           double t);

/// Draws x_t ~ q(x_t | x0) at level t and evaluates mdm_loss_on.
template <typename T>
LossAndGrad<T> mdm_loss(const ParameterSet<T>& params, const TrainingExample& example, double t, int gen_budget,
                        const Vocabulary& vocab, RngStream& rng);

struct PretrainConfig {
  int steps = 3000;
  int batch_size = 32;
  int gen_budget = 16;
  double t_min = kMinNoiseLevel;
  AdamWConfig adam{3e-4, 0.9, 0.999, 1e-8, 0.0};
  int threads = 1;
};

struct PretrainLogRow {
  int step = 0;
  double loss = 0.0;
  double t_mean = 0.0;
};

/// Fresh parameters drawn from the seed's "init" stream.
DenoiserParams initial_parameters(const DenoiserConfig& config, std::uint64_t seed);

/// Minibatch Adam on the masked-diffusion loss with t ~ U[0,1] clamped to t_min.
/// Every random draw comes from streams keyed by (step, batch slot), so results
/// do not depend on the thread count. Throws NumericError on a NaN loss.
DenoiserParams pretrain(DenoiserParams params, std::span<const TrainingExample> corpus, const Vocabulary& vocab,
                        const PretrainConfig& config, std::uint64_t seed, std::vector<PretrainLogRow>& log,
                        const std::function<void(const PretrainLogRow&)>& on_step = {});

}  // namespace dlab
