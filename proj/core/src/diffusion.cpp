#include "dlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dlab/parallel.hpp"

namespace dlab {

std::vector<TokenId> pad_response(std::span<const TokenId> response, int gen_budget, TokenId eos_id) {
  if (static_cast<int>(response.size()) > gen_budget) {
    throw std::length_error("response longer than the generation budget");
  }
  std::vector<TokenId> out(response.begin(), response.end());
  out.resize(static_cast<std::size_t>(gen_budget), eos_id);
  return out;
}

std::vector<TokenId> clean_sequence(const TrainingExample& example, int gen_budget, TokenId eos_id) {
  std::vector<TokenId> out = example.prompt.ids;
  const auto padded = pad_response(example.response, gen_budget, eos_id);
  out.insert(out.end(), padded.begin(), padded.end());
  return out;
}

MaskedSequence forward_mask(std::span<const TokenId> x0, int prompt_len, double t, TokenId mask_id,
                            RngStream& rng) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("noise level t must lie in [0, 1]");
  }
  std::vector<TokenId> tokens(x0.begin(), x0.end());
  for (std::size_t k = static_cast<std::size_t>(prompt_len); k < tokens.size(); ++k) {
    if (rng.uniform() < t) {
      tokens[k] = mask_id;
    }
  }
  return MaskedSequence(std::move(tokens), mask_id);
}

template <typename T>
LossAndGrad<T> mdm_loss_on(const ParameterSet<T>& params, std::span<const TokenId> x0, const MaskedSequence& xt,
                           double t) {
  if (!(t >= kMinNoiseLevel && t <= 1.0)) {
    throw std::invalid_argument("mdm_loss requires t in [t_min, 1]");
  }
  if (static_cast<int>(x0.size()) != xt.size()) {
    throw std::invalid_argument("clean and noisy sequences differ in length");
  }
  LossAndGrad<T> out{0.0, xt.masked_count(), ParameterSet<T>(params.config())};
  if (out.masked == 0) {
    return out;
  }
  ForwardCache<T> cache;
  forward(params, xt.tokens(), 1, cache);
  const int vocab = params.config().vocab_size;
  Matrix<T> dlogits = Matrix<T>::Zero(cache.logits.rows(), vocab);
  std::vector<double> probs(static_cast<std::size_t>(vocab));
  const double weight = 1.0 / t;
  double loss = 0.0;
  for (int k = 0; k < xt.size(); ++k) {
    if (!xt.is_masked(k)) {
      continue;
    }
    const auto row = std::span<const T>(cache.logits.row(k).data(), static_cast<std::size_t>(vocab));
    softmax_into(row, std::span<double>(probs));
    const auto target = static_cast<std::size_t>(x0[static_cast<std::size_t>(k)]);
    loss -= std::log(std::max(probs[target], 1e-300));
    for (int v = 0; v < vocab; ++v) {
      const double g = probs[static_cast<std::size_t>(v)] - (static_cast<std::size_t>(v) == target ? 1.0 : 0.0);
      dlogits(k, v) = static_cast<T>(weight * g);
    }
  }
  out.loss = weight * loss;
  backward(params, cache, dlogits, out.grad);
  return out;
}

template <typename T>
LossAndGrad<T> mdm_loss(const ParameterSet<T>& params, const TrainingExample& example, double t, int gen_budget,
                        const Vocabulary& vocab, RngStream& rng) {
  const auto x0 = clean_sequence(example, gen_budget, vocab.eos_id());
  const auto xt = forward_mask(x0, example.prompt.size(), t, vocab.mask_id(), rng);
  return mdm_loss_on(params, x0, xt, t);
}

template LossAndGrad<float> mdm_loss_on<float>(const ParameterSet<float>&, std::span<const TokenId>,
                                               const MaskedSequence&, double);
template LossAndGrad<double> mdm_loss_on<double>(const ParameterSet<double>&, std::span<const TokenId>,
                                                 const MaskedSequence&, double);
template LossAndGrad<float> mdm_loss<float>(const ParameterSet<float>&, const TrainingExample&, double, int,
                                            const Vocabulary&, RngStream&);
template LossAndGrad<double> mdm_loss<double>(const ParameterSet<double>&, const TrainingExample&, double, int,
                                              const Vocabulary&, RngStream&);

DenoiserParams initial_parameters(const DenoiserConfig& config, std::uint64_t seed) {
  auto rng = derive_stream(seed, {"init", 0, 0, 0});
  return init_parameters(config, rng);
}

DenoiserParams pretrain(DenoiserParams params, std::span<const TrainingExample> corpus, const Vocabulary& vocab,
                        const PretrainConfig& config, std::uint64_t seed, std::vector<PretrainLogRow>& log,
                        const std::function<void(const PretrainLogRow&)>& on_step) {
  if (corpus.empty()) {
    throw std::invalid_argument("pretraining corpus is empty");
  }
  if (config.batch_size < 1 || config.steps < 0) {
    throw std::invalid_argument("pretraining needs batch_size >= 1 and steps >= 0");
  }
  AdamW optimizer(config.adam, params.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<LossAndGrad<float>> slots(batch);
  std::vector<double> t_values(batch);
  std::vector<double> grad(params.size());

  for (int step = 0; step < config.steps; ++step) {
    parallel_for(batch, config.threads, [&](std::size_t i) {
      auto rng = derive_stream(seed, {"pretrain", static_cast<std::uint64_t>(step), i, 0});
      const auto& example = corpus[rng.below(corpus.size())];
      const double t = std::max(config.t_min, rng.uniform());
      t_values[i] = t;
      slots[i] = mdm_loss(params, example, t, config.gen_budget, vocab, rng);
    });

    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    double t_sum = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      loss += slots[i].loss;
      t_sum += t_values[i];
      const auto g = slots[i].grad.values();
      for (std::size_t j = 0; j < grad.size(); ++j) {
        grad[j] += g[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(batch);
    loss *= inv;
    for (double& g : grad) {
      g *= inv;
    }
    if (!std::isfinite(loss)) {
      throw NumericError("pretraining diverged: loss is not finite at step " + std::to_string(step));
    }
    optimizer.step(params.values(), grad);
    PretrainLogRow row{step, loss, t_sum * inv};
    log.push_back(row);
    if (on_step) {
      on_step(row);
    }
  }
  return params;
}

}  // namespace dlab
