#include "dlab/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "dlab/decoding.hpp"

namespace dlab {

MaskedSequence ar_state(const Prompt& prompt, std::span<const TokenId> prefix, int gen_budget, TokenId mask_id) {
  if (static_cast<int>(prefix.size()) > gen_budget) {
    throw std::length_error("prefix longer than the generation budget");
  }
  std::vector<TokenId> observed = prompt.ids;
  observed.insert(observed.end(), prefix.begin(), prefix.end());
  return MaskedSequence::with_masked_suffix(observed, gen_budget - static_cast<int>(prefix.size()), mask_id);
}

namespace {

void check_lengths(const DenoiserParams& params, const Prompt& prompt, int gen_budget) {
  if (prompt.size() + gen_budget > params.config().max_len) {
    throw std::length_error("prompt plus generation budget exceeds max_len");
  }
}

}  // namespace

std::vector<double> ar_next_distribution(const DenoiserParams& params, const Prompt& prompt,
                                         std::span<const TokenId> prefix, int gen_budget, const Vocabulary& vocab) {
  check_lengths(params, prompt, gen_budget);
  if (static_cast<int>(prefix.size()) >= gen_budget) {
    throw std::length_error("no position left to predict");
  }
  const auto state = ar_state(prompt, prefix, gen_budget, vocab.mask_id());
  DenoiserPredictor predictor(params);
  const int position = prompt.size() + static_cast<int>(prefix.size());
  std::vector<double> out;
  predictor.predict(state.tokens(), std::span<const int>(&position, 1), out);
  return out;
}

SequenceLogProb ar_sequence_logprob(const DenoiserParams& params, const Prompt& prompt,
                                    std::span<const TokenId> completion, const Vocabulary& vocab) {
  const int gen = static_cast<int>(completion.size());
  check_lengths(params, prompt, gen);
  std::vector<int> positions(static_cast<std::size_t>(gen));
  for (int k = 0; k < gen; ++k) {
    positions[static_cast<std::size_t>(k)] = k;
  }
  ARLikelihood<float> likelihood(params, prompt, completion, std::move(positions), vocab.mask_id());
  SequenceLogProb out;
  out.per_token = likelihood.logprobs();
  for (double l : out.per_token) {
    out.total += l;
  }
  return out;
}

SequenceLogProb ar_sequence_logprob_stepwise(const DenoiserParams& params, const Prompt& prompt,
                                             std::span<const TokenId> completion, const Vocabulary& vocab) {
  const int gen = static_cast<int>(completion.size());
  SequenceLogProb out;
  for (int k = 0; k < gen; ++k) {
    const auto dist = ar_next_distribution(params, prompt, completion.first(static_cast<std::size_t>(k)), gen, vocab);
    const double l = std::log(dist[static_cast<std::size_t>(completion[static_cast<std::size_t>(k)])]);
    out.per_token.push_back(l);
    out.total += l;
  }
  return out;
}

Rollout ar_rollout(const DenoiserParams& params, const Prompt& prompt, int gen_budget, double temperature,
                   const Vocabulary& vocab, RngStream& rng) {
  check_lengths(params, prompt, gen_budget);
  DenoiserPredictor predictor(params);
  auto state = MaskedSequence::with_masked_suffix(prompt.ids, gen_budget, vocab.mask_id());
  Rollout out;
  std::vector<TokenId> tokens;
  std::vector<double> dist;
  for (int k = 0; k < gen_budget; ++k) {
    const int position = prompt.size() + k;
    predictor.predict(state.tokens(), std::span<const int>(&position, 1), dist);
    const TokenId token = categorical_sample(exclude_token(dist, vocab.mask_id()), temperature, rng);
    const double l = std::log(dist[static_cast<std::size_t>(token)]);
    out.logprobs.per_token.push_back(l);
    out.logprobs.total += l;
    out.entropies.push_back(entropy(dist));
    tokens.push_back(token);
    state.unmask(position, token);
  }
  out.completion = Completion(std::move(tokens), vocab.eos_id());
  return out;
}

// ----------------------------- ARLikelihood -----------------------------

template <typename T>
ARLikelihood<T>::ARLikelihood(const ParameterSet<T>& params, const Prompt& prompt, std::span<const TokenId> completion,
                              std::vector<int> positions, TokenId mask_id)
    : params_(params), positions_(std::move(positions)), offset_(prompt.size()) {
  const int gen = static_cast<int>(completion.size());
  if (offset_ + gen > params.config().max_len) {
    throw std::length_error("prompt plus generation budget exceeds max_len");
  }
  if (positions_.empty()) {
    return;
  }
  const auto len = static_cast<std::size_t>(offset_ + gen);
  std::vector<TokenId> batch;
  batch.reserve(positions_.size() * len);
  for (int k : positions_) {
    if (k < 0 || k >= gen) {
      throw std::out_of_range("likelihood position outside the completion");
    }
    const auto state = ar_state(prompt, completion.first(static_cast<std::size_t>(k)), gen, mask_id);
    batch.insert(batch.end(), state.tokens().begin(), state.tokens().end());
    targets_.push_back(completion[static_cast<std::size_t>(k)]);
  }
  forward(params, batch, static_cast<int>(positions_.size()), cache_);

  const auto vocab = static_cast<std::size_t>(params.config().vocab_size);
  probs_.resize(positions_.size() * vocab);
  logprobs_.resize(positions_.size());
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    const auto row_index = static_cast<Eigen::Index>(i * len) + offset_ + positions_[i];
    const auto row = std::span<const T>(cache_.logits.row(row_index).data(), vocab);
    auto p = std::span<double>(probs_).subspan(i * vocab, vocab);
    softmax_into(row, p);
    logprobs_[i] = std::log(p[static_cast<std::size_t>(targets_[i])]);
  }
}

template <typename T>
void ARLikelihood<T>::backward(std::span<const double> coeffs, ParameterSet<T>& grad) const {
  if (coeffs.size() != positions_.size()) {
    throw std::invalid_argument("one coefficient per likelihood position is required");
  }
  if (positions_.empty()) {
    return;
  }
  bool any = false;
  for (double c : coeffs) {
    any = any || c != 0.0;
  }
  if (!any) {
    return;
  }
  const auto vocab = static_cast<Eigen::Index>(params_.config().vocab_size);
  const auto len = static_cast<Eigen::Index>(cache_.length);
  Matrix<T> dlogits = Matrix<T>::Zero(cache_.logits.rows(), vocab);
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    const Eigen::Index r = static_cast<Eigen::Index>(i) * len + offset_ + positions_[i];
    // d log p[target] / d logits = onehot(target) - p.
    for (Eigen::Index v = 0; v < vocab; ++v) {
      const double p = probs_[i * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(v)];
      const double onehot = v == targets_[i] ? 1.0 : 0.0;
      dlogits(r, v) = static_cast<T>(coeffs[i] * (onehot - p));
    }
  }
  dlab::backward(params_, cache_, dlogits, grad);
}

template class ARLikelihood<float>;
template class ARLikelihood<double>;

}  // namespace dlab
