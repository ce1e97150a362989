#include "dlab/decoding.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dlab {

std::string_view to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::ar: return "ar";
    case DecodeMode::confidence: return "confidence";
    case DecodeMode::neg_entropy: return "neg_entropy";
    case DecodeMode::margin: return "margin";
    case DecodeMode::eb_parallel: return "eb_parallel";
  }
  return "unknown";
}

DecodeMode parse_decode_mode(std::string_view name) {
  for (auto mode : {DecodeMode::ar, DecodeMode::confidence, DecodeMode::neg_entropy, DecodeMode::margin,
                    DecodeMode::eb_parallel}) {
    if (to_string(mode) == name) {
      return mode;
    }
  }
  throw std::invalid_argument("unknown decode mode: " + std::string(name));
}

void DecodeConfig::validate() const {
  if (gen_budget < 1) {
    throw std::invalid_argument("gen_budget must be positive");
  }
  if (!(temperature >= 0.0)) {
    throw std::invalid_argument("temperature must be nonnegative");
  }
  if (mode == DecodeMode::ar) {
    return;
  }
  if (mode == DecodeMode::eb_parallel) {
    if (!(eb_gamma >= 0.0)) {
      throw std::invalid_argument("eb_gamma must be nonnegative");
    }
    return;
  }
  if (block_size < 1 || block_size > gen_budget) {
    throw std::invalid_argument("block_size must lie in [1, gen_budget]");
  }
  if (tokens_per_step < 1 || tokens_per_step > block_size) {
    throw std::invalid_argument("tokens_per_step must lie in [1, block_size]");
  }
}

double DecodeTrace::tokens_per_step() const {
  return steps == 0 ? 0.0 : static_cast<double>(records.size()) / static_cast<double>(steps);
}

std::vector<bool> DecodeTrace::bypassed() const {
  std::vector<bool> out(records.size(), false);
  // Records sharing a step are simultaneous; only earlier steps can bypass.
  int rightmost_before = -1;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t end = i;
    int rightmost_here = rightmost_before;
    while (end < records.size() && records[end].step == records[i].step) {
      out[end] = rightmost_before > records[end].position;
      rightmost_here = std::max(rightmost_here, records[end].position);
      ++end;
    }
    rightmost_before = rightmost_here;
    i = end;
  }
  return out;
}

int DecodeTrace::bypass_count() const {
  const auto flags = bypassed();
  return static_cast<int>(std::count(flags.begin(), flags.end(), true));
}

void DenoiserPredictor::predict(std::span<const TokenId> sequence, std::span<const int> positions,
                                std::vector<double>& out) const {
  ForwardCache<float> cache;
  forward(params_, sequence, 1, cache);
  const auto vocab = static_cast<std::size_t>(params_.config().vocab_size);
  out.resize(positions.size() * vocab);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto row = std::span<const float>(cache.logits.row(positions[i]).data(), vocab);
    softmax_into(row, std::span<double>(out).subspan(i * vocab, vocab));
  }
}

double top2_margin(std::span<const double> probs) {
  double first = 0.0;
  double second = 0.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return first - second;
}

namespace {

Finalization draw(const Candidate& c, double temperature, TokenId mask_id, RngStream& rng) {
  const auto allowed = exclude_token(c.probs, mask_id);
  const TokenId token = categorical_sample(allowed, temperature, rng);
  return Finalization{c.position, token, entropy(c.probs), c.probs[static_cast<std::size_t>(token)]};
}

// Keeps the s highest-scoring draws (ties to the lower position), returned in
// position order.
std::vector<Finalization> keep_top(std::vector<Finalization> draws, const std::vector<double>& scores, int s) {
  std::vector<std::size_t> order(draws.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) {
      return scores[a] > scores[b];
    }
    return draws[a].position < draws[b].position;
  });
  const auto keep = std::min<std::size_t>(draws.size(), static_cast<std::size_t>(std::max(1, s)));
  std::vector<Finalization> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.push_back(draws[order[i]]);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.position < b.position; });
  return out;
}

template <typename Score>
std::vector<Finalization> ranked_step(std::span<const Candidate> candidates, int s, double temperature,
                                      TokenId mask_id, RngStream& rng, Score&& score) {
  if (candidates.empty()) {
    throw std::invalid_argument("no masked position to finalize");
  }
  std::vector<Finalization> draws;
  std::vector<double> scores;
  draws.reserve(candidates.size());
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    draws.push_back(draw(c, temperature, mask_id, rng));
    scores.push_back(score(c, draws.back()));
  }
  return keep_top(std::move(draws), scores, s);
}

}  // namespace

std::vector<Finalization> step_confidence(std::span<const Candidate> candidates, int s, double temperature,
                                          TokenId mask_id, RngStream& rng, bool use_max_prob) {
  return ranked_step(candidates, s, temperature, mask_id, rng, [&](const Candidate& c, const Finalization& f) {
    if (use_max_prob) {
      return *std::max_element(c.probs.begin(), c.probs.end());
    }
    return f.prob;
  });
}

std::vector<Finalization> step_neg_entropy(std::span<const Candidate> candidates, int s, double temperature,
                                           TokenId mask_id, RngStream& rng) {
  return ranked_step(candidates, s, temperature, mask_id, rng,
                     [](const Candidate&, const Finalization& f) { return -f.entropy; });
}

std::vector<Finalization> step_margin(std::span<const Candidate> candidates, int s, double temperature,
                                      TokenId mask_id, RngStream& rng) {
  return ranked_step(candidates, s, temperature, mask_id, rng,
                     [](const Candidate& c, const Finalization&) { return top2_margin(c.probs); });
}

std::vector<Finalization> step_eb(std::span<const Candidate> run, double gamma, double temperature, TokenId mask_id,
                                  RngStream& rng) {
  if (run.empty()) {
    throw std::invalid_argument("no masked position to finalize");
  }
  std::size_t count = 1;
  double budget = entropy(run[0].probs);
  while (count < run.size()) {
    const double next = budget + entropy(run[count].probs);
    if (next > gamma) {
      break;
    }
    budget = next;
    ++count;
  }
  std::vector<Finalization> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(draw(run[i], temperature, mask_id, rng));
  }
  return out;
}

namespace {

// Masked response positions of `seq` (full-sequence coordinates) inside [lo, hi).
std::vector<int> masked_in(const MaskedSequence& seq, int offset, int lo, int hi) {
  std::vector<int> out;
  for (int k = lo; k < hi; ++k) {
    if (seq.is_masked(offset + k)) {
      out.push_back(k);
    }
  }
  return out;
}

}  // namespace

DecodeResult decode(const Predictor& predictor, const Prompt& prompt, const DecodeConfig& config,
                    const Vocabulary& vocab, RngStream& rng) {
  config.validate();
  const int offset = prompt.size();
  const int gen = config.gen_budget;
  const TokenId mask_id = vocab.mask_id();
  auto seq = MaskedSequence::with_masked_suffix(prompt.ids, gen, mask_id);
  const auto vsize = static_cast<std::size_t>(predictor.vocab_size());

  DecodeTrace trace;
  std::vector<double> probs;
  std::vector<int> absolute;
  std::vector<Candidate> candidates;

  auto gather = [&](const std::vector<int>& response_positions) {
    absolute.clear();
    for (int k : response_positions) {
      absolute.push_back(offset + k);
    }
    predictor.predict(seq.tokens(), absolute, probs);
    candidates.clear();
    for (std::size_t i = 0; i < response_positions.size(); ++i) {
      candidates.push_back(Candidate{response_positions[i], std::span<const double>(probs).subspan(i * vsize, vsize)});
    }
  };
  auto commit = [&](const std::vector<Finalization>& chosen) {
    for (const auto& f : chosen) {
      seq.unmask(offset + f.position, f.token);
      trace.records.push_back(TraceRecord{trace.steps, f.position, f.token, f.entropy, f.prob,
                                          static_cast<int>(trace.records.size())});
    }
    ++trace.steps;
  };

  switch (config.mode) {
    case DecodeMode::ar: {
      for (int k = 0; k < gen; ++k) {
        gather({k});
        commit(step_confidence(candidates, 1, config.temperature, mask_id, rng));
      }
      break;
    }
    case DecodeMode::eb_parallel: {
      while (seq.masked_count() > 0) {
        gather(masked_in(seq, offset, 0, gen));
        commit(step_eb(candidates, config.eb_gamma, config.temperature, mask_id, rng));
      }
      break;
    }
    case DecodeMode::confidence:
    case DecodeMode::neg_entropy:
    case DecodeMode::margin: {
      for (int lo = 0; lo < gen; lo += config.block_size) {
        const int hi = std::min(gen, lo + config.block_size);
        for (auto pending = masked_in(seq, offset, lo, hi); !pending.empty();
             pending = masked_in(seq, offset, lo, hi)) {
          gather(pending);
          const int s = config.tokens_per_step;
          if (config.mode == DecodeMode::confidence) {
            commit(step_confidence(candidates, s, config.temperature, mask_id, rng, config.confidence_uses_max_prob));
          } else if (config.mode == DecodeMode::neg_entropy) {
            commit(step_neg_entropy(candidates, s, config.temperature, mask_id, rng));
          } else {
            commit(step_margin(candidates, s, config.temperature, mask_id, rng));
          }
        }
      }
      break;
    }
  }

  const auto all = seq.tokens();
  std::vector<TokenId> response(all.begin() + offset, all.end());
  return DecodeResult{Completion(std::move(response), vocab.eos_id()), std::move(trace)};
}

DecodeResult decode(const DenoiserParams& params, const Prompt& prompt, const DecodeConfig& config,
                    const Vocabulary& vocab, RngStream& rng) {
  if (prompt.size() + config.gen_budget > params.config().max_len) {
    throw std::length_error("prompt plus generation budget exceeds max_len");
  }
  DenoiserPredictor predictor(params);
  return decode(predictor, prompt, config, vocab, rng);
}

}  // namespace dlab
