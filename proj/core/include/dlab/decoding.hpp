#pragma once

// Samplers that turn an all-mask response into tokens: strict left-to-right,
// low-confidence remasking (semi-autoregressive blocks), negative-entropy,
// top-2 margin, and an entropy-bounded parallel decoder. Every finalisation is
// logged with the entropy and chosen-token probability of the predictive
// distribution at the step it happened.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/denoiser.hpp"

namespace dlab {

enum class DecodeMode { ar, confidence, neg_entropy, margin, eb_parallel };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view name);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::ar;
  int block_size = 16;
  int tokens_per_step = 1;
  double temperature = 0.0;
  int gen_budget = 16;
  double eb_gamma = 0.0;
  /// Rank by the max probability instead of the sampled candidate's probability.
  bool confidence_uses_max_prob = false;

  void validate() const;
};

struct TraceRecord {
  int step = 0;
  int position = 0;  // index into the response
  TokenId token = 0;
  double entropy = 0.0;
  double prob = 0.0;
  int order_index = 0;
};

struct DecodeTrace {
  std::vector<TraceRecord> records;  // in finalisation order
  int steps = 0;

  double tokens_per_step() const;
  /// bypassed[i] holds when records[i] was finalised after some position to its
  /// right had already been finalised.
  std::vector<bool> bypassed() const;
  int bypass_count() const;
};

struct DecodeResult {
  Completion completion;
  DecodeTrace trace;
};

/// Predictive distributions p(x0[k] | sequence) over the full vocabulary.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual int vocab_size() const = 0;
  /// Fills `out` with positions.size() rows of vocab_size() probabilities.
  virtual void predict(std::span<const TokenId> sequence, std::span<const int> positions,
                       std::vector<double>& out) const = 0;
};

class DenoiserPredictor final : public Predictor {
 public:
  explicit DenoiserPredictor(const DenoiserParams& params) : params_(params) {}
  int vocab_size() const override { return params_.config().vocab_size; }
  void predict(std::span<const TokenId> sequence, std::span<const int> positions,
               std::vector<double>& out) const override;

 private:
  const DenoiserParams& params_;
};

struct Candidate {
  int position = 0;
  std::span<const double> probs;
};

struct Finalization {
  int position = 0;
  TokenId token = 0;
  double entropy = 0.0;
  double prob = 0.0;
};

/// Draws a token at every candidate (mask_id excluded) and keeps the s with the
/// highest probability of their drawn token; ties go to the lower position.
std::vector<Finalization> step_confidence(std::span<const Candidate> candidates, int s, double temperature,
                                          TokenId mask_id, RngStream& rng, bool use_max_prob = false);
/// As step_confidence, ranked by negative entropy.
std::vector<Finalization> step_neg_entropy(std::span<const Candidate> candidates, int s, double temperature,
                                           TokenId mask_id, RngStream& rng);
/// As step_confidence, ranked by top-1 minus top-2 probability.
std::vector<Finalization> step_margin(std::span<const Candidate> candidates, int s, double temperature,
                                      TokenId mask_id, RngStream& rng);
/// Finalises the longest prefix of `run` whose summed entropy stays within
/// gamma, and never fewer than one position.
std::vector<Finalization> step_eb(std::span<const Candidate> run, double gamma, double temperature, TokenId mask_id,
                                  RngStream& rng);

double top2_margin(std::span<const double> probs);

DecodeResult decode(const Predictor& predictor, const Prompt& prompt, const DecodeConfig& config,
                    const Vocabulary& vocab, RngStream& rng);

DecodeResult decode(const DenoiserParams& params, const Prompt& prompt, const DecodeConfig& config,
                    const Vocabulary& vocab, RngStream& rng);

}  // namespace dlab
