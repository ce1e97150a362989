#pragma once

// Shared vocabulary, sequence, randomness and sampling primitives.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dlab {

using TokenId = std::int32_t;

/// Raised when numerics leave the finite range (NaN loss, NaN objective).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, TokenId mask_id, TokenId eos_id);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId mask_id() const { return mask_id_; }
  TokenId eos_id() const { return eos_id_; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id(std::string_view token) const;  // throws if absent
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Text form: `mask_id=<int>`, `eos_id=<int>`, then one token per line.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && mask_id_ == other.mask_id_ && eos_id_ == other.eos_id_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId mask_id_ = 0;
  TokenId eos_id_ = 1;
};

/// Token buffer where masked[k] holds iff tokens[k] == mask_id.
class MaskedSequence {
 public:
  MaskedSequence() = default;
  /// Flags are derived from `tokens`: every occurrence of mask_id is masked.
  MaskedSequence(std::vector<TokenId> tokens, TokenId mask_id);

  static MaskedSequence with_masked_suffix(std::span<const TokenId> prefix, int n_masked,
                                           TokenId mask_id);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId mask_id() const { return mask_id_; }
  TokenId token(int k) const { return tokens_[static_cast<std::size_t>(k)]; }
  bool is_masked(int k) const { return masked_[static_cast<std::size_t>(k)]; }
  std::span<const TokenId> tokens() const { return tokens_; }
  const std::vector<bool>& mask_flags() const { return masked_; }
  int masked_count() const { return n_masked_; }
  std::vector<int> masked_positions() const;

  void unmask(int k, TokenId token);
  void mask(int k);

  /// Checks the flag/token bijection.
  bool consistent() const;

 private:
  std::vector<TokenId> tokens_;
  std::vector<bool> masked_;
  TokenId mask_id_ = 0;
  int n_masked_ = 0;
};

struct Prompt {
  std::vector<TokenId> ids;
  int size() const { return static_cast<int>(ids.size()); }
};

/// Fixed-budget output; effective_len counts up to and including the first EOS.
class Completion {
 public:
  Completion() = default;
  Completion(std::vector<TokenId> tokens, TokenId eos_id);

  std::span<const TokenId> tokens() const { return tokens_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int effective_len() const { return effective_len_; }
  /// Tokens strictly before the first EOS.
  std::span<const TokenId> content() const;
  bool has_eos() const { return has_eos_; }

 private:
  std::vector<TokenId> tokens_;
  int effective_len_ = 0;
  bool has_eos_ = false;
};

/// Key of a derived random stream: purpose tag plus three integer coordinates.
struct StreamKey {
  std::string_view purpose;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  std::uint64_t c = 0;
};

/// Counter-based splitmix64 stream. Satisfies UniformRandomBitGenerator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t state = 0) : state_(state) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

RngStream derive_stream(std::uint64_t master_seed, const StreamKey& key);

/// Temperature 0 is argmax with ties resolved to the lowest index; T > 0 draws from
/// Softmax(log p / T). Throws std::invalid_argument on NaN/negative entries or a
/// vector that does not sum to 1 within 1e-6.
TokenId categorical_sample(std::span<const double> probs, double temperature, RngStream& rng);

TokenId argmax(std::span<const double> values);

/// Shannon entropy in nats, with 0 log 0 = 0.
double entropy(std::span<const double> probs);

/// Softmax computed in double regardless of the input precision.
std::vector<double> softmax(std::span<const float> logits);
std::vector<double> softmax(std::span<const double> logits);
void softmax_into(std::span<const float> logits, std::span<double> out);
void softmax_into(std::span<const double> logits, std::span<double> out);

/// Copy of `probs` with `excluded` zeroed and the rest renormalised.
std::vector<double> exclude_token(std::span<const double> probs, TokenId excluded);

}  // namespace dlab
