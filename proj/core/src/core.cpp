#include "dlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace dlab {

// ----------------------------- Vocabulary -----------------------------

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenId mask_id, TokenId eos_id)
    : tokens_(std::move(tokens)), mask_id_(mask_id), eos_id_(eos_id) {
  const auto n = static_cast<TokenId>(tokens_.size());
  if (n == 0) {
    throw std::invalid_argument("vocabulary must not be empty");
  }
  if (mask_id < 0 || mask_id >= n || eos_id < 0 || eos_id >= n) {
    throw std::invalid_argument("mask_id/eos_id out of range");
  }
  if (mask_id == eos_id) {
    throw std::invalid_argument("mask_id and eos_id must differ");
  }
  for (TokenId i = 0; i < n; ++i) {
    const auto& tok = tokens_[static_cast<std::size_t>(i)];
    if (tok.empty() || tok.find('\n') != std::string::npos) {
      throw std::invalid_argument("vocabulary tokens must be non-empty single-line strings");
    }
    if (!index_.emplace(tok, i).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + tok);
    }
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) {
    return std::nullopt;
  }
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  if (auto found = find(token)) {
    return *found;
  }
  throw std::out_of_range("unknown token: " + std::string(token));
}

std::string Vocabulary::serialize() const {
  std::ostringstream out;
  out << "mask_id=" << mask_id_ << '\n' << "eos_id=" << eos_id_ << '\n';
  for (const auto& tok : tokens_) {
    out << tok << '\n';
  }
  return out.str();
}

namespace {

TokenId parse_header(std::string_view line, std::string_view key) {
  if (!line.starts_with(key) || line.size() <= key.size() || line[key.size()] != '=') {
    throw std::invalid_argument("vocabulary header must be `" + std::string(key) + "=<int>`");
  }
  const std::string value(line.substr(key.size() + 1));
  std::size_t used = 0;
  const int parsed = std::stoi(value, &used);
  if (used != value.size()) {
    throw std::invalid_argument("malformed vocabulary header value: " + value);
  }
  return parsed;
}

}  // namespace

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    lines.emplace_back(line);
    start = end + 1;
  }
  if (lines.size() < 2) {
    throw std::invalid_argument("vocabulary text is missing its two-line header");
  }
  const TokenId mask_id = parse_header(lines[0], "mask_id");
  const TokenId eos_id = parse_header(lines[1], "eos_id");
  std::vector<std::string> tokens(lines.begin() + 2, lines.end());
  return Vocabulary(std::move(tokens), mask_id, eos_id);
}

// ----------------------------- MaskedSequence -----------------------------

MaskedSequence::MaskedSequence(std::vector<TokenId> tokens, TokenId mask_id)
    : tokens_(std::move(tokens)), masked_(tokens_.size(), false), mask_id_(mask_id) {
  for (std::size_t k = 0; k < tokens_.size(); ++k) {
    if (tokens_[k] == mask_id_) {
      masked_[k] = true;
      ++n_masked_;
    }
  }
}

MaskedSequence MaskedSequence::with_masked_suffix(std::span<const TokenId> prefix, int n_masked,
                                                  TokenId mask_id) {
  std::vector<TokenId> tokens(prefix.begin(), prefix.end());
  if (std::find(tokens.begin(), tokens.end(), mask_id) != tokens.end()) {
    throw std::invalid_argument("observed prefix contains mask_id");
  }
  tokens.resize(tokens.size() + static_cast<std::size_t>(n_masked), mask_id);
  return MaskedSequence(std::move(tokens), mask_id);
}

std::vector<int> MaskedSequence::masked_positions() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_masked_));
  for (int k = 0; k < size(); ++k) {
    if (masked_[static_cast<std::size_t>(k)]) {
      out.push_back(k);
    }
  }
  return out;
}

void MaskedSequence::unmask(int k, TokenId token) {
  if (token == mask_id_) {
    throw std::invalid_argument("cannot finalize a position with mask_id");
  }
  const auto i = static_cast<std::size_t>(k);
  if (masked_.at(i)) {
    masked_[i] = false;
    --n_masked_;
  }
  tokens_[i] = token;
}

void MaskedSequence::mask(int k) {
  const auto i = static_cast<std::size_t>(k);
  if (!masked_.at(i)) {
    masked_[i] = true;
    ++n_masked_;
  }
  tokens_[i] = mask_id_;
}

bool MaskedSequence::consistent() const {
  int count = 0;
  for (std::size_t k = 0; k < tokens_.size(); ++k) {
    if (masked_[k] != (tokens_[k] == mask_id_)) {
      return false;
    }
    count += masked_[k] ? 1 : 0;
  }
  return count == n_masked_ && masked_.size() == tokens_.size();
}

// ----------------------------- Completion -----------------------------

Completion::Completion(std::vector<TokenId> tokens, TokenId eos_id) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) {
    throw std::invalid_argument("completion must have a positive generation budget");
  }
  auto it = std::find(tokens_.begin(), tokens_.end(), eos_id);
  has_eos_ = it != tokens_.end();
  effective_len_ = has_eos_ ? static_cast<int>(it - tokens_.begin()) + 1 : size();
}

std::span<const TokenId> Completion::content() const {
  const int n = has_eos_ ? effective_len_ - 1 : effective_len_;
  return std::span<const TokenId>(tokens_).first(static_cast<std::size_t>(n));
}

// ----------------------------- RngStream -----------------------------

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller; the second variate is discarded so the stream stays stateless.
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("below(0)");
  }
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x = next_u64();
  while (x >= limit) {
    x = next_u64();
  }
  return x % n;
}

RngStream derive_stream(std::uint64_t master_seed, const StreamKey& key) {
  std::uint64_t h = mix64(master_seed ^ 0xD1B54A32D192ED03ULL);
  h = mix64(h ^ fnv1a(key.purpose));
  h = mix64(h + key.a * kGolden);
  h = mix64(h ^ (key.b + 0x632BE59BD9B4E019ULL));
  h = mix64(h + (key.c ^ 0x85EBCA77C2B2AE63ULL));
  return RngStream(h);
}

// ----------------------------- sampling -----------------------------

namespace {

void validate_probs(std::span<const double> probs) {
  if (probs.empty()) {
    throw std::invalid_argument("empty probability vector");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (std::isnan(p) || p < 0.0) {
      throw std::invalid_argument("probability vector has NaN or negative entries");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("probability vector does not sum to 1");
  }
}

}  // namespace

TokenId argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  return static_cast<TokenId>(best);
}

TokenId categorical_sample(std::span<const double> probs, double temperature, RngStream& rng) {
  validate_probs(probs);
  if (std::isnan(temperature) || temperature < 0.0) {
    throw std::invalid_argument("temperature must be nonnegative");
  }
  if (temperature == 0.0) {
    return argmax(probs);
  }
  // Softmax(log p / T) == p^(1/T) / Z; scale by the max first for stability.
  const double pmax = probs[static_cast<std::size_t>(argmax(probs))];
  std::vector<double> weights(probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    weights[i] = probs[i] > 0.0 ? std::exp((std::log(probs[i]) - std::log(pmax)) / temperature) : 0.0;
    total += weights[i];
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) {
      continue;
    }
    last_positive = i;
    acc += weights[i];
    if (u < acc) {
      return static_cast<TokenId>(i);
    }
  }
  return static_cast<TokenId>(last_positive);
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) {
      h -= p * std::log(p);
    }
  }
  return h < 0.0 ? 0.0 : h;
}

namespace {

template <typename T>
void softmax_impl(std::span<const T> logits, std::span<double> out) {
  if (logits.size() != out.size()) {
    throw std::invalid_argument("softmax output size mismatch");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) {
    mx = std::max(mx, static_cast<double>(v));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += out[i];
  }
  for (double& v : out) {
    v /= sum;
  }
}

}  // namespace

void softmax_into(std::span<const float> logits, std::span<double> out) { softmax_impl(logits, out); }
void softmax_into(std::span<const double> logits, std::span<double> out) { softmax_impl(logits, out); }

std::vector<double> softmax(std::span<const float> logits) {
  std::vector<double> out(logits.size());
  softmax_impl(logits, std::span<double>(out));
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax_impl(logits, std::span<double>(out));
  return out;
}

std::vector<double> exclude_token(std::span<const double> probs, TokenId excluded) {
  std::vector<double> out(probs.begin(), probs.end());
  if (excluded < 0 || static_cast<std::size_t>(excluded) >= out.size()) {
    return out;
  }
  out[static_cast<std::size_t>(excluded)] = 0.0;
  double sum = 0.0;
  for (double p : out) {
    sum += p;
  }
  if (sum <= 0.0) {
    // Degenerate: all mass sat on the excluded token; fall back to uniform over the rest.
    const double u = 1.0 / static_cast<double>(out.size() - 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = i == static_cast<std::size_t>(excluded) ? 0.0 : u;
    }
    return out;
  }
  for (double& p : out) {
    p /= sum;
  }
  return out;
}

}  // namespace dlab
