#pragma once

#include <cmath>
#include <vector>

#include "dlab/core.hpp"
#include "dlab/decoding.hpp"
#include "dlab/denoiser.hpp"

namespace dlab::testing {

inline Vocabulary letters(int n) {
  std::vector<std::string> tokens{"[MASK]", "[EOS]"};
  for (int i = 2; i < n; ++i) {
    tokens.push_back("t" + std::to_string(i));
  }
  return Vocabulary(tokens, 0, 1);
}

inline DenoiserConfig tiny_config(int vocab = 11, int max_len = 8) {
  DenoiserConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = max_len;
  c.init_std = 0.3;
  return c;
}

template <typename T>
ParameterSet<T> random_params(const DenoiserConfig& config, std::uint64_t seed) {
  auto rng = derive_stream(seed, {"test-params"});
  return init_parameters(config, rng).template cast<T>();
}

/// Perturbs gains and biases too so that every tensor carries a nontrivial gradient.
template <typename T>
ParameterSet<T> scrambled_params(const DenoiserConfig& config, std::uint64_t seed) {
  ParameterSet<T> p(config);
  auto rng = derive_stream(seed, {"test-scramble"});
  auto values = p.values();
  for (auto& v : values) {
    v = static_cast<T>(0.3 * rng.normal());
  }
  for (std::size_t i = 0; i < p.layout().size(); ++i) {
    const auto& name = p.layout()[i].name;
    if (name.find("gain") != std::string::npos) {
      for (auto& v : p.tensor(i)) {
        v += T(1);
      }
    }
  }
  return p;
}

/// Fixed distributions per position, independent of the sequence content.
class TablePredictor final : public Predictor {
 public:
  TablePredictor(int vocab, std::vector<std::vector<double>> rows) : vocab_(vocab), rows_(std::move(rows)) {}
  int vocab_size() const override { return vocab_; }
  void predict(std::span<const TokenId> sequence, std::span<const int> positions,
               std::vector<double>& out) const override {
    (void)sequence;
    out.assign(positions.size() * static_cast<std::size_t>(vocab_), 0.0);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto& row = rows_.at(static_cast<std::size_t>(positions[i]) - offset);
      std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * vocab_));
    }
  }
  std::size_t offset = 0;  // prompt length subtracted from absolute positions

 private:
  int vocab_;
  std::vector<std::vector<double>> rows_;
};

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace dlab::testing

namespace dlab::testing {

struct TensorError {
  std::string name;
  double max_rel = 0.0;
};

/// Central differences of `loss` against `analytic` for every entry, reported as
/// the max over entries of |a - n| / max(|a| + |n|, floor) per tensor.
template <typename F>
std::vector<TensorError> finite_difference_check(ParameterSet<double> params, const ParameterSet<double>& analytic,
                                                 F&& loss, double h = 1e-4, double floor = 1e-6) {
  std::vector<TensorError> out;
  for (std::size_t t = 0; t < params.layout().size(); ++t) {
    TensorError err{params.layout()[t].name, 0.0};
    auto values = params.tensor(t);
    const auto grad = analytic.tensor(t);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss(params);
      values[i] = saved - h;
      const double down = loss(params);
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max(std::abs(numeric) + std::abs(grad[i]), floor);
      err.max_rel = std::max(err.max_rel, std::abs(numeric - grad[i]) / denom);
    }
    out.push_back(err);
  }
  return out;
}

}  // namespace dlab::testing
