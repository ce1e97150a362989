#pragma once

// Bidirectional pre-norm transformer p_theta(x0 | x_t) with exact reverse-mode
// gradients. Parameters live in one flat buffer so optimisers, checkpoints and
// finite-difference checks can treat them uniformly.

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dlab/core.hpp"

namespace dlab {

struct DenoiserConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 96;
  double init_std = 0.02;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const DenoiserConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;  // 1 or 2 dims
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Tensors in declaration order: token embedding, position embedding, then per
/// layer {ln1 gain/bias, Wq bq, Wk bk, Wv bv, Wo bo, ln2 gain/bias, W1 b1, W2 b2},
/// then final layer-norm gain/bias and the untied, bias-free output head.
std::vector<TensorInfo> parameter_layout(const DenoiserConfig& config);

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using RowVectorMap = Eigen::Map<RowVector<T>>;
template <typename T>
using ConstRowVectorMap = Eigen::Map<const RowVector<T>>;

/// Indices into parameter_layout().
struct TensorIndex {
  static constexpr std::size_t kTokenEmbedding = 0;
  static constexpr std::size_t kPositionEmbedding = 1;
  static constexpr std::size_t kPerLayer = 16;
  enum LayerSlot : std::size_t {
    kLn1Gain, kLn1Bias, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
    kLn2Gain, kLn2Bias, kW1, kB1, kW2, kB2,
  };
  static constexpr std::size_t layer(int l, LayerSlot slot) {
    return 2 + static_cast<std::size_t>(l) * kPerLayer + slot;
  }
  static constexpr std::size_t final_gain(int n_layers) { return 2 + static_cast<std::size_t>(n_layers) * kPerLayer; }
  static constexpr std::size_t final_bias(int n_layers) { return final_gain(n_layers) + 1; }
  static constexpr std::size_t head(int n_layers) { return final_gain(n_layers) + 2; }
};

template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  /// Zero-filled parameters with the layout implied by `config`.
  explicit ParameterSet(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  const std::vector<TensorInfo>& layout() const { return *layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  std::span<T> tensor(std::size_t index);
  std::span<const T> tensor(std::size_t index) const;
  MatrixMap<T> matrix(std::size_t index);
  ConstMatrixMap<T> matrix(std::size_t index) const;
  RowVectorMap<T> row(std::size_t index);
  ConstRowVectorMap<T> row(std::size_t index) const;

  void set_zero();
  bool all_finite() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out(config_);
    auto dst = out.values();
    for (std::size_t i = 0; i < values_.size(); ++i) {
      dst[i] = static_cast<U>(values_[i]);
    }
    return out;
  }

  bool operator==(const ParameterSet& other) const {
    return config_ == other.config_ && values_ == other.values_;
  }

 private:
  DenoiserConfig config_;
  std::shared_ptr<const std::vector<TensorInfo>> layout_;
  std::vector<T> values_;
};

using DenoiserParams = ParameterSet<float>;

/// Weight matrices and embeddings ~ N(0, init_std); layer-norm gains 1; biases 0.
DenoiserParams init_parameters(const DenoiserConfig& config, RngStream& rng);

/// Activations kept by forward() for backward().
template <typename T>
struct ForwardCache {
  struct Layer {
    Matrix<T> input;
    Matrix<T> ln1_hat;
    std::vector<T> ln1_rstd;
    Matrix<T> ln1_out;
    Matrix<T> q, k, v;
    std::vector<Matrix<T>> attn;  // [batch * heads] of [len x len]
    Matrix<T> context;
    Matrix<T> mid;
    Matrix<T> ln2_hat;
    std::vector<T> ln2_rstd;
    Matrix<T> ln2_out;
    Matrix<T> ff_pre;
    Matrix<T> ff_act;
  };

  int batch = 0;
  int length = 0;
  std::vector<TokenId> tokens;
  std::vector<Layer> layers;
  Matrix<T> final_input;
  Matrix<T> lnf_hat;
  std::vector<T> lnf_rstd;
  Matrix<T> lnf_out;
  Matrix<T> logits;  // [batch * len x vocab]
};

/// Full-attention encoding of `batch` sequences of equal length packed row-major
/// in `tokens`. Throws std::length_error when the length exceeds max_len and
/// std::out_of_range on token ids outside the vocabulary.
template <typename T>
void forward(const ParameterSet<T>& params, std::span<const TokenId> tokens, int batch,
             ForwardCache<T>& cache);

/// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(logits).
template <typename T>
void backward(const ParameterSet<T>& params, const ForwardCache<T>& cache,
              const Matrix<T>& dlogits, ParameterSet<T>& grad);

/// Logits of a single sequence, [len x vocab].
template <typename T>
Matrix<T> compute_logits(const ParameterSet<T>& params, std::span<const TokenId> tokens);

// ----------------------------- checkpoints -----------------------------

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian: 8-byte magic, u32 version, config (six u32 + f64 init_std),
/// u32 tensor count, then per tensor u32 rank, u32 dims, f32 values.
void write_checkpoint(const DenoiserParams& params, std::ostream& out);
DenoiserParams read_checkpoint(std::istream& in);

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path);
DenoiserParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dlab
