#include "dlab/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dlab {

void DenoiserConfig::validate() const {
  if (vocab_size < 2 || d_model < 1 || n_layers < 0 || n_heads < 1 || d_ff < 1 || max_len < 1) {
    throw std::invalid_argument("denoiser config has non-positive dimensions");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be divisible by n_heads");
  }
  if (!(init_std >= 0.0) || !std::isfinite(init_std)) {
    throw std::invalid_argument("init_std must be finite and nonnegative");
  }
}

std::vector<TensorInfo> parameter_layout(const DenoiserConfig& c) {
  c.validate();
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) {
      n *= static_cast<std::size_t>(d);
    }
    out.push_back(TensorInfo{std::move(name), std::move(shape), offset, n});
    offset += n;
  };
  add("token_embedding", {c.vocab_size, c.d_model});
  add("position_embedding", {c.max_len, c.d_model});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.gain", {c.d_model});
    add(p + "ln1.bias", {c.d_model});
    add(p + "attn.wq", {c.d_model, c.d_model});
    add(p + "attn.bq", {c.d_model});
    add(p + "attn.wk", {c.d_model, c.d_model});
    add(p + "attn.bk", {c.d_model});
    add(p + "attn.wv", {c.d_model, c.d_model});
    add(p + "attn.bv", {c.d_model});
    add(p + "attn.wo", {c.d_model, c.d_model});
    add(p + "attn.bo", {c.d_model});
    add(p + "ln2.gain", {c.d_model});
    add(p + "ln2.bias", {c.d_model});
    add(p + "ff.w1", {c.d_model, c.d_ff});
    add(p + "ff.b1", {c.d_ff});
    add(p + "ff.w2", {c.d_ff, c.d_model});
    add(p + "ff.b2", {c.d_model});
  }
  add("final_ln.gain", {c.d_model});
  add("final_ln.bias", {c.d_model});
  add("head", {c.d_model, c.vocab_size});
  return out;
}

// ----------------------------- ParameterSet -----------------------------

template <typename T>
ParameterSet<T>::ParameterSet(const DenoiserConfig& config)
    : config_(config), layout_(std::make_shared<const std::vector<TensorInfo>>(parameter_layout(config))) {
  const auto& last = layout_->back();
  values_.assign(last.offset + last.size, T{0});
}

template <typename T>
std::span<T> ParameterSet<T>::tensor(std::size_t index) {
  const auto& info = layout_->at(index);
  return std::span<T>(values_).subspan(info.offset, info.size);
}

template <typename T>
std::span<const T> ParameterSet<T>::tensor(std::size_t index) const {
  const auto& info = layout_->at(index);
  return std::span<const T>(values_).subspan(info.offset, info.size);
}

template <typename T>
MatrixMap<T> ParameterSet<T>::matrix(std::size_t index) {
  const auto& info = layout_->at(index);
  const int rows = info.shape.size() == 2 ? info.shape[0] : 1;
  const int cols = info.shape.back();
  return MatrixMap<T>(values_.data() + info.offset, rows, cols);
}

template <typename T>
ConstMatrixMap<T> ParameterSet<T>::matrix(std::size_t index) const {
  const auto& info = layout_->at(index);
  const int rows = info.shape.size() == 2 ? info.shape[0] : 1;
  const int cols = info.shape.back();
  return ConstMatrixMap<T>(values_.data() + info.offset, rows, cols);
}

template <typename T>
RowVectorMap<T> ParameterSet<T>::row(std::size_t index) {
  const auto& info = layout_->at(index);
  return RowVectorMap<T>(values_.data() + info.offset, static_cast<Eigen::Index>(info.size));
}

template <typename T>
ConstRowVectorMap<T> ParameterSet<T>::row(std::size_t index) const {
  const auto& info = layout_->at(index);
  return ConstRowVectorMap<T>(values_.data() + info.offset, static_cast<Eigen::Index>(info.size));
}

template <typename T>
void ParameterSet<T>::set_zero() {
  std::fill(values_.begin(), values_.end(), T{0});
}

template <typename T>
bool ParameterSet<T>::all_finite() const {
  for (T v : values_) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

DenoiserParams init_parameters(const DenoiserConfig& config, RngStream& rng) {
  DenoiserParams params(config);
  const auto& layout = params.layout();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    auto values = params.tensor(i);
    const auto& name = layout[i].name;
    if (name.ends_with(".gain")) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (layout[i].shape.size() == 2) {
      for (float& v : values) {
        v = static_cast<float>(config.init_std * rng.normal());
      }
    }
  }
  return params;
}

// ----------------------------- kernels -----------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
void layer_norm_forward(const Matrix<T>& x, ConstRowVectorMap<T> gain, ConstRowVectorMap<T> bias,
                        Matrix<T>& hat, std::vector<T>& rstd, Matrix<T>& out) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  hat.resize(rows, cols);
  out.resize(rows, cols);
  rstd.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd[static_cast<std::size_t>(r)] = rs;
    hat.row(r) = (x.row(r).array() - mean) * rs;
    out.row(r) = hat.row(r).cwiseProduct(gain) + bias;
  }
}

// out += column sums of m, added row by row so the result does not depend on
// the alignment of `out`.
template <typename T, typename Derived>
void add_column_sums(const Eigen::MatrixBase<Derived>& m, RowVectorMap<T> out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out[c] += m(r, c);
    }
  }
}

// dx += layer-norm backward of dy; accumulates gain/bias gradients.
template <typename T>
void layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& hat, const std::vector<T>& rstd,
                         ConstRowVectorMap<T> gain, RowVectorMap<T> dgain, RowVectorMap<T> dbias,
                         Matrix<T>& dx) {
  const Eigen::Index rows = dy.rows();
  const T inv_n = T(1) / static_cast<T>(dy.cols());
  add_column_sums<T>(dy.cwiseProduct(hat), dgain);
  add_column_sums<T>(dy, dbias);
  for (Eigen::Index r = 0; r < rows; ++r) {
    RowVector<T> dhat = dy.row(r).cwiseProduct(gain);
    const T mean_dhat = dhat.sum() * inv_n;
    const T mean_dhat_hat = dhat.dot(hat.row(r)) * inv_n;
    dx.row(r).array() += rstd[static_cast<std::size_t>(r)] *
                         (dhat.array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
}

template <typename T>
constexpr T gelu_c() {
  return static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
}

template <typename T>
T gelu(T x) {
  const T inner = gelu_c<T>() * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  const T inner = gelu_c<T>() * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = gelu_c<T>() * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

}  // namespace

template <typename T>
void forward(const ParameterSet<T>& params, std::span<const TokenId> tokens, int batch,
             ForwardCache<T>& cache) {
  const auto& c = params.config();
  if (batch < 1 || tokens.size() % static_cast<std::size_t>(batch) != 0) {
    throw std::invalid_argument("token buffer is not a whole number of sequences");
  }
  const int len = static_cast<int>(tokens.size()) / batch;
  if (len < 1 || len > c.max_len) {
    throw std::length_error("sequence length " + std::to_string(len) + " exceeds max_len " +
                            std::to_string(c.max_len));
  }
  const int d = c.d_model;
  const int hd = c.head_dim();
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * len;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  cache.batch = batch;
  cache.length = len;
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.layers.resize(static_cast<std::size_t>(c.n_layers));

  const auto tok_emb = params.matrix(TensorIndex::kTokenEmbedding);
  const auto pos_emb = params.matrix(TensorIndex::kPositionEmbedding);
  Matrix<T> x(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const TokenId id = tokens[static_cast<std::size_t>(r)];
    if (id < 0 || id >= c.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
    x.row(r) = tok_emb.row(id) + pos_emb.row(r % len);
  }

  for (int l = 0; l < c.n_layers; ++l) {
    auto& lc = cache.layers[static_cast<std::size_t>(l)];
    auto P = [&](TensorIndex::LayerSlot s) { return params.matrix(TensorIndex::layer(l, s)); };
    auto B = [&](TensorIndex::LayerSlot s) { return params.row(TensorIndex::layer(l, s)); };

    lc.input = x;
    layer_norm_forward<T>(lc.input, B(TensorIndex::kLn1Gain), B(TensorIndex::kLn1Bias), lc.ln1_hat,
                          lc.ln1_rstd, lc.ln1_out);
    lc.q.noalias() = lc.ln1_out * P(TensorIndex::kWq);
    lc.q.rowwise() += B(TensorIndex::kBq);
    lc.k.noalias() = lc.ln1_out * P(TensorIndex::kWk);
    lc.k.rowwise() += B(TensorIndex::kBk);
    lc.v.noalias() = lc.ln1_out * P(TensorIndex::kWv);
    lc.v.rowwise() += B(TensorIndex::kBv);

    lc.attn.resize(static_cast<std::size_t>(batch) * c.n_heads);
    lc.context.resize(rows, d);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * len;
      for (int h = 0; h < c.n_heads; ++h) {
        auto& a = lc.attn[static_cast<std::size_t>(b) * c.n_heads + h];
        const auto qh = lc.q.block(r0, h * hd, len, hd);
        const auto kh = lc.k.block(r0, h * hd, len, hd);
        const auto vh = lc.v.block(r0, h * hd, len, hd);
        a.noalias() = (qh * kh.transpose()) * scale;
        for (int i = 0; i < len; ++i) {
          const T mx = a.row(i).maxCoeff();
          a.row(i) = (a.row(i).array() - mx).exp();
          a.row(i) /= a.row(i).sum();
        }
        lc.context.block(r0, h * hd, len, hd).noalias() = a * vh;
      }
    }
    lc.mid = lc.input;
    lc.mid.noalias() += lc.context * P(TensorIndex::kWo);
    lc.mid.rowwise() += B(TensorIndex::kBo);

    layer_norm_forward<T>(lc.mid, B(TensorIndex::kLn2Gain), B(TensorIndex::kLn2Bias), lc.ln2_hat,
                          lc.ln2_rstd, lc.ln2_out);
    lc.ff_pre.noalias() = lc.ln2_out * P(TensorIndex::kW1);
    lc.ff_pre.rowwise() += B(TensorIndex::kB1);
    lc.ff_act = lc.ff_pre.unaryExpr([](T v) { return gelu(v); });
    x = lc.mid;
    x.noalias() += lc.ff_act * P(TensorIndex::kW2);
    x.rowwise() += B(TensorIndex::kB2);
  }

  cache.final_input = std::move(x);
  layer_norm_forward<T>(cache.final_input, params.row(TensorIndex::final_gain(c.n_layers)),
                        params.row(TensorIndex::final_bias(c.n_layers)), cache.lnf_hat,
                        cache.lnf_rstd, cache.lnf_out);
  cache.logits.noalias() = cache.lnf_out * params.matrix(TensorIndex::head(c.n_layers));
}

template <typename T>
void backward(const ParameterSet<T>& params, const ForwardCache<T>& cache, const Matrix<T>& dlogits,
              ParameterSet<T>& grad) {
  const auto& c = params.config();
  if (!(grad.config() == c)) {
    throw std::invalid_argument("gradient buffer config does not match parameters");
  }
  const int batch = cache.batch;
  const int len = cache.length;
  const int d = c.d_model;
  const int hd = c.head_dim();
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * len;
  if (dlogits.rows() != rows || dlogits.cols() != c.vocab_size) {
    throw std::invalid_argument("dlogits shape does not match the cached forward pass");
  }
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  grad.matrix(TensorIndex::head(c.n_layers)).noalias() += cache.lnf_out.transpose() * dlogits;
  Matrix<T> dln = dlogits * params.matrix(TensorIndex::head(c.n_layers)).transpose();
  Matrix<T> dx = Matrix<T>::Zero(rows, d);
  layer_norm_backward<T>(dln, cache.lnf_hat, cache.lnf_rstd, params.row(TensorIndex::final_gain(c.n_layers)),
                         grad.row(TensorIndex::final_gain(c.n_layers)),
                         grad.row(TensorIndex::final_bias(c.n_layers)), dx);

  Matrix<T> dmid, dff, dln_in, dctx, dq, dk, dv, da, ds;
  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    auto P = [&](TensorIndex::LayerSlot s) { return params.matrix(TensorIndex::layer(l, s)); };
    auto G = [&](TensorIndex::LayerSlot s) { return grad.matrix(TensorIndex::layer(l, s)); };
    auto PB = [&](TensorIndex::LayerSlot s) { return params.row(TensorIndex::layer(l, s)); };
    auto GB = [&](TensorIndex::LayerSlot s) { return grad.row(TensorIndex::layer(l, s)); };

    // Feed-forward sublayer: x = mid + gelu(ln2(mid) W1 + b1) W2 + b2.
    G(TensorIndex::kW2).noalias() += lc.ff_act.transpose() * dx;
    add_column_sums<T>(dx, GB(TensorIndex::kB2));
    dff.noalias() = dx * P(TensorIndex::kW2).transpose();
    dff.array() *= lc.ff_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    G(TensorIndex::kW1).noalias() += lc.ln2_out.transpose() * dff;
    add_column_sums<T>(dff, GB(TensorIndex::kB1));
    dln_in.noalias() = dff * P(TensorIndex::kW1).transpose();
    dmid = dx;
    layer_norm_backward<T>(dln_in, lc.ln2_hat, lc.ln2_rstd, PB(TensorIndex::kLn2Gain),
                           GB(TensorIndex::kLn2Gain), GB(TensorIndex::kLn2Bias), dmid);

    // Attention sublayer: mid = input + context Wo + bo.
    G(TensorIndex::kWo).noalias() += lc.context.transpose() * dmid;
    add_column_sums<T>(dmid, GB(TensorIndex::kBo));
    dctx.noalias() = dmid * P(TensorIndex::kWo).transpose();
    dq.setZero(rows, d);
    dk.setZero(rows, d);
    dv.setZero(rows, d);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * len;
      for (int h = 0; h < c.n_heads; ++h) {
        const auto& a = lc.attn[static_cast<std::size_t>(b) * c.n_heads + h];
        const auto qh = lc.q.block(r0, h * hd, len, hd);
        const auto kh = lc.k.block(r0, h * hd, len, hd);
        const auto vh = lc.v.block(r0, h * hd, len, hd);
        const auto dch = dctx.block(r0, h * hd, len, hd);
        dv.block(r0, h * hd, len, hd).noalias() = a.transpose() * dch;
        da.noalias() = dch * vh.transpose();
        ds = a.cwiseProduct(da);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
        ds.noalias() -= a.cwiseProduct(rowdot.replicate(1, len));
        ds *= scale;
        dq.block(r0, h * hd, len, hd).noalias() = ds * kh;
        dk.block(r0, h * hd, len, hd).noalias() = ds.transpose() * qh;
      }
    }
    G(TensorIndex::kWq).noalias() += lc.ln1_out.transpose() * dq;
    G(TensorIndex::kWk).noalias() += lc.ln1_out.transpose() * dk;
    G(TensorIndex::kWv).noalias() += lc.ln1_out.transpose() * dv;
    add_column_sums<T>(dq, GB(TensorIndex::kBq));
    add_column_sums<T>(dk, GB(TensorIndex::kBk));
    add_column_sums<T>(dv, GB(TensorIndex::kBv));
    dln_in.noalias() = dq * P(TensorIndex::kWq).transpose();
    dln_in.noalias() += dk * P(TensorIndex::kWk).transpose();
    dln_in.noalias() += dv * P(TensorIndex::kWv).transpose();
    dx = dmid;
    layer_norm_backward<T>(dln_in, lc.ln1_hat, lc.ln1_rstd, PB(TensorIndex::kLn1Gain),
                           GB(TensorIndex::kLn1Gain), GB(TensorIndex::kLn1Bias), dx);
  }

  auto dtok = grad.matrix(TensorIndex::kTokenEmbedding);
  auto dpos = grad.matrix(TensorIndex::kPositionEmbedding);
  for (Eigen::Index r = 0; r < rows; ++r) {
    dtok.row(cache.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
    dpos.row(r % len) += dx.row(r);
  }
}

template <typename T>
Matrix<T> compute_logits(const ParameterSet<T>& params, std::span<const TokenId> tokens) {
  ForwardCache<T> cache;
  forward(params, tokens, 1, cache);
  return std::move(cache.logits);
}

template void forward<float>(const ParameterSet<float>&, std::span<const TokenId>, int, ForwardCache<float>&);
template void forward<double>(const ParameterSet<double>&, std::span<const TokenId>, int, ForwardCache<double>&);
template void backward<float>(const ParameterSet<float>&, const ForwardCache<float>&, const Matrix<float>&,
                              ParameterSet<float>&);
template void backward<double>(const ParameterSet<double>&, const ForwardCache<double>&, const Matrix<double>&,
                               ParameterSet<double>&);
template Matrix<float> compute_logits<float>(const ParameterSet<float>&, std::span<const TokenId>);
template Matrix<double> compute_logits<double>(const ParameterSet<double>&, std::span<const TokenId>);

}  // namespace dlab
