#include "dlab/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace dlab {

AdamW::AdamW(AdamWConfig config, std::size_t n_params)
    : config_(config), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamW::step(std::span<float> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("AdamW: parameter/gradient size mismatch");
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    double p = params[i];
    p -= config_.lr * config_.weight_decay * p;
    p -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    params[i] = static_cast<float>(p);
  }
}

void AdamW::save(std::ostream& out) const {
  const std::uint64_t n = m_.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&t_), sizeof t_);
  out.write(reinterpret_cast<const char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(double)));
  out.write(reinterpret_cast<const char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

void AdamW::load(std::istream& in) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n != m_.size()) {
    throw std::runtime_error("optimizer state does not match parameter count");
  }
  in.read(reinterpret_cast<char*>(&t_), sizeof t_);
  in.read(reinterpret_cast<char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) {
    throw std::runtime_error("truncated optimizer state");
  }
}

}  // namespace dlab
