#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace dlab {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam. Moments are kept in double; `step` descends
/// along `grad`, so maximisers pass the negated gradient.
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWConfig config, std::size_t n_params);

  void step(std::span<float> params, std::span<const double> grad);

  const AdamWConfig& config() const { return config_; }
  std::int64_t steps_taken() const { return t_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  AdamWConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t t_ = 0;
};

}  // namespace dlab
