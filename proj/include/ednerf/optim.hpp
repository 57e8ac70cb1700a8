#pragma once

#include <cstdint>

#include "ednerf/common.hpp"

namespace ednerf {

/// Learning rate per parameter group.
struct GroupRates {
  double density = 0.04;
  double appearance = 0.02;
  double network = 1e-3;

  double operator[](ParamGroup g) const;
  GroupRates scaled(double factor) const { return {density * factor, appearance * factor, network * factor}; }
  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation over a ParameterSet. Moments share the
/// parameter layout so they can be checkpointed alongside the parameters.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& layout, AdamConfig config = {});

  /// params -= lr_g * m_hat / (sqrt(v_hat) + eps). A group whose rate is 0
  /// is left untouched.
  void step(ParameterSet& params, const ParameterSet& grads, const GroupRates& rates);

  long steps() const { return t_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }
  void restore(long steps, ParameterSet m, ParameterSet v);
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  ParameterSet m_, v_;
  long t_ = 0;
};

/// Exponential decay from 1 at step 0 to `final_ratio` at `total_steps`.
double decay_factor(long step, long total_steps, double final_ratio);

}  // namespace ednerf
