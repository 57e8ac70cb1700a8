#include "ednerf/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ednerf {

double GroupRates::operator[](ParamGroup g) const {
  switch (g) {
    case ParamGroup::density:
      return density;
    case ParamGroup::appearance:
      return appearance;
    case ParamGroup::network:
      return network;
  }
  return network;
}

void GroupRates::validate() const {
  if (!(density >= 0.0 && appearance >= 0.0 && network >= 0.0)) throw InvalidArgument("learning rates must be >= 0");
}

Adam::Adam(const ParameterSet& layout, AdamConfig config)
    : config_(config), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads, const GroupRates& rates) {
  if (!params.same_layout(m_) || !grads.same_layout(m_)) throw InvalidArgument("Adam: layout mismatch");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    const auto& g = grads[i].values;
    const double lr = rates[params[i].group];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = float(b1 * m[k] + (1.0 - b1) * g[k]);
      v[k] = float(b2 * v[k] + (1.0 - b2) * double(g[k]) * g[k]);
      if (lr == 0.0) continue;
      const double mh = m[k] / c1, vh = v[k] / c2;
      p[k] = float(p[k] - lr * mh / (std::sqrt(vh) + config_.eps));
    }
  }
}

void Adam::restore(long steps, ParameterSet m, ParameterSet v) {
  if (!m.same_layout(v)) throw InvalidArgument("Adam::restore: moment layouts differ");
  if (!m_.same_layout(m)) throw InvalidArgument("Adam::restore: moments do not match the parameters");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double decay_factor(long step, long total_steps, double final_ratio) {
  if (total_steps <= 0 || final_ratio == 1.0) return 1.0;
  return std::pow(final_ratio, double(std::min(step, total_steps)) / double(total_steps));
}

}  // namespace ednerf
