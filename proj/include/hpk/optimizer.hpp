#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hpk/error.hpp"
#include "hpk/tensor.hpp"

namespace hpk {

// Adaptive-moment update with bias correction. Moment slots live on the
// parameters; the optimizer only carries hyperparameters and the step
// counter.
template <typename T>
struct AdamT {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long t = 0;

  void step(const std::vector<std::pair<std::string, ParamT<T>*>>& params,
            const std::map<std::string, std::vector<T>>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (const auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) {
        throw ContractError("adam: no gradient for parameter " + name);
      }
      const auto& g = it->second;
      if (g.size() != p->value.size()) {
        throw ContractError("adam: gradient size " + std::to_string(g.size()) +
                            " for parameter " + name + " of size " +
                            std::to_string(p->value.size()));
      }
      if (p->slot_m.empty()) {
        p->slot_m.assign(g.size(), T(0));
        p->slot_v.assign(g.size(), T(0));
      }
      auto& val = p->value.mutable_data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        p->slot_m[i] = T(beta1) * p->slot_m[i] + T(1 - beta1) * g[i];
        p->slot_v[i] = T(beta2) * p->slot_v[i] + T(1 - beta2) * g[i] * g[i];
        double mh = double(p->slot_m[i]) / bc1;
        double vh = double(p->slot_v[i]) / bc2;
        val[i] -= T(lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }
};

using Adam = AdamT<double>;

}  // namespace hpk
