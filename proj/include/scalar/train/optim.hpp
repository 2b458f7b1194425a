#pragma once

#include <cmath>
#include <map>
#include <string>

#include "scalar/numerics/params.hpp"

namespace scalar {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

// Decoupled weight decay, applied to matrices only (rank >= 2).
template <class T>
class AdamW {
 public:
  struct Moments {
    Tensor<T> m, v;
  };

  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return step_; }
  void set_steps(std::int64_t s) { step_ = s; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

  // Updates every parameter that requires a gradient and clears all grads.
  void step(const ParamList<T>& params, double lr_scale = 1.0) {
    ++step_;
    const double lr = cfg_.lr * lr_scale;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (const auto& p : params) {
      Var<T> var = p.var;
      if (!var.requires_grad()) {
        var.zero_grad();
        continue;
      }
      auto& st = state_[p.name];
      auto& w = var.mutable_value();
      if (st.m.empty()) st.m = Tensor<T>(w.shape()), st.v = Tensor<T>(w.shape());
      const Tensor<T> g = var.grad();
      const bool decay = w.rank() >= 2 && cfg_.weight_decay > 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double m = cfg_.beta1 * static_cast<double>(st.m[i]) + (1 - cfg_.beta1) * gi;
        const double v = cfg_.beta2 * static_cast<double>(st.v[i]) + (1 - cfg_.beta2) * gi * gi;
        st.m[i] = static_cast<T>(m);
        st.v[i] = static_cast<T>(v);
        double wi = static_cast<double>(w[i]);
        if (decay) wi -= lr * cfg_.weight_decay * wi;
        wi -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
        w[i] = static_cast<T>(wi);
      }
      var.zero_grad();
    }
  }

 private:
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace scalar
