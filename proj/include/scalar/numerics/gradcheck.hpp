#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "scalar/numerics/autodiff.hpp"

namespace scalar {

template <class T>
using ScalarFn = std::function<Var<T>(const std::vector<Var<T>>&)>;

// Central finite differences of a scalar function, evaluated in double.
inline std::vector<Tensor<double>> finite_difference_grads(const ScalarFn<double>& fn,
                                                           const std::vector<Tensor<double>>& inputs,
                                                           double step) {
  NoGradGuard guard;
  std::vector<Tensor<double>> grads;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double> g(inputs[i].shape());
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> vars;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == i) t[e] += delta;
          vars.push_back(Var<double>::constant(std::move(t)));
        }
        return fn(vars).value().item();
      };
      g[e] = (eval(step) - eval(-step)) / (2 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

template <class T>
std::vector<Tensor<T>> analytic_grads(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs) {
  std::vector<Var<T>> vars;
  for (const auto& t : inputs) vars.push_back(Var<T>::parameter(t));
  backward(fn(vars));
  std::vector<Tensor<T>> out;
  for (const auto& v : vars) out.push_back(v.grad());
  return out;
}

// max |analytic - numeric| / max |numeric|, taken per input then maximized.
inline double max_relative_error(const std::vector<Tensor<double>>& analytic,
                                 const std::vector<Tensor<double>>& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double diff = 0, scale = 0;
    for (std::size_t e = 0; e < analytic[i].size(); ++e) {
      diff = std::max(diff, std::abs(analytic[i][e] - numeric[i][e]));
      scale = std::max(scale, std::abs(numeric[i][e]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-12));
  }
  return worst;
}

// Gradient error of the T-precision implementation against a finite-difference
// reference computed on the double-precision instantiation of the same function.
template <class T>
double gradient_error(const ScalarFn<T>& fn_t, const ScalarFn<double>& fn_d, const std::vector<Tensor<double>>& inputs,
                      double step) {
  std::vector<Tensor<T>> cast_inputs;
  for (const auto& t : inputs) cast_inputs.push_back(t.template cast<T>());
  auto ana = analytic_grads<T>(fn_t, cast_inputs);
  std::vector<Tensor<double>> ana_d;
  for (const auto& g : ana) ana_d.push_back(g.template cast<double>());
  return max_relative_error(ana_d, finite_difference_grads(fn_d, inputs, step));
}

}  // namespace scalar
