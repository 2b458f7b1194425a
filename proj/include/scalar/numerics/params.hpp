#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scalar/numerics/autodiff.hpp"

namespace scalar {

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
void append_prefixed(ParamList<T>& out, const std::string& prefix, const ParamList<T>& in) {
  for (const auto& p : in) out.push_back({prefix + p.name, p.var});
}

template <class T>
std::size_t count_elements(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

}  // namespace scalar
