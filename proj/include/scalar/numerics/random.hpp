#pragma once

#include <cstdint>
#include <random>

#include "scalar/numerics/tensor.hpp"

namespace scalar {

using Rng = std::mt19937_64;

template <class T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// Independent stream derived from a base seed and a tag, so that consumers
// (data order, class dropout, modality draws) never perturb one another.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

}  // namespace scalar
