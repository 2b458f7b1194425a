#pragma once

// Gradient-oracle cases shared by the numerics unit tests and the acceptance
// suite: every differentiable op, each at five or more random shapes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scalar/numerics/gradcheck.hpp"
#include "scalar/numerics/ops.hpp"
#include "scalar/numerics/random.hpp"

namespace scalar::testing {

struct OpCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  ScalarFn<float> f32;
  ScalarFn<double> f64;
};

namespace detail {

template <class T>
Var<T> weighted_sum(const Var<T>& y, const Tensor<double>& weights) {
  return ops::sum(ops::mul(y, Var<T>::constant(weights.cast<T>())));
}

template <class Body>
OpCase make_case(std::string name, std::vector<Tensor<double>> inputs, Body body) {
  return OpCase{std::move(name), std::move(inputs), ScalarFn<float>(body), ScalarFn<double>(body)};
}

}  // namespace detail

inline std::vector<OpCase> gradient_cases(std::uint64_t seed = 1234) {
  using namespace scalar::ops;
  using detail::make_case;
  using detail::weighted_sum;
  Rng rng(seed);
  std::vector<OpCase> cases;
  auto rn = [&](Shape s, double sd = 1.0) { return randn<double>(std::move(s), rng, sd); };

  const std::vector<std::array<std::int64_t, 3>> mm{{1, 1, 1}, {2, 3, 4}, {5, 2, 3}, {3, 7, 2}, {4, 4, 6}};
  for (auto [m, k, n] : mm) {
    auto w = rn({m, n});
    cases.push_back(make_case("matmul", {rn({m, k}), rn({k, n})}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(matmul(v[0], v[1]), w);
    }));
    auto wl = rn({m, n});
    cases.push_back(make_case("linear", {rn({m, k}), rn({k, n}), rn({n})}, [wl]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(linear(v[0], v[1], v[2]), wl);
    }));
  }

  const std::vector<Shape> elementwise{{1}, {3}, {2, 3}, {4, 5}, {2, 3, 4}, {3, 1, 2}};
  for (const auto& s : elementwise) {
    auto w = rn(s);
    cases.push_back(make_case("add", {rn(s), rn(s)}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(add(v[0], v[1]), w);
    }));
    cases.push_back(make_case("sub", {rn(s), rn(s)}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(sub(v[0], v[1]), w);
    }));
    cases.push_back(make_case("mul", {rn(s), rn(s)}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(mul(v[0], v[1]), w);
    }));
    cases.push_back(make_case("scale", {rn(s)}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(scale(v[0], T(-1.7)), w);
    }));
    cases.push_back(make_case("gelu", {rn(s, 2.0)}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(gelu(v[0]), w);
    }));
    cases.push_back(make_case("softmax", {rn(s)}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(softmax(v[0]), w);
    }));
    cases.push_back(make_case("sum", {rn(s)}, []<class T>(const std::vector<Var<T>>& v) {
      return scale(sum(mul(v[0], v[0])), T(0.5));
    }));
    cases.push_back(make_case("mean", {rn(s)}, []<class T>(const std::vector<Var<T>>& v) {
      return mean(mul(v[0], v[0]));
    }));
    cases.push_back(make_case("mse", {rn(s), rn(s)}, []<class T>(const std::vector<Var<T>>& v) {
      return mse(v[0], v[1]);
    }));
  }

  const std::vector<Shape> rows{{1, 2}, {3, 4}, {2, 8}, {5, 3}, {2, 2, 6}};
  for (const auto& s : rows) {
    auto w = rn(s);
    const auto d = s.back();
    cases.push_back(make_case("layer_norm", {rn(s), rn({d}), rn({d})}, [w]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(layer_norm(v[0], v[1], v[2]), w);
    }));
  }

  const std::vector<std::array<std::int64_t, 3>> emb{{3, 2, 4}, {5, 4, 7}, {2, 3, 2}, {6, 1, 5}, {4, 5, 9}};
  for (auto [V, d, n] : emb) {
    std::vector<std::int32_t> ids;
    for (std::int64_t i = 0; i < n; ++i) ids.push_back(static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(V)));
    auto w = rn({n, d});
    cases.push_back(make_case("embedding", {rn({V, d})}, [w, ids]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(embedding(v[0], std::span<const std::int32_t>(ids)), w);
    }));
  }

  const std::vector<std::pair<Shape, Shape>> rs{{{6}, {2, 3}}, {{2, 6}, {3, 4}}, {{2, 3, 4}, {6, 4}},
                                                {{1, 5}, {5}}, {{4, 2}, {2, 2, 2}}};
  for (const auto& [from, to] : rs) {
    auto w = rn(to);
    cases.push_back(make_case("reshape", {rn(from)}, [w, to]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(reshape(v[0], to), w);
    }));
  }

  const std::vector<std::array<std::int64_t, 4>> cc{{2, 3, 1, 0}, {1, 2, 4, 1}, {3, 2, 2, 1}, {2, 1, 3, 0}, {2, 2, 2, 2}};
  for (auto [a, b, c, axis] : cc) {
    Shape s0{a, b, c}, s1{a, b, c};
    s1[static_cast<std::size_t>(axis)] += 1;
    Shape so = s0;
    so[static_cast<std::size_t>(axis)] += s1[static_cast<std::size_t>(axis)];
    auto w = rn(so);
    const auto ax = static_cast<std::size_t>(axis);
    cases.push_back(make_case("concat", {rn(s0), rn(s1)}, [w, ax]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(concat<T>({v[0], v[1]}, ax), w);
    }));
    Shape sl = s1;
    sl[ax] = 1;
    auto ws = rn(sl);
    cases.push_back(make_case("slice", {rn(s1)}, [ws, ax]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(slice(v[0], ax, 1, 1), ws);
    }));
  }

  const std::vector<std::array<std::int64_t, 5>> rz{{1, 2, 2, 1, 4}, {2, 3, 5, 2, 2}, {1, 4, 4, 3, 3},
                                                    {1, 1, 1, 2, 3}, {2, 5, 3, 1, 7}};
  for (auto [B, H, W, C, out] : rz) {
    auto w = rn({B, out, out + 1, C});
    cases.push_back(make_case("bilinear_resize", {rn({B, H, W, C})}, [w, out]<class T>(const std::vector<Var<T>>& v) {
      return weighted_sum(bilinear_resize(v[0], out, out + 1), w);
    }));
  }

  struct ConvShape {
    std::int64_t B, H, W, Ci, K, Co;
    int stride, pad;
  };
  const std::vector<ConvShape> cv{{1, 4, 4, 1, 3, 2, 1, 1}, {2, 5, 4, 2, 3, 3, 2, 1}, {1, 6, 6, 3, 4, 2, 2, 1},
                                  {2, 3, 3, 2, 1, 4, 1, 0}, {1, 5, 5, 2, 2, 1, 1, 0}};
  for (const auto& c : cv) {
    const auto Ho = (c.H + 2 * c.pad - c.K) / c.stride + 1, Wo = (c.W + 2 * c.pad - c.K) / c.stride + 1;
    auto w = rn({c.B, Ho, Wo, c.Co});
    const int stride = c.stride, pad = c.pad;
    cases.push_back(make_case("conv2d", {rn({c.B, c.H, c.W, c.Ci}), rn({c.K, c.K, c.Ci, c.Co}), rn({c.Co})},
                              [w, stride, pad]<class T>(const std::vector<Var<T>>& v) {
                                return weighted_sum(conv2d(v[0], v[1], v[2], stride, pad), w);
                              }));
  }

  struct AttnShape {
    std::int64_t B, Tq, Tk, D;
    int heads;
    bool masked;
  };
  const std::vector<AttnShape> at{{1, 2, 2, 2, 1, false}, {2, 3, 3, 4, 2, true}, {1, 5, 5, 6, 3, true},
                                  {2, 2, 4, 4, 1, false}, {1, 4, 4, 8, 2, true}};
  for (const auto& a : at) {
    std::vector<std::uint8_t> allowed;
    if (a.masked) {
      for (std::int64_t i = 0; i < a.Tq; ++i)
        for (std::int64_t j = 0; j < a.Tk; ++j) allowed.push_back(j <= i ? 1 : 0);
    }
    auto w = rn({a.B * a.Tq, a.D});
    const auto B = a.B;
    const int heads = a.heads;
    cases.push_back(make_case("attention", {rn({a.B * a.Tq, a.D}), rn({a.B * a.Tk, a.D}), rn({a.B * a.Tk, a.D})},
                              [w, allowed, B, heads]<class T>(const std::vector<Var<T>>& v) {
                                return weighted_sum(attention(v[0], v[1], v[2], B, heads,
                                                              std::span<const std::uint8_t>(allowed)),
                                                    w);
                              }));
  }

  const std::vector<std::array<std::int64_t, 2>> ce{{1, 2}, {3, 4}, {5, 7}, {2, 16}, {4, 3}};
  for (auto [n, V] : ce) {
    std::vector<std::int32_t> tg;
    for (std::int64_t i = 0; i < n; ++i) tg.push_back(static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(V)));
    cases.push_back(make_case("cross_entropy", {rn({n, V}, 2.0)}, [tg]<class T>(const std::vector<Var<T>>& v) {
      return cross_entropy(v[0], std::span<const std::int32_t>(tg));
    }));
  }
  return cases;
}

}  // namespace scalar::testing
