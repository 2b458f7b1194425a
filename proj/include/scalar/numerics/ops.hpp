#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scalar/numerics/autodiff.hpp"

// Differentiable building blocks. Every op validates operand shapes and
// throws ShapeError naming both shapes on mismatch. Broadcasting is limited to
// a trailing-dimension bias in `linear`.
namespace scalar::ops {

template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// x[..., in] · w[in, out] + b[out]; `b` may be undefined.
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);

template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
// mean((a - b)^2) over all elements.
template <class T> Var<T> mse(const Var<T>& a, const Var<T>& b);

// Normalizes over the last axis; gamma/beta may be undefined (no affine).
template <class T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
template <class T> Var<T> gelu(const Var<T>& x);
// Softmax over the last axis.
template <class T> Var<T> softmax(const Var<T>& x);

// Rows of table[V, d] selected by idx -> [idx.size(), d].
template <class T> Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> idx);

template <class T> Var<T> reshape(const Var<T>& x, Shape shape);
template <class T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <class T> Var<T> slice(const Var<T>& x, std::size_t axis, std::int64_t start, std::int64_t length);

// x[..., H, W, C] -> [..., h, w, C], half-pixel-center sampling.
template <class T> Var<T> bilinear_resize(const Var<T>& x, std::int64_t h, std::int64_t w);

// x[B, H, W, Cin] (NHWC), w[k, k, Cin, Cout], b[Cout] (may be undefined).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad);

// Multi-head scaled dot-product attention on row-stacked sequences.
// q: [B*Tq, D], k/v: [B*Tk, D]. `allowed` is a Tq x Tk permission matrix
// shared across the batch (empty = everything allowed).
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::int64_t batch, int heads,
                 std::span<const std::uint8_t> allowed);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <class T> Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets);

template <class T> Var<T> stop_gradient(const Var<T>& x);
// Forward value of `quantized`, gradient passed to `x` unchanged.
template <class T> Var<T> straight_through(const Var<T>& x, const Var<T>& quantized);

}  // namespace scalar::ops

namespace scalar {

// Non-differentiable resize on plain tensors (same convention as the op).
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t h, std::int64_t w);

}  // namespace scalar
