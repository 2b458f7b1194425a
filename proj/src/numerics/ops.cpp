#include "scalar/numerics/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

namespace scalar::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

std::int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::int64_t rows_of(const Shape& s) {
  const auto n = shape_numel(s);
  const auto d = last_dim(s);
  return d == 0 ? 0 : n / d;
}

template <class T>
CMapMat<T> as_mat(const Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return CMapMat<T>(t.data(), rows, cols);
}

template <class T>
MapMat<T> as_mat(Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return MapMat<T>(t.data(), rows, cols);
}

// Source taps for one axis of a half-pixel-center resize.
struct Tap {
  std::int64_t i0, i1;
  double w0, w1;
};

std::vector<Tap> resize_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    const double frac = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

struct ResizeGeom {
  std::int64_t outer, H, W, C, h, w;
};

ResizeGeom resize_geom(const Shape& s, std::int64_t h, std::int64_t w) {
  if (s.size() < 3) throw ShapeError("bilinear_resize: expected [..., H, W, C], got " + shape_str(s));
  if (h < 1 || w < 1) {
    throw ShapeError("bilinear_resize: target extent must be >= 1, got (" + std::to_string(h) + "," +
                     std::to_string(w) + ")");
  }
  const std::size_t r = s.size();
  ResizeGeom g{1, s[r - 3], s[r - 2], s[r - 1], h, w};
  if (g.H < 1 || g.W < 1) throw ShapeError("bilinear_resize: empty source grid " + shape_str(s));
  for (std::size_t i = 0; i + 3 < r; ++i) g.outer *= s[i];
  return g;
}

template <class T>
void resize_forward(const ResizeGeom& g, const T* in, T* out) {
  const auto ty = resize_taps(g.H, g.h);
  const auto tx = resize_taps(g.W, g.w);
  for (std::int64_t b = 0; b < g.outer; ++b) {
    const T* src = in + b * g.H * g.W * g.C;
    T* dst = out + b * g.h * g.w * g.C;
    for (std::int64_t y = 0; y < g.h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < g.w; ++x) {
        const Tap& c = tx[static_cast<std::size_t>(x)];
        const T w00 = static_cast<T>(a.w0 * c.w0), w01 = static_cast<T>(a.w0 * c.w1);
        const T w10 = static_cast<T>(a.w1 * c.w0), w11 = static_cast<T>(a.w1 * c.w1);
        const T* p00 = src + (a.i0 * g.W + c.i0) * g.C;
        const T* p01 = src + (a.i0 * g.W + c.i1) * g.C;
        const T* p10 = src + (a.i1 * g.W + c.i0) * g.C;
        const T* p11 = src + (a.i1 * g.W + c.i1) * g.C;
        T* o = dst + (y * g.w + x) * g.C;
        for (std::int64_t ch = 0; ch < g.C; ++ch) {
          o[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
        }
      }
    }
  }
}

template <class T>
void resize_backward(const ResizeGeom& g, const T* gout, T* gin) {
  const auto ty = resize_taps(g.H, g.h);
  const auto tx = resize_taps(g.W, g.w);
  for (std::int64_t b = 0; b < g.outer; ++b) {
    T* dsrc = gin + b * g.H * g.W * g.C;
    const T* dout = gout + b * g.h * g.w * g.C;
    for (std::int64_t y = 0; y < g.h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < g.w; ++x) {
        const Tap& c = tx[static_cast<std::size_t>(x)];
        const T w00 = static_cast<T>(a.w0 * c.w0), w01 = static_cast<T>(a.w0 * c.w1);
        const T w10 = static_cast<T>(a.w1 * c.w0), w11 = static_cast<T>(a.w1 * c.w1);
        const T* o = dout + (y * g.w + x) * g.C;
        T* p00 = dsrc + (a.i0 * g.W + c.i0) * g.C;
        T* p01 = dsrc + (a.i0 * g.W + c.i1) * g.C;
        T* p10 = dsrc + (a.i1 * g.W + c.i0) * g.C;
        T* p11 = dsrc + (a.i1 * g.W + c.i1) * g.C;
        for (std::int64_t ch = 0; ch < g.C; ++ch) {
          p00[ch] += w00 * o[ch];
          p01[ch] += w01 * o[ch];
          p10[ch] += w10 * o[ch];
          p11[ch] += w11 * o[ch];
        }
      }
    }
  }
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    mismatch("matmul", a.shape(), b.shape());
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  return make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto g = as_mat(self.grad, m, n);
    if (pa.requires_grad) {
      Tensor<T> ga({m, k});
      as_mat(ga, m, k).noalias() = g * as_mat(pb.value, k, n).transpose();
      accumulate_grad(pa, std::move(ga));
    }
    if (pb.requires_grad) {
      Tensor<T> gb({k, n});
      as_mat(gb, k, n).noalias() = as_mat(pa.value, m, k).transpose() * g;
      accumulate_grad(pb, std::move(gb));
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (w.shape().size() != 2 || x.shape().empty() || last_dim(x.shape()) != w.dim(0)) {
    mismatch("linear", x.shape(), w.shape());
  }
  const auto in = w.dim(0), outf = w.dim(1), n = rows_of(x.shape());
  const bool has_bias = b.defined();
  if (has_bias && (b.shape().size() != 1 || b.dim(0) != outf)) mismatch("linear(bias)", w.shape(), b.shape());
  Shape os = x.shape();
  os.back() = outf;
  Tensor<T> out(os);
  auto om = as_mat(out, n, outf);
  om.noalias() = as_mat(x.value(), n, in) * as_mat(w.value(), in, outf);
  if (has_bias) {
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), outf);
  }
  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result<T>(std::move(out), std::move(parents), [n, in, outf, has_bias](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto g = as_mat(self.grad, n, outf);
    if (px.requires_grad) {
      Tensor<T> gx(px.value.shape());
      as_mat(gx, n, in).noalias() = g * as_mat(pw.value, in, outf).transpose();
      accumulate_grad(px, std::move(gx));
    }
    if (pw.requires_grad) {
      Tensor<T> gw({in, outf});
      as_mat(gw, in, outf).noalias() = as_mat(px.value, n, in).transpose() * g;
      accumulate_grad(pw, std::move(gw));
    }
    if (has_bias && self.parents[2]->requires_grad) {
      Tensor<T> gb({outf});
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), outf) = g.colwise().sum();
      accumulate_grad(*self.parents[2], std::move(gb));
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_grad(*self.parents[0], self.grad);
    accumulate_grad(*self.parents[1], self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_grad(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor<T> g = self.grad;
      for (auto& v : g.values()) v = -v;
      accumulate_grad(*self.parents[1], std::move(g));
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int side = 0; side < 2; ++side) {
      auto& p = *self.parents[side];
      if (!p.requires_grad) continue;
      const auto& other = self.parents[1 - side]->value;
      Tensor<T> g(p.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * other[i];
      accumulate_grad(p, std::move(g));
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (auto& v : g.values()) v *= s;
    accumulate_grad(*self.parents[0], std::move(g));
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return make_result<T>(Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    accumulate_grad(p, Tensor<T>::full(p.value.shape(), self.grad[0]));
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const auto n = static_cast<T>(a.value().size());
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return make_result<T>(Tensor<T>::scalar(acc / n), {a}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    accumulate_grad(p, Tensor<T>::full(p.value.shape(), self.grad[0] / n));
  });
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) mismatch("mse", a.shape(), b.shape());
  const auto n = static_cast<T>(a.value().size());
  T acc = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const T d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  return make_result<T>(Tensor<T>::scalar(acc / n), {a, b}, [n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T s = T(2) * self.grad[0] / n;
    Tensor<T> g(av.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = s * (av[i] - bv[i]);
    if (self.parents[1]->requires_grad) {
      Tensor<T> gb = g;
      for (auto& v : gb.values()) v = -v;
      accumulate_grad(*self.parents[1], std::move(gb));
    }
    accumulate_grad(*self.parents[0], std::move(g));
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto d = last_dim(x.shape());
  const auto n = rows_of(x.shape());
  const bool affine = gamma.defined();
  if (affine && (gamma.shape() != Shape{d} || !beta.defined() || beta.shape() != Shape{d})) {
    mismatch("layer_norm", x.shape(), gamma.shape());
  }
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = x.value().data() + r * d;
    T mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    T* xh = xhat->data() + r * d;
    T* o = out.data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mu) * is;
      o[j] = affine ? xh[j] * gamma.value()[static_cast<std::size_t>(j)] + beta.value()[static_cast<std::size_t>(j)]
                    : xh[j];
    }
  }
  std::vector<Var<T>> parents{x};
  if (affine) {
    parents.push_back(gamma);
    parents.push_back(beta);
  }
  return make_result<T>(std::move(out), std::move(parents), [n, d, affine, xhat, inv_std](Node<T>& self) {
    auto& px = *self.parents[0];
    const T* g = self.grad.data();
    if (affine) {
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      if (pg.requires_grad || pb.requires_grad) {
        Tensor<T> gg({d}), gb({d});
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t j = 0; j < d; ++j) {
            gg[static_cast<std::size_t>(j)] += g[r * d + j] * (*xhat)[static_cast<std::size_t>(r * d + j)];
            gb[static_cast<std::size_t>(j)] += g[r * d + j];
          }
        }
        accumulate_grad(pg, std::move(gg));
        accumulate_grad(pb, std::move(gb));
      }
    }
    if (!px.requires_grad) return;
    Tensor<T> gx(px.value.shape());
    std::vector<T> dxh(static_cast<std::size_t>(d));
    for (std::int64_t r = 0; r < n; ++r) {
      T m1 = 0, m2 = 0;
      const T* xh = xhat->data() + r * d;
      for (std::int64_t j = 0; j < d; ++j) {
        const T gj = g[r * d + j] * (affine ? self.parents[1]->value[static_cast<std::size_t>(j)] : T(1));
        dxh[static_cast<std::size_t>(j)] = gj;
        m1 += gj;
        m2 += gj * xh[j];
      }
      m1 /= static_cast<T>(d);
      m2 /= static_cast<T>(d);
      const T is = (*inv_std)[static_cast<std::size_t>(r)];
      for (std::int64_t j = 0; j < d; ++j) {
        gx[static_cast<std::size_t>(r * d + j)] = is * (dxh[static_cast<std::size_t>(j)] - m1 - xh[j] * m2);
      }
    }
    accumulate_grad(px, std::move(gx));
  });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    auto& p = *self.parents[0];
    Tensor<T> g(p.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      g[i] = self.grad[i] * (cdf + v * pdf);
    }
    accumulate_grad(p, std::move(g));
  });
}

template <class T>
Var<T> softmax(const Var<T>& x) {
  const auto d = last_dim(x.shape());
  const auto n = rows_of(x.shape());
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = x.value().data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    T z = 0;
    for (std::int64_t j = 0; j < d; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::int64_t j = 0; j < d; ++j) o[j] /= z;
  }
  return make_result<T>(std::move(out), {x}, [n, d](Node<T>& self) {
    auto& p = *self.parents[0];
    // The op output is not retained on the node; recompute from the input.
    Tensor<T> g(p.value.shape());
    std::vector<T> y(static_cast<std::size_t>(d));
    for (std::int64_t r = 0; r < n; ++r) {
      const T* row = p.value.data() + r * d;
      const T mx = *std::max_element(row, row + d);
      T z = 0;
      for (std::int64_t j = 0; j < d; ++j) z += (y[static_cast<std::size_t>(j)] = std::exp(row[j] - mx));
      T dot = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        y[static_cast<std::size_t>(j)] /= z;
        dot += self.grad[static_cast<std::size_t>(r * d + j)] * y[static_cast<std::size_t>(j)];
      }
      for (std::int64_t j = 0; j < d; ++j) {
        g[static_cast<std::size_t>(r * d + j)] =
            y[static_cast<std::size_t>(j)] * (self.grad[static_cast<std::size_t>(r * d + j)] - dot);
      }
    }
    accumulate_grad(p, std::move(g));
  });
}

template <class T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> idx) {
  if (table.shape().size() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const auto V = table.dim(0), d = table.dim(1);
  const auto n = static_cast<std::int64_t>(idx.size());
  Tensor<T> out({n, d});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto id = idx[static_cast<std::size_t>(i)];
    if (id < 0 || id >= V) {
      throw std::out_of_range("embedding: index " + std::to_string(id) + " outside [0," + std::to_string(V) + ")");
    }
    std::copy_n(table.value().data() + id * d, d, out.data() + i * d);
  }
  auto ids = std::make_shared<std::vector<std::int32_t>>(idx.begin(), idx.end());
  return make_result<T>(std::move(out), {table}, [ids, d](Node<T>& self) {
    auto& p = *self.parents[0];
    Tensor<T> g(p.value.shape());
    for (std::size_t i = 0; i < ids->size(); ++i) {
      T* dst = g.data() + (*ids)[i] * d;
      const T* src = self.grad.data() + static_cast<std::int64_t>(i) * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    accumulate_grad(p, std::move(g));
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    accumulate_grad(p, self.grad.reshaped(p.value.shape()));
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  std::int64_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) mismatch("concat", s0, s);
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor<T> out(os);
  std::int64_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::int64_t chunk = extents[pi] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(parts[pi].value().data() + o * chunk, chunk, out.data() + o * total * inner + offset * inner);
    }
    offset += extents[pi];
  }
  return make_result<T>(std::move(out), parts, [outer, inner, total, extents](Node<T>& self) {
    std::int64_t off = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      const std::int64_t chunk = extents[pi] * inner;
      if (p.requires_grad) {
        Tensor<T> g(p.value.shape());
        for (std::int64_t o = 0; o < outer; ++o) {
          std::copy_n(self.grad.data() + o * total * inner + off * inner, chunk, g.data() + o * chunk);
        }
        accumulate_grad(p, std::move(g));
      }
      off += extents[pi];
    }
  });
}

template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::int64_t start, std::int64_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start < 0 || length < 0 || start + length > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t full = s[axis];
  Shape os = s;
  os[axis] = length;
  Tensor<T> out(os);
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().data() + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return make_result<T>(std::move(out), {x}, [outer, inner, full, start, length](Node<T>& self) {
    auto& p = *self.parents[0];
    Tensor<T> g(p.value.shape());
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(self.grad.data() + o * length * inner, length * inner, g.data() + (o * full + start) * inner);
    }
    accumulate_grad(p, std::move(g));
  });
}

template <class T>
Var<T> bilinear_resize(const Var<T>& x, std::int64_t h, std::int64_t w) {
  const ResizeGeom g = resize_geom(x.shape(), h, w);
  Shape os = x.shape();
  os[os.size() - 3] = h;
  os[os.size() - 2] = w;
  Tensor<T> out(os);
  resize_forward(g, x.value().data(), out.data());
  return make_result<T>(std::move(out), {x}, [g](Node<T>& self) {
    auto& p = *self.parents[0];
    Tensor<T> gin(p.value.shape());
    resize_backward(g, self.grad.data(), gin.data());
    accumulate_grad(p, std::move(gin));
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != ws[1] || ws[2] != xs[3]) mismatch("conv2d", xs, ws);
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  const std::int64_t B = xs[0], H = xs[1], W = xs[2], Ci = xs[3], K = ws[0], Co = ws[3];
  const std::int64_t Ho = (H + 2 * pad - K) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - K) / stride + 1;
  if (Ho < 1 || Wo < 1) mismatch("conv2d", xs, ws);
  const bool has_bias = b.defined();
  if (has_bias && b.shape() != Shape{Co}) mismatch("conv2d(bias)", ws, b.shape());

  const std::int64_t rows = B * Ho * Wo, cols = K * K * Ci;
  auto col = std::make_shared<Tensor<T>>(Shape{rows, cols});
  for (std::int64_t n = 0; n < B; ++n) {
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        T* dst = col->data() + ((n * Ho + oy) * Wo + ox) * cols;
        for (std::int64_t ky = 0; ky < K; ++ky) {
          const std::int64_t iy = oy * stride - pad + ky;
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t ix = ox * stride - pad + kx;
            T* d = dst + (ky * K + kx) * Ci;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;  // zero padding
            std::copy_n(x.value().data() + ((n * H + iy) * W + ix) * Ci, Ci, d);
          }
        }
      }
    }
  }
  Tensor<T> out({B, Ho, Wo, Co});
  auto om = as_mat(out, rows, Co);
  om.noalias() = as_mat(*col, rows, cols) * as_mat(w.value(), cols, Co);
  if (has_bias) om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), Co);

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result<T>(
      std::move(out), std::move(parents),
      [col, B, H, W, Ci, K, Co, Ho, Wo, rows, cols, stride, pad, has_bias](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto g = as_mat(self.grad, rows, Co);
        if (pw.requires_grad) {
          Tensor<T> gw(pw.value.shape());
          as_mat(gw, cols, Co).noalias() = as_mat(*col, rows, cols).transpose() * g;
          accumulate_grad(pw, std::move(gw));
        }
        if (has_bias && self.parents[2]->requires_grad) {
          Tensor<T> gb({Co});
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), Co) = g.colwise().sum();
          accumulate_grad(*self.parents[2], std::move(gb));
        }
        if (!px.requires_grad) return;
        Tensor<T> gcol({rows, cols});
        as_mat(gcol, rows, cols).noalias() = g * as_mat(pw.value, cols, Co).transpose();
        Tensor<T> gx(px.value.shape());
        for (std::int64_t n = 0; n < B; ++n) {
          for (std::int64_t oy = 0; oy < Ho; ++oy) {
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
              const T* src = gcol.data() + ((n * Ho + oy) * Wo + ox) * cols;
              for (std::int64_t ky = 0; ky < K; ++ky) {
                const std::int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t kx = 0; kx < K; ++kx) {
                  const std::int64_t ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  T* d = gx.data() + ((n * H + iy) * W + ix) * Ci;
                  const T* s = src + (ky * K + kx) * Ci;
                  for (std::int64_t c = 0; c < Ci; ++c) d[c] += s[c];
                }
              }
            }
          }
        }
        accumulate_grad(px, std::move(gx));
      });
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::int64_t batch, int heads,
                 std::span<const std::uint8_t> allowed) {
  if (q.shape().size() != 2 || k.shape() != v.shape() || k.shape().size() != 2 || q.dim(1) != k.dim(1)) {
    mismatch("attention", q.shape(), k.shape());
  }
  const std::int64_t D = q.dim(1);
  if (batch < 1 || heads < 1 || D % heads != 0 || q.dim(0) % batch != 0 || k.dim(0) % batch != 0) {
    mismatch("attention", q.shape(), k.shape());
  }
  const std::int64_t Tq = q.dim(0) / batch, Tk = k.dim(0) / batch, dh = D / heads;
  if (!allowed.empty() && static_cast<std::int64_t>(allowed.size()) != Tq * Tk) {
    throw ShapeError("attention: permission matrix has " + std::to_string(allowed.size()) + " entries, expected " +
                     shape_str({Tq, Tk}));
  }
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<Tensor<T>>(Shape{batch, heads, Tq, Tk});
  Tensor<T> out({batch * Tq, D});
  RowMat<T> scores(Tq, Tk);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      CStridedMap<T> Q(q.value().data() + b * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
      CStridedMap<T> Km(k.value().data() + b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
      CStridedMap<T> Vm(v.value().data() + b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
      scores.noalias() = (Q * Km.transpose()) * sc;
      MapMat<T> P(probs->data() + ((b * heads + h) * Tq) * Tk, Tq, Tk);
      for (std::int64_t i = 0; i < Tq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < Tk; ++j) {
          if (allowed.empty() || allowed[static_cast<std::size_t>(i * Tk + j)]) mx = std::max(mx, scores(i, j));
        }
        T z = 0;
        for (std::int64_t j = 0; j < Tk; ++j) {
          const bool ok = allowed.empty() || allowed[static_cast<std::size_t>(i * Tk + j)];
          const T e = ok ? std::exp(scores(i, j) - mx) : T(0);
          P(i, j) = e;
          z += e;
        }
        for (std::int64_t j = 0; j < Tk; ++j) P(i, j) /= z;
      }
      StridedMap<T> O(out.data() + b * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
      O.noalias() = P * Vm;
    }
  }
  return make_result<T>(std::move(out), {q, k, v}, [probs, batch, heads, Tq, Tk, D, dh, sc](Node<T>& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    Tensor<T> gq(pq.value.shape()), gk(pk.value.shape()), gv(pv.value.shape());
    RowMat<T> dP(Tq, Tk), dS(Tq, Tk);
    for (std::int64_t b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const std::int64_t qoff = b * Tq * D + h * dh, koff = b * Tk * D + h * dh;
        CStridedMap<T> Q(pq.value.data() + qoff, Tq, dh, Eigen::OuterStride<>(D));
        CStridedMap<T> Km(pk.value.data() + koff, Tk, dh, Eigen::OuterStride<>(D));
        CStridedMap<T> Vm(pv.value.data() + koff, Tk, dh, Eigen::OuterStride<>(D));
        CStridedMap<T> dO(self.grad.data() + qoff, Tq, dh, Eigen::OuterStride<>(D));
        CMapMat<T> P(probs->data() + ((b * heads + h) * Tq) * Tk, Tq, Tk);
        StridedMap<T>(gv.data() + koff, Tk, dh, Eigen::OuterStride<>(D)).noalias() += P.transpose() * dO;
        dP.noalias() = dO * Vm.transpose();
        for (std::int64_t i = 0; i < Tq; ++i) {
          const T dot = P.row(i).dot(dP.row(i));
          for (std::int64_t j = 0; j < Tk; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * sc;
        }
        StridedMap<T>(gq.data() + qoff, Tq, dh, Eigen::OuterStride<>(D)).noalias() += dS * Km;
        StridedMap<T>(gk.data() + koff, Tk, dh, Eigen::OuterStride<>(D)).noalias() += dS.transpose() * Q;
      }
    }
    accumulate_grad(pq, std::move(gq));
    accumulate_grad(pk, std::move(gk));
    accumulate_grad(pv, std::move(gv));
  });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets) {
  if (logits.shape().size() != 2 || logits.dim(0) != static_cast<std::int64_t>(targets.size())) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const std::int64_t n = logits.dim(0), V = logits.dim(1);
  auto probs = std::make_shared<Tensor<T>>(logits.shape());
  T total = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= V) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(V) + ")");
    }
    const T* row = logits.value().data() + r * V;
    T* p = probs->data() + r * V;
    const T mx = *std::max_element(row, row + V);
    T z = 0;
    for (std::int64_t j = 0; j < V; ++j) z += (p[j] = std::exp(row[j] - mx));
    for (std::int64_t j = 0; j < V; ++j) p[j] /= z;
    total += std::log(z) + mx - row[t];
  }
  auto tg = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
  return make_result<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {logits}, [probs, tg, n, V](Node<T>& self) {
    Tensor<T> g = *probs;
    const T s = self.grad[0] / static_cast<T>(n);
    for (std::int64_t r = 0; r < n; ++r) g[static_cast<std::size_t>(r * V + (*tg)[static_cast<std::size_t>(r)])] -= T(1);
    for (auto& v : g.values()) v *= s;
    accumulate_grad(*self.parents[0], std::move(g));
  });
}

template <class T>
Var<T> stop_gradient(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

template <class T>
Var<T> straight_through(const Var<T>& x, const Var<T>& quantized) {
  if (x.shape() != quantized.shape()) mismatch("straight_through", x.shape(), quantized.shape());
  return make_result<T>(quantized.value(), {x}, [](Node<T>& self) { accumulate_grad(*self.parents[0], self.grad); });
}

#define SCALAR_INSTANTIATE_OPS(T)                                                                             \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                        \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> scale(const Var<T>&, T);                                                                    \
  template Var<T> sum(const Var<T>&);                                                                         \
  template Var<T> mean(const Var<T>&);                                                                        \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                                 \
  template Var<T> gelu(const Var<T>&);                                                                        \
  template Var<T> softmax(const Var<T>&);                                                                     \
  template Var<T> embedding(const Var<T>&, std::span<const std::int32_t>);                                    \
  template Var<T> reshape(const Var<T>&, Shape);                                                              \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                            \
  template Var<T> slice(const Var<T>&, std::size_t, std::int64_t, std::int64_t);                              \
  template Var<T> bilinear_resize(const Var<T>&, std::int64_t, std::int64_t);                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                              \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, std::int64_t, int,                   \
                            std::span<const std::uint8_t>);                                                   \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::int32_t>);                                \
  template Var<T> stop_gradient(const Var<T>&);                                                               \
  template Var<T> straight_through(const Var<T>&, const Var<T>&);

SCALAR_INSTANTIATE_OPS(float)
SCALAR_INSTANTIATE_OPS(double)
#undef SCALAR_INSTANTIATE_OPS

}  // namespace scalar::ops

namespace scalar {

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t h, std::int64_t w) {
  NoGradGuard guard;
  return ops::bilinear_resize(Var<T>::constant(x), h, w).value();
}

template Tensor<float> bilinear_resize(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> bilinear_resize(const Tensor<double>&, std::int64_t, std::int64_t);

}  // namespace scalar
