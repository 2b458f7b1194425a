#include "scalar/data/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scalar/data/extract.hpp"
#include "scalar/numerics/random.hpp"

namespace scalar::data {

namespace {

constexpr int N = kImageSize;

std::size_t idx(int y, int x) { return static_cast<std::size_t>(y) * N + x; }

void set(std::vector<std::uint8_t>& m, int y, int x) {
  if (y >= 0 && y < N && x >= 0 && x < N) m[idx(y, x)] = 1;
}

// Integer midpoint circle (decision variable p = 1 - r).
std::vector<std::uint8_t> midpoint_ring(int cx, int cy, int r) {
  std::vector<std::uint8_t> ring(N * N, 0);
  int x = r, y = 0, p = 1 - r;
  while (x >= y) {
    for (auto [dx, dy] : {std::pair{x, y}, {y, x}, {-y, x}, {-x, y}, {-x, -y}, {-y, -x}, {y, -x}, {x, -y}}) {
      set(ring, cy + dy, cx + dx);
    }
    ++y;
    if (p < 0) {
      p += 2 * y + 1;
    } else {
      --x;
      p += 2 * (y - x) + 1;
    }
  }
  return ring;
}

bool is_circle(ShapeKind k) { return k == ShapeKind::SmallCircle || k == ShapeKind::LargeCircle; }

std::array<std::uint8_t, 3> saturated_hue(double hue) {
  const double h = std::fmod(hue, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  return {q(r), q(g), q(b)};
}

std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround((v + 1.0) * 127.5), 0, 255));
}

}  // namespace

const char* class_name(int label) {
  static constexpr const char* names[kNumClasses] = {"small_circle", "large_circle", "square",        "wide_rect",
                                                     "tall_rect",    "triangle_up",  "triangle_down", "diamond"};
  if (label < 0 || label >= kNumClasses) throw std::out_of_range("class label " + std::to_string(label));
  return names[label];
}

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Edge: return "edge";
    case Modality::Depth: return "depth";
    case Modality::Normal: return "normal";
    case Modality::Hed: return "hed";
    case Modality::Sketch: return "sketch";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  if (name == "canny") return Modality::Edge;
  for (auto m : kAllModalities) {
    if (modality_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown modality '" + std::string(name) +
                              "' (valid: edge, depth, normal, hed, sketch)");
}

const Image& ConditionSample::condition(Modality m) const {
  switch (m) {
    case Modality::Edge: return edge;
    case Modality::Depth: return depth;
    case Modality::Normal: return normal;
    case Modality::Hed: return hed;
    case Modality::Sketch: return sketch;
  }
  throw std::invalid_argument("bad modality");
}

std::vector<std::uint8_t> rasterize(const ShapeSpec& s) {
  std::vector<std::uint8_t> m(N * N, 0);
  switch (s.kind) {
    case ShapeKind::SmallCircle:
    case ShapeKind::LargeCircle: {
      const auto ring = midpoint_ring(s.cx, s.cy, s.radius);
      for (int y = 0; y < N; ++y) {
        int lo = N, hi = -1;
        for (int x = 0; x < N; ++x) {
          if (ring[idx(y, x)]) lo = std::min(lo, x), hi = std::max(hi, x);
        }
        for (int x = lo; x <= hi; ++x) m[idx(y, x)] = 1;
      }
      break;
    }
    case ShapeKind::Square:
    case ShapeKind::WideRect:
    case ShapeKind::TallRect:
      for (int y = s.y0; y < s.y0 + s.h; ++y)
        for (int x = s.x0; x < s.x0 + s.w; ++x) set(m, y, x);
      break;
    case ShapeKind::TriangleUp:
    case ShapeKind::TriangleDown:
      for (int t = 0; t < s.h; ++t) {
        const int y = s.kind == ShapeKind::TriangleUp ? s.y0 + t : s.y0 + s.h - 1 - t;
        for (int x = s.cx - t; x <= s.cx + t; ++x) set(m, y, x);
      }
      break;
    case ShapeKind::Diamond:
      for (int dy = -s.radius; dy <= s.radius; ++dy) {
        const int half = s.radius - std::abs(dy);
        for (int dx = -half; dx <= half; ++dx) set(m, s.cy + dy, s.cx + dx);
      }
      break;
  }
  return m;
}

std::vector<std::uint8_t> boundary(const ShapeSpec& s) {
  if (is_circle(s.kind)) return midpoint_ring(s.cx, s.cy, s.radius);
  const auto fill = rasterize(s);
  std::vector<std::uint8_t> b(N * N, 0);
  for (int y = 0; y < N; ++y) {
    for (int x = 0; x < N; ++x) {
      if (!fill[idx(y, x)]) continue;
      bool edge = false;
      for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int yy = y + dy, xx = x + dx;
        edge = edge || yy < 0 || yy >= N || xx < 0 || xx >= N || !fill[idx(yy, xx)];
      }
      if (edge) b[idx(y, x)] = 1;
    }
  }
  return b;
}

Scene random_scene(std::uint64_t seed, SceneOptions opts) {
  Rng rng = derive_rng(seed, 0x5ce9e);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto unif = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  Scene scene;
  scene.label = uni(0, kNumClasses - 1);
  if (opts.empty) return scene;

  const int count = uni(1, 3);
  const auto kind = static_cast<ShapeKind>(scene.label);
  int depth = uni(200, 255);
  std::vector<ShapeSpec> near_to_far;
  for (int i = 0; i < count; ++i) {
    ShapeSpec s;
    s.kind = kind;
    switch (kind) {
      case ShapeKind::SmallCircle:
      case ShapeKind::LargeCircle:
        s.radius = kind == ShapeKind::SmallCircle ? uni(3, 5) : uni(6, 9);
        s.cx = uni(s.radius, N - 1 - s.radius);
        s.cy = uni(s.radius, N - 1 - s.radius);
        break;
      case ShapeKind::Square:
        s.w = s.h = uni(6, 12);
        break;
      case ShapeKind::WideRect:
        s.w = uni(10, 16), s.h = uni(4, 7);
        break;
      case ShapeKind::TallRect:
        s.w = uni(4, 7), s.h = uni(10, 16);
        break;
      case ShapeKind::TriangleUp:
      case ShapeKind::TriangleDown:
        s.h = uni(5, 9);
        s.cx = uni(s.h - 1, N - s.h);
        s.y0 = uni(0, N - s.h);
        break;
      case ShapeKind::Diamond:
        s.radius = uni(4, 8);
        s.cx = uni(s.radius, N - 1 - s.radius);
        s.cy = uni(s.radius, N - 1 - s.radius);
        break;
    }
    if (kind == ShapeKind::Square || kind == ShapeKind::WideRect || kind == ShapeKind::TallRect) {
      s.x0 = uni(0, N - s.w);
      s.y0 = uni(0, N - s.h);
    }
    s.fill = saturated_hue(unif(0.0, 360.0));
    s.depth = static_cast<std::uint8_t>(depth);
    depth -= uni(40, 70);
    if (!is_circle(kind)) {
      const double nx = unif(-0.4, 0.4), ny = unif(-0.4, 0.4);
      s.normal = {nx, ny, std::sqrt(1.0 - nx * nx - ny * ny)};
    }
    near_to_far.push_back(s);
  }
  scene.shapes.assign(near_to_far.rbegin(), near_to_far.rend());
  return scene;
}

ConditionSample render_scene(const Scene& scene) {
  ConditionSample out;
  out.label = scene.label;
  out.image = Image(N, N, 3, kFog);
  out.edge = Image(N, N, 1, 0);
  out.depth = Image(N, N, 1, 0);
  out.normal = Image(N, N, 3, 0);
  for (int y = 0; y < N; ++y) {
    for (int x = 0; x < N; ++x) {
      out.normal.at(y, x, 0) = quantize_unit(0.0);
      out.normal.at(y, x, 1) = quantize_unit(0.0);
      out.normal.at(y, x, 2) = quantize_unit(1.0);
    }
  }

  std::vector<int> owner(N * N, -1);
  for (std::size_t si = 0; si < scene.shapes.size(); ++si) {
    const auto fill = rasterize(scene.shapes[si]);
    for (std::size_t p = 0; p < fill.size(); ++p) {
      if (fill[p]) owner[p] = static_cast<int>(si);
    }
  }

  for (std::size_t si = 0; si < scene.shapes.size(); ++si) {
    const ShapeSpec& s = scene.shapes[si];
    const double a = s.depth / 255.0;
    const auto ring = boundary(s);
    for (int y = 0; y < N; ++y) {
      for (int x = 0; x < N; ++x) {
        if (owner[idx(y, x)] != static_cast<int>(si)) continue;
        for (int c = 0; c < 3; ++c) {
          out.image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(kFog + (s.fill[c] - double(kFog)) * a));
        }
        out.depth.at(y, x) = s.depth;
        std::array<double, 3> n = s.normal;
        if (is_circle(s.kind)) {
          const double rr = s.radius + 0.5;
          double nx = (x - s.cx) / rr, ny = (y - s.cy) / rr;
          const double q = nx * nx + ny * ny;
          if (q > 1.0) nx /= std::sqrt(q), ny /= std::sqrt(q);
          n = {nx, ny, std::sqrt(std::max(0.0, 1.0 - nx * nx - ny * ny))};
        }
        for (int c = 0; c < 3; ++c) out.normal.at(y, x, c) = quantize_unit(n[static_cast<std::size_t>(c)]);
        if (ring[idx(y, x)]) out.edge.at(y, x) = 255;
      }
    }
  }
  out.hed = hed_from_edges(out.edge);
  out.sketch = sketch_from_edges(out.edge);
  return out;
}

}  // namespace scalar::data
