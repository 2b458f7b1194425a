#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scalar/data/image.hpp"
#include "scalar/data/modality.hpp"

namespace scalar::data {

inline constexpr int kImageSize = 32;
inline constexpr int kNumClasses = 8;
inline constexpr std::uint8_t kFog = 128;

enum class ShapeKind { SmallCircle, LargeCircle, Square, WideRect, TallRect, TriangleUp, TriangleDown, Diamond };

const char* class_name(int label);

// Integer-parameterized shape. Circles and diamonds use (cx, cy, radius);
// rectangles use (x0, y0, w, h); triangles use apex (cx, y0) and height h.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Square;
  int cx = 0, cy = 0, radius = 0;
  int x0 = 0, y0 = 0, w = 0, h = 0;
  std::array<std::uint8_t, 3> fill{255, 0, 0};
  std::uint8_t depth = 255;        // near = bright
  std::array<double, 3> normal{0, 0, 1};  // face normal for polygons
};

// Shapes are stored far to near; later shapes occlude earlier ones.
struct Scene {
  int label = 0;
  std::vector<ShapeSpec> shapes;
};

struct ConditionSample {
  int label = 0;
  Image image;   // 3 channels
  Image edge;    // 1 channel, {0, 255}
  Image depth;   // 1 channel
  Image normal;  // 3 channels, (n + 1) * 127.5 rounded
  Image hed;     // 1 channel
  Image sketch;  // 1 channel, {0, 255}

  const Image& condition(Modality m) const;
  bool operator==(const ConditionSample&) const = default;
};

struct SceneOptions {
  bool empty = false;
};

Scene random_scene(std::uint64_t seed, SceneOptions opts = {});
ConditionSample render_scene(const Scene& scene);
inline ConditionSample gen_scene(std::uint64_t seed, SceneOptions opts = {}) {
  return render_scene(random_scene(seed, opts));
}

// Pixel coverage of one shape, row-major, size kImageSize^2.
std::vector<std::uint8_t> rasterize(const ShapeSpec& s);
// Boundary pixels of one shape (the midpoint ring for circles, the inner
// 4-neighbour boundary for polygons).
std::vector<std::uint8_t> boundary(const ShapeSpec& s);

}  // namespace scalar::data
