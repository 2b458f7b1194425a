#include "scalar/data/extract.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace scalar::data {

namespace {

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double z = 0;
  for (int i = -radius; i <= radius; ++i) z += (k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= z;
  return k;
}

// Separable zero-padded blur of a single-channel image, in double.
std::vector<double> blur(const Image& img, double sigma, int radius) {
  const auto k = gaussian_kernel(sigma, radius);
  const int H = img.height, W = img.width;
  std::vector<double> tmp(static_cast<std::size_t>(H) * W, 0.0), out(tmp.size(), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < W) acc += k[static_cast<std::size_t>(i + radius)] * img.at(y, xx);
      }
      tmp[static_cast<std::size_t>(y) * W + x] = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < H) acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy) * W + x];
      }
      out[static_cast<std::size_t>(y) * W + x] = acc;
    }
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255)); }

}  // namespace

Image hed_from_edges(const Image& edges) {
  const auto b = blur(edges, 1.0, 3);
  Image out(edges.height, edges.width, 1);
  for (std::size_t i = 0; i < b.size(); ++i) out.pixels[i] = to_byte(b[i]);
  return out;
}

Image sketch_from_edges(const Image& edges) {
  Image out(edges.height, edges.width, 1);
  for (int y = 0; y < edges.height; ++y)
    for (int x = 0; x < edges.width; ++x) {
      bool on = false;
      for (int dy = -1; dy <= 1 && !on; ++dy)
        for (int dx = -1; dx <= 1 && !on; ++dx) on = edges.inside(y + dy, x + dx) && edges.at(y + dy, x + dx) != 0;
      out.at(y, x) = on ? 255 : 0;
    }
  return out;
}

int otsu_threshold(const std::array<std::uint64_t, 256>& histogram) {
  double total = 0, sum_all = 0;
  for (int i = 0; i < 256; ++i) {
    total += static_cast<double>(histogram[static_cast<std::size_t>(i)]);
    sum_all += i * static_cast<double>(histogram[static_cast<std::size_t>(i)]);
  }
  double w0 = 0, sum0 = 0, best = -1;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += static_cast<double>(histogram[static_cast<std::size_t>(t)]);
    sum0 += t * static_cast<double>(histogram[static_cast<std::size_t>(t)]);
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) best = between, best_t = t;
  }
  return best_t;
}

Image sobel_otsu_edges(const Image& rgb) {
  const int H = rgb.height, W = rgb.width;
  std::vector<double> mag(static_cast<std::size_t>(H) * W, 0.0);
  auto px = [&](int y, int x, int c) {
    return static_cast<double>(rgb.at(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1), c));
  };
  double peak = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int c = 0; c < rgb.channels; ++c) {
        const double gx = (px(y - 1, x + 1, c) + 2 * px(y, x + 1, c) + px(y + 1, x + 1, c)) -
                          (px(y - 1, x - 1, c) + 2 * px(y, x - 1, c) + px(y + 1, x - 1, c));
        const double gy = (px(y + 1, x - 1, c) + 2 * px(y + 1, x, c) + px(y + 1, x + 1, c)) -
                          (px(y - 1, x - 1, c) + 2 * px(y - 1, x, c) + px(y - 1, x + 1, c));
        acc += gx * gx + gy * gy;
      }
      mag[static_cast<std::size_t>(y) * W + x] = std::sqrt(acc);
      peak = std::max(peak, std::sqrt(acc));
    }
  Image out(H, W, 1, 0);
  if (peak <= 0) return out;
  std::vector<int> bins(mag.size());
  std::array<std::uint64_t, 256> hist{};
  for (std::size_t i = 0; i < mag.size(); ++i) {
    bins[i] = static_cast<int>(std::lround(255.0 * mag[i] / peak));
    hist[static_cast<std::size_t>(bins[i])]++;
  }
  const int t = otsu_threshold(hist);
  for (std::size_t i = 0; i < mag.size(); ++i) out.pixels[i] = bins[i] > t ? 255 : 0;
  return out;
}

Image depth_from_chroma(const Image& rgb) {
  Image out(rgb.height, rgb.width, 1);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const auto r = rgb.at(y, x, 0), g = rgb.at(y, x, 1), b = rgb.at(y, x, 2);
      out.at(y, x) = static_cast<std::uint8_t>(std::max({r, g, b}) - std::min({r, g, b}));
    }
  return out;
}

Image normals_from_depth(const Image& depth) {
  constexpr double kRelief = 8.0 / 255.0;  // height units per depth level
  const auto h = blur(depth, 1.0, 3);
  const int H = depth.height, W = depth.width;
  auto at = [&](int y, int x) { return h[static_cast<std::size_t>(std::clamp(y, 0, H - 1)) * W + std::clamp(x, 0, W - 1)]; };
  Image out(H, W, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double gx = 0.5 * (at(y, x + 1) - at(y, x - 1)) * kRelief;
      const double gy = 0.5 * (at(y + 1, x) - at(y - 1, x)) * kRelief;
      const double z = 1.0 / std::sqrt(gx * gx + gy * gy + 1.0);
      const double n[3] = {-gx * z, -gy * z, z};
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte((n[c] + 1.0) * 127.5);
    }
  return out;
}

Image reextract(const Image& rgb, Modality m) {
  switch (m) {
    case Modality::Edge: return sobel_otsu_edges(rgb);
    case Modality::Sketch: return sketch_from_edges(sobel_otsu_edges(rgb));
    case Modality::Hed: return hed_from_edges(sobel_otsu_edges(rgb));
    case Modality::Depth: return depth_from_chroma(rgb);
    case Modality::Normal: return normals_from_depth(depth_from_chroma(rgb));
  }
  return {};
}

}  // namespace scalar::data
