#pragma once

#include <array>
#include <cstdint>

#include "scalar/data/image.hpp"
#include "scalar/data/modality.hpp"

// Analytic condition extractors. Dataset generation derives hed/sketch from
// exact edges; evaluation re-extracts every condition from generated RGB.
namespace scalar::data {

// Gaussian blur (sigma 1, radius 3, zero padding) of a {0,255} edge map.
Image hed_from_edges(const Image& edges);
// 3x3 dilation of a {0,255} map.
Image sketch_from_edges(const Image& edges);

// Sobel gradient magnitude over RGB, thresholded with Otsu's method.
Image sobel_otsu_edges(const Image& rgb);
// Otsu threshold of an 8-bit histogram (the first maximizer of between-class variance).
int otsu_threshold(const std::array<std::uint64_t, 256>& histogram);
// Fog-blend depth cue: chroma (max - min over RGB).
Image depth_from_chroma(const Image& rgb);
// Normals of the blurred depth proxy treated as a height field.
Image normals_from_depth(const Image& depth);

Image reextract(const Image& rgb, Modality m);

}  // namespace scalar::data
