#pragma once

#include <optional>

#include "scalar/unify/unify.hpp"

namespace scalar {

struct GuidanceConfig {
  double scale = 4.0;
  int top_k = 64;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Sample b of a batch draws from stream first_stream + b.
  std::uint64_t first_stream = 0;

  void validate(int vocab) const;
};

// uncond + s * (cond - uncond), elementwise.
template <class T>
Tensor<T> cfg_mix(const Tensor<T>& cond, const Tensor<T>& uncond, double s);

// Draws one index from softmax(logits / temperature) restricted to the top_k
// largest entries (ties broken toward the lower index).
template <class T>
std::int32_t sample_top_k(std::span<const T> logits, int top_k, double temperature, Rng& rng);

// Non-owning view of the pieces generation needs. `bank` null = class-only model.
template <class T>
struct ModelView {
  const Tokenizer<T>* tokenizer = nullptr;
  const Decoder<T>* decoder = nullptr;
  const ProjectionBank<T>* bank = nullptr;
};

// Per-scale generate flags (true = sample, false = keep ground truth).
using InpaintMask = std::vector<std::vector<std::uint8_t>>;

InpaintMask full_mask(const ScaleSchedule& schedule, bool value);
// Token-level mask from a pixel mask (nonzero = generate): a token is generated
// when any pixel of its footprint is.
InpaintMask mask_from_image(const data::Image& pixels, const ScaleSchedule& schedule);

template <class T>
struct Generation {
  std::vector<TokenPyramid> maps;
  Tensor<T> images;  // [B, S, S, 3] in [-1, 1]
};

// Control features [B, g, g, F] (aligned if an alignment head is used), or
// nullopt for class-only generation. Sample b uses rng stream (seed, b).
template <class T>
Generation<T> generate(const ModelView<T>& model, const std::vector<ClassMix>& classes,
                       const std::optional<Tensor<T>>& control, const GuidanceConfig& guidance);

// As generate, but tokens where the mask is false are taken from `truth`.
template <class T>
Generation<T> inpaint(const ModelView<T>& model, const std::vector<ClassMix>& classes,
                      const std::optional<Tensor<T>>& control, const std::vector<InpaintMask>& masks,
                      const std::vector<TokenPyramid>& truth, const GuidanceConfig& guidance);

template <class T>
Generation<T> hybrid_generate(const ModelView<T>& model, const HybridSpec& spec, const FeatureExtractor<T>& encoder,
                              const AlignmentHead<T>& align, const GuidanceConfig& guidance);

// Encoder features of control images, passed through `align` when given.
template <class T>
Tensor<T> control_features(const FeatureExtractor<T>& encoder, const AlignmentHead<T>* align,
                           const std::vector<const data::Image*>& controls);

}  // namespace scalar
