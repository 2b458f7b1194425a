#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "scalar/data/image.hpp"
#include "scalar/numerics/ops.hpp"
#include "scalar/numerics/params.hpp"
#include "scalar/numerics/random.hpp"

namespace scalar {

// Ordered (h_k, w_k) grid sizes, coarse to fine.
class ScaleSchedule {
 public:
  ScaleSchedule() = default;
  explicit ScaleSchedule(std::vector<std::pair<int, int>> scales);
  // Square schedule (1,2,...): each entry is a side length.
  static ScaleSchedule square(const std::vector<int>& sides);

  int num_scales() const { return static_cast<int>(scales_.size()); }
  // 0-based k.
  int height(int k) const { return scales_.at(static_cast<std::size_t>(k)).first; }
  int width(int k) const { return scales_.at(static_cast<std::size_t>(k)).second; }
  int tokens(int k) const { return height(k) * width(k); }
  int offset(int k) const { return offsets_.at(static_cast<std::size_t>(k)); }
  int total_tokens() const { return offsets_.back(); }
  const std::vector<std::pair<int, int>>& scales() const { return scales_; }
  std::vector<int> sides() const;
  // Scale index of every flattened sequence position.
  std::vector<int> scale_of_position() const;

  bool operator==(const ScaleSchedule&) const = default;

 private:
  std::vector<std::pair<int, int>> scales_;
  std::vector<int> offsets_{0};
};

// Codebook indices of one scale, row-major h x w.
struct TokenMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> indices;
  bool operator==(const TokenMap&) const = default;
};

using TokenPyramid = std::vector<TokenMap>;  // one map per scale

struct TokenizerConfig {
  int image_size = 32;
  int vocab = 256;
  int code_dim = 32;
  std::vector<int> channels{32, 64, 64};  // one stride-2 block each
  double codebook_weight = 1.0;
  double commitment_weight = 0.25;
};

template <class T>
struct VqLosses {
  Var<T> reconstruction;
  Var<T> codebook;
  Var<T> commitment;
  Var<T> total;
  std::vector<std::int32_t> used_codes;  // every index chosen in the batch
};

// Multi-scale residual quantizer with one codebook shared by every scale,
// and conv encoder/decoder around it (8x spatial reduction).
template <class T>
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(TokenizerConfig config, Rng& rng);

  const TokenizerConfig& config() const { return config_; }
  int latent_size() const { return config_.image_size >> config_.channels.size(); }
  ParamList<T> params() const;

  Var<T>& codebook() { return codebook_; }
  const Var<T>& codebook() const { return codebook_; }

  // Images [B, S, S, 3] in [-1, 1] -> latent [B, s, s, C].
  Var<T> encode_latent(const Var<T>& images) const;
  Var<T> decode_latent(const Var<T>& latent) const;

  // Nearest codebook row of every vector in [n, C]; ties go to the lower index.
  std::vector<std::int32_t> nearest_codes(const Tensor<T>& vectors) const;

  struct Quantized {
    std::vector<TokenPyramid> maps;  // per batch element
    Var<T> reconstruction;           // sum of upsampled lookups, differentiable in the codebook
    std::vector<Tensor<T>> prefixes; // cumulative latent after 1..K scales
  };
  Quantized quantize(const Var<T>& latent, const ScaleSchedule& schedule) const;

  std::vector<TokenPyramid> encode(const Tensor<T>& images, const ScaleSchedule& schedule) const;
  // Cumulative latent of scales [0, upto) for one pyramid: [s, s, C].
  Tensor<T> latent_from_tokens(const TokenPyramid& maps, const ScaleSchedule& schedule, int upto) const;
  // Decodes pyramids to images [B, S, S, 3] in [-1, 1].
  Tensor<T> decode(const std::vector<TokenPyramid>& maps, const ScaleSchedule& schedule) const;

  VqLosses<T> losses(const Tensor<T>& images, const ScaleSchedule& schedule) const;

  void validate(const TokenPyramid& maps, const ScaleSchedule& schedule) const;

 private:
  TokenizerConfig config_;
  std::vector<Var<T>> enc_w_, enc_b_, dec_w_, dec_b_;
  Var<T> codebook_;
};

// uint8 HWC images -> [B, S, S, C] in [-1, 1] and back.
template <class T>
Tensor<T> images_to_tensor(const std::vector<const data::Image*>& images);
template <class T>
data::Image tensor_to_image(const Tensor<T>& batch, std::int64_t index);

extern template class Tokenizer<float>;
extern template class Tokenizer<double>;

}  // namespace scalar
