#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scalar/backbone/backbone.hpp"
#include "scalar/data/image.hpp"

namespace scalar {

struct EncoderConfig {
  int image_size = 32;
  int patch = 8;
  int depth = 12;
  int width = 64;  // C_enc
  int heads = 4;
  std::uint64_t seed = 0x5eed;
};

// Default tap set {d-1, d-1-q, d-1-2q, d-1-3q} with q = floor(d/4), ascending.
std::vector<int> default_taps(int depth);

// Frozen patch-embedding transformer. Weights are plain tensors, so nothing
// downstream can update them.
template <class T>
class ControlEncoder {
 public:
  ControlEncoder() = default;
  explicit ControlEncoder(EncoderConfig config, std::vector<int> taps = {});

  const EncoderConfig& config() const { return config_; }
  const std::vector<int>& taps() const { return taps_; }
  int grid() const { return config_.image_size / config_.patch; }
  int feature_dim() const { return static_cast<int>(taps_.size()) * config_.width; }

  // Images [B, S, S, 3] in [-1, 1] -> [B, g, g, |I| * C_enc], taps shallow to deep.
  Tensor<T> features(const Tensor<T>& images) const;
  // Token grid after the patch embedding, before any block: [B, g, g, C_enc].
  Tensor<T> embed(const Tensor<T>& images) const;

  // Turns every block into the identity (residual branches zeroed).
  void make_blocks_identity();
  // Stable digest of every weight byte.
  std::uint64_t weight_digest() const;

 private:
  struct Block {
    Tensor<T> ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  EncoderConfig config_;
  std::vector<int> taps_;
  Tensor<T> patch_w_, patch_b_, pos_;
  std::vector<Block> blocks_;
};

// Any frozen feature extractor: images [B, S, S, 3] -> [B, H_e, W_e, F].
template <class T>
using FeatureExtractor = std::function<Tensor<T>(const Tensor<T>&)>;

template <class T>
FeatureExtractor<T> as_extractor(const ControlEncoder<T>& enc) {
  return [&enc](const Tensor<T>& x) { return enc.features(x); };
}

// Control images (1 or 3 channels) -> [B, S, S, 3] in [-1, 1].
template <class T>
Tensor<T> control_images_to_tensor(const std::vector<const data::Image*>& images);

enum class Sharing { PerScaleLayer, PerScale, PerLayer };
enum class Structure { Linear, LinearLite };

std::string to_string(Sharing s);
std::string to_string(Structure s);
Sharing parse_sharing(const std::string& s);
Structure parse_structure(const std::string& s);

// Named injection sets over 1-based layers: "all", "first", "alt".
std::vector<int> injection_set(const std::string& name, int layers);

struct ProjectionSpec {
  Sharing sharing = Sharing::PerScaleLayer;
  Structure structure = Structure::Linear;
  int bottleneck = 64;
  std::vector<int> layers;  // S, 1-based, ascending

  void validate(int num_layers, int feature_dim, int d_model) const;
  int num_blocks(int num_scales) const;
};

std::int64_t projection_param_count(const ProjectionSpec& spec, const ScaleSchedule& schedule, int d_model,
                                    int c_enc);

// F_c resized once per scale: [B, h_k, w_k, F] for every k.
template <class T>
std::vector<Var<T>> resize_per_scale(const Var<T>& features, const ScaleSchedule& schedule);

template <class T>
class ProjectionBank {
 public:
  ProjectionBank() = default;
  ProjectionBank(ProjectionSpec spec, ScaleSchedule schedule, int feature_dim, int d_model, Rng& rng);

  const ProjectionSpec& spec() const { return spec_; }
  int num_blocks() const { return static_cast<int>(w1_.size()); }
  bool injects(int layer) const;
  // Block used for 0-based scale k and 1-based layer l; l outside S is rejected.
  int block_index(int k, int layer) const;
  ParamList<T> params() const;

  // C_{k,l}: [B * h_k * w_k, d].
  Var<T> project(const std::vector<Var<T>>& resized, int k, int layer) const;
  // Additive terms for every injected layer over the whole sequence ([B * T, d]).
  Injections<T> injections(const std::vector<Var<T>>& resized) const;
  // Additive terms for scale k only.
  Injections<T> step_injections(const std::vector<Var<T>>& resized, int k) const;

 private:
  ProjectionSpec spec_;
  ScaleSchedule schedule_;
  int d_model_ = 0;
  std::vector<Var<T>> w1_, b1_, w2_, b2_;  // w2/b2 only for LinearLite
};

// Elementwise additive injection with a shape check.
template <class T>
Var<T> inject(const Var<T>& hidden, const Var<T>& control);

extern template class ControlEncoder<float>;
extern template class ControlEncoder<double>;
extern template class ProjectionBank<float>;
extern template class ProjectionBank<double>;

}  // namespace scalar
