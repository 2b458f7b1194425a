#pragma once

#include <span>

#include "scalar/control/control.hpp"
#include "scalar/data/modality.hpp"

namespace scalar {

// Pointwise linear map on feature grids, initialized to the identity.
template <class T>
class AlignmentHead {
 public:
  AlignmentHead() = default;
  explicit AlignmentHead(int dim);

  int dim() const { return static_cast<int>(w_.dim(0)); }
  ParamList<T> params() const { return {{"align.w", w_}, {"align.b", b_}}; }
  // [B, H, W, F] -> [B, H, W, F].
  Var<T> apply(const Var<T>& features) const;

 private:
  Var<T> w_, b_;
};

// Mean squared difference over grid positions and channels.
template <class T>
Var<T> align_loss(const Var<T>& aligned, const Tensor<T>& image_features);

// ce + lambda * align; lambda == 0 returns `ce` itself.
template <class T>
Var<T> total_loss(const Var<T>& ce, const Var<T>& align, double lambda);

using data::Modality;

Modality sample_modality(Rng& rng, std::span<const Modality> allowed = data::kAllModalities);

struct HybridInput {
  Modality modality;
  const data::Image* control = nullptr;
  int label = 0;
};

struct HybridSpec {
  HybridInput a, b;
  double weight_a = 0.5;
  double weight_b = 0.5;
};

template <class T>
struct FusedCondition {
  Tensor<T> features;  // [1, H, W, F], already aligned
  ClassMix classes;
};

template <class T>
FusedCondition<T> fuse_hybrid(const HybridSpec& spec, const FeatureExtractor<T>& encoder, const AlignmentHead<T>& align);

extern template class AlignmentHead<float>;
extern template class AlignmentHead<double>;

}  // namespace scalar
