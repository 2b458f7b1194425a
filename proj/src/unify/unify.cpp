#include "scalar/unify/unify.hpp"

#include <cmath>
#include <stdexcept>

namespace scalar {

template <class T>
AlignmentHead<T>::AlignmentHead(int dim) {
  Tensor<T> eye({dim, dim});
  for (int i = 0; i < dim; ++i) eye[static_cast<std::size_t>(i) * dim + i] = T(1);
  w_ = Var<T>::parameter(std::move(eye));
  b_ = Var<T>::parameter(Tensor<T>({dim}));
}

template <class T>
Var<T> AlignmentHead<T>::apply(const Var<T>& features) const {
  if (features.shape().empty() || features.shape().back() != dim()) {
    throw ShapeError("alignment head: features " + shape_str(features.shape()) + " vs width " + std::to_string(dim()));
  }
  return ops::linear(features, w_, b_);
}

template <class T>
Var<T> align_loss(const Var<T>& aligned, const Tensor<T>& image_features) {
  if (aligned.shape() != image_features.shape()) {
    throw ShapeError("align_loss: control grid " + shape_str(aligned.shape()) + " vs image grid " +
                     shape_str(image_features.shape()));
  }
  return ops::mse(aligned, Var<T>::constant(image_features));
}

template <class T>
Var<T> total_loss(const Var<T>& ce, const Var<T>& align, double lambda) {
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  if (lambda == 0 || !align.defined()) return ce;
  return ops::add(ce, ops::scale(align, static_cast<T>(lambda)));
}

Modality sample_modality(Rng& rng, std::span<const Modality> allowed) {
  if (allowed.empty()) throw std::invalid_argument("no modalities to sample from");
  std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
  return allowed[pick(rng)];
}

template <class T>
FusedCondition<T> fuse_hybrid(const HybridSpec& spec, const FeatureExtractor<T>& encoder, const AlignmentHead<T>& align) {
  if (spec.a.modality == spec.b.modality) throw std::invalid_argument("hybrid inputs must use distinct modalities");
  if (!spec.a.control || !spec.b.control) throw std::invalid_argument("hybrid input without a control image");
  if (spec.weight_a < 0 || spec.weight_b < 0 || std::abs(spec.weight_a + spec.weight_b - 1.0) > 1e-9) {
    throw std::invalid_argument("fusion weights must be non-negative and sum to 1");
  }
  NoGradGuard guard;
  auto feat = [&](const HybridInput& in) {
    return align.apply(Var<T>::constant(encoder(control_images_to_tensor<T>({in.control})))).value();
  };
  const auto fa = feat(spec.a), fb = feat(spec.b);
  FusedCondition<T> out{Tensor<T>(fa.shape()), {}};
  for (std::size_t i = 0; i < fa.size(); ++i)
    out.features[i] = static_cast<T>(spec.weight_a) * fa[i] + static_cast<T>(spec.weight_b) * fb[i];
  // Class embeddings follow the fusion weights (an even mean by default).
  out.classes.weights = {{spec.a.label, spec.weight_a}, {spec.b.label, spec.weight_b}};
  return out;
}

template class AlignmentHead<float>;
template class AlignmentHead<double>;
template Var<float> align_loss(const Var<float>&, const Tensor<float>&);
template Var<double> align_loss(const Var<double>&, const Tensor<double>&);
template Var<float> total_loss(const Var<float>&, const Var<float>&, double);
template Var<double> total_loss(const Var<double>&, const Var<double>&, double);
template FusedCondition<float> fuse_hybrid(const HybridSpec&, const FeatureExtractor<float>&, const AlignmentHead<float>&);
template FusedCondition<double> fuse_hybrid(const HybridSpec&, const FeatureExtractor<double>&,
                                            const AlignmentHead<double>&);

}  // namespace scalar
