#include "scalar/sampler/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace scalar {

void GuidanceConfig::validate(int vocab) const {
  if (scale < 0) throw std::invalid_argument("guidance scale must be >= 0");
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be > 0");
  if (top_k < 1 || top_k > vocab) {
    throw std::invalid_argument("top-k " + std::to_string(top_k) + " outside [1, " + std::to_string(vocab) + "]");
  }
}

template <class T>
Tensor<T> cfg_mix(const Tensor<T>& cond, const Tensor<T>& uncond, double s) {
  if (cond.shape() != uncond.shape()) {
    throw ShapeError("cfg_mix: " + shape_str(cond.shape()) + " vs " + shape_str(uncond.shape()));
  }
  // Written as (1 - s) u + s c so that s = 0 and s = 1 reproduce u and c exactly.
  Tensor<T> out(cond.shape());
  const T st = static_cast<T>(s), su = static_cast<T>(1.0 - s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = su * uncond[i] + st * cond[i];
  return out;
}

template <class T>
std::int32_t sample_top_k(std::span<const T> logits, int top_k, double temperature, Rng& rng) {
  const int V = static_cast<int>(logits.size());
  std::vector<std::int32_t> idx(static_cast<std::size_t>(V));
  std::iota(idx.begin(), idx.end(), 0);
  const int k = std::min(top_k, V);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](std::int32_t a, std::int32_t b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)] ||
           (logits[static_cast<std::size_t>(a)] == logits[static_cast<std::size_t>(b)] && a < b);
  });
  const double top = static_cast<double>(logits[static_cast<std::size_t>(idx[0])]);
  std::vector<double> p(static_cast<std::size_t>(k));
  double z = 0;
  for (int i = 0; i < k; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp((static_cast<double>(logits[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]) - top) / temperature);
    z += p[static_cast<std::size_t>(i)];
  }
  double u = std::uniform_real_distribution<double>(0.0, z)(rng);
  for (int i = 0; i < k; ++i) {
    u -= p[static_cast<std::size_t>(i)];
    if (u < 0) return idx[static_cast<std::size_t>(i)];
  }
  return idx[static_cast<std::size_t>(k - 1)];
}

InpaintMask full_mask(const ScaleSchedule& schedule, bool value) {
  InpaintMask m;
  for (int k = 0; k < schedule.num_scales(); ++k) m.emplace_back(static_cast<std::size_t>(schedule.tokens(k)), value);
  return m;
}

InpaintMask mask_from_image(const data::Image& pixels, const ScaleSchedule& schedule) {
  InpaintMask m;
  for (int k = 0; k < schedule.num_scales(); ++k) {
    const int h = schedule.height(k), w = schedule.width(k);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(h * w), 0);
    for (int y = 0; y < pixels.height; ++y)
      for (int x = 0; x < pixels.width; ++x)
        if (pixels.at(y, x) != 0) row[static_cast<std::size_t>((y * h / pixels.height) * w + x * w / pixels.width)] = 1;
    m.push_back(std::move(row));
  }
  return m;
}

namespace {

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
  return h;
}

std::uint64_t class_tag(const std::vector<ClassMix>& classes) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& c : classes)
    for (const auto& [l, w] : c.weights) h = fnv(fnv(h, &l, sizeof l), &w, sizeof w);
  return h;
}

template <class T>
Generation<T> run(const ModelView<T>& model, const std::vector<ClassMix>& classes, const std::optional<Tensor<T>>& control,
                  const std::vector<InpaintMask>* masks, const std::vector<TokenPyramid>* truth,
                  const GuidanceConfig& guidance) {
  if (!model.tokenizer || !model.decoder) throw std::invalid_argument("generation needs a tokenizer and a decoder");
  const auto& tok = *model.tokenizer;
  const auto& dec = *model.decoder;
  const auto& sched = dec.config().schedule;
  const int V = dec.config().vocab, C = tok.config().code_dim, S = tok.latent_size();
  guidance.validate(V);
  const auto B = static_cast<std::int64_t>(classes.size());
  if (B == 0) throw std::invalid_argument("generation needs at least one class condition");
  if (sched.height(sched.num_scales() - 1) != S) throw std::invalid_argument("schedule does not end at the latent grid");

  std::vector<Var<T>> resized;
  std::uint64_t tag = class_tag(classes);
  if (control) {
    if (!model.bank) throw std::invalid_argument("control features given to a model without a projection bank");
    if (control->rank() != 4 || control->dim(0) != B) {
      throw ShapeError("control features " + shape_str(control->shape()) + " do not match batch " + std::to_string(B));
    }
    resized = resize_per_scale(Var<T>::constant(*control), sched);
    tag = fnv(tag, control->data(), control->size() * sizeof(T));
  }
  if (masks) {
    if (static_cast<std::int64_t>(masks->size()) != B || static_cast<std::int64_t>(truth->size()) != B) {
      throw std::invalid_argument("inpainting needs one mask and one ground-truth pyramid per sample");
    }
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& m = (*masks)[static_cast<std::size_t>(b)];
      tok.validate((*truth)[static_cast<std::size_t>(b)], sched);
      bool ok = static_cast<int>(m.size()) == sched.num_scales();
      for (int k = 0; ok && k < sched.num_scales(); ++k) ok = static_cast<int>(m[static_cast<std::size_t>(k)].size()) == sched.tokens(k);
      if (!ok) throw std::invalid_argument("inpaint mask does not match the scale schedule");
    }
  }

  NoGradGuard guard;
  const std::vector<ClassMix> null_classes(static_cast<std::size_t>(B), ClassMix::label(dec.null_class()));
  auto cond_cache = dec.new_cache(B, tag);
  auto uncond_cache = dec.new_cache(B, class_tag(null_classes));
  std::vector<Rng> rngs;
  for (std::int64_t b = 0; b < B; ++b) rngs.push_back(derive_rng(guidance.seed, guidance.first_stream + static_cast<std::uint64_t>(b)));

  Generation<T> out;
  out.maps.assign(static_cast<std::size_t>(B), TokenPyramid{});
  Tensor<T> acc({B, S, S, C});
  Tensor<T> inputs;
  for (int k = 0; k < sched.num_scales(); ++k) {
    const int n = sched.tokens(k), h = sched.height(k), w = sched.width(k);
    const auto inj = control ? model.bank->step_injections(resized, k) : Injections<T>{};
    const auto cond = dec.forward_step(dec.embed_scale(k, classes, inputs), k, cond_cache, tag, inj).value();
    const auto uncond =
        dec.forward_step(dec.embed_scale(k, null_classes, inputs), k, uncond_cache, class_tag(null_classes)).value();
    const auto mixed = cfg_mix(cond, uncond, guidance.scale);

    std::vector<std::int32_t> chosen(static_cast<std::size_t>(B * n));
    for (std::int64_t b = 0; b < B; ++b) {
      auto& map = out.maps[static_cast<std::size_t>(b)].emplace_back();
      map.height = h, map.width = w;
      for (int i = 0; i < n; ++i) {
        const std::size_t row = static_cast<std::size_t>(b * n + i);
        std::int32_t t = sample_top_k(std::span<const T>(mixed.data() + row * V, static_cast<std::size_t>(V)),
                                      guidance.top_k, guidance.temperature, rngs[static_cast<std::size_t>(b)]);
        if (masks && !(*masks)[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]) {
          t = (*truth)[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)].indices[static_cast<std::size_t>(i)];
        }
        chosen[row] = t;
        map.indices.push_back(t);
      }
    }
    auto grid = ops::reshape(ops::embedding(tok.codebook(), std::span<const std::int32_t>(chosen)), {B, h, w, C});
    const auto up = bilinear_resize(grid.value(), S, S);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += up[i];
    if (k + 1 < sched.num_scales()) {
      inputs = bilinear_resize(acc, sched.height(k + 1), sched.width(k + 1))
                   .reshaped({B, sched.tokens(k + 1), C});
    }
  }
  out.images = tok.decode(out.maps, sched);
  return out;
}

}  // namespace

template <class T>
Generation<T> generate(const ModelView<T>& model, const std::vector<ClassMix>& classes,
                       const std::optional<Tensor<T>>& control, const GuidanceConfig& guidance) {
  return run<T>(model, classes, control, nullptr, nullptr, guidance);
}

template <class T>
Generation<T> inpaint(const ModelView<T>& model, const std::vector<ClassMix>& classes,
                      const std::optional<Tensor<T>>& control, const std::vector<InpaintMask>& masks,
                      const std::vector<TokenPyramid>& truth, const GuidanceConfig& guidance) {
  return run<T>(model, classes, control, &masks, &truth, guidance);
}

template <class T>
Tensor<T> control_features(const FeatureExtractor<T>& encoder, const AlignmentHead<T>* align,
                           const std::vector<const data::Image*>& controls) {
  auto f = encoder(control_images_to_tensor<T>(controls));
  if (!align) return f;
  NoGradGuard guard;
  return align->apply(Var<T>::constant(std::move(f))).value();
}

template <class T>
Generation<T> hybrid_generate(const ModelView<T>& model, const HybridSpec& spec, const FeatureExtractor<T>& encoder,
                              const AlignmentHead<T>& align, const GuidanceConfig& guidance) {
  auto fused = fuse_hybrid(spec, encoder, align);
  return generate<T>(model, {fused.classes}, std::move(fused.features), guidance);
}

#define SCALAR_INSTANTIATE_SAMPLER(T)                                                                              \
  template Tensor<T> cfg_mix(const Tensor<T>&, const Tensor<T>&, double);                                          \
  template std::int32_t sample_top_k(std::span<const T>, int, double, Rng&);                                       \
  template Generation<T> generate(const ModelView<T>&, const std::vector<ClassMix>&, const std::optional<Tensor<T>>&, \
                                  const GuidanceConfig&);                                                          \
  template Generation<T> inpaint(const ModelView<T>&, const std::vector<ClassMix>&, const std::optional<Tensor<T>>&, \
                                 const std::vector<InpaintMask>&, const std::vector<TokenPyramid>&,               \
                                 const GuidanceConfig&);                                                           \
  template Generation<T> hybrid_generate(const ModelView<T>&, const HybridSpec&, const FeatureExtractor<T>&,       \
                                         const AlignmentHead<T>&, const GuidanceConfig&);                          \
  template Tensor<T> control_features(const FeatureExtractor<T>&, const AlignmentHead<T>*,                          \
                                      const std::vector<const data::Image*>&);

SCALAR_INSTANTIATE_SAMPLER(float)
SCALAR_INSTANTIATE_SAMPLER(double)

}  // namespace scalar
