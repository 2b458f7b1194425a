#include "scalar/control/control.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace scalar {

std::vector<int> default_taps(int depth) {
  if (depth < 4) throw std::invalid_argument("encoder depth " + std::to_string(depth) + " too small for 4 taps");
  const int q = depth / 4;
  std::vector<int> taps;
  for (int k = 3; k >= 0; --k) taps.push_back(depth - 1 - k * q);
  return taps;
}

template <class T>
ControlEncoder<T>::ControlEncoder(EncoderConfig config, std::vector<int> taps)
    : config_(config), taps_(taps.empty() ? default_taps(config.depth) : std::move(taps)) {
  if (config_.patch < 1 || config_.image_size % config_.patch != 0) {
    throw std::invalid_argument("encoder patch size must divide the image size");
  }
  if (config_.width % config_.heads != 0) throw std::invalid_argument("encoder width not divisible by heads");
  for (int t : taps_) {
    if (t < 0 || t >= config_.depth) {
      throw std::out_of_range("tap index " + std::to_string(t) + " outside encoder depth " + std::to_string(config_.depth));
    }
  }
  std::sort(taps_.begin(), taps_.end());
  Rng rng = derive_rng(config_.seed, 0xe4c0de);
  const int C = config_.width, p = config_.patch, g = grid();
  const double res = 1.0 / std::sqrt(2.0 * config_.depth);
  patch_w_ = randn<T>({p, p, 3, C}, rng, 1.0 / std::sqrt(p * p * 3.0));
  patch_b_ = Tensor<T>({C});
  pos_ = randn<T>({g * g, C}, rng, 0.1);
  for (int l = 0; l < config_.depth; ++l) {
    Block b;
    b.ln1_g = Tensor<T>::full({C}, T(1)), b.ln1_b = Tensor<T>({C});
    b.wq = randn<T>({C, C}, rng, 1.0 / std::sqrt(C));
    b.wk = randn<T>({C, C}, rng, 1.0 / std::sqrt(C));
    b.wv = randn<T>({C, C}, rng, 1.0 / std::sqrt(C));
    b.wo = randn<T>({C, C}, rng, res / std::sqrt(C));
    b.ln2_g = Tensor<T>::full({C}, T(1)), b.ln2_b = Tensor<T>({C});
    b.w1 = randn<T>({C, 2 * C}, rng, 1.0 / std::sqrt(C)), b.b1 = Tensor<T>({2 * C});
    b.w2 = randn<T>({2 * C, C}, rng, res / std::sqrt(2.0 * C)), b.b2 = Tensor<T>({C});
    blocks_.push_back(std::move(b));
  }
}

template <class T>
Tensor<T> ControlEncoder<T>::embed(const Tensor<T>& images) const {
  NoGradGuard guard;
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != config_.image_size || s[2] != config_.image_size || s[3] != 3) {
    throw ShapeError("control encoder: expected [B," + std::to_string(config_.image_size) + "," +
                     std::to_string(config_.image_size) + ",3], got " + shape_str(s));
  }
  auto x = ops::conv2d(Var<T>::constant(images), Var<T>::constant(patch_w_), Var<T>::constant(patch_b_),
                       config_.patch, 0)
               .value();
  const std::size_t per = pos_.size();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += pos_[i % per];
  return x;
}

template <class T>
Tensor<T> ControlEncoder<T>::features(const Tensor<T>& images) const {
  NoGradGuard guard;
  const std::int64_t B = images.dim(0), g = grid(), C = config_.width;
  auto c = [](const Tensor<T>& t) { return Var<T>::constant(t); };
  Var<T> x = Var<T>::constant(embed(images).reshaped({B * g * g, C}));
  std::vector<Var<T>> tapped;
  for (int l = 0; l < config_.depth; ++l) {
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    auto h = ops::layer_norm(x, c(b.ln1_g), c(b.ln1_b));
    auto a = ops::attention(ops::linear(h, c(b.wq), Var<T>()), ops::linear(h, c(b.wk), Var<T>()),
                            ops::linear(h, c(b.wv), Var<T>()), B, config_.heads, {});
    x = ops::add(x, ops::linear(a, c(b.wo), Var<T>()));
    h = ops::layer_norm(x, c(b.ln2_g), c(b.ln2_b));
    x = ops::add(x, ops::linear(ops::gelu(ops::linear(h, c(b.w1), c(b.b1))), c(b.w2), c(b.b2)));
    if (std::find(taps_.begin(), taps_.end(), l) != taps_.end()) tapped.push_back(x);
  }
  return ops::reshape(ops::concat(tapped, 1), {B, g, g, feature_dim()}).value();
}

template <class T>
void ControlEncoder<T>::make_blocks_identity() {
  for (auto& b : blocks_) {
    b.wo = Tensor<T>(b.wo.shape());
    b.w2 = Tensor<T>(b.w2.shape());
    b.b2 = Tensor<T>(b.b2.shape());
  }
}

template <class T>
std::uint64_t ControlEncoder<T>::weight_digest() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const Tensor<T>& t) {
    const auto* p = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) h = (h ^ p[i]) * 1099511628211ull;
  };
  mix(patch_w_), mix(patch_b_), mix(pos_);
  for (const auto& b : blocks_) {
    for (const auto* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2})
      mix(*t);
  }
  return h;
}

template <class T>
Tensor<T> control_images_to_tensor(const std::vector<const data::Image*>& images) {
  if (images.empty()) throw std::invalid_argument("control_images_to_tensor: empty batch");
  const int H = images.front()->height, W = images.front()->width;
  Tensor<T> out({static_cast<std::int64_t>(images.size()), H, W, 3});
  std::size_t o = 0;
  for (const auto* img : images) {
    if (img->height != H || img->width != W || (img->channels != 1 && img->channels != 3)) {
      throw ShapeError("control image " + std::to_string(img->height) + "x" + std::to_string(img->width) + "x" +
                       std::to_string(img->channels) + " does not match " + std::to_string(H) + "x" +
                       std::to_string(W) + " with 1 or 3 channels");
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) out[o++] = static_cast<T>(img->at(y, x, img->channels == 3 ? c : 0) / 127.5 - 1.0);
  }
  return out;
}

std::string to_string(Sharing s) {
  switch (s) {
    case Sharing::PerScaleLayer: return "per-scale-layer";
    case Sharing::PerScale: return "per-scale";
    case Sharing::PerLayer: return "per-layer";
  }
  return "?";
}

std::string to_string(Structure s) { return s == Structure::Linear ? "linear" : "linear-lite"; }

Sharing parse_sharing(const std::string& s) {
  for (auto v : {Sharing::PerScaleLayer, Sharing::PerScale, Sharing::PerLayer})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown sharing mode '" + s + "' (valid: per-scale-layer, per-scale, per-layer)");
}

Structure parse_structure(const std::string& s) {
  for (auto v : {Structure::Linear, Structure::LinearLite})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown projection structure '" + s + "' (valid: linear, linear-lite)");
}

std::vector<int> injection_set(const std::string& name, int layers) {
  std::vector<int> out;
  if (name == "all") {
    for (int l = 1; l <= layers; ++l) out.push_back(l);
  } else if (name == "first") {
    out.push_back(1);
  } else if (name == "alt") {
    for (int l = 1; l <= layers; l += 2) out.push_back(l);
  } else {
    throw std::invalid_argument("unknown injection set '" + name + "' (valid: all, first, alt)");
  }
  return out;
}

void ProjectionSpec::validate(int num_layers, int feature_dim, int d_model) const {
  if (layers.empty()) throw std::invalid_argument("injection set is empty");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 1 || layers[i] > num_layers) {
      throw std::out_of_range("injection layer " + std::to_string(layers[i]) + " outside 1.." + std::to_string(num_layers));
    }
    if (i > 0 && layers[i] <= layers[i - 1]) throw std::invalid_argument("injection set must be strictly ascending");
  }
  if (structure == Structure::LinearLite && (bottleneck < 1 || bottleneck >= std::min(feature_dim, d_model))) {
    throw std::invalid_argument("bottleneck " + std::to_string(bottleneck) + " must be in [1, " +
                                std::to_string(std::min(feature_dim, d_model)) + ")");
  }
}

int ProjectionSpec::num_blocks(int num_scales) const {
  const int S = static_cast<int>(layers.size());
  switch (sharing) {
    case Sharing::PerScaleLayer: return num_scales * S;
    case Sharing::PerScale: return num_scales;
    case Sharing::PerLayer: return S;
  }
  return 0;
}

std::int64_t projection_param_count(const ProjectionSpec& spec, const ScaleSchedule& schedule, int d_model,
                                    int c_enc) {
  const std::int64_t in = 4LL * c_enc, d = d_model, b = spec.bottleneck;
  const std::int64_t per = spec.structure == Structure::Linear ? (in + 1) * d : (in + 1) * b + (b + 1) * d;
  return per * spec.num_blocks(schedule.num_scales());
}

template <class T>
std::vector<Var<T>> resize_per_scale(const Var<T>& features, const ScaleSchedule& schedule) {
  std::vector<Var<T>> out;
  for (int k = 0; k < schedule.num_scales(); ++k)
    out.push_back(ops::bilinear_resize(features, schedule.height(k), schedule.width(k)));
  return out;
}

template <class T>
ProjectionBank<T>::ProjectionBank(ProjectionSpec spec, ScaleSchedule schedule, int feature_dim, int d_model, Rng& rng)
    : spec_(std::move(spec)), schedule_(std::move(schedule)), d_model_(d_model) {
  if (spec_.layers.empty()) throw std::invalid_argument("injection set is empty");
  const int n = spec_.num_blocks(schedule_.num_scales());
  for (int i = 0; i < n; ++i) {
    if (spec_.structure == Structure::Linear) {
      w1_.push_back(Var<T>::parameter(Tensor<T>({feature_dim, d_model})));
      b1_.push_back(Var<T>::parameter(Tensor<T>({d_model})));
    } else {
      const int b = spec_.bottleneck;
      w1_.push_back(Var<T>::parameter(randn<T>({feature_dim, b}, rng, 1.0 / std::sqrt(feature_dim))));
      b1_.push_back(Var<T>::parameter(Tensor<T>({b})));
      w2_.push_back(Var<T>::parameter(Tensor<T>({b, d_model})));
      b2_.push_back(Var<T>::parameter(Tensor<T>({d_model})));
    }
  }
}

template <class T>
bool ProjectionBank<T>::injects(int layer) const {
  return std::find(spec_.layers.begin(), spec_.layers.end(), layer) != spec_.layers.end();
}

template <class T>
int ProjectionBank<T>::block_index(int k, int layer) const {
  const auto it = std::find(spec_.layers.begin(), spec_.layers.end(), layer);
  if (it == spec_.layers.end()) throw std::invalid_argument("layer " + std::to_string(layer) + " is not in the injection set");
  if (k < 0 || k >= schedule_.num_scales()) throw std::out_of_range("scale index " + std::to_string(k));
  const int li = static_cast<int>(it - spec_.layers.begin());
  switch (spec_.sharing) {
    case Sharing::PerScaleLayer: return k * static_cast<int>(spec_.layers.size()) + li;
    case Sharing::PerScale: return k;
    case Sharing::PerLayer: return li;
  }
  return 0;
}

template <class T>
ParamList<T> ProjectionBank<T>::params() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < w1_.size(); ++i) {
    const std::string p = "proj." + std::to_string(i) + ".";
    out.push_back({p + "w1", w1_[i]});
    out.push_back({p + "b1", b1_[i]});
    if (!w2_.empty()) {
      out.push_back({p + "w2", w2_[i]});
      out.push_back({p + "b2", b2_[i]});
    }
  }
  return out;
}

template <class T>
Var<T> ProjectionBank<T>::project(const std::vector<Var<T>>& resized, int k, int layer) const {
  const auto i = static_cast<std::size_t>(block_index(k, layer));
  const auto& f = resized.at(static_cast<std::size_t>(k));
  const std::int64_t rows = f.dim(0) * f.dim(1) * f.dim(2);
  auto x = ops::reshape(f, {rows, f.dim(3)});
  auto y = ops::linear(x, w1_[i], b1_[i]);
  if (spec_.structure == Structure::LinearLite) y = ops::linear(y, w2_[i], b2_[i]);
  return y;
}

template <class T>
Injections<T> ProjectionBank<T>::injections(const std::vector<Var<T>>& resized) const {
  Injections<T> out;
  const std::int64_t B = resized.at(0).dim(0);
  for (int l : spec_.layers) {
    std::vector<Var<T>> parts;
    for (int k = 0; k < schedule_.num_scales(); ++k)
      parts.push_back(ops::reshape(project(resized, k, l), {B, schedule_.tokens(k), d_model_}));
    out[l] = ops::reshape(ops::concat(parts, 1), {B * schedule_.total_tokens(), d_model_});
  }
  return out;
}

template <class T>
Injections<T> ProjectionBank<T>::step_injections(const std::vector<Var<T>>& resized, int k) const {
  Injections<T> out;
  for (int l : spec_.layers) out[l] = project(resized, k, l);
  return out;
}

template <class T>
Var<T> inject(const Var<T>& hidden, const Var<T>& control) {
  if (hidden.shape() != control.shape()) {
    throw ShapeError("inject: hidden " + shape_str(hidden.shape()) + " vs control " + shape_str(control.shape()));
  }
  return ops::add(hidden, control);
}

template class ControlEncoder<float>;
template class ControlEncoder<double>;
template class ProjectionBank<float>;
template class ProjectionBank<double>;
template Tensor<float> control_images_to_tensor(const std::vector<const data::Image*>&);
template Tensor<double> control_images_to_tensor(const std::vector<const data::Image*>&);
template std::vector<Var<float>> resize_per_scale(const Var<float>&, const ScaleSchedule&);
template std::vector<Var<double>> resize_per_scale(const Var<double>&, const ScaleSchedule&);
template Var<float> inject(const Var<float>&, const Var<float>&);
template Var<double> inject(const Var<double>&, const Var<double>&);

}  // namespace scalar
