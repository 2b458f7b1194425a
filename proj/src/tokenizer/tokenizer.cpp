#include "scalar/tokenizer/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

namespace scalar {

ScaleSchedule::ScaleSchedule(std::vector<std::pair<int, int>> scales) : scales_(std::move(scales)) {
  if (scales_.empty()) throw std::invalid_argument("scale schedule is empty");
  if (scales_.front() != std::pair{1, 1}) throw std::invalid_argument("scale schedule must start at 1x1");
  for (std::size_t k = 1; k < scales_.size(); ++k) {
    if (scales_[k].first < scales_[k - 1].first || scales_[k].second < scales_[k - 1].second) {
      throw std::invalid_argument("scale schedule must be non-decreasing in both extents");
    }
  }
  for (const auto& [h, w] : scales_) offsets_.push_back(offsets_.back() + h * w);
}

ScaleSchedule ScaleSchedule::square(const std::vector<int>& sides) {
  std::vector<std::pair<int, int>> s;
  for (int v : sides) s.emplace_back(v, v);
  return ScaleSchedule(std::move(s));
}

std::vector<int> ScaleSchedule::sides() const {
  std::vector<int> out;
  for (const auto& [h, w] : scales_) out.push_back(h == w ? h : -1);
  return out;
}

std::vector<int> ScaleSchedule::scale_of_position() const {
  std::vector<int> out;
  for (int k = 0; k < num_scales(); ++k) out.insert(out.end(), static_cast<std::size_t>(tokens(k)), k);
  return out;
}

template <class T>
Tokenizer<T>::Tokenizer(TokenizerConfig config, Rng& rng) : config_(std::move(config)) {
  if (config_.vocab < 2) throw std::invalid_argument("codebook needs at least 2 entries");
  if (config_.channels.empty() || (config_.image_size >> config_.channels.size()) < 1 ||
      (config_.image_size % (1 << config_.channels.size())) != 0) {
    throw std::invalid_argument("image size must be divisible by the encoder stride");
  }
  auto conv = [&](int k, int in, int out, double gain) {
    return Var<T>::parameter(randn<T>({k, k, in, out}, rng, gain * std::sqrt(2.0 / (k * k * in))));
  };
  auto bias = [](int n) { return Var<T>::parameter(Tensor<T>({n})); };

  int in = 3;
  for (int ch : config_.channels) {
    enc_w_.push_back(conv(4, in, ch, 1.0));
    enc_b_.push_back(bias(ch));
    in = ch;
  }
  enc_w_.push_back(conv(1, in, config_.code_dim, 0.5));
  enc_b_.push_back(bias(config_.code_dim));

  dec_w_.push_back(conv(1, config_.code_dim, config_.channels.back(), 1.0));
  dec_b_.push_back(bias(config_.channels.back()));
  for (int j = static_cast<int>(config_.channels.size()) - 1; j >= 0; --j) {
    const int cin = config_.channels[static_cast<std::size_t>(j)];
    const int cout = config_.channels[static_cast<std::size_t>(std::max(j - 1, 0))];
    dec_w_.push_back(conv(3, cin, cout, 1.0));
    dec_b_.push_back(bias(cout));
  }
  dec_w_.push_back(conv(1, config_.channels.front(), 3, 0.5));
  dec_b_.push_back(bias(3));

  codebook_ = Var<T>::parameter(
      rand_uniform<T>({config_.vocab, config_.code_dim}, rng, -1.0 / config_.vocab, 1.0 / config_.vocab));
}

template <class T>
ParamList<T> Tokenizer<T>::params() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < enc_w_.size(); ++i) {
    out.push_back({"enc." + std::to_string(i) + ".w", enc_w_[i]});
    out.push_back({"enc." + std::to_string(i) + ".b", enc_b_[i]});
  }
  for (std::size_t i = 0; i < dec_w_.size(); ++i) {
    out.push_back({"dec." + std::to_string(i) + ".w", dec_w_[i]});
    out.push_back({"dec." + std::to_string(i) + ".b", dec_b_[i]});
  }
  out.push_back({"codebook", codebook_});
  return out;
}

template <class T>
Var<T> Tokenizer<T>::encode_latent(const Var<T>& images) const {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != config_.image_size || s[2] != config_.image_size || s[3] != 3) {
    throw ShapeError("tokenizer: expected images [B," + std::to_string(config_.image_size) + "," +
                     std::to_string(config_.image_size) + ",3], got " + shape_str(s));
  }
  Var<T> x = images;
  for (std::size_t i = 0; i + 1 < enc_w_.size(); ++i) x = ops::gelu(ops::conv2d(x, enc_w_[i], enc_b_[i], 2, 1));
  return ops::conv2d(x, enc_w_.back(), enc_b_.back(), 1, 0);
}

template <class T>
Var<T> Tokenizer<T>::decode_latent(const Var<T>& latent) const {
  Var<T> x = ops::gelu(ops::conv2d(latent, dec_w_[0], dec_b_[0], 1, 0));
  for (std::size_t i = 1; i + 1 < dec_w_.size(); ++i) {
    x = ops::bilinear_resize(x, x.dim(1) * 2, x.dim(2) * 2);
    x = ops::gelu(ops::conv2d(x, dec_w_[i], dec_b_[i], 1, 1));
  }
  return ops::conv2d(x, dec_w_.back(), dec_b_.back(), 1, 0);
}

template <class T>
std::vector<std::int32_t> Tokenizer<T>::nearest_codes(const Tensor<T>& vectors) const {
  const auto C = static_cast<std::int64_t>(config_.code_dim);
  if (vectors.rank() < 1 || vectors.shape().back() != C) {
    throw ShapeError("nearest_codes: vectors " + shape_str(vectors.shape()) + " vs code dim " + std::to_string(C));
  }
  const auto n = static_cast<std::int64_t>(vectors.size()) / C;
  const T* cb = codebook_.value().data();
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const T* v = vectors.data() + i * C;
    T best = std::numeric_limits<T>::infinity();
    std::int32_t arg = 0;
    for (std::int32_t c = 0; c < config_.vocab; ++c) {
      const T* e = cb + c * C;
      T d = 0;
      for (std::int64_t j = 0; j < C; ++j) d += (v[j] - e[j]) * (v[j] - e[j]);
      if (d < best) best = d, arg = c;
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

template <class T>
typename Tokenizer<T>::Quantized Tokenizer<T>::quantize(const Var<T>& latent, const ScaleSchedule& schedule) const {
  const auto B = latent.dim(0), S = latent.dim(1), C = latent.dim(3);
  const int K = schedule.num_scales();
  if (schedule.height(K - 1) != S || schedule.width(K - 1) != latent.dim(2)) {
    throw std::invalid_argument("schedule final scale " + std::to_string(schedule.height(K - 1)) + "x" +
                                std::to_string(schedule.width(K - 1)) + " does not match encoder grid " +
                                std::to_string(S) + "x" + std::to_string(latent.dim(2)));
  }
  Quantized q;
  q.maps.assign(static_cast<std::size_t>(B), TokenPyramid(static_cast<std::size_t>(K)));
  Tensor<T> residual = latent.value();
  Var<T> acc;
  for (int k = 0; k < K; ++k) {
    const int h = schedule.height(k), w = schedule.width(k);
    const Tensor<T> down = bilinear_resize(residual, h, w);
    const auto idx = nearest_codes(down);
    for (std::int64_t b = 0; b < B; ++b) {
      auto& m = q.maps[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
      m.height = h, m.width = w;
      m.indices.assign(idx.begin() + b * h * w, idx.begin() + (b + 1) * h * w);
    }
    Var<T> up = ops::bilinear_resize(ops::reshape(ops::embedding(codebook_, std::span<const std::int32_t>(idx)),
                                                  {B, h, w, C}),
                                     S, latent.dim(2));
    acc = acc.defined() ? ops::add(acc, up) : up;
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] -= up.value()[i];
    q.prefixes.push_back(acc.value());
  }
  q.reconstruction = acc;
  return q;
}

template <class T>
std::vector<TokenPyramid> Tokenizer<T>::encode(const Tensor<T>& images, const ScaleSchedule& schedule) const {
  NoGradGuard guard;
  return quantize(encode_latent(Var<T>::constant(images)), schedule).maps;
}

template <class T>
void Tokenizer<T>::validate(const TokenPyramid& maps, const ScaleSchedule& schedule) const {
  if (static_cast<int>(maps.size()) != schedule.num_scales()) {
    throw std::invalid_argument("token pyramid has " + std::to_string(maps.size()) + " maps, schedule has " +
                                std::to_string(schedule.num_scales()) + " scales");
  }
  for (int k = 0; k < schedule.num_scales(); ++k) {
    const auto& m = maps[static_cast<std::size_t>(k)];
    if (m.height != schedule.height(k) || m.width != schedule.width(k) ||
        static_cast<int>(m.indices.size()) != schedule.tokens(k)) {
      throw std::invalid_argument("token map " + std::to_string(k + 1) + " does not conform to the schedule");
    }
    for (auto i : m.indices) {
      if (i < 0 || i >= config_.vocab) {
        throw std::out_of_range("token index " + std::to_string(i) + " outside [0," + std::to_string(config_.vocab) +
                                ")");
      }
    }
  }
}

template <class T>
Tensor<T> Tokenizer<T>::latent_from_tokens(const TokenPyramid& maps, const ScaleSchedule& schedule, int upto) const {
  validate(maps, schedule);
  const int S = latent_size();
  const int C = config_.code_dim;
  Tensor<T> acc({S, S, C});
  NoGradGuard guard;
  for (int k = 0; k < upto; ++k) {
    const auto& m = maps[static_cast<std::size_t>(k)];
    auto grid = ops::reshape(ops::embedding(codebook_, std::span<const std::int32_t>(m.indices)), {m.height, m.width, C});
    const auto up = bilinear_resize(grid.value(), S, S);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += up[i];
  }
  return acc;
}

template <class T>
Tensor<T> Tokenizer<T>::decode(const std::vector<TokenPyramid>& maps, const ScaleSchedule& schedule) const {
  const int S = latent_size();
  const auto per = static_cast<std::int64_t>(S) * S * config_.code_dim;
  Tensor<T> latent({static_cast<std::int64_t>(maps.size()), S, S, config_.code_dim});
  for (std::size_t b = 0; b < maps.size(); ++b) {
    const auto one = latent_from_tokens(maps[b], schedule, schedule.num_scales());
    std::copy_n(one.data(), per, latent.data() + static_cast<std::int64_t>(b) * per);
  }
  NoGradGuard guard;
  return decode_latent(Var<T>::constant(latent)).value();
}

template <class T>
VqLosses<T> Tokenizer<T>::losses(const Tensor<T>& images, const ScaleSchedule& schedule) const {
  auto target = Var<T>::constant(images);
  auto f = encode_latent(target);
  auto q = quantize(f, schedule);
  VqLosses<T> out;
  out.reconstruction = ops::mse(decode_latent(ops::straight_through(f, q.reconstruction)), target);
  out.codebook = ops::mse(q.reconstruction, ops::stop_gradient(f));
  out.commitment = ops::mse(f, ops::stop_gradient(q.reconstruction));
  out.total = ops::add(out.reconstruction, ops::add(ops::scale(out.codebook, static_cast<T>(config_.codebook_weight)),
                                                    ops::scale(out.commitment, static_cast<T>(config_.commitment_weight))));
  for (const auto& pyr : q.maps)
    for (const auto& m : pyr) out.used_codes.insert(out.used_codes.end(), m.indices.begin(), m.indices.end());
  return out;
}

template <class T>
Tensor<T> images_to_tensor(const std::vector<const data::Image*>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const auto& first = *images.front();
  const std::int64_t per = static_cast<std::int64_t>(first.pixels.size());
  Tensor<T> out({static_cast<std::int64_t>(images.size()), first.height, first.width, first.channels});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = *images[b];
    if (img.height != first.height || img.width != first.width || img.channels != first.channels) {
      throw ShapeError("images_to_tensor: mixed image sizes in batch");
    }
    for (std::int64_t i = 0; i < per; ++i) {
      out[static_cast<std::size_t>(static_cast<std::int64_t>(b) * per + i)] =
          static_cast<T>(img.pixels[static_cast<std::size_t>(i)] / 127.5 - 1.0);
    }
  }
  return out;
}

template <class T>
data::Image tensor_to_image(const Tensor<T>& batch, std::int64_t index) {
  const auto& s = batch.shape();
  data::Image img(static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3]));
  const std::int64_t per = s[1] * s[2] * s[3];
  for (std::int64_t i = 0; i < per; ++i) {
    const double v = (static_cast<double>(batch[static_cast<std::size_t>(index * per + i)]) + 1.0) * 127.5;
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
  }
  return img;
}

template class Tokenizer<float>;
template class Tokenizer<double>;
template Tensor<float> images_to_tensor(const std::vector<const data::Image*>&);
template Tensor<double> images_to_tensor(const std::vector<const data::Image*>&);
template data::Image tensor_to_image(const Tensor<float>&, std::int64_t);
template data::Image tensor_to_image(const Tensor<double>&, std::int64_t);

}  // namespace scalar
