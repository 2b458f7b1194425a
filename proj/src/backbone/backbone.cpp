#include "scalar/backbone/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace scalar {

void DecoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("decoder needs at least one layer");
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(heads) +
                                " heads");
  }
  if (vocab < 2 || num_classes < 1 || code_dim < 1) throw std::invalid_argument("invalid decoder sizes");
  if (schedule.num_scales() < 1) throw std::invalid_argument("decoder schedule is empty");
}

std::vector<std::uint8_t> block_causal_mask(const ScaleSchedule& schedule) {
  const auto scale = schedule.scale_of_position();
  const std::size_t T = scale.size();
  std::vector<std::uint8_t> m(T * T, 0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) m[i * T + j] = scale[j] <= scale[i];
  return m;
}

template <class T>
Tensor<T> teacher_inputs(const Tokenizer<T>& tok, const TokenPyramid& maps, const ScaleSchedule& schedule) {
  const int C = tok.config().code_dim;
  Tensor<T> out({schedule.total_tokens() - 1, C});
  T* dst = out.data();
  for (int k = 1; k < schedule.num_scales(); ++k) {
    const auto cum = tok.latent_from_tokens(maps, schedule, k);
    const auto r = bilinear_resize(cum, schedule.height(k), schedule.width(k));
    dst = std::copy(r.data(), r.data() + r.size(), dst);
  }
  return out;
}

template <class T>
Decoder<T>::Decoder(DecoderConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const int d = config_.d_model;
  const double out_std = 0.02 / std::sqrt(2.0 * config_.layers);
  auto normal = [&](Shape s, double sd) { return Var<T>::parameter(randn<T>(std::move(s), rng, sd)); };
  auto zeros = [](Shape s) { return Var<T>::parameter(Tensor<T>(std::move(s))); };
  auto ones = [](int n) { return Var<T>::parameter(Tensor<T>::full({n}, T(1))); };

  class_emb_ = normal({config_.num_classes + 1, d}, 0.02);
  word_w_ = normal({config_.code_dim, d}, 1.0 / std::sqrt(config_.code_dim));
  word_b_ = zeros({d});
  pos_emb_ = normal({config_.schedule.total_tokens(), d}, 0.02);
  lvl_emb_ = normal({config_.schedule.num_scales(), d}, 0.02);
  for (int l = 0; l < config_.layers; ++l) {
    Block b;
    b.ln1_g = ones(d), b.ln1_b = zeros({d});
    b.wq = normal({d, d}, 0.02), b.bq = zeros({d});
    b.wk = normal({d, d}, 0.02), b.bk = zeros({d});
    b.wv = normal({d, d}, 0.02), b.bv = zeros({d});
    b.wo = normal({d, d}, out_std), b.bo = zeros({d});
    b.ln2_g = ones(d), b.ln2_b = zeros({d});
    b.w1 = normal({d, 4 * d}, 0.02), b.b1 = zeros({4 * d});
    b.w2 = normal({4 * d, d}, out_std), b.b2 = zeros({d});
    blocks_.push_back(std::move(b));
  }
  ln_f_g_ = ones(d), ln_f_b_ = zeros({d});
  head_w_ = normal({d, config_.vocab}, 0.02);
  head_b_ = zeros({config_.vocab});
  mask_ = block_causal_mask(config_.schedule);
}

template <class T>
ParamList<T> Decoder<T>::params() const {
  ParamList<T> out{{"class_emb", class_emb_}, {"word.w", word_w_}, {"word.b", word_b_},
                   {"pos_emb", pos_emb_},     {"lvl_emb", lvl_emb_}};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "blocks." + std::to_string(l + 1) + ".";
    out.insert(out.end(), {{p + "ln1.g", b.ln1_g}, {p + "ln1.b", b.ln1_b}, {p + "attn.q.w", b.wq},
                           {p + "attn.q.b", b.bq},  {p + "attn.k.w", b.wk}, {p + "attn.k.b", b.bk},
                           {p + "attn.v.w", b.wv},  {p + "attn.v.b", b.bv}, {p + "attn.o.w", b.wo},
                           {p + "attn.o.b", b.bo},  {p + "ln2.g", b.ln2_g}, {p + "ln2.b", b.ln2_b},
                           {p + "mlp.fc1.w", b.w1}, {p + "mlp.fc1.b", b.b1}, {p + "mlp.fc2.w", b.w2},
                           {p + "mlp.fc2.b", b.b2}});
  }
  out.insert(out.end(), {{"head.ln.g", ln_f_g_}, {"head.ln.b", ln_f_b_}, {"head.w", head_w_}, {"head.b", head_b_}});
  return out;
}

template <class T>
bool Decoder<T>::is_attention_param(const std::string& name) {
  return name.find(".attn.") != std::string::npos;
}

template <class T>
Var<T> Decoder<T>::class_start(const std::vector<ClassMix>& classes) const {
  const int rows = config_.num_classes + 1;
  Tensor<T> w({static_cast<std::int64_t>(classes.size()), rows});
  for (std::size_t b = 0; b < classes.size(); ++b) {
    if (classes[b].weights.empty()) throw std::invalid_argument("empty class conditioning");
    for (const auto& [c, wt] : classes[b].weights) {
      if (c < 0 || c >= rows) {
        throw std::out_of_range("unknown class label " + std::to_string(c) + " (valid 0.." +
                                std::to_string(config_.num_classes - 1) + ", null " + std::to_string(rows - 1) + ")");
      }
      w[b * rows + static_cast<std::size_t>(c)] += static_cast<T>(wt);
    }
  }
  return ops::matmul(Var<T>::constant(std::move(w)), class_emb_);
}

template <class T>
Var<T> Decoder<T>::embed_scale(int k, const std::vector<ClassMix>& classes, const Tensor<T>& inputs) const {
  const auto& s = config_.schedule;
  const auto B = static_cast<std::int64_t>(classes.size());
  const std::int64_t n = s.tokens(k);
  Var<T> x;
  if (k == 0) {
    x = class_start(classes);
  } else {
    if (inputs.shape() != Shape{B, n, config_.code_dim}) {
      throw ShapeError("embed_scale: inputs " + shape_str(inputs.shape()) + " vs expected " +
                       shape_str({B, n, config_.code_dim}));
    }
    x = ops::linear(Var<T>::constant(inputs.reshaped({B * n, config_.code_dim})), word_w_, word_b_);
  }
  std::vector<std::int32_t> pos, lvl;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < n; ++i) {
      pos.push_back(static_cast<std::int32_t>(s.offset(k) + i));
      lvl.push_back(k);
    }
  return ops::add(x, ops::add(ops::embedding(pos_emb_, std::span<const std::int32_t>(pos)),
                              ops::embedding(lvl_emb_, std::span<const std::int32_t>(lvl))));
}

template <class T>
Var<T> Decoder<T>::build_inputs(const std::vector<ClassMix>& classes, const Tensor<T>& inputs) const {
  const auto& s = config_.schedule;
  const auto B = static_cast<std::int64_t>(classes.size());
  const std::int64_t T1 = s.total_tokens() - 1;
  if (inputs.shape() != Shape{B, T1, config_.code_dim}) {
    throw ShapeError("build_inputs: inputs " + shape_str(inputs.shape()) + " vs expected " +
                     shape_str({B, T1, config_.code_dim}));
  }
  const auto d = config_.d_model;
  std::vector<Var<T>> parts{ops::reshape(embed_scale(0, classes, {}), {B, 1, d})};
  if (T1 > 0) {
    // Scales 2..K share one linear; embed them together then add position terms.
    auto words = ops::reshape(
        ops::linear(Var<T>::constant(inputs.reshaped({B * T1, config_.code_dim})), word_w_, word_b_), {B, T1, d});
    std::vector<std::int32_t> pos, lvl;
    const auto scale = s.scale_of_position();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 1; p <= T1; ++p) {
        pos.push_back(static_cast<std::int32_t>(p));
        lvl.push_back(scale[static_cast<std::size_t>(p)]);
      }
    auto extra = ops::add(ops::embedding(pos_emb_, std::span<const std::int32_t>(pos)),
                          ops::embedding(lvl_emb_, std::span<const std::int32_t>(lvl)));
    parts.push_back(ops::add(words, ops::reshape(extra, {B, T1, d})));
  }
  return ops::reshape(ops::concat(parts, 1), {B * (T1 + 1), d});
}

template <class T>
Var<T> Decoder<T>::apply_injection(const Var<T>& x, int layer, const Injections<T>& inj) const {
  auto it = inj.find(layer);
  if (it == inj.end()) return x;
  if (it->second.shape() != x.shape()) {
    throw ShapeError("injection at layer " + std::to_string(layer) + ": " + shape_str(it->second.shape()) +
                     " vs hidden " + shape_str(x.shape()));
  }
  return ops::add(x, it->second);
}

template <class T>
Var<T> Decoder<T>::mlp(const Block& b, const Var<T>& h) const {
  return ops::linear(ops::gelu(ops::linear(ops::layer_norm(h, b.ln2_g, b.ln2_b), b.w1, b.b1)), b.w2, b.b2);
}

template <class T>
Var<T> Decoder<T>::head(const Var<T>& h) const {
  return ops::linear(ops::layer_norm(h, ln_f_g_, ln_f_b_), head_w_, head_b_);
}

template <class T>
Var<T> Decoder<T>::forward_train(const Var<T>& sequence, std::int64_t batch, const Injections<T>& inj) const {
  const std::int64_t rows = batch * config_.schedule.total_tokens();
  if (sequence.shape() != Shape{rows, config_.d_model}) {
    throw ShapeError("forward_train: sequence " + shape_str(sequence.shape()) + " vs expected " +
                     shape_str({rows, config_.d_model}));
  }
  for (const auto& [l, v] : inj) {
    if (l < 1 || l > config_.layers) throw std::out_of_range("injection layer " + std::to_string(l) + " outside 1..L");
  }
  Var<T> x = sequence;
  for (int l = 0; l < config_.layers; ++l) {
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    x = apply_injection(x, l + 1, inj);
    auto h = ops::layer_norm(x, b.ln1_g, b.ln1_b);
    auto a = ops::attention(ops::linear(h, b.wq, b.bq), ops::linear(h, b.wk, b.bk), ops::linear(h, b.wv, b.bv), batch,
                            config_.heads, std::span<const std::uint8_t>(mask_));
    x = ops::add(x, ops::linear(a, b.wo, b.bo));
    x = ops::add(x, mlp(b, x));
  }
  return head(x);
}

template <class T>
KVCache<T> Decoder<T>::new_cache(std::int64_t batch, std::uint64_t tag) const {
  KVCache<T> c;
  c.batch = batch;
  c.tag = tag;
  c.keys.resize(static_cast<std::size_t>(config_.layers));
  c.values.resize(static_cast<std::size_t>(config_.layers));
  return c;
}

template <class T>
Var<T> Decoder<T>::forward_step(const Var<T>& scale_inputs, int k, KVCache<T>& cache, std::uint64_t tag,
                                const Injections<T>& inj) const {
  const auto& s = config_.schedule;
  if (k < 0 || k >= s.num_scales()) throw std::out_of_range("scale index " + std::to_string(k));
  if (cache.tag != tag) throw std::invalid_argument("KV cache belongs to a different conditioning");
  if (cache.length != s.offset(k) || cache.next_scale != k) {
    throw std::invalid_argument("KV cache holds " + std::to_string(cache.length) + " positions, scale " +
                                std::to_string(k + 1) + " needs " + std::to_string(s.offset(k)));
  }
  const std::int64_t B = cache.batch, n = s.tokens(k), d = config_.d_model;
  if (scale_inputs.shape() != Shape{B * n, d}) {
    throw ShapeError("forward_step: inputs " + shape_str(scale_inputs.shape()) + " vs expected " +
                     shape_str({B * n, d}));
  }
  Var<T> x = scale_inputs;
  std::vector<Tensor<T>> new_k, new_v;
  for (int l = 0; l < config_.layers; ++l) {
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    x = apply_injection(x, l + 1, inj);
    auto h = ops::layer_norm(x, b.ln1_g, b.ln1_b);
    auto kk = ops::reshape(ops::linear(h, b.wk, b.bk), {B, n, d});
    auto vv = ops::reshape(ops::linear(h, b.wv, b.bv), {B, n, d});
    const auto li = static_cast<std::size_t>(l);
    if (cache.length > 0) {
      kk = ops::concat<T>({Var<T>::constant(cache.keys[li]), kk}, 1);
      vv = ops::concat<T>({Var<T>::constant(cache.values[li]), vv}, 1);
    }
    const std::int64_t len = cache.length + n;
    new_k.push_back(kk.value());
    new_v.push_back(vv.value());
    auto a = ops::attention(ops::linear(h, b.wq, b.bq), ops::reshape(kk, {B * len, d}), ops::reshape(vv, {B * len, d}),
                            B, config_.heads, {});
    x = ops::add(x, ops::linear(a, b.wo, b.bo));
    x = ops::add(x, mlp(b, x));
  }
  cache.keys = std::move(new_k);
  cache.values = std::move(new_v);
  cache.length += n;
  cache.next_scale = k + 1;
  return head(x);
}

template class Decoder<float>;
template class Decoder<double>;
template Tensor<float> teacher_inputs(const Tokenizer<float>&, const TokenPyramid&, const ScaleSchedule&);
template Tensor<double> teacher_inputs(const Tokenizer<double>&, const TokenPyramid&, const ScaleSchedule&);

}  // namespace scalar
