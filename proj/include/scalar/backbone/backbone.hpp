#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "scalar/numerics/ops.hpp"
#include "scalar/numerics/params.hpp"
#include "scalar/numerics/random.hpp"
#include "scalar/tokenizer/tokenizer.hpp"

namespace scalar {

struct DecoderConfig {
  int layers = 6;
  int d_model = 128;
  int heads = 4;
  int vocab = 256;
  int num_classes = 8;
  int code_dim = 32;
  ScaleSchedule schedule = ScaleSchedule::square({1, 2, 3, 4});

  void validate() const;
};

// Row-major T x T permission matrix: position in scale k sees scales <= k.
std::vector<std::uint8_t> block_causal_mask(const ScaleSchedule& schedule);

// Start-token conditioning as weights over class_emb rows; the extra last row
// is the learned null class used by the unconditional branch.
struct ClassMix {
  std::vector<std::pair<int, double>> weights;

  static ClassMix label(int c) { return {{{c, 1.0}}}; }
  bool operator==(const ClassMix&) const = default;
};

// Teacher-forced inputs for scales 2..K of one pyramid: [T - 1, C], the
// cumulative latent of earlier scales resized to each scale's grid.
template <class T>
Tensor<T> teacher_inputs(const Tokenizer<T>& tok, const TokenPyramid& maps, const ScaleSchedule& schedule);

// Layer (1-based) -> additive term for that layer's input, [rows, d_model].
template <class T>
using Injections = std::map<int, Var<T>>;

template <class T>
struct KVCache {
  std::vector<Tensor<T>> keys, values;  // per layer [B, len, d]
  std::int64_t batch = 0;
  std::int64_t length = 0;
  std::uint64_t tag = 0;  // identifies the conditioning this cache was built for
  int next_scale = 0;
};

template <class T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(DecoderConfig config, Rng& rng);

  const DecoderConfig& config() const { return config_; }
  ParamList<T> params() const;
  int null_class() const { return config_.num_classes; }

  // Embedded sequence [B * T, d]. `inputs` is [B, T - 1, C] (see teacher_inputs).
  Var<T> build_inputs(const std::vector<ClassMix>& classes, const Tensor<T>& inputs) const;
  // Embedded inputs of one scale k (0-based): k == 0 uses the classes, otherwise
  // `inputs` is [B, h_k * w_k, C].
  Var<T> embed_scale(int k, const std::vector<ClassMix>& classes, const Tensor<T>& inputs) const;

  // Logits [B * T, V] under the block-causal mask.
  Var<T> forward_train(const Var<T>& sequence, std::int64_t batch, const Injections<T>& inj = {}) const;

  // Logits [B * n_k, V] for scale k given a cache holding exactly scales < k.
  Var<T> forward_step(const Var<T>& scale_inputs, int k, KVCache<T>& cache, std::uint64_t tag,
                      const Injections<T>& inj = {}) const;

  KVCache<T> new_cache(std::int64_t batch, std::uint64_t tag) const;

  // Indices into params() of the self-attention projections.
  static bool is_attention_param(const std::string& name);

 private:
  struct Block {
    Var<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Var<T> class_start(const std::vector<ClassMix>& classes) const;
  Var<T> apply_injection(const Var<T>& x, int layer, const Injections<T>& inj) const;
  Var<T> mlp(const Block& blk, const Var<T>& h) const;
  Var<T> head(const Var<T>& h) const;

  DecoderConfig config_;
  Var<T> class_emb_, word_w_, word_b_, pos_emb_, lvl_emb_;
  std::vector<Block> blocks_;
  Var<T> ln_f_g_, ln_f_b_, head_w_, head_b_;
  std::vector<std::uint8_t> mask_;
};

extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace scalar
