#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "scalar/data/scene.hpp"
#include "scalar/train/optim.hpp"
#include "scalar/unify/unify.hpp"

namespace scalar {

enum class FreezePolicy { None, SelfAttention, All };

std::string to_string(FreezePolicy p);
// Accepts "none", "sa", "all".
FreezePolicy parse_freeze(const std::string& s);

// Marks decoder parameters trainable or frozen; returns how many stay trainable.
template <class T>
std::size_t apply_freeze(const Decoder<T>& decoder, FreezePolicy policy);

// Mean token NLL over every position; rejects targets outside [0, V).
template <class T>
Var<T> ce_loss(const Var<T>& logits, std::span<const std::int32_t> targets);

struct LossRecord {
  std::int64_t step = 0;
  double ce = 0;
  double align = 0;
  double total = 0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records);

struct TokenizerTrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int reset_every = 50;  // steps between dead-code resets
};

// Codebook rows start as encoder outputs of the first batch; rows unused for
// `reset_every` steps are re-seeded from current latents.
template <class T>
class TokenizerTrainer {
 public:
  TokenizerTrainer(Tokenizer<T>& tok, std::vector<const data::Image*> images, ScaleSchedule schedule,
                   TokenizerTrainConfig cfg);

  std::int64_t steps_per_epoch() const;
  std::int64_t total_steps() const { return steps_per_epoch() * cfg_.epochs; }
  std::int64_t step_index() const { return step_; }
  bool done() const { return step_ >= total_steps(); }
  void set_step(std::int64_t step) { step_ = step; }

  AdamW<T>& optimizer() { return opt_; }
  const AdamW<T>& optimizer() const { return opt_; }
  // Per-code hit counts since the last dead-code reset.
  std::vector<int>& usage() { return usage_; }
  const std::vector<int>& usage() const { return usage_; }

  LossRecord step();
  std::vector<LossRecord> run(const std::function<void(const LossRecord&)>& on_step = {});

 private:
  std::size_t batch() const;

  Tokenizer<T>& tok_;
  std::vector<const data::Image*> images_;
  ScaleSchedule sched_;
  TokenizerTrainConfig cfg_;
  AdamW<T> opt_;
  std::vector<int> usage_;
  std::int64_t step_ = 0;
};

extern template class TokenizerTrainer<float>;
extern template class TokenizerTrainer<double>;

template <class T>
std::vector<LossRecord> train_tokenizer(Tokenizer<T>& tok, const std::vector<const data::Image*>& images,
                                        const ScaleSchedule& schedule, const TokenizerTrainConfig& cfg,
                                        const std::function<void(const LossRecord&)>& on_step = {});

// Everything a decoder step needs, computed once per dataset.
template <class T>
struct TrainingSet {
  std::vector<int> labels;
  std::vector<TokenPyramid> maps;
  std::vector<Tensor<T>> teacher;                   // [T - 1, C] each
  std::vector<std::vector<std::int32_t>> targets;  // T each
  std::map<Modality, std::vector<Tensor<T>>> control;  // [g, g, F] each
  std::vector<Tensor<T>> image_features;           // [g, g, F] each, for alignment

  std::size_t size() const { return labels.size(); }
};

template <class T>
TrainingSet<T> build_training_set(const Tokenizer<T>& tok, const ScaleSchedule& schedule,
                                  const std::vector<data::ConditionSample>& samples,
                                  const FeatureExtractor<T>* encoder, const std::vector<Modality>& modalities,
                                  bool image_features);

struct TrainConfig {
  int epochs = 10;
  int batch = 32;
  AdamWConfig optimizer;
  double lambda = 1.0;
  double class_drop = 0.1;
  int warmup_steps = 0;  // linear lr ramp over the first steps of a stage
  std::uint64_t seed = 0;
  FreezePolicy freeze = FreezePolicy::None;
  bool uni = false;
  std::vector<Modality> modalities{Modality::Edge};

  void validate() const;
};

// Teacher-forced decoder training, with or without a control bank. Batches,
// class drops and modality draws come from per-epoch / per-step streams, so
// resuming at step n replays exactly what an uninterrupted run would do.
template <class T>
class Trainer {
 public:
  Trainer(Decoder<T>& decoder, ProjectionBank<T>* bank, AlignmentHead<T>* align, const TrainingSet<T>& data,
          TrainConfig config);

  const TrainConfig& config() const { return config_; }
  bool uses_alignment() const { return align_ != nullptr; }
  std::int64_t steps_per_epoch() const;
  std::int64_t total_steps() const { return steps_per_epoch() * config_.epochs; }
  std::int64_t step_index() const { return step_; }
  bool done() const { return step_ >= total_steps(); }

  ParamList<T> trainable() const;
  ParamList<T> all_params() const;
  AdamW<T>& optimizer() { return opt_; }
  const AdamW<T>& optimizer() const { return opt_; }
  // For resume: positions the trainer at `step` (optimizer state restored separately).
  void set_step(std::int64_t step) { step_ = step; }

  LossRecord step();
  std::vector<LossRecord> run(const std::function<void(const LossRecord&)>& on_step = {});

 private:
  std::vector<std::size_t> batch_indices(std::int64_t step) const;

  Decoder<T>& decoder_;
  ProjectionBank<T>* bank_;
  AlignmentHead<T>* align_;
  const TrainingSet<T>& data_;
  TrainConfig config_;
  AdamW<T> opt_;
  std::int64_t step_ = 0;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace scalar
