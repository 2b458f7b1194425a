#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>

#include "scalar/cli/checkpoint.hpp"
#include "scalar/cli/config.hpp"
#include "scalar/metrics/metrics.hpp"

namespace scalar::cli {

enum class Mode { Scalar, Uni };
std::string to_string(Mode m);
// Accepts "scalar" and "uni".
Mode parse_mode(const std::string& s);

enum class Stage { Tokenizer, Backbone, Control, Done };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

// Tokenizer, class-conditional backbone and control bank trained in stages.
// The control encoder is rebuilt from its seed and never stored.
class Experiment {
 public:
  Experiment(RunConfig config, Mode mode);
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  // Full state, including the optimizer of an unfinished stage.
  static std::unique_ptr<Experiment> from_checkpoint(const Checkpoint& ck);
  // Fresh control stage on top of a checkpoint whose backbone stage is done.
  // Only the control, train, guidance, eval sections and the seed may differ.
  static std::unique_ptr<Experiment> branch(const Checkpoint& ck, RunConfig config, Mode mode);

  const RunConfig& config() const { return config_; }
  Mode mode() const { return mode_; }
  Stage stage() const { return stage_; }
  std::int64_t stage_step() const { return stage_step_; }
  bool uses_alignment() const { return mode_ == Mode::Uni && config_.train.lambda > 0; }

  const Tokenizer<float>& tokenizer() const { return tok_; }
  const Decoder<float>& decoder() const { return dec_; }
  const ProjectionBank<float>& bank() const { return bank_; }
  const AlignmentHead<float>& align() const { return align_; }
  const ControlEncoder<float>& encoder() const { return enc_; }
  const FeatureExtractor<float>& extractor() const { return extractor_; }
  const std::map<std::string, std::vector<LossRecord>>& losses() const { return losses_; }

  ModelView<float> view(bool control) const { return {&tok_, &dec_, control ? &bank_ : nullptr}; }
  metrics::ImageGenerator generator(bool control, const GuidanceConfig& guidance) const;

  Checkpoint checkpoint() const;

  // Called after every completed epoch with a checkpoint that resumes there.
  using EpochHook = std::function<void(Stage, int epoch, const Checkpoint&)>;
  using StepHook = std::function<void(Stage, const LossRecord&)>;
  // Runs stages up to and including `last`.
  void train(const std::vector<data::ConditionSample>& samples, Stage last = Stage::Control,
             const EpochHook& on_epoch = {}, const StepHook& on_step = {});

 private:
  void init_modules();
  TrainConfig stage_config(Stage s) const;
  Checkpoint checkpoint_with(const AdamW<float>* opt, const std::vector<int>* usage) const;

  RunConfig config_;
  Mode mode_;
  Tokenizer<float> tok_;
  ControlEncoder<float> enc_;
  FeatureExtractor<float> extractor_;
  Decoder<float> dec_;
  ProjectionBank<float> bank_;
  AlignmentHead<float> align_;
  Stage stage_ = Stage::Tokenizer;
  std::int64_t stage_step_ = 0;
  std::map<std::string, std::vector<LossRecord>> losses_;
  std::optional<Checkpoint> resume_;  // optimizer state awaiting the next stage run
};

// Training and evaluation sets as the config describes them.
std::vector<data::ConditionSample> training_samples(const RunConfig& c, const std::filesystem::path& workdir);
std::vector<data::ConditionSample> eval_samples(const RunConfig& c);

metrics::MetricReport evaluate(const Experiment& ex, const std::vector<data::ConditionSample>& eval, bool control);

}  // namespace scalar::cli
