#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scalar/cli/checkpoint.hpp"
#include "scalar/sampler/sampler.hpp"
#include "scalar/train/train.hpp"

namespace scalar::cli {

// Every tunable of a run. Defaults are the desk-scale setup: 32x32 images,
// schedule (1,2,3,4), L = 6, d = 128, V = 256, guidance 4.0.
struct RunConfig {
  std::uint64_t seed = 0;

  struct Data {
    std::string manifest;  // relative to the workdir; empty -> generate in memory
    std::size_t train_count = 2048;
    std::uint64_t train_seed = 1;
    std::size_t eval_count = 128;
    std::uint64_t eval_seed = 999;
  } data;

  std::vector<int> schedule{1, 2, 3, 4};

  TokenizerConfig tokenizer;
  TokenizerTrainConfig tokenizer_train;

  struct Backbone {
    int layers = 6;
    int d_model = 128;
    int heads = 4;
    int num_classes = 8;
    int pretrain_epochs = 10;
  } backbone;

  EncoderConfig encoder;
  std::vector<int> taps;  // empty -> default taps
  ProjectionSpec projection{Sharing::PerScaleLayer, Structure::Linear, 64, {1, 2, 3, 4, 5, 6}};

  TrainConfig train;
  GuidanceConfig guidance;

  struct Eval {
    std::size_t batch = 32;
    std::vector<Modality> modalities{Modality::Edge};
    bool frechet = true;
  } eval;

  DecoderConfig decoder_config() const;
  ScaleSchedule scale_schedule() const { return ScaleSchedule::square(schedule); }
  // Cross-field checks (projection layers within L, vocab bounds, ...).
  void validate() const;
};

Json to_json(const RunConfig& c);
// Rejects unknown keys at every level; missing keys keep their defaults.
RunConfig config_from_json(const Json& j);
RunConfig load_config(const std::filesystem::path& path);
// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace scalar::cli
