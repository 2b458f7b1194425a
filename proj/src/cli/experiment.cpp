#include "scalar/cli/experiment.hpp"

#include <stdexcept>

#include "scalar/data/dataset.hpp"

namespace scalar::cli {

std::string to_string(Mode m) { return m == Mode::Uni ? "uni" : "scalar"; }

Mode parse_mode(const std::string& s) {
  if (s == "scalar") return Mode::Scalar;
  if (s == "uni") return Mode::Uni;
  throw std::invalid_argument("unknown mode '" + s + "' (valid: scalar, uni)");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Tokenizer: return "tokenizer";
    case Stage::Backbone: return "backbone";
    case Stage::Control: return "control";
    case Stage::Done: return "done";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (auto st : {Stage::Tokenizer, Stage::Backbone, Stage::Control, Stage::Done})
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

namespace {

constexpr std::uint64_t kBackboneSeedMix = 0x9e3779b97f4a7c15ull;

Json losses_json(const std::vector<LossRecord>& rs) {
  Json a = Json::array();
  for (const auto& r : rs) a.push_back({r.step, r.ce, r.align, r.total});
  return a;
}

std::vector<LossRecord> losses_from(const Json& a) {
  std::vector<LossRecord> out;
  for (const auto& r : a) out.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()});
  return out;
}

Json pretrained_part(const Json& config) {
  Json j;
  for (const char* k : {"data", "schedule", "tokenizer", "backbone"}) j[k] = config.at(k);
  return j;
}

}  // namespace

Experiment::Experiment(RunConfig config, Mode mode) : config_(std::move(config)), mode_(mode) {
  config_.validate();
  init_modules();
}

void Experiment::init_modules() {
  const auto seed = config_.seed;
  Rng tr = derive_rng(seed, 0x70c);
  tok_ = Tokenizer<float>(config_.tokenizer, tr);
  enc_ = ControlEncoder<float>(config_.encoder, config_.taps);
  extractor_ = as_extractor(enc_);
  Rng dr = derive_rng(seed, 0xdec);
  dec_ = Decoder<float>(config_.decoder_config(), dr);
  Rng br = derive_rng(seed, 0xba4c);
  bank_ = ProjectionBank<float>(config_.projection, config_.scale_schedule(), enc_.feature_dim(),
                                config_.backbone.d_model, br);
  align_ = AlignmentHead<float>(enc_.feature_dim());
}

std::unique_ptr<Experiment> Experiment::from_checkpoint(const Checkpoint& ck) {
  auto ex = std::make_unique<Experiment>(config_from_json(ck.config), parse_mode(ck.state.at("mode").get<std::string>()));
  if (ck.state.at("encoder_digest").get<std::uint64_t>() != ex->enc_.weight_digest()) {
    throw std::runtime_error("checkpoint: control encoder digest does not match the configured encoder");
  }
  restore_params(ck, "tokenizer.", ex->tok_.params());
  restore_params(ck, "decoder.", ex->dec_.params());
  restore_params(ck, "control.", ex->bank_.params());
  restore_params(ck, "", ex->align_.params());
  ex->stage_ = parse_stage(ck.state.at("stage").get<std::string>());
  ex->stage_step_ = ck.state.at("stage_step").get<std::int64_t>();
  for (const auto& [k, v] : ck.state.at("losses").items()) ex->losses_[k] = losses_from(v);
  if (ck.state.contains("opt.steps")) ex->resume_ = ck;
  return ex;
}

std::unique_ptr<Experiment> Experiment::branch(const Checkpoint& ck, RunConfig config, Mode mode) {
  const Stage st = parse_stage(ck.state.at("stage").get<std::string>());
  if (st != Stage::Control && st != Stage::Done) {
    throw std::invalid_argument("branch: checkpoint has not finished backbone training (stage " + to_string(st) + ")");
  }
  if (pretrained_part(ck.config) != pretrained_part(to_json(config))) {
    throw std::invalid_argument("branch: data, schedule, tokenizer and backbone settings must match the checkpoint");
  }
  auto ex = std::make_unique<Experiment>(std::move(config), mode);
  restore_params(ck, "tokenizer.", ex->tok_.params());
  restore_params(ck, "decoder.", ex->dec_.params());
  for (const char* k : {"tokenizer", "backbone"})
    if (ck.state.at("losses").contains(k)) ex->losses_[k] = losses_from(ck.state.at("losses").at(k));
  ex->stage_ = Stage::Control;
  return ex;
}

metrics::ImageGenerator Experiment::generator(bool control, const GuidanceConfig& guidance) const {
  return metrics::model_generator<float>(view(control), control ? &extractor_ : nullptr,
                                         control && uses_alignment() ? &align_ : nullptr, guidance);
}

Checkpoint Experiment::checkpoint() const { return checkpoint_with(nullptr, nullptr); }

Checkpoint Experiment::checkpoint_with(const AdamW<float>* opt, const std::vector<int>* usage) const {
  Checkpoint ck;
  ck.config = to_json(config_);
  ck.state["mode"] = to_string(mode_);
  ck.state["stage"] = to_string(stage_);
  ck.state["stage_step"] = stage_step_;
  ck.state["encoder_digest"] = enc_.weight_digest();
  Json l = Json::object();
  for (const auto& [k, v] : losses_) l[k] = losses_json(v);
  ck.state["losses"] = l;
  if (usage) ck.state["usage"] = *usage;
  store_params(ck, "tokenizer", "tokenizer.", tok_.params());
  store_params(ck, "backbone", "decoder.", dec_.params());
  store_params(ck, "control", "control.", bank_.params());
  store_params(ck, "alignment", "", align_.params());
  if (opt) store_optimizer(ck, "opt.", *opt);
  return ck;
}

TrainConfig Experiment::stage_config(Stage s) const {
  TrainConfig t = config_.train;
  if (s == Stage::Backbone) {
    t.epochs = config_.backbone.pretrain_epochs;
    t.freeze = FreezePolicy::None;
    t.uni = false;
    t.seed = config_.seed ^ kBackboneSeedMix;
  } else {
    t.seed = config_.seed;
    t.uni = mode_ == Mode::Uni;
  }
  return t;
}

void Experiment::train(const std::vector<data::ConditionSample>& samples, Stage last, const EpochHook& on_epoch,
                       const StepHook& on_step) {
  if (samples.empty()) throw std::invalid_argument("training needs samples");
  const auto sched = config_.scale_schedule();

  if (stage_ == Stage::Tokenizer && last >= Stage::Tokenizer) {
    std::vector<const data::Image*> imgs;
    for (const auto& s : samples) imgs.push_back(&s.image);
    TokenizerTrainConfig tc = config_.tokenizer_train;
    tc.seed = config_.seed;
    TokenizerTrainer<float> tt(tok_, imgs, sched, tc);
    if (resume_) {
      restore_optimizer(*resume_, "opt.", tt.optimizer());
      tt.usage() = resume_->state.at("usage").get<std::vector<int>>();
      tt.set_step(stage_step_);
      resume_.reset();
    }
    auto& log = losses_["tokenizer"];
    while (!tt.done()) {
      log.push_back(tt.step());
      stage_step_ = tt.step_index();
      if (on_step) on_step(Stage::Tokenizer, log.back());
      if (stage_step_ % tt.steps_per_epoch() == 0) {
        const int epoch = static_cast<int>(stage_step_ / tt.steps_per_epoch());
        if (tt.done()) stage_ = Stage::Backbone, stage_step_ = 0;
        if (on_epoch) on_epoch(Stage::Tokenizer, epoch, tt.done() ? checkpoint() : checkpoint_with(&tt.optimizer(), &tt.usage()));
      }
    }
  }
  if (stage_ == Stage::Backbone && config_.backbone.pretrain_epochs == 0) stage_ = Stage::Control;
  if (stage_ == Stage::Done || last < Stage::Backbone || stage_ > last) return;

  const auto set = build_training_set<float>(tok_, sched, samples, &extractor_, config_.train.modalities,
                                             uses_alignment());
  auto run_stage = [&](Stage s, Trainer<float>& tr, const char* name, Stage next) {
    if (resume_) {
      restore_optimizer(*resume_, "opt.", tr.optimizer());
      tr.set_step(stage_step_);
      resume_.reset();
    }
    auto& log = losses_[name];
    while (!tr.done()) {
      log.push_back(tr.step());
      stage_step_ = tr.step_index();
      if (on_step) on_step(s, log.back());
      if (stage_step_ % tr.steps_per_epoch() == 0) {
        const int epoch = static_cast<int>(stage_step_ / tr.steps_per_epoch());
        if (tr.done()) stage_ = next, stage_step_ = 0;
        if (on_epoch) on_epoch(s, epoch, tr.done() ? checkpoint() : checkpoint_with(&tr.optimizer(), nullptr));
      }
    }
    if (tr.total_steps() == 0) stage_ = next, stage_step_ = 0;
  };
  if (stage_ == Stage::Backbone) {
    Trainer<float> tr(dec_, nullptr, nullptr, set, stage_config(Stage::Backbone));
    run_stage(Stage::Backbone, tr, "backbone", Stage::Control);
  }
  if (stage_ == Stage::Control && last >= Stage::Control) {
    Trainer<float> tr(dec_, &bank_, &align_, set, stage_config(Stage::Control));
    run_stage(Stage::Control, tr, "control", Stage::Done);
  }
}

std::vector<data::ConditionSample> training_samples(const RunConfig& c, const std::filesystem::path& workdir) {
  if (!c.data.manifest.empty()) return data::load_dataset(workdir / c.data.manifest);
  return data::generate_dataset(c.data.train_count, c.data.train_seed);
}

std::vector<data::ConditionSample> eval_samples(const RunConfig& c) {
  return data::generate_dataset(c.data.eval_count, c.data.eval_seed);
}

metrics::MetricReport evaluate(const Experiment& ex, const std::vector<data::ConditionSample>& eval, bool control) {
  static const metrics::Embedder embedder = metrics::pooled_rgb;
  metrics::EvalOptions opts;
  opts.batch = ex.config().eval.batch;
  opts.embedder = ex.config().eval.frechet ? &embedder : nullptr;
  opts.config_hash = config_hash(ex.config());
  return metrics::consistency_eval(ex.generator(control, ex.config().guidance), eval, ex.config().eval.modalities, opts);
}

}  // namespace scalar::cli
