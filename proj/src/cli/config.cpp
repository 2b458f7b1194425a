#include "scalar/cli/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace scalar::cli {

namespace {

// Reads keys of one JSON object and rejects whatever was not read.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + path_ + "' must be an object");
  }
  template <class V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const Json::exception&) {
      throw std::invalid_argument("config: '" + where(key) + "' has the wrong type");
    }
  }
  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key '" + where(k) + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<Modality> modalities_from(const std::vector<std::string>& names) {
  std::vector<Modality> out;
  for (const auto& n : names) out.push_back(data::parse_modality(n));
  return out;
}

std::vector<std::string> modality_names(const std::vector<Modality>& ms) {
  std::vector<std::string> out;
  for (auto m : ms) out.emplace_back(data::modality_name(m));
  return out;
}

}  // namespace

DecoderConfig RunConfig::decoder_config() const {
  DecoderConfig d;
  d.layers = backbone.layers;
  d.d_model = backbone.d_model;
  d.heads = backbone.heads;
  d.num_classes = backbone.num_classes;
  d.vocab = tokenizer.vocab;
  d.code_dim = tokenizer.code_dim;
  d.schedule = scale_schedule();
  return d;
}

void RunConfig::validate() const {
  const auto dc = decoder_config();
  dc.validate();
  const int latent = tokenizer.image_size >> tokenizer.channels.size();
  if (schedule.empty() || schedule.back() != latent) {
    throw std::invalid_argument("config: schedule must end at the " + std::to_string(latent) + "x" +
                                std::to_string(latent) + " latent grid");
  }
  const int taps_n = taps.empty() ? static_cast<int>(default_taps(encoder.depth).size()) : static_cast<int>(taps.size());
  projection.validate(backbone.layers, taps_n * encoder.width, backbone.d_model);
  train.validate();
  guidance.validate(tokenizer.vocab);
  if (eval.batch == 0) throw std::invalid_argument("config: eval.batch must be positive");
  if (eval.modalities.empty()) throw std::invalid_argument("config: eval.modalities is empty");
  if (backbone.pretrain_epochs < 0) throw std::invalid_argument("config: backbone.pretrain_epochs must be >= 0");
  if (data.train_count == 0 || data.eval_count == 0) throw std::invalid_argument("config: data counts must be positive");
}

Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["data"] = {{"manifest", c.data.manifest},
               {"train_count", c.data.train_count},
               {"train_seed", c.data.train_seed},
               {"eval_count", c.data.eval_count},
               {"eval_seed", c.data.eval_seed}};
  j["schedule"] = c.schedule;
  j["tokenizer"] = {{"image_size", c.tokenizer.image_size},
                    {"vocab", c.tokenizer.vocab},
                    {"code_dim", c.tokenizer.code_dim},
                    {"channels", c.tokenizer.channels},
                    {"codebook_weight", c.tokenizer.codebook_weight},
                    {"commitment_weight", c.tokenizer.commitment_weight},
                    {"epochs", c.tokenizer_train.epochs},
                    {"batch", c.tokenizer_train.batch},
                    {"lr", c.tokenizer_train.lr},
                    {"reset_every", c.tokenizer_train.reset_every}};
  j["backbone"] = {{"layers", c.backbone.layers},
                   {"d_model", c.backbone.d_model},
                   {"heads", c.backbone.heads},
                   {"num_classes", c.backbone.num_classes},
                   {"pretrain_epochs", c.backbone.pretrain_epochs}};
  j["control"] = {{"image_size", c.encoder.image_size},
                  {"patch", c.encoder.patch},
                  {"depth", c.encoder.depth},
                  {"width", c.encoder.width},
                  {"heads", c.encoder.heads},
                  {"encoder_seed", c.encoder.seed},
                  {"taps", c.taps},
                  {"sharing", to_string(c.projection.sharing)},
                  {"structure", to_string(c.projection.structure)},
                  {"bottleneck", c.projection.bottleneck},
                  {"layers", c.projection.layers}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch", c.train.batch},
                {"lr", c.train.optimizer.lr},
                {"weight_decay", c.train.optimizer.weight_decay},
                {"beta1", c.train.optimizer.beta1},
                {"beta2", c.train.optimizer.beta2},
                {"eps", c.train.optimizer.eps},
                {"lambda", c.train.lambda},
                {"class_drop", c.train.class_drop},
                {"warmup_steps", c.train.warmup_steps},
                {"freeze", to_string(c.train.freeze)},
                {"modalities", modality_names(c.train.modalities)}};
  j["guidance"] = {{"scale", c.guidance.scale},
                   {"top_k", c.guidance.top_k},
                   {"temperature", c.guidance.temperature},
                   {"seed", c.guidance.seed}};
  j["eval"] = {{"batch", c.eval.batch}, {"modalities", modality_names(c.eval.modalities)}, {"frechet", c.eval.frechet}};
  return j;
}

RunConfig config_from_json(const Json& j) {
  RunConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  if (const Json* d = root.child("data")) {
    Section s(*d, "data");
    s.read("manifest", c.data.manifest);
    s.read("train_count", c.data.train_count);
    s.read("train_seed", c.data.train_seed);
    s.read("eval_count", c.data.eval_count);
    s.read("eval_seed", c.data.eval_seed);
    s.finish();
  }
  root.read("schedule", c.schedule);
  if (const Json* t = root.child("tokenizer")) {
    Section s(*t, "tokenizer");
    s.read("image_size", c.tokenizer.image_size);
    s.read("vocab", c.tokenizer.vocab);
    s.read("code_dim", c.tokenizer.code_dim);
    s.read("channels", c.tokenizer.channels);
    s.read("codebook_weight", c.tokenizer.codebook_weight);
    s.read("commitment_weight", c.tokenizer.commitment_weight);
    s.read("epochs", c.tokenizer_train.epochs);
    s.read("batch", c.tokenizer_train.batch);
    s.read("lr", c.tokenizer_train.lr);
    s.read("reset_every", c.tokenizer_train.reset_every);
    s.finish();
  }
  if (const Json* b = root.child("backbone")) {
    Section s(*b, "backbone");
    s.read("layers", c.backbone.layers);
    s.read("d_model", c.backbone.d_model);
    s.read("heads", c.backbone.heads);
    s.read("num_classes", c.backbone.num_classes);
    s.read("pretrain_epochs", c.backbone.pretrain_epochs);
    s.finish();
  }
  c.projection.layers = injection_set("all", c.backbone.layers);
  if (const Json* ctl = root.child("control")) {
    Section s(*ctl, "control");
    s.read("image_size", c.encoder.image_size);
    s.read("patch", c.encoder.patch);
    s.read("depth", c.encoder.depth);
    s.read("width", c.encoder.width);
    s.read("heads", c.encoder.heads);
    s.read("encoder_seed", c.encoder.seed);
    s.read("taps", c.taps);
    std::string sharing = to_string(c.projection.sharing), structure = to_string(c.projection.structure);
    s.read("sharing", sharing);
    s.read("structure", structure);
    c.projection.sharing = parse_sharing(sharing);
    c.projection.structure = parse_structure(structure);
    s.read("bottleneck", c.projection.bottleneck);
    if (const Json* l = s.child("layers")) {
      if (l->is_string()) {
        c.projection.layers = injection_set(l->get<std::string>(), c.backbone.layers);
      } else {
        s.read("layers", c.projection.layers);
      }
    }
    s.finish();
  }
  if (const Json* t = root.child("train")) {
    Section s(*t, "train");
    s.read("epochs", c.train.epochs);
    s.read("batch", c.train.batch);
    s.read("lr", c.train.optimizer.lr);
    s.read("weight_decay", c.train.optimizer.weight_decay);
    s.read("beta1", c.train.optimizer.beta1);
    s.read("beta2", c.train.optimizer.beta2);
    s.read("eps", c.train.optimizer.eps);
    s.read("lambda", c.train.lambda);
    s.read("class_drop", c.train.class_drop);
    s.read("warmup_steps", c.train.warmup_steps);
    std::string freeze = to_string(c.train.freeze);
    s.read("freeze", freeze);
    c.train.freeze = parse_freeze(freeze);
    std::vector<std::string> mods = modality_names(c.train.modalities);
    s.read("modalities", mods);
    c.train.modalities = modalities_from(mods);
    s.finish();
  }
  if (const Json* g = root.child("guidance")) {
    Section s(*g, "guidance");
    s.read("scale", c.guidance.scale);
    s.read("top_k", c.guidance.top_k);
    s.read("temperature", c.guidance.temperature);
    s.read("seed", c.guidance.seed);
    s.finish();
  }
  if (const Json* e = root.child("eval")) {
    Section s(*e, "eval");
    s.read("batch", c.eval.batch);
    std::vector<std::string> mods = modality_names(c.eval.modalities);
    s.read("modalities", mods);
    c.eval.modalities = modalities_from(mods);
    s.read("frechet", c.eval.frechet);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace scalar::cli
