#include "scalar/train/train.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace scalar {

std::string to_string(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::None: return "none";
    case FreezePolicy::SelfAttention: return "sa";
    case FreezePolicy::All: return "all";
  }
  return "?";
}

FreezePolicy parse_freeze(const std::string& s) {
  for (auto p : {FreezePolicy::None, FreezePolicy::SelfAttention, FreezePolicy::All})
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown freeze policy '" + s + "' (valid: none, sa, all)");
}

template <class T>
std::size_t apply_freeze(const Decoder<T>& decoder, FreezePolicy policy) {
  std::size_t trainable = 0;
  for (auto p : decoder.params()) {
    const bool frozen = policy == FreezePolicy::All ||
                        (policy == FreezePolicy::SelfAttention && Decoder<T>::is_attention_param(p.name));
    p.var.set_requires_grad(!frozen);
    trainable += !frozen;
  }
  return trainable;
}

template <class T>
Var<T> ce_loss(const Var<T>& logits, std::span<const std::int32_t> targets) {
  const auto V = logits.dim(1);
  for (auto t : targets) {
    if (t < 0 || t >= V) throw std::out_of_range("target token " + std::to_string(t) + " outside [0," + std::to_string(V) + ")");
  }
  return ops::cross_entropy(logits, targets);
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "step,ce,align,total\n";
  out.precision(9);
  for (const auto& r : records) out << r.step << ',' << r.ce << ',' << r.align << ',' << r.total << '\n';
}

namespace {

constexpr std::uint64_t kEpochStream = 1ull << 40;
constexpr std::uint64_t kStepStream = 2ull << 40;
constexpr std::uint64_t kCodeStream = 3ull << 40;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, kEpochStream + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <class T>
void reseed_rows(Tensor<T>& codebook, const Tensor<T>& latents, const std::vector<int>& rows, Rng& rng) {
  const auto C = codebook.dim(1);
  const auto n = static_cast<std::int64_t>(latents.size()) / C;
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  for (int r : rows) {
    const auto src = pick(rng);
    std::copy_n(latents.data() + src * C, C, codebook.data() + r * C);
  }
}

template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& items, const std::vector<std::size_t>& idx) {
  Shape s = items.at(idx.front()).shape();
  s.insert(s.begin(), static_cast<std::int64_t>(idx.size()));
  Tensor<T> out(s);
  T* dst = out.data();
  for (auto i : idx) dst = std::copy(items[i].data(), items[i].data() + items[i].size(), dst);
  return out;
}

}  // namespace

template <class T>
TokenizerTrainer<T>::TokenizerTrainer(Tokenizer<T>& tok, std::vector<const data::Image*> images, ScaleSchedule schedule,
                                      TokenizerTrainConfig cfg)
    : tok_(tok),
      images_(std::move(images)),
      sched_(std::move(schedule)),
      cfg_(cfg),
      opt_(AdamWConfig{cfg.lr, 0.0, 0.9, 0.95, 1e-8}),
      usage_(static_cast<std::size_t>(tok.config().vocab), 0) {
  if (images_.empty()) throw std::invalid_argument("tokenizer training needs images");
  if (cfg_.epochs < 1 || cfg_.batch < 1) throw std::invalid_argument("tokenizer epochs and batch must be positive");
}

template <class T>
std::int64_t TokenizerTrainer<T>::steps_per_epoch() const {
  return static_cast<std::int64_t>(images_.size() / batch());
}

template <class T>
std::size_t TokenizerTrainer<T>::batch() const {
  return std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch), images_.size());
}

template <class T>
LossRecord TokenizerTrainer<T>::step() {
  const auto spe = steps_per_epoch();
  const auto order = epoch_order(images_.size(), cfg_.seed, step_ / spe);
  const auto start = static_cast<std::size_t>(step_ % spe) * batch();
  std::vector<const data::Image*> b;
  for (std::size_t i = 0; i < batch(); ++i) b.push_back(images_[order[start + i]]);
  const auto x = images_to_tensor<T>(b);
  Rng rng = derive_rng(cfg_.seed, kCodeStream + static_cast<std::uint64_t>(step_));
  if (step_ == 0) {
    NoGradGuard guard;
    std::vector<int> all(usage_.size());
    std::iota(all.begin(), all.end(), 0);
    reseed_rows(tok_.codebook().mutable_value(), tok_.encode_latent(Var<T>::constant(x)).value(), all, rng);
  }
  auto l = tok_.losses(x, sched_);
  backward(l.total);
  opt_.step(tok_.params());
  for (auto c : l.used_codes) usage_[static_cast<std::size_t>(c)]++;
  ++step_;
  if (cfg_.reset_every > 0 && step_ % cfg_.reset_every == 0) {
    std::vector<int> dead;
    for (std::size_t c = 0; c < usage_.size(); ++c)
      if (usage_[c] == 0) dead.push_back(static_cast<int>(c));
    if (!dead.empty()) {
      NoGradGuard guard;
      reseed_rows(tok_.codebook().mutable_value(), tok_.encode_latent(Var<T>::constant(x)).value(), dead, rng);
    }
    std::fill(usage_.begin(), usage_.end(), 0);
  }
  return {step_, static_cast<double>(l.reconstruction.value().item()), 0.0, static_cast<double>(l.total.value().item())};
}

template <class T>
std::vector<LossRecord> TokenizerTrainer<T>::run(const std::function<void(const LossRecord&)>& on_step) {
  std::vector<LossRecord> log;
  while (!done()) {
    log.push_back(step());
    if (on_step) on_step(log.back());
  }
  return log;
}

template <class T>
std::vector<LossRecord> train_tokenizer(Tokenizer<T>& tok, const std::vector<const data::Image*>& images,
                                        const ScaleSchedule& sched, const TokenizerTrainConfig& cfg,
                                        const std::function<void(const LossRecord&)>& on_step) {
  TokenizerTrainer<T> tr(tok, images, sched, cfg);
  return tr.run(on_step);
}

template class TokenizerTrainer<float>;
template class TokenizerTrainer<double>;

template <class T>
TrainingSet<T> build_training_set(const Tokenizer<T>& tok, const ScaleSchedule& schedule,
                                  const std::vector<data::ConditionSample>& samples,
                                  const FeatureExtractor<T>* encoder, const std::vector<Modality>& modalities,
                                  bool image_features) {
  if (samples.empty()) throw std::invalid_argument("training set is empty");
  TrainingSet<T> set;
  constexpr std::size_t chunk = 64;
  auto per_item = [](const Tensor<T>& batch, std::size_t i) {
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    const auto per = static_cast<std::ptrdiff_t>(shape_numel(s));
    return Tensor<T>(s, std::vector<T>(batch.data() + static_cast<std::ptrdiff_t>(i) * per,
                                       batch.data() + static_cast<std::ptrdiff_t>(i + 1) * per));
  };
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<const data::Image*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&samples[i].image);
    const auto x = images_to_tensor<T>(imgs);
    auto maps = tok.encode(x, schedule);
    for (std::size_t i = start; i < end; ++i) {
      auto& pyr = maps[i - start];
      set.labels.push_back(samples[i].label);
      set.teacher.push_back(teacher_inputs(tok, pyr, schedule));
      std::vector<std::int32_t> flat;
      for (const auto& m : pyr) flat.insert(flat.end(), m.indices.begin(), m.indices.end());
      set.targets.push_back(std::move(flat));
      set.maps.push_back(std::move(pyr));
    }
    if (!encoder) continue;
    for (auto m : modalities) {
      std::vector<const data::Image*> ctrl;
      for (std::size_t i = start; i < end; ++i) ctrl.push_back(&samples[i].condition(m));
      const auto f = (*encoder)(control_images_to_tensor<T>(ctrl));
      for (std::size_t i = 0; i < ctrl.size(); ++i) set.control[m].push_back(per_item(f, i));
    }
    if (image_features) {
      const auto f = (*encoder)(x);
      for (std::size_t i = 0; i < imgs.size(); ++i) set.image_features.push_back(per_item(f, i));
    }
  }
  return set;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch < 1 || !(optimizer.lr > 0)) throw std::invalid_argument("epochs, batch and lr must be positive");
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  if (warmup_steps < 0) throw std::invalid_argument("warmup steps must be non-negative");
  if (class_drop < 0 || class_drop > 1) throw std::invalid_argument("class-drop probability must be in [0, 1]");
  if (modalities.empty()) throw std::invalid_argument("at least one training modality is required");
}

template <class T>
Trainer<T>::Trainer(Decoder<T>& decoder, ProjectionBank<T>* bank, AlignmentHead<T>* align, const TrainingSet<T>& data,
                    TrainConfig config)
    : decoder_(decoder),
      bank_(bank),
      align_(config.uni && config.lambda > 0 ? align : nullptr),
      data_(data),
      config_(std::move(config)),
      opt_(config_.optimizer) {
  config_.validate();
  if (data_.size() == 0) throw std::invalid_argument("training set is empty");
  if (bank_) {
    for (auto m : config_.modalities)
      if (data_.control.count(m) == 0) {
        throw std::invalid_argument("training set has no features for modality " + std::string(data::modality_name(m)));
      }
  }
  if (align_ && data_.image_features.size() != data_.size()) {
    throw std::invalid_argument("alignment needs image features for every sample");
  }
  apply_freeze(decoder_, config_.freeze);
}

template <class T>
std::int64_t Trainer<T>::steps_per_epoch() const {
  const auto b = std::min<std::size_t>(static_cast<std::size_t>(config_.batch), data_.size());
  return static_cast<std::int64_t>(data_.size() / b);
}

template <class T>
ParamList<T> Trainer<T>::all_params() const {
  ParamList<T> out;
  append_prefixed(out, "decoder.", decoder_.params());
  if (bank_) append_prefixed(out, "control.", bank_->params());
  if (align_) append_prefixed(out, "", align_->params());
  return out;
}

template <class T>
ParamList<T> Trainer<T>::trainable() const {
  ParamList<T> out;
  for (const auto& p : all_params())
    if (p.var.requires_grad()) out.push_back(p);
  return out;
}

template <class T>
std::vector<std::size_t> Trainer<T>::batch_indices(std::int64_t step) const {
  const auto spe = steps_per_epoch();
  const auto b = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(config_.batch), data_.size()));
  const auto order = epoch_order(data_.size(), config_.seed, step / spe);
  const auto start = static_cast<std::size_t>(step % spe) * b;
  return {order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(start + b)};
}

template <class T>
LossRecord Trainer<T>::step() {
  const auto idx = batch_indices(step_);
  const auto B = static_cast<std::int64_t>(idx.size());
  const auto& sched = decoder_.config().schedule;
  const std::int64_t Tn = sched.total_tokens(), d = decoder_.config().d_model;

  Rng rng = derive_rng(config_.seed, kStepStream + static_cast<std::uint64_t>(step_));
  std::bernoulli_distribution drop(config_.class_drop);
  std::vector<ClassMix> classes;
  std::vector<std::uint8_t> dropped;
  std::vector<Modality> mods;
  for (auto i : idx) {
    const bool dr = drop(rng);
    dropped.push_back(dr);
    classes.push_back(ClassMix::label(dr ? decoder_.null_class() : data_.labels[i]));
    mods.push_back(config_.modalities.size() > 1 ? sample_modality(rng, config_.modalities) : config_.modalities[0]);
  }

  Injections<T> inj;
  Var<T> align_term;
  if (bank_) {
    std::vector<Tensor<T>> feats;
    for (std::size_t j = 0; j < idx.size(); ++j) feats.push_back(data_.control.at(mods[j])[idx[j]]);
    std::vector<std::size_t> seq(idx.size());
    std::iota(seq.begin(), seq.end(), 0);
    Var<T> f = Var<T>::constant(stack(feats, seq));
    if (align_) {
      f = align_->apply(f);
      align_term = align_loss(f, stack(data_.image_features, idx));
    }
    inj = bank_->injections(resize_per_scale(f, sched));
    if (std::any_of(dropped.begin(), dropped.end(), [](auto v) { return v != 0; })) {
      Tensor<T> keep = Tensor<T>::full({B * Tn, d}, T(1));
      for (std::int64_t b = 0; b < B; ++b)
        if (dropped[static_cast<std::size_t>(b)]) std::fill_n(keep.data() + b * Tn * d, Tn * d, T(0));
      const auto kv = Var<T>::constant(std::move(keep));
      for (auto& [l, v] : inj) v = ops::mul(v, kv);
    }
  }

  std::vector<std::int32_t> targets;
  for (auto i : idx) targets.insert(targets.end(), data_.targets[i].begin(), data_.targets[i].end());
  auto logits = decoder_.forward_train(decoder_.build_inputs(classes, stack(data_.teacher, idx)), B, inj);
  auto ce = ce_loss(logits, std::span<const std::int32_t>(targets));
  auto total = total_loss(ce, align_term, config_.lambda);
  backward(total);
  const double ramp = config_.warmup_steps > 0
                         ? std::min(1.0, static_cast<double>(step_ + 1) / config_.warmup_steps)
                         : 1.0;
  opt_.step(all_params(), ramp);

  ++step_;
  return {step_, static_cast<double>(ce.value().item()),
          align_term.defined() ? static_cast<double>(align_term.value().item()) : 0.0,
          static_cast<double>(total.value().item())};
}

template <class T>
std::vector<LossRecord> Trainer<T>::run(const std::function<void(const LossRecord&)>& on_step) {
  std::vector<LossRecord> log;
  while (!done()) {
    log.push_back(step());
    if (on_step) on_step(log.back());
  }
  return log;
}

template class Trainer<float>;
template class Trainer<double>;
template std::size_t apply_freeze(const Decoder<float>&, FreezePolicy);
template std::size_t apply_freeze(const Decoder<double>&, FreezePolicy);
template Var<float> ce_loss(const Var<float>&, std::span<const std::int32_t>);
template Var<double> ce_loss(const Var<double>&, std::span<const std::int32_t>);
template std::vector<LossRecord> train_tokenizer(Tokenizer<float>&, const std::vector<const data::Image*>&,
                                                 const ScaleSchedule&, const TokenizerTrainConfig&,
                                                 const std::function<void(const LossRecord&)>&);
template std::vector<LossRecord> train_tokenizer(Tokenizer<double>&, const std::vector<const data::Image*>&,
                                                 const ScaleSchedule&, const TokenizerTrainConfig&,
                                                 const std::function<void(const LossRecord&)>&);
template TrainingSet<float> build_training_set(const Tokenizer<float>&, const ScaleSchedule&,
                                               const std::vector<data::ConditionSample>&,
                                               const FeatureExtractor<float>*, const std::vector<Modality>&, bool);
template TrainingSet<double> build_training_set(const Tokenizer<double>&, const ScaleSchedule&,
                                                const std::vector<data::ConditionSample>&,
                                                const FeatureExtractor<double>*, const std::vector<Modality>&, bool);

}  // namespace scalar
