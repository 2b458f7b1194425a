// Acceptance runner: one "criterion N: PASS|FAIL" line per criterion.
//   --suite fast   criteria 1-5, 7, 12, 13 (seconds to minutes)
//   --suite heavy  criteria 6, 8-11 (full-size training, about 1.5 h on one core)
#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <regex>
#include <sstream>

#include "scalar/cli/commands.hpp"
#include "scalar/cli/experiment.hpp"
#include "scalar/data/dataset.hpp"
#include "scalar/data/scene.hpp"
#include "scalar/metrics/metrics.hpp"
#include "scalar/numerics/gradcheck.hpp"
#include "scalar/sampler/sampler.hpp"
#include "support/metric_oracles.hpp"
#include "support/op_cases.hpp"

using namespace scalar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

std::vector<ClassMix> labels(std::vector<int> ls) {
  std::vector<ClassMix> out;
  for (int l : ls) out.push_back(ClassMix::label(l));
  return out;
}

template <class T>
void randomize(const ParamList<T>& params, Rng& rng, double sd) {
  for (auto p : params) p.var.mutable_value() = randn<T>(p.var.shape(), rng, sd);
}

// ---------------------------------------------------------------- fast suite

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, int> shapes;
  double worst64 = 0, worst32 = 0;
  std::string bad;
  for (const auto& c : scalar::testing::gradient_cases()) {
    const double e64 = gradient_error<double>(c.f64, c.f64, c.inputs, 1e-4);
    const double e32 = gradient_error<float>(c.f32, c.f64, c.inputs, 1e-4);
    worst64 = std::max(worst64, e64);
    worst32 = std::max(worst32, e32);
    if (!(e64 < 1e-6 && e32 < 1e-4) && bad.empty()) bad = c.name;
    shapes[c.name.substr(0, c.name.find('['))]++;
  }
  int fewest = 1 << 30;
  for (const auto& [op, n] : shapes) fewest = std::min(fewest, n);
  const double secs = seconds_since(t0);
  const bool pass = bad.empty() && fewest >= 5 && secs < 60;
  return {pass, std::to_string(shapes.size()) + " ops, >= " + std::to_string(fewest) + " shapes each, max rel err 64-bit " +
                    fmt(worst64 * 1e9, 3) + "e-9, 32-bit " + fmt(worst32 * 1e6, 3) + "e-6, " + fmt(secs, 1) + " s" +
                    (bad.empty() ? "" : ", first failure " + bad)};
}

Outcome zero_init_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  DecoderConfig dc;
  Rng rng(21);
  Decoder<double> dec(dc, rng);
  randomize(dec.params(), rng, 0.2);  // a "pretrained" backbone, not a fresh one
  ControlEncoder<double> enc(EncoderConfig{});
  const auto s1 = data::render_scene(data::random_scene(1)), s2 = data::render_scene(data::random_scene(2));
  auto seq = dec.build_inputs(labels({3, 6}), randn<double>({2, dc.schedule.total_tokens() - 1, dc.code_dim}, rng));
  const auto plain = dec.forward_train(seq, 2).value();
  const auto feats = enc.features(control_images_to_tensor<double>({&s1.edge, &s2.edge}));
  const auto resized = resize_per_scale(Var<double>::constant(feats), dc.schedule);
  int configs = 0, exact = 0;
  for (auto sh : {Sharing::PerScaleLayer, Sharing::PerScale, Sharing::PerLayer})
    for (auto st : {Structure::Linear, Structure::LinearLite})
      for (const char* set : {"first", "alt", "all"}) {
        ProjectionBank<double> bank({sh, st, 64, injection_set(set, dc.layers)}, dc.schedule, enc.feature_dim(),
                                    dc.d_model, rng);
        ++configs;
        exact += dec.forward_train(seq, 2, bank.injections(resized)).value() == plain;
      }
  const double secs = seconds_since(t0);
  return {configs == 18 && exact == 18 && secs < 120,
          std::to_string(exact) + "/" + std::to_string(configs) + " configs bit-exact, " + fmt(secs, 1) + " s"};
}

Outcome kv_cache_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  DecoderConfig dc;
  const auto& s = dc.schedule;
  const int T = s.total_tokens(), C = dc.code_dim, D = dc.d_model, V = dc.vocab;
  Rng rng(31);
  ControlEncoder<float> enc(EncoderConfig{});
  float worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Decoder<float> dec(dc, rng);
    randomize(dec.params(), rng, 0.15);
    ProjectionBank<float> bank({Sharing::PerScaleLayer, Structure::Linear, 64, injection_set("all", dc.layers)}, s,
                               enc.feature_dim(), D, rng);
    randomize(bank.params(), rng, 0.05);
    const auto a = data::render_scene(data::random_scene(100 + trial)), b = data::render_scene(data::random_scene(200 + trial));
    const auto resized =
        resize_per_scale(Var<float>::constant(enc.features(control_images_to_tensor<float>({&a.depth, &b.depth}))), s);
    const auto cls = labels({trial % 8, (trial * 3 + 1) % 8});
    const auto in = randn<float>({2, T - 1, C}, rng);
    const auto full = dec.forward_train(dec.build_inputs(cls, in), 2, bank.injections(resized)).value();
    auto cache = dec.new_cache(2, 1000 + trial);
    for (int k = 0; k < s.num_scales(); ++k) {
      const int n = s.tokens(k);
      Tensor<float> part({2, n, C});
      if (k > 0)
        for (int bi = 0; bi < 2; ++bi)
          std::copy_n(in.data() + (bi * (T - 1) + s.offset(k) - 1) * C, n * C, part.data() + bi * n * C);
      const auto logits =
          dec.forward_step(dec.embed_scale(k, cls, part), k, cache, 1000 + trial, bank.step_injections(resized, k)).value();
      for (int bi = 0; bi < 2; ++bi)
        for (int i = 0; i < n * V; ++i)
          worst = std::max(worst, std::abs(logits[static_cast<std::size_t>(bi * n * V + i)] -
                                           full[static_cast<std::size_t>((bi * T + s.offset(k)) * V + i)]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4f && secs < 60, "20 instances, max |dlogit| " + fmt(worst * 1e6, 3) + "e-6, " + fmt(secs, 1) + " s"};
}

Outcome mask_tables() {
  // Schedule (1,2): the start token sees only itself; the four 2x2 tokens see everything.
  const std::vector<std::uint8_t> small = {1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
                                           1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  // Schedule (1,2,3,4): blocks of 1, 4, 9, 16 positions; a row sees every
  // column up to the end of its own block.
  std::vector<std::uint8_t> big;
  const int sizes[] = {1, 4, 9, 16};
  std::vector<int> block_end;
  int acc = 0;
  for (int sz : sizes) {
    acc += sz;
    for (int i = 0; i < sz; ++i) block_end.push_back(acc);
  }
  for (int i = 0; i < acc; ++i)
    for (int j = 0; j < acc; ++j) big.push_back(j < block_end[static_cast<std::size_t>(i)] ? 1 : 0);
  const bool a = block_causal_mask(ScaleSchedule::square({1, 2})) == small;
  const bool b = block_causal_mask(ScaleSchedule::square({1, 2, 3, 4})) == big;
  return {a && b, std::string("(1,2) ") + (a ? "equal" : "differs") + ", (1,2,3,4) " + (b ? "equal" : "differs")};
}

Outcome inpainting_invariant() {
  Rng rng(41);
  TokenizerConfig tc;
  Tokenizer<float> tok(tc, rng);
  tok.codebook().mutable_value() = randn<float>({tc.vocab, tc.code_dim}, rng);
  DecoderConfig dc;
  dc.layers = 2;
  dc.d_model = 64;
  Decoder<float> dec(dc, rng);
  randomize(dec.params(), rng, 0.3);
  const ModelView<float> view{&tok, &dec, nullptr};
  const auto& sched = dc.schedule;
  GuidanceConfig g;
  std::size_t checked = 0, kept = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto sc = data::render_scene(data::random_scene(500 + trial));
    const auto truth = tok.encode(images_to_tensor<float>({&sc.image}), sched);
    InpaintMask mask = full_mask(sched, false);
    std::bernoulli_distribution on(0.1 + 0.8 * (trial / 99.0));
    for (auto& row : mask)
      for (auto& v : row) v = on(rng);
    g.seed = static_cast<std::uint64_t>(trial);
    const auto out = inpaint<float>(view, labels({trial % dc.num_classes}), std::nullopt, {mask}, truth, g);
    for (int k = 0; k < sched.num_scales(); ++k)
      for (int i = 0; i < sched.tokens(k); ++i)
        if (!mask[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]) {
          ++checked;
          kept += out.maps[0][static_cast<std::size_t>(k)].indices[static_cast<std::size_t>(i)] ==
                  truth[0][static_cast<std::size_t>(k)].indices[static_cast<std::size_t>(i)];
        }
  }
  return {checked > 0 && kept == checked,
          "100 masks, " + std::to_string(kept) + "/" + std::to_string(checked) + " outside-mask tokens kept"};
}

Outcome metric_oracles() {
  using namespace scalar::testing;
  Rng rng(51);
  double f1d = 0, rmsed = 0, ssimd = 0, fd = 0, closed = 0;
  for (int t = 0; t < 200; ++t) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    std::uniform_real_distribution<double> dens(0.02, 0.6);
    const auto p = random_binary(rng, h, w, dens(rng)), r = random_binary(rng, h, w, dens(rng));
    f1d = std::max(f1d, std::abs(metrics::f1_edge(p, r) - f1_oracle(p, r)));
  }
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16), c = t % 2 ? 3 : 1;
    const auto p = random_image(rng, h, w, c), r = random_image(rng, h, w, c);
    double s = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) s += std::pow(double(p.at(y, x, ch)) - double(r.at(y, x, ch)), 2);
    rmsed = std::max(rmsed, std::abs(metrics::rmse(p, r) - std::sqrt(s / (h * w * c))));
  }
  for (int t = 0; t < 50; ++t) {
    const int h = 11 + static_cast<int>(rng() % 6), w = 11 + static_cast<int>(rng() % 6);
    const auto p = random_image(rng, h, w, 1), r = random_image(rng, h, w, 1);
    ssimd = std::max(ssimd, std::abs(metrics::ssim(p, r) - ssim_oracle(p, r)));
  }
  for (int t = 0; t < 50; ++t) {
    const auto s1 = random_spd(rng, 4), s2 = random_spd(rng, 4);
    const Eigen::VectorXd m1 = Eigen::VectorXd::Random(4), m2 = Eigen::VectorXd::Random(4);
    Eigen::EigenSolver<Eigen::MatrixXd> es(s1 * s2);
    double tr = 0;
    for (int i = 0; i < 4; ++i) tr += std::sqrt(es.eigenvalues()(i).real());
    const double oracle = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr;
    fd = std::max(fd, std::abs(metrics::frechet_distance(m1, s1, m2, s2) - oracle));
    // Closed forms: equal Gaussians, and commuting diagonal covariances.
    closed = std::max(closed, std::abs(metrics::frechet_distance(m1, s1, m1, s1)));
    const Eigen::VectorXd a = Eigen::VectorXd::Random(4).cwiseAbs(), b = Eigen::VectorXd::Random(4).cwiseAbs();
    const double diag = (m1 - m2).squaredNorm() + (a.cwiseSqrt() - b.cwiseSqrt()).squaredNorm();
    closed = std::max(closed, std::abs(metrics::frechet_distance(m1, a.asDiagonal().toDenseMatrix(), m2,
                                                                 b.asDiagonal().toDenseMatrix()) - diag));
  }
  const bool pass = f1d < 1e-6 && rmsed < 1e-6 && ssimd < 1e-6 && fd < 1e-6 && closed < 1e-9;
  return {pass, "max |d| f1 " + fmt(f1d * 1e12, 2) + "e-12, rmse " + fmt(rmsed * 1e12, 2) + "e-12, ssim " +
                    fmt(ssimd * 1e9, 2) + "e-9, frechet " + fmt(fd * 1e9, 2) + "e-9, closed forms " +
                    fmt(closed * 1e12, 2) + "e-12"};
}

// Guidance value stated in the reference text next to the build.
std::optional<double> reference_guidance_scale() {
  std::ifstream in(SCALAR_REFERENCE_TEXT);
  std::stringstream ss;
  ss << in.rdbuf();
  std::smatch m;
  const std::string text = ss.str();
  if (!std::regex_search(text, m, std::regex(R"(guidance scale to ([0-9]+(\.[0-9]+)?))"))) return std::nullopt;
  return std::stod(m[1]);
}

Outcome cfg_identities() {
  Rng rng(61);
  bool exact = true;
  for (int t = 0; t < 100; ++t) {
    const Shape sh{1 + static_cast<std::int64_t>(rng() % 7), 256};
    const auto c = randn<float>(sh, rng, 3.0), u = randn<float>(sh, rng, 3.0);
    exact = exact && cfg_mix(c, u, 0.0) == u && cfg_mix(c, u, 1.0) == c;
    const auto cd = randn<double>(sh, rng, 3.0), ud = randn<double>(sh, rng, 3.0);
    exact = exact && cfg_mix(cd, ud, 0.0) == ud && cfg_mix(cd, ud, 1.0) == cd;
  }
  const auto ref = reference_guidance_scale();
  const double lib = GuidanceConfig{}.scale, run = cli::RunConfig{}.guidance.scale;
  const bool scale_ok = ref && lib == *ref && run == *ref;
  return {exact && scale_ok, std::string("s=0/s=1 ") + (exact ? "exact" : "NOT exact") + ", default scale " + fmt(lib, 1) +
                                 " (run config " + fmt(run, 1) + ", reference " + (ref ? fmt(*ref, 1) : "missing") + ")"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility(const fs::path& scratch) {
  const char* config = R"({
  "seed": 7,
  "data": {"manifest": "data/manifest.json"},
  "schedule": [1, 2, 4],
  "tokenizer": {"vocab": 16, "code_dim": 4, "channels": [4, 4, 4], "epochs": 2, "batch": 16},
  "backbone": {"layers": 2, "d_model": 16, "heads": 2, "pretrain_epochs": 1},
  "control": {"depth": 4, "width": 8, "heads": 2, "bottleneck": 8, "layers": "all"},
  "train": {"epochs": 2, "batch": 8},
  "guidance": {"top_k": 4},
  "eval": {"batch": 4}
})";
  auto session = [&](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "cfg.json") << config;
    std::ofstream(dir / "grid.json") << R"({"structure": ["linear", "linear-lite"]})";
    const auto src = data::gen_scene(77).image;
    data::Image mask(32, 32, 1, 0);
    for (int y = 8; y < 24; ++y)
      for (int x = 0; x < 32; ++x) mask.at(y, x) = 255;
    data::write_pnm(dir / "src.ppm", src);
    data::write_pnm(dir / "mask.pgm", mask);
    const std::vector<std::vector<std::string>> cmds = {
        {"dataset-gen", "--count", "24", "--seed", "4", "--out", "data"},
        {"train", "--config", "cfg.json"},
        {"generate", "--checkpoint", "model.ckpt", "--out", "gen", "--count", "6", "--seed", "5"},
        {"evaluate", "--checkpoint", "model.ckpt", "--out", "eval", "--count", "8"},
        {"inpaint", "--checkpoint", "model.ckpt", "--image", "src.ppm", "--mask", "mask.pgm", "--class", "3", "--out",
         "inpaint.ppm", "--control", "src.ppm"},
        {"ablate", "--grid", "grid.json", "--config", "cfg.json"}};
    for (auto args : cmds) {
      args.insert(args.begin(), {"--workdir", dir.string()});
      std::ostringstream o, e;
      if (cli::run(args, o, e) != 0) throw std::runtime_error(args[2] + ": " + e.str());
    }
    std::map<std::string, std::string> files;
    for (const auto& f : fs::recursive_directory_iterator(dir))
      if (f.is_regular_file()) files[fs::relative(f.path(), dir).generic_string()] = slurp(f.path());
    return files;
  };
  const auto a = session(scratch / "run_a");
  const auto b = session(scratch / "run_b");
  std::size_t same = 0;
  std::string diff;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it != b.end() && it->second == bytes)
      ++same;
    else if (diff.empty())
      diff = name;
  }
  const bool pass = a.size() == b.size() && same == a.size() && a.size() > 10;
  return {pass, std::to_string(same) + "/" + std::to_string(a.size()) + " output files byte-identical" +
                    (diff.empty() ? "" : ", first difference " + diff)};
}

// --------------------------------------------------------------- heavy suite

struct Cell {
  std::string name;
  cli::RunConfig config;
  cli::Mode mode = cli::Mode::Scalar;
};

struct CellResult {
  std::map<Modality, double> score;
  double train_seconds = 0;
  double decomposition_error = 0;  // max |total - (ce + lambda align)| over all steps
};

class Heavy {
 public:
  Heavy(fs::path workdir, cli::RunConfig base) : workdir_(std::move(workdir)), base_(std::move(base)) {}

  void pretrain() {
    fs::create_directories(workdir_);
    samples_ = cli::training_samples(base_, workdir_);
    eval_ = cli::eval_samples(base_);
    cli::Experiment ex(base_, cli::Mode::Scalar);
    auto t0 = std::chrono::steady_clock::now();
    bool tok_done = false;
    ex.train(samples_, cli::Stage::Backbone, {}, [&](cli::Stage st, const LossRecord&) {
      if (st == cli::Stage::Backbone && !tok_done) tok_seconds_ = seconds_since(t0), tok_done = true;
    });
    pre_seconds_ = seconds_since(t0) - tok_seconds_;
    log("tokenizer " + fmt(tok_seconds_, 0) + " s, backbone " + fmt(pre_seconds_, 0) + " s");
    pretrained_ = ex.checkpoint();
    pretrained_.save(workdir_ / "pretrained.ckpt");
    baseline_ = cli::evaluate(ex, eval_, false).at(Modality::Edge).score;
    log("unconditional edge F1 " + fmt(baseline_));
    monotonicity_ = prefix_monotonicity(ex.tokenizer(), base_.scale_schedule());
  }

  CellResult run(const Cell& c) {
    auto ex = cli::Experiment::branch(pretrained_, c.config, c.mode);
    const auto t0 = std::chrono::steady_clock::now();
    ex->train(samples_);
    CellResult r;
    r.train_seconds = seconds_since(t0);
    const double lambda = ex->uses_alignment() ? c.config.train.lambda : 0.0;
    for (const auto& rec : ex->losses().at("control"))
      r.decomposition_error = std::max(r.decomposition_error, std::abs(rec.total - (rec.ce + lambda * rec.align)));
    const auto report = cli::evaluate(*ex, eval_, true);
    std::string line = c.name + ": " + fmt(r.train_seconds, 0) + " s";
    for (const auto& s : report.scores) {
      r.score[s.modality] = s.score;
      line += ", " + std::string(data::modality_name(s.modality)) + " " + fmt(s.score);
    }
    log(line);
    results_[c.name] = r;
    return r;
  }

  double baseline() const { return baseline_; }
  double pretrain_seconds() const { return tok_seconds_ + pre_seconds_; }
  const Outcome& monotonicity() const { return monotonicity_; }
  const cli::RunConfig& base() const { return base_; }

  void write_summary() const {
    nlohmann::ordered_json j;
    j["tokenizer_seconds"] = tok_seconds_;
    j["backbone_seconds"] = pre_seconds_;
    j["baseline_edge_f1"] = baseline_;
    for (const auto& [name, r] : results_) {
      auto& e = j["runs"][name];
      e["train_seconds"] = r.train_seconds;
      e["decomposition_error"] = r.decomposition_error;
      for (const auto& [m, s] : r.score) e["scores"][std::string(data::modality_name(m))] = s;
    }
    std::ofstream(workdir_ / "heavy_results.json") << j.dump(2) << "\n";
  }

 private:
  static void log(const std::string& s) { std::cerr << "  [heavy] " << s << std::endl; }

  // Squared error of each cumulative latent prefix against the encoder latent.
  static Outcome prefix_monotonicity(const Tokenizer<float>& tok, const ScaleSchedule& sched) {
    Rng rng(71);
    int increases = 0;
    double first = 0, last = 0;
    for (int n = 0; n < 50; ++n) {
      const auto img = rand_uniform<float>({1, 32, 32, 3}, rng, -1, 1);
      const auto f = tok.encode_latent(Var<float>::constant(img)).value();
      const auto q = tok.quantize(Var<float>::constant(f), sched);
      double prev = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < q.prefixes.size(); ++k) {
        double e = 0;
        for (std::size_t j = 0; j < f.size(); ++j) e += std::pow(double(q.prefixes[k][j]) - double(f[j]), 2);
        e /= static_cast<double>(f.size());
        if (e > prev) ++increases;
        if (k == 0) first += e / 50;
        if (k + 1 == q.prefixes.size()) last += e / 50;
        prev = e;
      }
    }
    return {increases == 0, "50 images, " + std::to_string(increases) + " increases, mean latent MSE " + fmt(first) +
                                " after 1 scale -> " + fmt(last) + " after " + std::to_string(sched.num_scales())};
  }

  fs::path workdir_;
  cli::RunConfig base_;
  std::vector<data::ConditionSample> samples_, eval_;
  cli::Checkpoint pretrained_;
  double baseline_ = 0, tok_seconds_ = 0, pre_seconds_ = 0;
  Outcome monotonicity_;
  std::map<std::string, CellResult> results_;
};

void report(int n, const Outcome& o, bool& all) {
  std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")" << std::endl;
  all = all && o.pass;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

void run_heavy(const fs::path& workdir, const cli::RunConfig& base, bool& all) {
  Heavy h(workdir, base);
  try {
    h.pretrain();
  } catch (const std::exception& e) {
    for (int n : {6, 8, 9, 10, 11}) report(n, {false, std::string("pretraining failed: ") + e.what()}, all);
    return;
  }
  report(6, h.monotonicity(), all);

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  auto cell = [&](const std::string& kind, std::uint64_t seed) {
    Cell c{kind + "/seed" + std::to_string(seed), h.base(), cli::Mode::Scalar};
    c.config.seed = seed;
    if (kind == "first") c.config.projection.layers = injection_set("first", c.config.backbone.layers);
    if (kind == "frozen") c.config.train.freeze = FreezePolicy::All;
    if (kind == "uni_align" || kind == "uni_noalign") {
      c.mode = cli::Mode::Uni;
      c.config.train.modalities = {Modality::Edge, Modality::Depth};
      c.config.eval.modalities = {Modality::Edge, Modality::Depth};
      c.config.train.lambda = kind == "uni_align" ? 1.0 : 0.0;
    }
    return c;
  };
  std::map<std::string, std::map<Modality, double>> mean;
  std::map<std::string, double> worst_decomp;
  double slowest = 0;
  bool ok = true;
  for (const char* kind : {"all", "first", "frozen", "uni_align", "uni_noalign"})
    for (auto seed : seeds) {
      try {
        const auto r = h.run(cell(kind, seed));
        for (const auto& [m, s] : r.score) mean[kind][m] += s / static_cast<double>(seeds.size());
        worst_decomp[kind] = std::max(worst_decomp[kind], r.decomposition_error);
        if (std::string(kind) == "all") slowest = std::max(slowest, r.train_seconds);
      } catch (const std::exception& e) {
        std::cerr << "  [heavy] " << kind << " seed " << seed << " failed: " << e.what() << std::endl;
        ok = false;
      }
      h.write_summary();
    }
  if (!ok) {
    for (int n : {8, 9, 10, 11}) report(n, {false, "a training run failed"}, all);
    return;
  }
  const double edge_all = mean["all"][Modality::Edge];
  const double budget = h.pretrain_seconds() + slowest;
  report(8, {edge_all - h.baseline() >= 0.15 && budget <= 1800,
             "edge F1 " + fmt(edge_all) + " vs unconditional " + fmt(h.baseline()) + ", margin " +
                 fmt(edge_all - h.baseline()) + " (>= 0.15), slowest full run " + fmt(budget / 60, 1) + " min"},
         all);
  report(9, {edge_all >= mean["first"][Modality::Edge],
             "all layers " + fmt(edge_all) + " vs first layer only " + fmt(mean["first"][Modality::Edge])},
         all);
  report(10, {edge_all >= mean["frozen"][Modality::Edge],
              "trainable backbone " + fmt(edge_all) + " vs frozen backbone " + fmt(mean["frozen"][Modality::Edge])},
         all);
  bool better = false;
  std::string detail;
  for (Modality m : {Modality::Edge, Modality::Depth}) {
    const double a = mean["uni_align"][m], b = mean["uni_noalign"][m];
    const bool hb = metrics::higher_is_better(metrics::metric_for(m));
    better = better || (hb ? a >= b : a <= b);
    detail += std::string(data::modality_name(m)) + " " + fmt(a) + " vs " + fmt(b) + (hb ? " (higher better), " : " (lower better), ");
  }
  const double decomp = std::max(worst_decomp["uni_align"], worst_decomp["uni_noalign"]);
  report(11, {better && decomp <= 1e-6, "with vs without alignment: " + detail + "max |total - (ce + lambda align)| " +
                                            fmt(decomp * 1e9, 3) + "e-9"},
         all);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string suite = "fast";
  fs::path workdir = fs::temp_directory_path() / "scalar_acceptance";
  app.add_option("--suite", suite, "fast, heavy or all")->check(CLI::IsMember({"fast", "heavy", "all"}));
  app.add_option("--workdir", workdir, "scratch directory");
  fs::path config;
  app.add_option("--config", config, "replace the default run config of the heavy suite (smoke runs)");
  CLI11_PARSE(app, argc, argv);

  bool all = true;
  if (suite != "heavy") {
    report(1, guarded(gradient_oracle), all);
    report(2, guarded(zero_init_equivalence), all);
    report(3, guarded(kv_cache_equivalence), all);
    report(4, guarded(mask_tables), all);
    report(5, guarded(inpainting_invariant), all);
    report(7, guarded(metric_oracles), all);
    report(12, guarded(cfg_identities), all);
    report(13, guarded([&] { return reproducibility(workdir / "repro"); }), all);
  }
  if (suite != "fast") run_heavy(workdir / "heavy", config.empty() ? cli::RunConfig{} : cli::load_config(config), all);
  return all ? 0 : 1;
}
