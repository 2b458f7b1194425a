#include "scalar/cli/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "scalar/cli/experiment.hpp"
#include "scalar/data/dataset.hpp"

namespace scalar::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
  fs::path workdir = ".";
  std::ostream* out = nullptr;

  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : workdir / q;
  }
};

RunConfig config_with_env(const fs::path& path) {
  auto cfg = load_config(path);
  if (const char* s = std::getenv("SCALAR_SEED")) {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (!*s || *end) throw std::invalid_argument("SCALAR_SEED must be an unsigned integer, got '" + std::string(s) + "'");
    cfg.seed = v;
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << text;
}

void write_report(const fs::path& dir, const metrics::MetricReport& r) {
  write_text(dir / "report.json", r.to_json());
  std::string csv = metrics::MetricReport::csv_header() + "\n";
  for (const auto& row : r.csv_rows()) csv += row + "\n";
  write_text(dir / "report.csv", csv);
}

void cmd_dataset_gen(const Context& ctx, std::size_t count, std::uint64_t seed, const std::string& out) {
  if (count == 0) throw std::invalid_argument("--count must be at least 1 (usage: dataset-gen --count N --seed S --out DIR)");
  const auto dir = ctx.resolve(out);
  const auto m = data::save_dataset(dir, data::generate_dataset(count, seed), seed);
  data::validate_manifest(dir, m);
  *ctx.out << "wrote " << m.count() << " samples to " << dir.string() << "\n";
}

void cmd_train(const Context& ctx, const std::string& config, const std::string& mode, const std::string& resume) {
  std::unique_ptr<Experiment> ex;
  RunConfig cfg = config_with_env(ctx.resolve(config));
  if (resume.empty()) {
    ex = std::make_unique<Experiment>(cfg, parse_mode(mode));
  } else {
    const auto ck = Checkpoint::load(ctx.resolve(resume));
    ex = Experiment::from_checkpoint(ck);
    if (to_json(ex->config()) != to_json(cfg)) throw std::invalid_argument("--resume checkpoint was written with a different config");
    if (ex->mode() != parse_mode(mode)) throw std::invalid_argument("--resume checkpoint was written in mode " + to_string(ex->mode()));
  }
  write_text(ctx.workdir / "config.json", to_json(cfg).dump(2) + "\n");
  fs::create_directories(ctx.workdir / "checkpoints");
  const auto samples = training_samples(cfg, ctx.workdir);
  ex->train(samples, Stage::Control, [&](Stage s, int epoch, const Checkpoint& ck) {
    std::ostringstream name;
    name << to_string(s) << "-epoch" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
    ck.save(ctx.workdir / "checkpoints" / name.str());
    *ctx.out << to_string(s) << " epoch " << epoch << " done\n";
  });
  for (const auto& [stage, log] : ex->losses()) write_loss_csv(ctx.workdir / ("loss_" + stage + ".csv"), log);
  ex->checkpoint().save(ctx.workdir / "model.ckpt");
  *ctx.out << "wrote " << (ctx.workdir / "model.ckpt").string() << "\n";
}

// Sampling flags shared by generate and inpaint; unset ones keep the config value.
struct SamplingFlags {
  double cfg_scale = 0;
  int top_k = 0;
  double temperature = 0;
  const CLI::Option* cfg_opt = nullptr;
  const CLI::Option* top_k_opt = nullptr;
  const CLI::Option* temperature_opt = nullptr;

  void add_to(CLI::App* app) {
    cfg_opt = app->add_option("--cfg-scale", cfg_scale, "guidance scale (default: config)");
    top_k_opt = app->add_option("--top-k", top_k, "top-k cutoff (default: config)");
    temperature_opt = app->add_option("--temperature", temperature, "sampling temperature (default: config)");
  }
  GuidanceConfig apply(GuidanceConfig g, std::uint64_t seed, int vocab) const {
    if (cfg_opt->count()) g.scale = cfg_scale;
    if (top_k_opt->count()) g.top_k = top_k;
    if (temperature_opt->count()) g.temperature = temperature;
    g.seed = seed;
    g.validate(vocab);
    return g;
  }
};

void check_class(const Experiment& ex, int cls) {
  const int n = ex.config().backbone.num_classes;
  if (cls < 0 || cls >= n) throw std::invalid_argument("--class must be in [0, " + std::to_string(n) + ")");
}

std::unique_ptr<Experiment> load_model(const Context& ctx, const std::string& path) {
  auto ex = Experiment::from_checkpoint(Checkpoint::load(ctx.resolve(path)));
  if (ex->stage() != Stage::Done) throw std::invalid_argument(path + " is not a finished training run (stage " + to_string(ex->stage()) + ")");
  return ex;
}

void write_images(const Context& ctx, const std::string& out, const std::vector<data::Image>& images) {
  const auto dir = ctx.resolve(out);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(4) << std::setfill('0') << i << ".ppm";
    data::write_pnm(dir / name.str(), images[i]);
  }
  *ctx.out << "wrote " << images.size() << " images to " << dir.string() << "\n";
}

// Without --control, sample i is conditioned on evaluation-set sample i;
// with it, every sample shares that one condition map.
void cmd_generate(const Context& ctx, const std::string& ckpt, const std::string& out, std::size_t count,
                  std::uint64_t seed, const std::string& modality, const std::optional<int>& cls,
                  const std::string& control_path, const SamplingFlags& flags) {
  if (count == 0) throw std::invalid_argument("--count must be at least 1");
  const auto ex = load_model(ctx, ckpt);
  if (cls) check_class(*ex, *cls);
  const GuidanceConfig g = flags.apply(ex->config().guidance, seed, ex->config().tokenizer.vocab);
  const bool control = modality != "none";
  const Modality m = control ? data::parse_modality(modality) : Modality::Edge;

  if (!control_path.empty()) {
    if (!control) throw std::invalid_argument("--control needs a --modality other than none");
    const auto ctl = data::read_pnm(ctx.resolve(control_path));
    const std::vector<const data::Image*> ctls(count, &ctl);
    const auto features = control_features<float>(ex->extractor(), ex->uses_alignment() ? &ex->align() : nullptr, ctls);
    const std::vector<ClassMix> classes(count, ClassMix::label(cls.value_or(0)));
    const auto gen = generate<float>(ex->view(true), classes, features, g);
    std::vector<data::Image> images;
    for (std::size_t i = 0; i < count; ++i) images.push_back(tensor_to_image(gen.images, static_cast<std::int64_t>(i)));
    write_images(ctx, out, images);
    return;
  }
  RunConfig c = ex->config();
  c.data.eval_count = count;
  auto eval = eval_samples(c);
  if (cls)
    for (auto& s : eval) s.label = *cls;
  write_images(ctx, out, ex->generator(control, g)(eval, m, 0));
}

void cmd_inpaint(const Context& ctx, const std::string& ckpt, const std::string& image, const std::string& mask,
                 int cls, const std::string& out, std::uint64_t seed, const std::string& control_path,
                 const std::string& modality, const SamplingFlags& flags) {
  const auto ex = load_model(ctx, ckpt);
  const auto src = data::read_pnm(ctx.resolve(image));
  const auto mpx = data::read_pnm(ctx.resolve(mask));
  const auto& sched = ex->decoder().config().schedule;
  if (src.channels != 3 || src.height != ex->config().tokenizer.image_size || src.width != src.height) {
    throw std::invalid_argument("--image must be a " + std::to_string(ex->config().tokenizer.image_size) + "x" +
                                std::to_string(ex->config().tokenizer.image_size) + " RGB image");
  }
  if (mpx.channels != 1 || mpx.height != src.height || mpx.width != src.width) {
    throw std::invalid_argument("--mask must be a single-channel image the size of --image");
  }
  check_class(*ex, cls);
  const auto truth = ex->tokenizer().encode(images_to_tensor<float>({&src}), sched);
  std::optional<Tensor<float>> features;
  if (!control_path.empty()) {
    (void)data::parse_modality(modality);
    const auto ctl = data::read_pnm(ctx.resolve(control_path));
    features = control_features<float>(ex->extractor(), ex->uses_alignment() ? &ex->align() : nullptr, {&ctl});
  }
  const GuidanceConfig g = flags.apply(ex->config().guidance, seed, ex->config().tokenizer.vocab);
  const auto gen = inpaint<float>(ex->view(features.has_value()), {ClassMix::label(cls)}, features,
                                  {mask_from_image(mpx, sched)}, truth, g);
  const auto path = ctx.resolve(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_pnm(path, tensor_to_image(gen.images, 0));
  *ctx.out << "wrote " << path.string() << "\n";
}

void cmd_evaluate(const Context& ctx, const std::string& ckpt, const std::string& out, std::size_t count, bool uncond) {
  const auto ex = load_model(ctx, ckpt);
  RunConfig c = ex->config();
  if (count > 0) c.data.eval_count = count;
  const auto report = evaluate(*ex, eval_samples(c), !uncond);
  const auto dir = ctx.resolve(out);
  write_report(dir, report);
  for (const auto& row : report.csv_rows()) *ctx.out << row << "\n";
}

struct Cell {
  Sharing sharing;
  Structure structure;
  std::string layers_name;
  std::vector<int> layers;
  FreezePolicy freeze;
};

std::vector<Cell> read_grid(const fs::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("--grid: cannot open " + path.string());
  Json g;
  try {
    g = Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::invalid_argument("--grid: " + std::string(e.what()));
  }
  if (!g.is_object()) throw std::invalid_argument("--grid must be a JSON object of axes");
  for (const auto& [k, v] : g.items()) {
    if (k != "sharing" && k != "structure" && k != "layers" && k != "freeze") {
      throw std::invalid_argument("--grid: unknown axis '" + k + "' (valid: sharing, structure, layers, freeze)");
    }
    if (!v.is_array() || v.empty()) throw std::invalid_argument("--grid: axis '" + k + "' must be a non-empty list");
  }
  if (g.empty()) throw std::invalid_argument("--grid is empty");
  auto axis = [&](const char* k, const std::string& def) {
    std::vector<std::string> out;
    if (!g.contains(k)) return std::vector<std::string>{def};
    for (const auto& v : g.at(k)) out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    return out;
  };
  std::vector<Cell> cells;
  for (const auto& sh : axis("sharing", to_string(base.projection.sharing)))
    for (const auto& st : axis("structure", to_string(base.projection.structure)))
      for (const auto& ly : axis("layers", Json(base.projection.layers).dump()))
        for (const auto& fr : axis("freeze", to_string(base.train.freeze))) {
          Cell c{parse_sharing(sh), parse_structure(st), ly, {}, parse_freeze(fr)};
          c.layers = ly.front() == '[' ? Json::parse(ly).get<std::vector<int>>() : injection_set(ly, base.backbone.layers);
          cells.push_back(c);
        }
  return cells;
}

void cmd_ablate(const Context& ctx, const std::string& grid, const std::string& config) {
  const RunConfig base = config_with_env(ctx.resolve(config));
  const auto cells = read_grid(ctx.resolve(grid), base);
  const auto samples = training_samples(base, ctx.workdir);
  const auto eval = eval_samples(base);

  Experiment pre(base, Mode::Scalar);
  pre.train(samples, Stage::Backbone);
  const Checkpoint pre_ck = pre.checkpoint();
  const std::int64_t backbone_params = static_cast<std::int64_t>(count_elements(pre.decoder().params()));

  std::ostringstream table;
  table << "cell,sharing,structure,layers,freeze,metric,score,final_loss,projection_params,backbone_params\n";
  table << std::setprecision(17);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    RunConfig cfg = base;
    cfg.projection.sharing = c.sharing;
    cfg.projection.structure = c.structure;
    cfg.projection.layers = c.layers;
    cfg.train.freeze = c.freeze;
    cfg.validate();
    auto ex = Experiment::branch(pre_ck, cfg, Mode::Scalar);
    ex->train(samples);
    const auto report = evaluate(*ex, eval, true);
    const auto& s = report.scores.front();
    const auto& log = ex->losses().at("control");
    std::string layers = c.layers_name;
    std::replace(layers.begin(), layers.end(), ',', ' ');
    table << i << ',' << to_string(c.sharing) << ',' << to_string(c.structure) << ',' << layers << ','
          << to_string(c.freeze) << ',' << metrics::to_string(s.metric) << ',' << s.score << ','
          << (log.empty() ? 0.0 : log.back().total) << ','
          << projection_param_count(cfg.projection, cfg.scale_schedule(), cfg.backbone.d_model, cfg.encoder.width)
          << ',' << backbone_params << '\n';
  }
  write_text(ctx.workdir / "ablation.csv", table.str());
  *ctx.out << table.str();
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scale-wise conditional generation on a synthetic shapes corpus", "scalar"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "root for every relative path")->capture_default_str();

  std::size_t count = 0, gen_count = 8, eval_count = 0;
  std::uint64_t seed = 0, gen_seed = 0, inpaint_seed = 0;
  std::string out_path, config, mode = "scalar", resume, ckpt, modality = "edge", image, mask, control, grid;
  int cls = 0;
  std::optional<int> gen_class;
  bool uncond = false;
  SamplingFlags gen_flags, inpaint_flags;

  auto* ds = app.add_subcommand("dataset-gen", "render a synthetic dataset with every condition map");
  ds->add_option("--count", count, "number of samples")->required();
  ds->add_option("--seed", seed, "dataset seed")->required();
  ds->add_option("--out", out_path, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train tokenizer, backbone and control bank");
  tr->add_option("--config", config, "run config (JSON)")->required();
  tr->add_option("--mode", mode, "scalar or uni")->capture_default_str();
  tr->add_option("--resume", resume, "checkpoint to continue from");

  auto* ge = app.add_subcommand("generate", "sample images for a control map or for evaluation-set conditions");
  ge->add_option("--checkpoint", ckpt)->required();
  ge->add_option("--out", out_path, "output directory")->required();
  ge->add_option("--count", gen_count, "number of images")->capture_default_str();
  ge->add_option("--seed", gen_seed, "sampling seed")->capture_default_str();
  ge->add_option("--modality", modality, "control modality, or none")->capture_default_str();
  auto* ge_class = ge->add_option("--class", cls, "class label (default: that of each evaluation sample, or 0)");
  ge->add_option("--control", control, "control map shared by every sample");
  gen_flags.add_to(ge);

  auto* ip = app.add_subcommand("inpaint", "regenerate the masked region of an image");
  ip->add_option("--checkpoint", ckpt)->required();
  ip->add_option("--image", image, "source RGB image (PPM)")->required();
  ip->add_option("--mask", mask, "mask (PGM, nonzero = regenerate)")->required();
  ip->add_option("--class", cls, "class label")->required();
  ip->add_option("--out", out_path, "output PPM")->required();
  ip->add_option("--seed", inpaint_seed, "sampling seed")->capture_default_str();
  ip->add_option("--control", control, "optional control map");
  ip->add_option("--modality", modality, "modality of --control")->capture_default_str();
  inpaint_flags.add_to(ip);

  auto* ev = app.add_subcommand("evaluate", "conditional-consistency report");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--out", out_path, "report directory")->required();
  ev->add_option("--count", eval_count, "evaluation samples (default: config)");
  ev->add_flag("--uncond", uncond, "generate without control (baseline)");

  auto* ab = app.add_subcommand("ablate", "train and score a grid of control settings");
  ab->add_option("--grid", grid, "grid JSON: lists under sharing/structure/layers/freeze")->required();
  ab->add_option("--config", config, "base run config")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << " (run with --help for usage)\n";
    return 2;
  }

  try {
    Context ctx{workdir, &out};
    fs::create_directories(ctx.workdir);
    if (ds->parsed()) cmd_dataset_gen(ctx, count, seed, out_path);
    if (tr->parsed()) cmd_train(ctx, config, mode, resume);
    if (ge_class->count()) gen_class = cls;
    if (ge->parsed()) cmd_generate(ctx, ckpt, out_path, gen_count, gen_seed, modality, gen_class, control, gen_flags);
    if (ip->parsed()) cmd_inpaint(ctx, ckpt, image, mask, cls, out_path, inpaint_seed, control, modality, inpaint_flags);
    if (ev->parsed()) cmd_evaluate(ctx, ckpt, out_path, eval_count, uncond);
    if (ab->parsed()) cmd_ablate(ctx, grid, config);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace scalar::cli
