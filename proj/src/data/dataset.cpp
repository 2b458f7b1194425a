#include "scalar/data/dataset.hpp"

#include <fstream>
#include <iomanip>
#include "json.hpp"
#include <sstream>

namespace scalar::data {

namespace {

using json = nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void expect_layout(const Image& img, const std::filesystem::path& path, int channels) {
  if (img.height != kImageSize || img.width != kImageSize || img.channels != channels) {
    throw IoError(IoErrorKind::Validation, path.string() + ": expected " + std::to_string(kImageSize) + "x" +
                                               std::to_string(kImageSize) + "x" + std::to_string(channels) +
                                               " image");
  }
}

}  // namespace

std::vector<int> DatasetManifest::class_histogram() const {
  std::vector<int> h(static_cast<std::size_t>(kNumClasses), 0);
  for (const auto& s : samples) h.at(static_cast<std::size_t>(s.label))++;
  return h;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ index);
}

std::vector<ConditionSample> generate_dataset(std::size_t count, std::uint64_t seed) {
  std::vector<ConditionSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_scene(sample_seed(seed, i)));
  return out;
}

ManifestEntry save_sample(const std::filesystem::path& dir, const std::string& stem, const ConditionSample& s) {
  ManifestEntry e{stem + "_image.ppm", stem + "_edge.pgm", stem + "_depth.pgm", stem + "_normal.ppm",
                  stem + "_hed.pgm",   stem + "_sketch.pgm", s.label};
  write_pnm(dir / e.image, s.image);
  write_pnm(dir / e.edge, s.edge);
  write_pnm(dir / e.depth, s.depth);
  write_pnm(dir / e.normal, s.normal);
  write_pnm(dir / e.hed, s.hed);
  write_pnm(dir / e.sketch, s.sketch);
  return e;
}

ConditionSample load_sample(const std::filesystem::path& dir, const ManifestEntry& e) {
  ConditionSample s;
  s.label = e.label;
  auto load = [&](const std::string& rel, int channels) {
    Image img = read_pnm(dir / rel);
    expect_layout(img, dir / rel, channels);
    return img;
  };
  s.image = load(e.image, 3);
  s.edge = load(e.edge, 1);
  s.depth = load(e.depth, 1);
  s.normal = load(e.normal, 3);
  s.hed = load(e.hed, 1);
  s.sketch = load(e.sketch, 1);
  return s;
}

DatasetManifest save_dataset(const std::filesystem::path& dir, const std::vector<ConditionSample>& samples,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.seed = seed;
  for (int c = 0; c < kNumClasses; ++c) m.classes.emplace_back(class_name(c));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream stem;
    stem << std::setw(6) << std::setfill('0') << i;
    m.samples.push_back(save_sample(dir, stem.str(), samples[i]));
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["count"] = m.samples.size();
  j["classes"] = m.classes;
  j["samples"] = json::array();
  for (const auto& e : m.samples) {
    j["samples"].push_back({{"image", e.image}, {"edge", e.edge},   {"depth", e.depth}, {"normal", e.normal},
                            {"hed", e.hed},     {"sketch", e.sketch}, {"class", e.label}});
  }
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::Open, path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::Open, path.string() + ": cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed manifest: " + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) {
      throw IoError(IoErrorKind::VersionMismatch, path.string() + ": manifest version " + std::to_string(m.version) +
                                                      ", expected " + std::to_string(kManifestVersion));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("image"), s.at("edge"), s.at("depth"), s.at("normal"), s.at("hed"), s.at("sketch"),
                           s.at("class").get<int>()});
    }
    if (j.at("count").get<std::size_t>() != m.samples.size()) {
      throw IoError(IoErrorKind::Validation, path.string() + ": count does not match number of samples");
    }
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::MalformedHeader, path.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

void validate_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
  std::vector<std::string> missing;
  for (const auto& e : m.samples) {
    if (e.label < 0 || e.label >= kNumClasses) {
      throw IoError(IoErrorKind::Validation, "manifest: class " + std::to_string(e.label) + " out of range");
    }
    for (const auto* rel : {&e.image, &e.edge, &e.depth, &e.normal, &e.hed, &e.sketch}) {
      if (!std::filesystem::exists(dir / *rel)) missing.push_back((dir / *rel).string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const auto& p : missing) msg += " " + p;
    throw IoError(IoErrorKind::Validation, msg);
  }
  for (const auto& e : m.samples) load_sample(dir, e);
}

std::vector<ConditionSample> load_dataset(const std::filesystem::path& manifest_path) {
  const auto m = read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  validate_manifest(dir, m);
  std::vector<ConditionSample> out;
  out.reserve(m.samples.size());
  for (const auto& e : m.samples) out.push_back(load_sample(dir, e));
  return out;
}

}  // namespace scalar::data
