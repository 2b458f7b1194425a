#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scalar/data/scene.hpp"

namespace scalar::data {

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
  std::string image, edge, depth, normal, hed, sketch;
  int label = 0;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> samples;

  std::size_t count() const { return samples.size(); }
  std::vector<int> class_histogram() const;
};

// Seed of the i-th sample of a dataset; sample generation is pure in it.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index);
std::vector<ConditionSample> generate_dataset(std::size_t count, std::uint64_t seed);

// Writes <stem>_{image,edge,depth,normal,hed,sketch}.p[pg]m under `dir`;
// paths in the entry are relative to `dir`.
ManifestEntry save_sample(const std::filesystem::path& dir, const std::string& stem, const ConditionSample& s);
ConditionSample load_sample(const std::filesystem::path& dir, const ManifestEntry& entry);

DatasetManifest save_dataset(const std::filesystem::path& dir, const std::vector<ConditionSample>& samples,
                             std::uint64_t seed);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);
// Every listed file must exist and parse with the expected layout.
void validate_manifest(const std::filesystem::path& dir, const DatasetManifest& m);
std::vector<ConditionSample> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace scalar::data
