#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "scalar/numerics/params.hpp"
#include "scalar/train/optim.hpp"

namespace scalar::cli {

using Json = nlohmann::ordered_json;

// File layout: "SCALARCK", u64 LE header length, UTF-8 JSON header, payload of
// little-endian float32 values. Tensor offsets are byte offsets into the payload.
struct Checkpoint {
  static constexpr int kVersion = 1;
  static constexpr char kMagic[9] = "SCALARCK";

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };

  Json config = Json::object();
  Json state = Json::object();
  std::vector<std::string> modules;
  std::vector<Entry> tensors;

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  void put(const std::string& name, const Tensor<float>& t);
  Tensor<float> tensor(const std::string& name) const;

  std::string serialize() const;
  static Checkpoint parse(const std::string& bytes);
  // Written to a temporary sibling first, then renamed into place.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

// Stores every parameter as `prefix + name` and records the module.
void store_params(Checkpoint& ck, const std::string& module, const std::string& prefix, const ParamList<float>& ps);
// Copies values back, failing on a missing tensor or any shape disagreement.
void restore_params(const Checkpoint& ck, const std::string& prefix, const ParamList<float>& ps);

void store_optimizer(Checkpoint& ck, const std::string& prefix, const AdamW<float>& opt);
void restore_optimizer(const Checkpoint& ck, const std::string& prefix, AdamW<float>& opt);

}  // namespace scalar::cli
