#include "scalar/cli/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace scalar::cli {

namespace {

constexpr std::size_t kMagicLen = 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::runtime_error bad(const std::string& what) { return std::runtime_error("checkpoint: " + what); }

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const Entry& e) { return e.name == name; });
}

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.name == name) return e;
  throw bad("missing tensor '" + name + "'");
}

void Checkpoint::put(const std::string& name, const Tensor<float>& t) {
  if (has(name)) throw bad("duplicate tensor '" + name + "'");
  tensors.push_back({name, t.shape(), std::vector<float>(t.data(), t.data() + t.size())});
}

Tensor<float> Checkpoint::tensor(const std::string& name) const {
  const auto& e = get(name);
  return Tensor<float>(e.shape, e.data);
}

std::string Checkpoint::serialize() const {
  Json header;
  header["format"] = "scalar-checkpoint";
  header["version"] = kVersion;
  header["config"] = config;
  header["modules"] = modules;
  header["state"] = state;
  auto& inv = header["tensors"] = Json::array();
  std::uint64_t offset = 0;
  for (const auto& e : tensors) {
    if (static_cast<std::size_t>(shape_numel(e.shape)) != e.data.size()) {
      throw bad("tensor '" + e.name + "' has " + std::to_string(e.data.size()) + " values for shape " + shape_str(e.shape));
    }
    inv.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.data.size() * 4;
  }
  header["payload_bytes"] = offset;
  const std::string h = header.dump();
  std::string out(kMagic, kMagicLen);
  put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + offset);
  for (const auto& e : tensors)
    for (float f : e.data) {
      const auto u = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
    }
  return out;
}

Checkpoint Checkpoint::parse(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, kMagic) != 0) throw bad("bad magic");
  const std::uint64_t hlen = get_u64(bytes, kMagicLen);
  const std::size_t body = kMagicLen + 8;
  if (hlen > bytes.size() - body) throw bad("truncated header");
  Json header;
  try {
    header = Json::parse(bytes.substr(body, hlen));
  } catch (const Json::exception& e) {
    throw bad(std::string("malformed header: ") + e.what());
  }
  if (header.value("format", "") != "scalar-checkpoint") throw bad("not a scalar checkpoint");
  if (header.value("version", -1) != kVersion) {
    throw bad("unsupported version " + header.value("version", Json(-1)).dump());
  }
  Checkpoint ck;
  ck.config = header.at("config");
  ck.state = header.at("state");
  ck.modules = header.at("modules").get<std::vector<std::string>>();
  const std::size_t payload_at = body + hlen;
  const std::uint64_t payload = header.at("payload_bytes").get<std::uint64_t>();
  if (bytes.size() - payload_at != payload) {
    throw bad("payload is " + std::to_string(bytes.size() - payload_at) + " bytes, header says " + std::to_string(payload));
  }
  std::uint64_t expect = 0;
  for (const auto& t : header.at("tensors")) {
    Entry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto n = static_cast<std::uint64_t>(shape_numel(e.shape));
    if (off != expect || off + 4 * n > payload) throw bad("tensor '" + e.name + "' offsets do not partition the payload");
    e.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b)
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[payload_at + off + 4 * i + b])) << (8 * b);
      e.data[i] = std::bit_cast<float>(u);
    }
    expect = off + 4 * n;
    if (ck.has(e.name)) throw bad("duplicate tensor '" + e.name + "'");
    ck.tensors.push_back(std::move(e));
  }
  if (expect != payload) throw bad("tensor offsets do not cover the payload");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw bad(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw bad(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw bad(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void store_params(Checkpoint& ck, const std::string& module, const std::string& prefix, const ParamList<float>& ps) {
  if (std::find(ck.modules.begin(), ck.modules.end(), module) == ck.modules.end()) ck.modules.push_back(module);
  for (const auto& p : ps) ck.put(prefix + p.name, p.var.value());
}

void restore_params(const Checkpoint& ck, const std::string& prefix, const ParamList<float>& ps) {
  for (const auto& p : ps) {
    const auto& e = ck.get(prefix + p.name);
    if (e.shape != p.var.shape()) {
      throw bad("tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", config expects " +
                shape_str(p.var.shape()));
    }
    Var<float> v = p.var;
    std::copy(e.data.begin(), e.data.end(), v.mutable_value().data());
  }
}

void store_optimizer(Checkpoint& ck, const std::string& prefix, const AdamW<float>& opt) {
  ck.state[prefix + "steps"] = opt.steps();
  for (const auto& [name, st] : opt.state()) {
    ck.put(prefix + "m." + name, st.m);
    ck.put(prefix + "v." + name, st.v);
  }
}

void restore_optimizer(const Checkpoint& ck, const std::string& prefix, AdamW<float>& opt) {
  opt.set_steps(ck.state.at(prefix + "steps").get<std::int64_t>());
  opt.state().clear();
  const std::string mp = prefix + "m.";
  for (const auto& e : ck.tensors) {
    if (e.name.rfind(mp, 0) != 0) continue;
    const std::string name = e.name.substr(mp.size());
    opt.state()[name] = {ck.tensor(e.name), ck.tensor(prefix + "v." + name)};
  }
}

}  // namespace scalar::cli
