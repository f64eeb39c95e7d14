#include "revisit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "revisit/errors.hpp"
#include "revisit/hash.hpp"

namespace revisit {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'F', 'C', 'K', 'P', 'T', '1'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f4";
    case torch::kFloat64: return "f8";
    case torch::kInt64: return "i8";
    default: throw IoError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "f4") return torch::kFloat32;
  if (name == "f8") return torch::kFloat64;
  if (name == "i8") return torch::kInt64;
  throw IoError("unsupported tensor dtype tag " + name);
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : model.named_parameters()) out.emplace_back(item.key(), item.value());
  for (const auto& item : model.named_buffers()) out.emplace_back(item.key(), item.value());
  return out;
}

struct RawCheckpoint {
  json header;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not a checkpoint file");
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | len_bytes[i];
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());
  RawCheckpoint raw;
  raw.header = json::parse(header);
  raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return raw;
}

void copy_into(torch::nn::Module& model, const RawCheckpoint& raw, bool strict) {
  std::map<std::string, const json*> entries;
  for (const auto& t : raw.header.at("tensors")) entries[t.at("name").get<std::string>()] = &t;
  std::set<std::string> seen;
  torch::NoGradGuard guard;
  for (auto& [name, tensor] : named_state(model)) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      if (strict) throw IoError("checkpoint is missing tensor '" + name + "'");
      continue;
    }
    const json& e = *it->second;
    auto shape = e.at("shape").get<std::vector<int64_t>>();
    if (shape != tensor.sizes().vec())
      throw ShapeError("checkpoint tensor '" + name + "' has a different shape than the model");
    const auto offset = e.at("offset").get<size_t>();
    const auto nbytes = e.at("nbytes").get<size_t>();
    if (offset + nbytes > raw.payload.size()) throw IoError("checkpoint payload truncated at '" + name + "'");
    auto stored = torch::empty(shape, torch::TensorOptions().dtype(dtype_from_name(e.at("dtype").get<std::string>())));
    std::memcpy(stored.data_ptr(), raw.payload.data() + offset, nbytes);
    tensor.copy_(stored);
    seen.insert(name);
  }
  if (strict)
    for (const auto& [name, _] : entries)
      if (!seen.count(name)) throw IoError("checkpoint has unexpected tensor '" + name + "'");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, SegmentationModelImpl& model, const json& extra) {
  json header;
  header["format"] = "revisit-fusion-checkpoint/1";
  header["model"] = model.config().to_json();
  header["extra"] = extra;
  header["tensors"] = json::array();
  std::string payload;
  for (const auto& [name, tensor] : named_state(model)) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    const size_t nbytes = static_cast<size_t>(t.numel()) * t.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", payload.size()},
                                 {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  Checkpoint ck;
  ck.config = ModelConfig::from_json(raw.header.at("model"));
  ck.extra = raw.header.value("extra", json::object());
  ck.model = build_model(ck.config);
  copy_into(*ck.model, raw, true);
  return ck;
}

void load_weights(torch::nn::Module& model, const std::filesystem::path& path, bool strict) {
  copy_into(model, read_raw(path), strict);
}

std::string parameter_hash(const torch::nn::Module& model) {
  Fnv1a h;
  for (const auto& [name, tensor] : named_state(model)) {
    h.update(name);
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    h.update(std::span(static_cast<const std::byte*>(t.data_ptr()), static_cast<size_t>(t.numel()) * t.element_size()));
  }
  return h.hex();
}

}  // namespace revisit
