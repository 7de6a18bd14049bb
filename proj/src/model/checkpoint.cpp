// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace anchorlab {
namespace {

using json = nlohmann::ordered_json;

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_model"] = c.d_model;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["layernorm_eps"] = c.layernorm_eps;
  j["tied_head"] = c.tied_head;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.layernorm_eps = j.at("layernorm_eps").get<double>();
  c.tied_head = j.at("tied_head").get<bool>();
  return c;
}

template <typename T>
json write_blob(const std::filesystem::path& dir, const std::map<std::string, Tensor<T>>& tensors,
                const std::vector<std::string>& order) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + (dir / "tensors.bin").string());
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& name : order) {
    const auto& t = tensors.at(name);
    const std::size_t len = t.numel() * sizeof(T);
    bin.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(len));
    json e;
    e["name"] = name;
    e["dtype"] = dtype_name<T>();
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["length"] = len;
    table.push_back(e);
    offset += len;
  }
  if (!bin) throw std::runtime_error("short write to " + (dir / "tensors.bin").string());
  return table;
}

template <typename T>
std::map<std::string, Tensor<T>> read_blob(const std::filesystem::path& dir, const json& table) {
  const auto bin_path = dir / "tensors.bin";
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + bin_path.string());
  const auto actual = std::filesystem::file_size(bin_path);
  std::size_t expected = 0;
  for (const auto& e : table) expected = std::max(expected, e.at("offset").get<std::size_t>() + e.at("length").get<std::size_t>());
  if (actual < expected) {
    throw std::runtime_error("truncated tensor blob " + bin_path.string() + ": expected " + std::to_string(expected) +
                             " bytes, found " + std::to_string(actual));
  }
  std::map<std::string, Tensor<T>> out;
  for (const auto& e : table) {
    const auto name = e.at("name").get<std::string>();
    const auto dtype = e.at("dtype").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto length = e.at("length").get<std::size_t>();
    const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (width == 0) throw std::runtime_error("tensor '" + name + "' has unsupported dtype " + dtype);
    const std::size_t n = shape_numel(shape);
    if (n * width != length) {
      throw std::runtime_error("tensor '" + name + "' shape " + shape_str(shape) + " needs " + std::to_string(n * width) +
                               " bytes, table says " + std::to_string(length));
    }
    std::vector<char> raw(length);
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(raw.data(), static_cast<std::streamsize>(length));
    std::vector<T> values(n);
    if (width == 4) {
      std::vector<float> f(n);
      std::memcpy(f.data(), raw.data(), length);
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(f[i]);
    } else {
      std::vector<double> d(n);
      std::memcpy(d.data(), raw.data(), length);
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(d[i]);
    }
    out.emplace(name, Tensor<T>(shape, std::move(values)));
  }
  return out;
}

json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  auto j = json::parse(in);
  if (j.value("magic", "") != kCheckpointMagic) {
    throw std::runtime_error("bad magic in " + (dir / "manifest.json").string() + ": expected " + kCheckpointMagic);
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw std::runtime_error("unsupported container version " + std::to_string(j.value("version", -1)) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  return j;
}

void write_manifest(const std::filesystem::path& dir, json j) {
  const auto tmp = dir / "manifest.json.tmp";
  std::ofstream(tmp) << j.dump(2) << '\n';
  std::filesystem::rename(tmp, dir / "manifest.json");
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || vocab_size == 0 || max_seq_len == 0) {
    throw std::invalid_argument("model config sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!(layernorm_eps > 0.0)) throw std::invalid_argument("layernorm_eps must be positive");
}

std::vector<std::pair<std::string, Shape>> required_tensors(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff();
  std::vector<std::pair<std::string, Shape>> out = {{"wte", {c.vocab_size, d}}, {"wpe", {c.max_seq_len, d}}};
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    out.insert(out.end(), {{p + "ln_1.weight", {d}},    {p + "ln_1.bias", {d}},        {p + "attn.q.weight", {d, d}},
                           {p + "attn.q.bias", {d}},    {p + "attn.k.weight", {d, d}}, {p + "attn.k.bias", {d}},
                           {p + "attn.v.weight", {d, d}}, {p + "attn.v.bias", {d}},    {p + "attn.proj.weight", {d, d}},
                           {p + "attn.proj.bias", {d}}, {p + "ln_2.weight", {d}},      {p + "ln_2.bias", {d}},
                           {p + "mlp.fc.weight", {d, f}}, {p + "mlp.fc.bias", {f}},    {p + "mlp.proj.weight", {f, d}},
                           {p + "mlp.proj.bias", {d}}});
  }
  out.push_back({"ln_f.weight", {d}});
  out.push_back({"ln_f.bias", {d}});
  if (!c.tied_head) out.push_back({"lm_head.weight", {c.vocab_size, d}});
  return out;
}

template <typename T>
const Tensor<T>& Checkpoint<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("checkpoint has no tensor '" + name + "'");
  return it->second;
}

template <typename T>
void Checkpoint<T>::validate() const {
  config.validate();
  for (const auto& [name, shape] : required_tensors(config)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw std::runtime_error("tensor '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                               shape_str(shape));
    }
  }
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& dir) {
  ckpt.validate();
  std::vector<std::string> order;
  for (const auto& [name, shape] : required_tensors(ckpt.config)) order.push_back(name);
  for (const auto& [name, t] : ckpt.tensors) {
    if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
  }
  json j;
  j["magic"] = kCheckpointMagic;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(ckpt.config);
  j["meta"] = ckpt.meta;
  j["tensors"] = write_blob(dir, ckpt.tensors, order);
  write_manifest(dir, std::move(j));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir, std::vector<std::string>* warnings) {
  const auto j = read_manifest(dir);
  if (!j.contains("config")) throw std::runtime_error("manifest has no model config: " + dir.string());
  Checkpoint<T> ckpt;
  ckpt.config = config_from_json(j.at("config"));
  ckpt.config.validate();
  if (j.contains("meta")) ckpt.meta = j.at("meta").get<std::map<std::string, std::string>>();
  auto tensors = read_blob<T>(dir, j.at("tensors"));
  std::map<std::string, Shape> required;
  for (auto& [name, shape] : required_tensors(ckpt.config)) required.emplace(name, shape);
  for (auto& [name, t] : tensors) {
    if (!required.contains(name)) {
      if (warnings) warnings->push_back("ignoring unknown tensor '" + name + "'");
      continue;
    }
    ckpt.tensors.emplace(name, std::move(t));
  }
  ckpt.validate();
  return ckpt;
}

template <typename T>
void save_tensor_blob(const std::filesystem::path& dir, const std::map<std::string, Tensor<T>>& tensors,
                      const std::map<std::string, std::string>& meta) {
  std::vector<std::string> order;
  for (const auto& [name, t] : tensors) order.push_back(name);
  json j;
  j["magic"] = kCheckpointMagic;
  j["version"] = kCheckpointVersion;
  j["meta"] = meta;
  j["tensors"] = write_blob(dir, tensors, order);
  write_manifest(dir, std::move(j));
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensor_blob(const std::filesystem::path& dir, std::map<std::string, std::string>* meta) {
  const auto j = read_manifest(dir);
  if (meta && j.contains("meta")) *meta = j.at("meta").get<std::map<std::string, std::string>>();
  return read_blob<T>(dir, j.at("tensors"));
}

template struct Checkpoint<float>;
template struct Checkpoint<double>;
template void save_checkpoint(const Checkpoint<float>&, const std::filesystem::path&);
template void save_checkpoint(const Checkpoint<double>&, const std::filesystem::path&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&, std::vector<std::string>*);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&, std::vector<std::string>*);
template void save_tensor_blob(const std::filesystem::path&, const std::map<std::string, Tensor<float>>&,
                               const std::map<std::string, std::string>&);
template void save_tensor_blob(const std::filesystem::path&, const std::map<std::string, Tensor<double>>&,
                               const std::map<std::string, std::string>&);
template std::map<std::string, Tensor<float>> load_tensor_blob(const std::filesystem::path&, std::map<std::string, std::string>*);
template std::map<std::string, Tensor<double>> load_tensor_blob(const std::filesystem::path&, std::map<std::string, std::string>*);

}  // namespace anchorlab
