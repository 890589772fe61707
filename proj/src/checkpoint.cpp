// Copyright 2026  molex authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace molex {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'L', 'X'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.write(b, sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  char b[sizeof(T)];
  if (!in.read(b, sizeof(T))) {
    throw FormatError("checkpoint truncated: " + path);
  }
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

std::string arch_json(const ModelConfig& c) {
  nlohmann::json j;
  j["d_in"] = c.d_in;
  j["d_model"] = c.d_model;
  j["ffn_inner"] = c.ffn_inner;
  j["lstm_hidden"] = c.lstm_hidden;
  j["merge_projection"] = c.merge_projection;
  j["n_expert_layers"] = c.n_expert_layers;
  j["n_experts"] = c.n_experts;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["rank"] = c.rank;
  j["top_k"] = c.top_k;
  return j.dump();  // keys stay sorted
}

ModelConfig arch_from_json(const std::string& text, const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw FormatError("unreadable architecture descriptor: " + path);
  }
  ModelConfig c;
  try {
    c.d_in = j.at("d_in").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.ffn_inner = j.at("ffn_inner").get<int>();
    c.lstm_hidden = j.at("lstm_hidden").get<int>();
    c.merge_projection = j.at("merge_projection").get<bool>();
    c.n_expert_layers = j.at("n_expert_layers").get<int>();
    c.n_experts = j.at("n_experts").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.rank = j.at("rank").get<int>();
    c.top_k = j.at("top_k").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("architecture descriptor missing fields: " + path);
  }
  c.validate();
  return c;
}

void read_header(std::ifstream& in, const std::string& path, ModelConfig* cfg,
                 std::uint64_t* rng_state) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic at offset 0: " + path);
  }
  std::uint32_t version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(kVersion) + ")");
  }
  std::uint64_t arch_len = read_pod<std::uint64_t>(in, path);
  if (arch_len > (1u << 20)) {
    throw FormatError("architecture descriptor implausibly large: " + path);
  }
  std::string arch(arch_len, '\0');
  if (!in.read(arch.data(), static_cast<std::streamsize>(arch_len))) {
    throw FormatError("checkpoint truncated inside architecture descriptor: " + path);
  }
  *cfg = arch_from_json(arch, path);
  *rng_state = read_pod<std::uint64_t>(in, path);
}

}  // namespace

void save_checkpoint(const std::string& path, Encoder& enc, std::uint64_t rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  std::string arch = arch_json(enc.cfg);
  write_pod<std::uint64_t>(out, arch.size());
  out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  write_pod<std::uint64_t>(out, rng_state);

  auto params = enc.named_params();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (auto& [name, t] : params) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(out, t->requires_grad() ? 1 : 0);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t->ndim()));
    for (int i = 0; i < t->ndim(); ++i) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t->dim(i)));
    }
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->numel() * 8));
  }
  if (!out) throw IoError("write failed: " + path);
}

Encoder load_checkpoint(const std::string& path, std::uint64_t* rng_state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  ModelConfig cfg;
  std::uint64_t rng = 0;
  read_header(in, path, &cfg, &rng);

  Encoder enc(cfg, 0);
  auto params = enc.named_params();
  std::uint32_t n = read_pod<std::uint32_t>(in, path);
  if (n != params.size()) {
    throw FormatError("checkpoint tensor count " + std::to_string(n) + " does not match " +
                      std::to_string(params.size()) + " registry entries: " + path);
  }
  for (auto& [name, t] : params) {
    std::uint32_t name_len = read_pod<std::uint32_t>(in, path);
    if (name_len > (1u << 16)) throw FormatError("tensor name implausibly long: " + path);
    std::string stored(name_len, '\0');
    if (!in.read(stored.data(), name_len)) {
      throw FormatError("checkpoint truncated inside tensor name: " + path);
    }
    if (stored != name) {
      throw FormatError("tensor order mismatch: expected " + name + ", found " + stored + ": " +
                        path);
    }
    std::uint8_t trainable = read_pod<std::uint8_t>(in, path);
    std::uint32_t ndim = read_pod<std::uint32_t>(in, path);
    if (ndim != static_cast<std::uint32_t>(t->ndim())) {
      throw FormatError("tensor " + name + " rank mismatch: " + path);
    }
    for (int i = 0; i < t->ndim(); ++i) {
      std::uint32_t dim = read_pod<std::uint32_t>(in, path);
      if (dim != static_cast<std::uint32_t>(t->dim(i))) {
        throw FormatError("tensor " + name + " shape mismatch: " + path);
      }
    }
    if (!in.read(reinterpret_cast<char*>(t->data()),
                 static_cast<std::streamsize>(t->numel() * 8))) {
      throw FormatError("checkpoint truncated inside tensor " + name + ": " + path);
    }
    t->set_requires_grad(trainable != 0);
  }
  if (rng_state) *rng_state = rng;
  return enc;
}

ModelConfig peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  ModelConfig cfg;
  std::uint64_t rng = 0;
  read_header(in, path, &cfg, &rng);
  return cfg;
}

}  // namespace molex
