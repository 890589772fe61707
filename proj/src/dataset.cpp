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

#include "dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace molex {

namespace {

constexpr char kBlobMagic[4] = {'M', 'O', 'L', 'D'};
constexpr std::uint32_t kBlobVersion = 1;
constexpr double kTwoPi = 6.283185307179586477;

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Smooth multi-sinusoid trajectory with light jitter; the shared base for
// both classes.
Tensor bonafide_base(int t, int d, Rng& rng) {
  constexpr int kHarmonics = 3;
  double amp[kHarmonics], cycles[kHarmonics], phase[kHarmonics], chan_rate[kHarmonics];
  for (int k = 0; k < kHarmonics; ++k) {
    amp[k] = rng.uniform(0.4, 1.0);
    cycles[k] = rng.uniform(1.0, 4.0);
    phase[k] = rng.uniform(0.0, kTwoPi);
    chan_rate[k] = rng.uniform(0.02, 0.12);
  }
  Tensor x({t, d});
  for (int i = 0; i < t; ++i) {
    for (int c = 0; c < d; ++c) {
      double v = 0.0;
      for (int k = 0; k < kHarmonics; ++k) {
        v += amp[k] * std::sin(kTwoPi * cycles[k] * i / t + phase[k] + chan_rate[k] * c);
      }
      x.at(i, c) = v + 0.08 * rng.normal();
    }
  }
  return x;
}

void apply_artifact(Tensor& x, const std::string& domain, double strength) {
  const int t = x.rows(), d = x.cols();
  if (strength <= 0.0) return;
  if (domain == "A") {
    // Additive buzz on every 4th frame, fixed channel pattern.
    for (int i = 0; i < t; i += 4) {
      for (int c = 0; c < d; ++c) {
        x.at(i, c) += strength * 0.8 * std::sin(0.37 * c + 0.9);
      }
    }
  } else if (domain == "B") {
    // Temporal block quantization: frames collapse toward their block mean.
    constexpr int kBlock = 8;
    double alpha = 0.85 * strength;
    std::vector<double> mean(static_cast<std::size_t>(d));
    for (int b0 = 0; b0 < t; b0 += kBlock) {
      int b1 = std::min(b0 + kBlock, t);
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int i = b0; i < b1; ++i)
        for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] += x.at(i, c);
      for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] /= (b1 - b0);
      for (int i = b0; i < b1; ++i)
        for (int c = 0; c < d; ++c)
          x.at(i, c) = (1.0 - alpha) * x.at(i, c) + alpha * mean[static_cast<std::size_t>(c)];
    }
  } else {
    // "C": energy notch over the second quarter of the channels.
    double keep = 1.0 - 0.75 * strength;
    for (int i = 0; i < t; ++i)
      for (int c = d / 4; c < d / 2; ++c) x.at(i, c) *= keep;
  }
}

std::string utt_id(const std::string& domain, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return domain + "_" + buf;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void SynthSpec::validate() const {
  if (per_class < 1) throw ConfigError("per_class must be positive");
  if (frames < 1) throw ConfigError("frames must be positive");
  if (d_in < 8) throw ConfigError("d_in must be at least 8");
  if (domain != "A" && domain != "B" && domain != "C") {
    throw ConfigError("domain must be one of A, B, C; got " + domain);
  }
  if (difficulty < 0.0 || difficulty > 1.0) {
    throw ConfigError("difficulty must lie in [0, 1]");
  }
}

Dataset Dataset::generate(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  const int n = 2 * spec.per_class;
  ds.utts_.reserve(static_cast<std::size_t>(n));
  double strength = 1.0 - spec.difficulty;
  for (int u = 0; u < n; ++u) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(u)));
    Utterance utt;
    utt.id = utt_id(spec.domain, u);
    utt.label = (u % 2 == 0) ? 1 : 0;  // even bonafide, odd spoof
    utt.domain = spec.domain;
    utt.features = bonafide_base(spec.frames, spec.d_in, rng);
    if (utt.label == 0) apply_artifact(utt.features, spec.domain, strength);
    for (std::int64_t i = 0; i < utt.features.numel(); ++i) {
      utt.features.at(i) = f32(utt.features.at(i));
    }
    ds.utts_.push_back(std::move(utt));
  }
  return ds;
}

void Dataset::save(const std::string& base_path) const {
  const std::string blob_path = base_path + ".mold";
  const std::string manifest_path = base_path + ".jsonl";

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open " + blob_path + " for writing");
  blob.write(kBlobMagic, 4);
  write_u32(blob, kBlobVersion);

  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path + " for writing");

  std::uint64_t offset = 8;
  for (const Utterance& u : utts_) {
    manifest << "{\"id\":\"" << u.id << "\",\"label\":\""
             << (u.label ? "bonafide" : "spoof") << "\",\"domain\":\"" << u.domain
             << "\",\"offset\":" << offset << ",\"frames\":" << u.features.rows() << "}\n";
    for (std::int64_t i = 0; i < u.features.numel(); ++i) {
      float f = static_cast<float>(u.features.at(i));
      char b[4];
      std::memcpy(b, &f, 4);
      blob.write(b, 4);
    }
    offset += static_cast<std::uint64_t>(u.features.numel()) * 4;
  }
  if (!blob || !manifest) throw IoError("write failed under " + base_path);
}

Dataset Dataset::load(const std::string& base_path) {
  const std::string blob_path = base_path + ".mold";
  const std::string manifest_path = base_path + ".jsonl";

  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path);
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open " + blob_path);

  char magic[4];
  if (!blob.read(magic, 4) || std::memcmp(magic, kBlobMagic, 4) != 0) {
    throw FormatError("bad feature blob magic at offset 0: " + blob_path);
  }
  std::uint32_t version = 0;
  if (!blob.read(reinterpret_cast<char*>(&version), 4)) {
    throw FormatError("feature blob truncated at offset 4: " + blob_path);
  }
  if (version != kBlobVersion) {
    throw VersionError("feature blob version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(kBlobVersion) + ")");
  }
  blob.seekg(0, std::ios::end);
  const std::uint64_t blob_size = static_cast<std::uint64_t>(blob.tellg());

  struct Row {
    std::string id, label, domain;
    std::uint64_t offset;
    int frames;
  };
  std::vector<Row> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("label") ||
        !j.contains("domain") || !j.contains("offset") || !j.contains("frames")) {
      throw FormatError("bad manifest line " + std::to_string(lineno) + " in " + manifest_path);
    }
    Row r;
    r.id = j["id"].get<std::string>();
    r.label = j["label"].get<std::string>();
    r.domain = j["domain"].get<std::string>();
    r.offset = j["offset"].get<std::uint64_t>();
    r.frames = j["frames"].get<int>();
    if ((r.label != "bonafide" && r.label != "spoof") || r.frames < 1 || r.offset < 8) {
      throw FormatError("bad manifest line " + std::to_string(lineno) + " in " + manifest_path);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw FormatError("empty manifest: " + manifest_path);

  // Feature width is implied by the gap between consecutive offsets.
  std::uint64_t span = (rows.size() > 1 ? rows[1].offset : blob_size) - rows[0].offset;
  std::uint64_t bytes_per_frame = span / static_cast<std::uint64_t>(rows[0].frames);
  if (bytes_per_frame == 0 || bytes_per_frame % 4 != 0 ||
      span != bytes_per_frame * static_cast<std::uint64_t>(rows[0].frames)) {
    throw FormatError("inconsistent offsets in " + manifest_path);
  }
  const int d_in = static_cast<int>(bytes_per_frame / 4);

  Dataset ds;
  ds.utts_.reserve(rows.size());
  for (const Row& r : rows) {
    std::uint64_t need = r.offset + static_cast<std::uint64_t>(r.frames) * bytes_per_frame;
    if (need > blob_size) {
      throw FormatError("feature blob truncated at offset " + std::to_string(r.offset) + ": " +
                        blob_path);
    }
    Utterance u;
    u.id = r.id;
    u.label = r.label == "bonafide" ? 1 : 0;
    u.domain = r.domain;
    u.features = Tensor({r.frames, d_in});
    blob.seekg(static_cast<std::streamoff>(r.offset));
    std::vector<char> buf(static_cast<std::size_t>(r.frames) * bytes_per_frame);
    if (!blob.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
      throw FormatError("feature blob truncated at offset " + std::to_string(r.offset) + ": " +
                        blob_path);
    }
    for (std::int64_t i = 0; i < u.features.numel(); ++i) {
      float f;
      std::memcpy(&f, buf.data() + i * 4, 4);
      u.features.at(i) = static_cast<double>(f);
    }
    ds.utts_.push_back(std::move(u));
  }
  return ds;
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (!a.utts_.empty() && !b.utts_.empty() && a.d_in() != b.d_in()) {
    throw ShapeError("concat: feature widths differ: " + std::to_string(a.d_in()) + " vs " +
                     std::to_string(b.d_in()));
  }
  Dataset ds;
  ds.utts_.reserve(a.utts_.size() + b.utts_.size());
  ds.utts_.insert(ds.utts_.end(), a.utts_.begin(), a.utts_.end());
  ds.utts_.insert(ds.utts_.end(), b.utts_.begin(), b.utts_.end());
  return ds;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset ds;
  ds.utts_.reserve(idx.size());
  for (std::size_t i : idx) {
    if (i >= utts_.size()) throw ContractError("subset: index out of range");
    ds.utts_.push_back(utts_[i]);
  }
  return ds;
}

int Dataset::d_in() const {
  if (utts_.empty()) throw ContractError("d_in: dataset is empty");
  return utts_.front().features.cols();
}

}  // namespace molex
