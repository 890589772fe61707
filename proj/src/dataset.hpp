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

#ifndef MOLEX_DATASET_HPP_
#define MOLEX_DATASET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace molex {

// Identical specs produce byte-identical dataset files. Artifact strength is
// (1 - difficulty): at 0 the classes separate on artifact energy alone, at 1
// spoof and bonafide share a distribution.
struct SynthSpec {
  std::uint64_t seed = 1;
  int per_class = 100;  // utterances per label
  int frames = 60;
  int d_in = 80;
  std::string domain = "A";  // artifact family: A buzz, B block quantization, C band notch
  double difficulty = 0.3;

  void validate() const;
};

struct Utterance {
  std::string id;
  int label = 0;  // 1 bonafide, 0 spoof
  std::string domain;
  Tensor features;  // T x d_in, f32-representable values
};

class Dataset {
 public:
  Dataset() = default;

  static Dataset generate(const SynthSpec& spec);

  // base path "x" maps to manifest "x.jsonl" plus feature blob "x.mold".
  static Dataset load(const std::string& base_path);
  void save(const std::string& base_path) const;

  static Dataset concat(const Dataset& a, const Dataset& b);
  Dataset subset(const std::vector<std::size_t>& idx) const;

  std::size_t size() const { return utts_.size(); }
  int d_in() const;
  const Utterance& utt(std::size_t i) const { return utts_[i]; }
  const std::vector<Utterance>& utts() const { return utts_; }

 private:
  std::vector<Utterance> utts_;
};

}  // namespace molex

#endif  // MOLEX_DATASET_HPP_
