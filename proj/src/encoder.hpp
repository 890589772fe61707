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

#ifndef MOLEX_ENCODER_HPP_
#define MOLEX_ENCODER_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lora.hpp"
#include "tensor.hpp"

namespace molex {

struct ModelConfig {
  int d_in = 80;
  int d_model = 1024;
  int n_heads = 16;
  int n_layers = 12;
  int n_expert_layers = 12;  // leading layers carry expert pools
  int ffn_inner = 4096;
  int n_experts = 12;
  int top_k = 4;
  int rank = 32;
  int lstm_hidden = 192;
  bool merge_projection = true;

  void validate() const;  // throws ConfigError
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  static LayerNormParams init(int d);
};

struct Mhsa {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  int n_heads = 1;

  static Mhsa init(int d, int heads, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Post-norm block: phi = ln1(h + attn(h)); out = ln2(phi + molex(phi)).
struct TransformerLayer {
  Mhsa attn;
  LayerNormParams ln1;
  MolexLayer molex;
  LayerNormParams ln2;

  Tensor forward(const Tensor& h, Rng* noise_rng, RouterDecision* decision) const;
};

// Softmax-weighted sum over per-layer outputs; the layer score is the query
// dotted with the (optionally projected) mean-pooled layer output.
struct AttentiveMerge {
  std::vector<Tensor> proj_w;  // per layer d x d, empty when projection is off
  std::vector<Tensor> proj_b;
  Tensor q;  // d

  static AttentiveMerge init(int d, int layers, bool projection, Rng& rng);
  Tensor forward(const std::vector<Tensor>& hs) const;
};

// Single LSTM over the merged sequence; last hidden state feeds a 2-way
// linear layer. Class indices follow the labels: 0 spoof, 1 bonafide.
struct ClassifierHead {
  Tensor w_ih;  // d x 4H, gate order i f g o
  Tensor w_hh;  // H x 4H
  Tensor b;     // 4H, forget-gate slice starts at one
  Tensor w_out;  // H x 2
  Tensor b_out;  // 2

  static ClassifierHead init(int d, int hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;  // [2]
};

struct Frontend {
  Tensor w_in;  // d_in x d
  Tensor b_in;  // d

  static Frontend init(int d_in, int d, Rng& rng);
  Tensor forward(const Tensor& feats) const;  // linear + sinusoidal positions
};

Tensor sinusoidal_positions(int t, int d);

struct ForwardTrace {
  // One entry per layer; plain layers leave an empty decision.
  std::vector<RouterDecision> decisions;
};

struct Encoder {
  ModelConfig cfg;
  Frontend frontend;
  std::vector<TransformerLayer> layers;
  AttentiveMerge merge;
  ClassifierHead classifier;

  Encoder() = default;
  Encoder(const ModelConfig& config, std::uint64_t seed);

  Tensor forward(const Tensor& feats, Rng* noise_rng, ForwardTrace* trace) const;

  // Canonical parameter registry: fixed names, fixed order. Checkpoints, the
  // optimizer, and the phase masks all key off these names.
  std::vector<std::pair<std::string, Tensor*>> named_params();

  // Adds n_new experts to every expert layer and widens the routers.
  void extend_experts(int n_new, Rng& rng);
};

}  // namespace molex

#endif  // MOLEX_ENCODER_HPP_
