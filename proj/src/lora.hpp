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

#ifndef MOLEX_LORA_HPP_
#define MOLEX_LORA_HPP_

#include <vector>

#include "tensor.hpp"

namespace molex {

// softplus(z + kNoiseShift) = 0.1 at z = 0, so a zero-initialized noise
// projection starts every position at the same small noise scale.
constexpr double kNoiseShift = -2.2521684610440907;

// Rank-r update acting on row vectors: delta = (x * down) * up.
// down starts at zero so a fresh expert is the identity map.
struct LoraExpert {
  Tensor down;  // d x r
  Tensor up;    // r x d

  static LoraExpert init(int d, int r, Rng& rng);
  int rank() const { return down.cols(); }
};

Tensor lora_apply(const LoraExpert& e, const Tensor& x);

// Linear router with optional multiplicative-noise branch on the logits.
struct GatingNetwork {
  Tensor w_gate;   // d x n
  Tensor w_noise;  // d x n

  static GatingNetwork init(int d, int n, Rng& rng);
  int n_experts() const { return w_gate.cols(); }

  // Softmax gate values, one row per position. When noise_rng is non-null a
  // fresh standard-normal draw perturbs the logits, scaled per position by
  // softplus of the noise branch.
  Tensor gate(const Tensor& phi, Rng* noise_rng) const;
};

// Per-batch record of where the router sent each position.
struct RouterDecision {
  Tensor gates;                        // T x n, detached softmax values
  Tensor gates_live;                   // same values, still in the autodiff graph
  std::vector<std::vector<int>> rows;  // per expert: routed positions, ascending
  std::vector<int> topk;               // flattened T x k expert ids, slot-major
};

// Top-k expert ids per gate row, ties broken toward the lower index.
RouterDecision route(const Tensor& gates, int k);

// Frozen-FFN block plus a pool of routed low-rank experts. n_experts may be
// zero, in which case the block is the bare FFN and carries no router.
struct Ffn {
  Tensor w1;  // d x inner
  Tensor b1;  // inner
  Tensor w2;  // inner x d
  Tensor b2;  // d

  static Ffn init(int d, int inner, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct MolexLayer {
  Ffn ffn;
  GatingNetwork gating;  // undefined tensors when experts.empty()
  std::vector<LoraExpert> experts;
  int top_k = 1;

  static MolexLayer init(int d, int inner, int n_experts, int top_k, int rank, Rng& rng);

  // y = ffn(phi) + sum over selected experts of gate * expert(phi).
  // Unselected experts never enter the graph. decision may be null.
  Tensor forward(const Tensor& phi, Rng* noise_rng, RouterDecision* decision) const;

  // Grows the pool by n_new freshly initialized experts and widens both
  // router projections to match. Existing tensors are left untouched.
  void extend(int n_new, Rng& rng);
};

}  // namespace molex

#endif  // MOLEX_LORA_HPP_
