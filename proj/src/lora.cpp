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

#include "lora.hpp"

#include <cmath>

namespace molex {

LoraExpert LoraExpert::init(int d, int r, Rng& rng) {
  LoraExpert e;
  e.down = Tensor::zeros({d, r});
  e.up = Tensor::gaussian({r, d}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  return e;
}

Tensor lora_apply(const LoraExpert& e, const Tensor& x) {
  return matmul(matmul(x, e.down), e.up);
}

GatingNetwork GatingNetwork::init(int d, int n, Rng& rng) {
  GatingNetwork g;
  g.w_gate = Tensor::gaussian({d, n}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  g.w_noise = Tensor::zeros({d, n});
  return g;
}

Tensor GatingNetwork::gate(const Tensor& phi, Rng* noise_rng) const {
  Tensor logits = matmul(phi, w_gate);
  if (noise_rng) {
    Tensor eps = Tensor::gaussian(logits.shape(), *noise_rng, 0.0, 1.0);
    Tensor sigma = softplus(add_scalar(matmul(phi, w_noise), kNoiseShift));
    logits = add(logits, mul(eps, sigma));
  }
  return softmax(logits);
}

RouterDecision route(const Tensor& gates, int k) {
  const int t = gates.rows(), n = gates.cols();
  if (k < 1 || k > n) {
    throw ConfigError("route: top_k=" + std::to_string(k) + " out of range for " +
                      std::to_string(n) + " experts");
  }
  RouterDecision d;
  d.gates = gates.detached();
  d.gates_live = gates;
  d.rows.assign(static_cast<std::size_t>(n), {});
  d.topk.reserve(static_cast<std::size_t>(t) * k);
  for (int i = 0; i < t; ++i) {
    std::vector<int> sel = argtopk(gates.data() + static_cast<std::size_t>(i) * n, n, k);
    for (int e : sel) {
      d.topk.push_back(e);
      d.rows[static_cast<std::size_t>(e)].push_back(i);
    }
  }
  return d;
}

Ffn Ffn::init(int d, int inner, Rng& rng) {
  Ffn f;
  f.w1 = Tensor::gaussian({d, inner}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  f.b1 = Tensor::zeros({inner});
  f.w2 = Tensor::gaussian({inner, d}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(inner)));
  f.b2 = Tensor::zeros({d});
  return f;
}

Tensor Ffn::forward(const Tensor& x) const {
  return add_bias(matmul(gelu(add_bias(matmul(x, w1), b1)), w2), b2);
}

MolexLayer MolexLayer::init(int d, int inner, int n_experts, int top_k, int rank, Rng& rng) {
  MolexLayer layer;
  layer.ffn = Ffn::init(d, inner, rng);
  layer.top_k = top_k;
  if (n_experts > 0) {
    layer.gating = GatingNetwork::init(d, n_experts, rng);
    layer.experts.reserve(static_cast<std::size_t>(n_experts));
    for (int i = 0; i < n_experts; ++i) layer.experts.push_back(LoraExpert::init(d, rank, rng));
  }
  return layer;
}

Tensor MolexLayer::forward(const Tensor& phi, Rng* noise_rng, RouterDecision* decision) const {
  Tensor y = ffn.forward(phi);
  if (experts.empty()) {
    if (decision) *decision = RouterDecision{};
    return y;
  }
  Tensor g = gating.gate(phi, noise_rng);
  RouterDecision d = route(g, top_k);
  const int t = phi.rows();
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const auto& sel = d.rows[i];
    if (sel.empty()) continue;
    Tensor sub = gather_rows(phi, sel);
    Tensor delta = lora_apply(experts[i], sub);
    Tensor wcol = gather_rows(slice_cols(g, static_cast<int>(i), static_cast<int>(i) + 1), sel);
    Tensor weighted = scale_rows(delta, wcol);
    y = add(y, scatter_rows(weighted, sel, t));
  }
  if (decision) *decision = std::move(d);
  return y;
}

void MolexLayer::extend(int n_new, Rng& rng) {
  if (n_new <= 0) throw ConfigError("extend: expert count must be positive");
  if (experts.empty()) throw ContractError("extend: layer carries no expert pool");
  const int d = gating.w_gate.rows();
  const int n_old = gating.w_gate.cols();
  const int r = experts.front().rank();
  const int n = n_old + n_new;

  Tensor w_gate({d, n});
  Tensor w_noise({d, n});
  Tensor fresh_gate =
      Tensor::gaussian({d, n_new}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < n_old; ++j) {
      w_gate.at(i, j) = gating.w_gate.at(i, j);
      w_noise.at(i, j) = gating.w_noise.at(i, j);
    }
    for (int j = 0; j < n_new; ++j) w_gate.at(i, n_old + j) = fresh_gate.at(i, j);
  }
  gating.w_gate = w_gate;
  gating.w_noise = w_noise;
  gating.w_gate.set_requires_grad(true);
  gating.w_noise.set_requires_grad(true);
  for (LoraExpert& e : experts) {
    e.down.set_requires_grad(false);
    e.up.set_requires_grad(false);
  }
  for (int i = 0; i < n_new; ++i) {
    LoraExpert e = LoraExpert::init(d, r, rng);
    e.down.set_requires_grad(true);
    e.up.set_requires_grad(true);
    experts.push_back(std::move(e));
  }
  if (top_k > n) top_k = n;
}

}  // namespace molex
