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

#include "encoder.hpp"

#include <cmath>

namespace molex {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(d_in, "d_in");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers, "n_layers");
  positive(ffn_inner, "ffn_inner");
  positive(lstm_hidden, "lstm_hidden");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model=" + std::to_string(d_model) +
                      " is not divisible by n_heads=" + std::to_string(n_heads));
  }
  if (n_expert_layers < 0 || n_expert_layers > n_layers) {
    throw ConfigError("n_expert_layers must lie in [0, n_layers]");
  }
  if (n_expert_layers > 0) {
    positive(n_experts, "n_experts");
    positive(rank, "rank");
    if (rank > d_model) throw ConfigError("rank must not exceed d_model");
    if (top_k < 1 || top_k > n_experts) {
      throw ConfigError("top_k=" + std::to_string(top_k) + " out of range for n_experts=" +
                        std::to_string(n_experts));
    }
  }
}

LayerNormParams LayerNormParams::init(int d) {
  LayerNormParams p;
  p.gamma = Tensor::full({d}, 1.0);
  p.beta = Tensor::zeros({d});
  return p;
}

Mhsa Mhsa::init(int d, int heads, Rng& rng) {
  Mhsa m;
  m.n_heads = heads;
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  m.w_q = Tensor::gaussian({d, d}, rng, 0.0, s);
  m.b_q = Tensor::zeros({d});
  m.w_k = Tensor::gaussian({d, d}, rng, 0.0, s);
  m.b_k = Tensor::zeros({d});
  m.w_v = Tensor::gaussian({d, d}, rng, 0.0, s);
  m.b_v = Tensor::zeros({d});
  m.w_o = Tensor::gaussian({d, d}, rng, 0.0, s);
  m.b_o = Tensor::zeros({d});
  return m;
}

Tensor Mhsa::forward(const Tensor& x) const {
  const int d = x.cols();
  const int dh = d / n_heads;
  Tensor q = add_bias(matmul(x, w_q), b_q);
  Tensor k = add_bias(matmul(x, w_k), b_k);
  Tensor v = add_bias(matmul(x, w_v), b_v);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor att = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
    heads.push_back(matmul(att, vh));
  }
  return add_bias(matmul(concat_cols(heads), w_o), b_o);
}

Tensor TransformerLayer::forward(const Tensor& h, Rng* noise_rng, RouterDecision* decision) const {
  Tensor phi = layer_norm(add(h, attn.forward(h)), ln1.gamma, ln1.beta);
  Tensor m = molex.forward(phi, noise_rng, decision);
  return layer_norm(add(phi, m), ln2.gamma, ln2.beta);
}

AttentiveMerge AttentiveMerge::init(int d, int layers, bool projection, Rng& rng) {
  AttentiveMerge m;
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  if (projection) {
    m.proj_w.reserve(static_cast<std::size_t>(layers));
    m.proj_b.reserve(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
      m.proj_w.push_back(Tensor::gaussian({d, d}, rng, 0.0, s));
      m.proj_b.push_back(Tensor::zeros({d}));
    }
  }
  m.q = Tensor::gaussian({d}, rng, 0.0, s);
  return m;
}

Tensor AttentiveMerge::forward(const std::vector<Tensor>& hs) const {
  if (hs.empty()) throw ContractError("merge: no hidden states to combine");
  const int d = hs.front().cols();
  std::vector<Tensor> scores;
  scores.reserve(hs.size());
  for (std::size_t l = 0; l < hs.size(); ++l) {
    Tensor pooled = reshape(mean_rows(hs[l]), {1, d});
    if (!proj_w.empty()) pooled = add_bias(matmul(pooled, proj_w[l]), proj_b[l]);
    scores.push_back(dot(q, pooled));
  }
  Tensor w = softmax(stack_scalars(scores));
  Tensor merged = scale_by(hs[0], pick(w, 0));
  for (std::size_t l = 1; l < hs.size(); ++l) {
    merged = add(merged, scale_by(hs[l], pick(w, static_cast<int>(l))));
  }
  return merged;
}

ClassifierHead ClassifierHead::init(int d, int hidden, Rng& rng) {
  ClassifierHead c;
  c.w_ih = Tensor::gaussian({d, 4 * hidden}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  c.w_hh =
      Tensor::gaussian({hidden, 4 * hidden}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  c.b = Tensor::zeros({4 * hidden});
  for (int i = hidden; i < 2 * hidden; ++i) c.b.at(i) = 1.0;
  c.w_out = Tensor::gaussian({hidden, 2}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  c.b_out = Tensor::zeros({2});
  return c;
}

Tensor ClassifierHead::forward(const Tensor& x) const {
  const int t = x.rows();
  const int hidden = w_hh.rows();
  Tensor h = Tensor::zeros({1, hidden});
  Tensor c = Tensor::zeros({1, hidden});
  for (int step = 0; step < t; ++step) {
    Tensor xt = slice_rows(x, step, step + 1);
    Tensor z = add_bias(add(matmul(xt, w_ih), matmul(h, w_hh)), b);
    Tensor ig = sigmoid(slice_cols(z, 0, hidden));
    Tensor fg = sigmoid(slice_cols(z, hidden, 2 * hidden));
    Tensor gg = tanh_op(slice_cols(z, 2 * hidden, 3 * hidden));
    Tensor og = sigmoid(slice_cols(z, 3 * hidden, 4 * hidden));
    c = add(mul(fg, c), mul(ig, gg));
    h = mul(og, tanh_op(c));
  }
  return reshape(add_bias(matmul(h, w_out), b_out), {2});
}

Frontend Frontend::init(int d_in, int d, Rng& rng) {
  Frontend f;
  f.w_in = Tensor::gaussian({d_in, d}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
  f.b_in = Tensor::zeros({d});
  return f;
}

Tensor sinusoidal_positions(int t, int d) {
  Tensor pe({t, d});
  for (int pos = 0; pos < t; ++pos) {
    for (int i = 0; i < d; i += 2) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / d);
      pe.at(pos, i) = std::sin(pos * freq);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

Tensor Frontend::forward(const Tensor& feats) const {
  Tensor x = add_bias(matmul(feats, w_in), b_in);
  return add(x, sinusoidal_positions(x.rows(), x.cols()));
}

Encoder::Encoder(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  Rng rng(seed);
  frontend = Frontend::init(cfg.d_in, cfg.d_model, rng);
  layers.reserve(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    TransformerLayer layer;
    layer.attn = Mhsa::init(cfg.d_model, cfg.n_heads, rng);
    layer.ln1 = LayerNormParams::init(cfg.d_model);
    int n_exp = l < cfg.n_expert_layers ? cfg.n_experts : 0;
    layer.molex = MolexLayer::init(cfg.d_model, cfg.ffn_inner, n_exp, cfg.top_k, cfg.rank, rng);
    layer.ln2 = LayerNormParams::init(cfg.d_model);
    layers.push_back(std::move(layer));
  }
  merge = AttentiveMerge::init(cfg.d_model, cfg.n_layers, cfg.merge_projection, rng);
  classifier = ClassifierHead::init(cfg.d_model, cfg.lstm_hidden, rng);
}

Tensor Encoder::forward(const Tensor& feats, Rng* noise_rng, ForwardTrace* trace) const {
  if (feats.ndim() != 2 || feats.cols() != cfg.d_in) {
    throw ShapeError("encoder: expected [T x " + std::to_string(cfg.d_in) +
                     "] features, got " + feats.shape_str());
  }
  if (trace) trace->decisions.assign(static_cast<std::size_t>(cfg.n_layers), RouterDecision{});
  Tensor h = frontend.forward(feats);
  std::vector<Tensor> outputs;
  outputs.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    RouterDecision* dec = trace ? &trace->decisions[l] : nullptr;
    h = layers[l].forward(h, noise_rng, dec);
    outputs.push_back(h);
  }
  Tensor merged = merge.forward(outputs);
  return classifier.forward(merged);
}

std::vector<std::pair<std::string, Tensor*>> Encoder::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("frontend.w_in", &frontend.w_in);
  out.emplace_back("frontend.b_in", &frontend.b_in);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string p = "layers." + std::to_string(l) + ".";
    TransformerLayer& layer = layers[l];
    out.emplace_back(p + "attn.w_q", &layer.attn.w_q);
    out.emplace_back(p + "attn.b_q", &layer.attn.b_q);
    out.emplace_back(p + "attn.w_k", &layer.attn.w_k);
    out.emplace_back(p + "attn.b_k", &layer.attn.b_k);
    out.emplace_back(p + "attn.w_v", &layer.attn.w_v);
    out.emplace_back(p + "attn.b_v", &layer.attn.b_v);
    out.emplace_back(p + "attn.w_o", &layer.attn.w_o);
    out.emplace_back(p + "attn.b_o", &layer.attn.b_o);
    out.emplace_back(p + "ln1.gamma", &layer.ln1.gamma);
    out.emplace_back(p + "ln1.beta", &layer.ln1.beta);
    out.emplace_back(p + "ffn.w1", &layer.molex.ffn.w1);
    out.emplace_back(p + "ffn.b1", &layer.molex.ffn.b1);
    out.emplace_back(p + "ffn.w2", &layer.molex.ffn.w2);
    out.emplace_back(p + "ffn.b2", &layer.molex.ffn.b2);
    out.emplace_back(p + "ln2.gamma", &layer.ln2.gamma);
    out.emplace_back(p + "ln2.beta", &layer.ln2.beta);
    if (!layer.molex.experts.empty()) {
      out.emplace_back(p + "gating.w_gate", &layer.molex.gating.w_gate);
      out.emplace_back(p + "gating.w_noise", &layer.molex.gating.w_noise);
      for (std::size_t e = 0; e < layer.molex.experts.size(); ++e) {
        std::string ep = p + "experts." + std::to_string(e) + ".";
        out.emplace_back(ep + "down", &layer.molex.experts[e].down);
        out.emplace_back(ep + "up", &layer.molex.experts[e].up);
      }
    }
  }
  for (std::size_t l = 0; l < merge.proj_w.size(); ++l) {
    std::string p = "merge.proj." + std::to_string(l) + ".";
    out.emplace_back(p + "w", &merge.proj_w[l]);
    out.emplace_back(p + "b", &merge.proj_b[l]);
  }
  out.emplace_back("merge.q", &merge.q);
  out.emplace_back("classifier.lstm.w_ih", &classifier.w_ih);
  out.emplace_back("classifier.lstm.w_hh", &classifier.w_hh);
  out.emplace_back("classifier.lstm.b", &classifier.b);
  out.emplace_back("classifier.w_out", &classifier.w_out);
  out.emplace_back("classifier.b_out", &classifier.b_out);
  return out;
}

void Encoder::extend_experts(int n_new, Rng& rng) {
  if (cfg.n_expert_layers == 0) throw ContractError("extend_experts: model has no expert layers");
  for (int l = 0; l < cfg.n_expert_layers; ++l) {
    layers[static_cast<std::size_t>(l)].molex.extend(n_new, rng);
  }
  cfg.n_experts += n_new;
}

}  // namespace molex
