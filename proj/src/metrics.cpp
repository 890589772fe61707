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

#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "svd.hpp"

namespace molex {

Tensor orth_loss_expert(const LoraExpert& e) {
  const int d = e.down.rows();
  Tensor s = matmul(matmul(transpose(e.down), e.down), matmul(e.up, transpose(e.up)));
  Tensor t2 = trace(matmul(s, s));
  Tensor t1 = trace(s);
  return add_scalar(sub(t2, scale(t1, 2.0)), static_cast<double>(d));
}

Tensor orth_loss(const std::vector<const LoraExpert*>& experts) {
  if (experts.empty()) return Tensor::scalar(0.0);
  Tensor acc = orth_loss_expert(*experts.front());
  for (std::size_t i = 1; i < experts.size(); ++i) {
    acc = add(acc, orth_loss_expert(*experts[i]));
  }
  return acc;
}

std::vector<double> composite_singular_values(const LoraExpert& e) {
  const int r = e.down.cols();
  SvdResult sd = svd(e.down.detached());
  Tensor m = matmul(transpose(sd.v), e.up.detached());  // r x d
  for (int i = 0; i < r; ++i) {
    double s = sd.sigma[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.cols(); ++j) m.at(i, j) *= s;
  }
  return singular_values(m);
}

int effective_rank(const LoraExpert& e, double tau) {
  std::vector<double> sv = composite_singular_values(e);
  int n = 0;
  for (double s : sv)
    if (s >= tau) ++n;
  return n;
}

EerResult compute_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("compute_eer: score and label counts differ");
  }
  std::int64_t n_bona = 0, n_spoof = 0;
  for (int l : labels) (l ? n_bona : n_spoof)++;
  if (n_bona == 0 || n_spoof == 0) {
    throw ContractError("compute_eer: both classes must be present");
  }

  // Accept when score >= threshold. Sweeping the threshold upward through
  // the distinct scores, FAR falls from 1 and FRR rises from 0, so
  // FAR - FRR changes sign exactly once; interpolate linearly there.
  std::vector<std::pair<double, int>> sl(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) sl[i] = {scores[i], labels[i]};
  std::sort(sl.begin(), sl.end());

  std::vector<double> thr, far, frr;
  std::int64_t bona_below = 0, spoof_below = 0;
  std::size_t i = 0;
  while (i < sl.size()) {
    double v = sl[i].first;
    thr.push_back(v);
    far.push_back(static_cast<double>(n_spoof - spoof_below) / static_cast<double>(n_spoof));
    frr.push_back(static_cast<double>(bona_below) / static_cast<double>(n_bona));
    while (i < sl.size() && sl[i].first == v) {
      (sl[i].second ? bona_below : spoof_below)++;
      ++i;
    }
  }
  thr.push_back(sl.back().first);  // everything rejected
  far.push_back(0.0);
  frr.push_back(1.0);

  EerResult r;
  for (std::size_t k = 1; k < thr.size(); ++k) {
    double diff = far[k] - frr[k];
    if (diff > 0.0) continue;
    double prev = far[k - 1] - frr[k - 1];
    double a = prev / (prev - diff);
    r.eer = far[k - 1] + a * (far[k] - far[k - 1]);
    r.threshold = thr[k - 1] + a * (thr[k] - thr[k - 1]);
    r.degenerate = r.eer > 0.5;
    return r;
  }
  r.eer = 0.5;
  r.threshold = thr.back();
  return r;
}

UtilizationAccumulator::UtilizationAccumulator(int n_layers, int n_experts) {
  if (n_layers < 1 || n_experts < 1) {
    throw ConfigError("utilization: layer and expert counts must be positive");
  }
  sums_.assign(static_cast<std::size_t>(n_layers),
               std::vector<double>(static_cast<std::size_t>(n_experts), 0.0));
  positions_.assign(static_cast<std::size_t>(n_layers), 0);
}

void UtilizationAccumulator::add(int layer, const RouterDecision& d) {
  if (layer < 0 || layer >= static_cast<int>(sums_.size())) {
    throw ContractError("utilization: layer index out of range");
  }
  auto& row = sums_[static_cast<std::size_t>(layer)];
  if (!d.gates.defined() || d.gates.ndim() != 2 ||
      d.gates.cols() != static_cast<int>(row.size())) {
    throw ShapeError("utilization: gate width does not match expert count");
  }
  for (int t = 0; t < d.gates.rows(); ++t) {
    for (std::size_t e = 0; e < row.size(); ++e) row[e] += d.gates.at(t, static_cast<int>(e));
  }
  positions_[static_cast<std::size_t>(layer)] += d.gates.rows();
}

void UtilizationAccumulator::add(const ForwardTrace& trace) {
  for (std::size_t l = 0; l < trace.decisions.size() && l < sums_.size(); ++l) {
    if (trace.decisions[l].gates.defined()) add(static_cast<int>(l), trace.decisions[l]);
  }
}

void UtilizationAccumulator::merge(const UtilizationAccumulator& other) {
  if (other.sums_.size() != sums_.size() ||
      (sums_.size() && other.sums_[0].size() != sums_[0].size())) {
    throw ContractError("utilization: cannot merge accumulators of different shape");
  }
  for (std::size_t l = 0; l < sums_.size(); ++l) {
    for (std::size_t e = 0; e < sums_[l].size(); ++e) sums_[l][e] += other.sums_[l][e];
    positions_[l] += other.positions_[l];
  }
}

std::vector<std::vector<double>> UtilizationAccumulator::utilization() const {
  std::int64_t grand_total = 0;
  for (std::int64_t p : positions_) grand_total += p;
  if (grand_total == 0) {
    throw ContractError("utilization: nothing accumulated");
  }
  std::vector<std::vector<double>> out(sums_.size());
  for (std::size_t l = 0; l < sums_.size(); ++l) {
    out[l].resize(sums_[l].size(), 0.0);
    if (positions_[l] > 0) {
      for (std::size_t e = 0; e < sums_[l].size(); ++e) {
        out[l][e] = sums_[l][e] / static_cast<double>(positions_[l]);
      }
    }
  }
  return out;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

namespace {

void finish_report(ParamReport& r) {
  r.trainable = r.experts + r.gating + r.merge + r.classifier;
  r.total = r.backbone + r.trainable;
  r.reduction_pct =
      r.total > 0 ? 100.0 * (1.0 - static_cast<double>(r.trainable) / static_cast<double>(r.total))
                  : 0.0;
}

}  // namespace

ParamReport param_report(Encoder& enc) {
  ParamReport r;
  for (auto& [name, t] : enc.named_params()) {
    std::int64_t n = t->numel();
    if (name.find(".experts.") != std::string::npos) {
      r.experts += n;
    } else if (name.find(".gating.") != std::string::npos) {
      r.gating += n;
    } else if (name.rfind("merge.", 0) == 0) {
      r.merge += n;
    } else if (name.rfind("classifier.", 0) == 0) {
      r.classifier += n;
    } else {
      r.backbone += n;
    }
  }
  finish_report(r);
  return r;
}

ParamReport param_report(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.d_model, inner = cfg.ffn_inner, h = cfg.lstm_hidden;
  ParamReport r;
  r.backbone += static_cast<std::int64_t>(cfg.d_in) * d + d;  // frontend
  r.backbone += cfg.n_layers * (4 * (d * d + d)    // attention
                                + 4 * d            // two norms
                                + d * inner + inner + inner * d + d);
  r.experts = static_cast<std::int64_t>(cfg.n_expert_layers) * cfg.n_experts * 2 * d * cfg.rank;
  r.gating = static_cast<std::int64_t>(cfg.n_expert_layers) * 2 * d * cfg.n_experts;
  r.merge = (cfg.merge_projection ? cfg.n_layers * (d * d + d) : 0) + d;
  r.classifier = d * 4 * h + h * 4 * h + 4 * h + h * 2 + 2;
  finish_report(r);
  return r;
}

void write_heatmap_csv(const std::string& path, const std::vector<std::vector<double>>& util) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "layer,expert,utilization\n";
  out << std::fixed << std::setprecision(6);
  for (std::size_t l = 0; l < util.size(); ++l) {
    for (std::size_t e = 0; e < util[l].size(); ++e) {
      out << l << "," << e << "," << util[l][e] << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_scores_tsv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<int>& labels, const std::vector<double>& scores) {
  if (ids.size() != labels.size() || ids.size() != scores.size()) {
    throw ContractError("score table: column lengths differ");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << "\t" << (labels[i] ? "bonafide" : "spoof") << "\t" << scores[i] << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace molex
