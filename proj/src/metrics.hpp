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

#ifndef MOLEX_METRICS_HPP_
#define MOLEX_METRICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "lora.hpp"

namespace molex {

// || (down up)(down up)^T - I ||_F^2 via the r x r Gram product
// S = (down^T down)(up up^T): tr(S^2) - 2 tr(S) + d. The d x d composite is
// never materialized. Differentiable.
Tensor orth_loss_expert(const LoraExpert& e);

// Sum of orth_loss_expert over the set; zero scalar when empty.
Tensor orth_loss(const std::vector<const LoraExpert*>& experts);

// Singular values of down * up, descending, computed on r x d intermediates.
std::vector<double> composite_singular_values(const LoraExpert& e);

// Number of singular values of down * up at or above tau.
int effective_rank(const LoraExpert& e, double tau);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  // The crossing sits above 0.5: the scores separate the classes the wrong
  // way around. The raw value is reported unchanged.
  bool degenerate = false;
};

// Equal error rate of bonafide-positive scores, linearly interpolated at the
// FAR/FRR crossing. labels: 1 bonafide, 0 spoof; both classes must appear.
EerResult compute_eer(const std::vector<double>& scores, const std::vector<int>& labels);

// Running mean of the full softmax gate rows per (layer, expert), mergeable
// across shards. Every position contributes its whole probability vector, so
// each reported layer row sums to one.
class UtilizationAccumulator {
 public:
  UtilizationAccumulator(int n_layers, int n_experts);

  void add(int layer, const RouterDecision& d);
  void add(const ForwardTrace& trace);
  void merge(const UtilizationAccumulator& other);

  // Per layer: mean gating score of each expert. Throws ContractError when
  // nothing has been accumulated at all; individual untouched layers report
  // zeros.
  std::vector<std::vector<double>> utilization() const;
  std::int64_t positions(int layer) const {
    return positions_[static_cast<std::size_t>(layer)];
  }

 private:
  std::vector<std::vector<double>> sums_;
  std::vector<std::int64_t> positions_;
};

// 0.5 * L1 distance between two distributions of equal length.
double total_variation(const std::vector<double>& p, const std::vector<double>& q);

struct ParamReport {
  std::int64_t total = 0;
  std::int64_t backbone = 0;
  std::int64_t experts = 0;
  std::int64_t gating = 0;
  std::int64_t merge = 0;
  std::int64_t classifier = 0;
  std::int64_t trainable = 0;  // experts + gating + merge + classifier
  double reduction_pct = 0.0;  // vs updating every parameter
};

ParamReport param_report(Encoder& enc);
// Closed-form count from the dimensions alone; allocates nothing.
ParamReport param_report(const ModelConfig& cfg);

// layer,expert,utilization rows, six decimals.
void write_heatmap_csv(const std::string& path, const std::vector<std::vector<double>>& util);

// id <TAB> label <TAB> score; label written as bonafide / spoof.
void write_scores_tsv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<int>& labels, const std::vector<double>& scores);

}  // namespace molex

#endif  // MOLEX_METRICS_HPP_
