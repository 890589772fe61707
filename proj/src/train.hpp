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

#ifndef MOLEX_TRAIN_HPP_
#define MOLEX_TRAIN_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "encoder.hpp"
#include "metrics.hpp"

namespace molex {

// Which parameter groups the optimizer may touch. Pretrain updates the
// backbone and head while the expert pools and routers stay frozen;
// finetune inverts that for the backbone; adapt narrows to newly added
// experts plus the routers.
enum class Phase { kPretrain, kFinetune, kAdapt };

struct TrainConfig {
  int epochs = 5;
  int batch_size = 8;
  double lr = 1e-3;
  double lambda_orth = 1.0;
  bool orth_enabled = true;
  bool orth_all_experts = false;   // default: only experts routed in the batch
  double lambda_balance = 0.0;     // importance-balance penalty on the router, off by default
  bool noise_enabled = true;       // router noise during training
  std::uint64_t seed = 1;
  double replay_fraction = 0.0;       // adapt only
  bool adapt_unfreeze_head = false;   // adapt only: also update merge + classifier

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double l_ce = 0.0;
  double l_orth = 0.0;
  double dev_eer = 0.0;        // NaN when no dev set was given
  double mean_eff_rank = 0.0;  // tau = 1e-2 over all experts
};
using History = std::vector<EpochStats>;

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update to every trainable parameter that accumulated a
  // gradient, then clears those gradients. Parameters without a gradient
  // this step keep their moment state untouched.
  void step(const std::vector<std::pair<std::string, Tensor*>>& params);

 private:
  struct State {
    std::vector<double> m, v;
    std::int64_t t = 0;
  };
  double lr_, b1_, b2_, eps_;
  std::map<std::string, State> state_;
};

// Sets requires_grad across the registry for the given phase.
// first_new_expert: experts at this index or above count as newly added
// (adapt only); unfreeze_head additionally opens merge + classifier.
void apply_phase_mask(Encoder& enc, Phase phase, int first_new_expert = 0,
                      bool unfreeze_head = false);

// Minimizes mean cross-entropy (+ lambda * orthogonality penalty over the
// routed experts) with Adam. Aborts with NumericError naming the step if the
// loss stops being finite. dev may be null.
History train(Encoder& enc, const Dataset& train_ds, const Dataset* dev, Phase phase,
              const TrainConfig& cfg);

// Grows every expert pool by n_new, freezes everything except the new
// experts and the routers (plus head if configured), then trains on new-domain
// data mixed with a per-epoch replay draw from the old domain.
History adapt(Encoder& enc, const Dataset& new_ds, const Dataset* old_ds, int n_new,
              const Dataset* dev, const TrainConfig& cfg);

struct EvalResult {
  EerResult eer;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> scores;  // bonafide logit minus spoof logit
};

// Deterministic: no router noise, no gradient recording.
EvalResult evaluate(const Encoder& enc, const Dataset& ds);

double mean_effective_rank(Encoder& enc, double tau = 1e-2);

// epoch,l_ce,l_orth,dev_eer,mean_eff_rank
void write_history_csv(const std::string& path, const History& h);

}  // namespace molex

#endif  // MOLEX_TRAIN_HPP_
