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

#include "train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

namespace molex {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (lr < 0.0) throw ConfigError("lr must be non-negative");
  if (lambda_orth < 0.0) throw ConfigError("lambda_orth must be non-negative");
  if (lambda_balance < 0.0) throw ConfigError("lambda_balance must be non-negative");
  if (replay_fraction < 0.0 || replay_fraction > 1.0) {
    throw ConfigError("replay_fraction must lie in [0, 1]");
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<std::pair<std::string, Tensor*>>& params) {
  for (auto& [name, t] : params) {
    if (!t->requires_grad() || !t->has_grad()) continue;
    Tensor g = t->grad();
    State& s = state_[name];
    const auto n = static_cast<std::size_t>(t->numel());
    if (s.m.empty()) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
    }
    s.t += 1;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(s.t));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(s.t));
    double* w = t->data();
    const double* gd = g.data();
    for (std::size_t i = 0; i < n; ++i) {
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * gd[i];
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * gd[i] * gd[i];
      double mh = s.m[i] / c1;
      double vh = s.v[i] / c2;
      w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
    t->zero_grad();
  }
}

namespace {

// "layers.3.experts.7.down" -> 7; -1 when the name is not an expert tensor.
int expert_index(const std::string& name) {
  auto pos = name.find(".experts.");
  if (pos == std::string::npos) return -1;
  std::size_t start = pos + 9;
  std::size_t end = name.find('.', start);
  return std::stoi(name.substr(start, end - start));
}

bool head_param(const std::string& name) {
  return name.rfind("merge.", 0) == 0 || name.rfind("classifier.", 0) == 0;
}

bool expert_param(const std::string& name) {
  return name.find(".experts.") != std::string::npos;
}

bool gating_param(const std::string& name) {
  return name.find(".gating.") != std::string::npos;
}

}  // namespace

void apply_phase_mask(Encoder& enc, Phase phase, int first_new_expert, bool unfreeze_head) {
  for (auto& [name, t] : enc.named_params()) {
    bool trainable = false;
    switch (phase) {
      case Phase::kPretrain:
        trainable = !expert_param(name) && !gating_param(name);
        break;
      case Phase::kFinetune:
        trainable = expert_param(name) || gating_param(name) || head_param(name);
        break;
      case Phase::kAdapt:
        trainable = gating_param(name) ||
                    (expert_param(name) && expert_index(name) >= first_new_expert) ||
                    (unfreeze_head && head_param(name));
        break;
    }
    t->set_requires_grad(trainable);
    t->zero_grad();
  }
}

namespace {

struct EpochLosses {
  double ce = 0.0;
  double orth = 0.0;
};

std::vector<const LoraExpert*> orth_targets(const Encoder& enc,
                                            const std::set<std::pair<int, int>>& routed,
                                            bool all_experts) {
  std::vector<const LoraExpert*> out;
  if (all_experts) {
    for (int l = 0; l < enc.cfg.n_expert_layers; ++l) {
      for (const auto& e : enc.layers[static_cast<std::size_t>(l)].molex.experts) {
        out.push_back(&e);
      }
    }
  } else {
    for (auto [l, e] : routed) {
      out.push_back(&enc.layers[static_cast<std::size_t>(l)].molex.experts[static_cast<std::size_t>(e)]);
    }
  }
  return out;
}

EpochLosses run_epoch(Encoder& enc, const std::vector<const Utterance*>& items,
                      const TrainConfig& cfg, int epoch, Rng& order_rng, Rng& noise_rng,
                      Adam& adam, std::vector<std::pair<std::string, Tensor*>>& params) {
  std::vector<const Utterance*> order = items;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(order_rng.below(i));
    std::swap(order[i - 1], order[j]);
  }

  EpochLosses sums;
  std::int64_t n_items = 0;
  int step = 0;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
    Tape tape;
    std::vector<Tensor> ce_terms;
    std::set<std::pair<int, int>> routed;
    std::vector<Tensor> importance;  // per expert layer, summed over the batch
    for (std::size_t i = b0; i < b1; ++i) {
      ForwardTrace trace;
      Rng* noise = cfg.noise_enabled ? &noise_rng : nullptr;
      Tensor logits = enc.forward(order[i]->features, noise, &trace);
      ce_terms.push_back(cross_entropy_logits(logits, order[i]->label));
      std::size_t expert_layer = 0;
      for (std::size_t l = 0; l < trace.decisions.size(); ++l) {
        const auto& rows = trace.decisions[l].rows;
        if (rows.empty()) continue;
        for (std::size_t e = 0; e < rows.size(); ++e) {
          if (!rows[e].empty()) routed.insert({static_cast<int>(l), static_cast<int>(e)});
        }
        if (cfg.lambda_balance > 0.0) {
          Tensor imp = mean_rows(trace.decisions[l].gates_live);
          if (expert_layer == importance.size()) {
            importance.push_back(imp);
          } else {
            importance[expert_layer] = add(importance[expert_layer], imp);
          }
        }
        ++expert_layer;
      }
    }
    Tensor l_ce = mean(stack_scalars(ce_terms));
    Tensor l_orth = Tensor::scalar(0.0);
    if (cfg.orth_enabled && enc.cfg.n_expert_layers > 0) {
      l_orth = orth_loss(orth_targets(enc, routed, cfg.orth_all_experts));
    }
    Tensor total = add(l_ce, scale(l_orth, cfg.lambda_orth));
    if (cfg.lambda_balance > 0.0 && !importance.empty()) {
      // squared coefficient of variation of per-expert importance: the mean
      // gate mass is 1/n by construction, so only the deviations matter
      Tensor l_bal = Tensor::scalar(0.0);
      for (Tensor& imp_sum : importance) {
        int n = imp_sum.dim(0);
        Tensor imp = scale(imp_sum, 1.0 / static_cast<double>(b1 - b0));
        Tensor dev = add_scalar(imp, -1.0 / n);
        l_bal = add(l_bal, scale(sum(mul(dev, dev)), static_cast<double>(n)));
      }
      total = add(total, scale(l_bal, cfg.lambda_balance));
    }
    if (!std::isfinite(total.value())) {
      throw NumericError("training aborted: non-finite loss at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(step));
    }
    tape.backward(total);
    adam.step(params);

    sums.ce += l_ce.value() * static_cast<double>(b1 - b0);
    sums.orth += l_orth.value() * static_cast<double>(b1 - b0);
    n_items += static_cast<std::int64_t>(b1 - b0);
    ++step;
  }
  if (n_items > 0) {
    sums.ce /= static_cast<double>(n_items);
    sums.orth /= static_cast<double>(n_items);
  }
  return sums;
}

EpochStats epoch_stats(Encoder& enc, int epoch, const EpochLosses& losses, const Dataset* dev) {
  EpochStats st;
  st.epoch = epoch;
  st.l_ce = losses.ce;
  st.l_orth = losses.orth;
  st.dev_eer = dev ? evaluate(enc, *dev).eer.eer : std::nan("");
  st.mean_eff_rank = enc.cfg.n_expert_layers > 0 ? mean_effective_rank(enc) : std::nan("");
  return st;
}

}  // namespace

History train(Encoder& enc, const Dataset& train_ds, const Dataset* dev, Phase phase,
              const TrainConfig& cfg) {
  cfg.validate();
  if (phase == Phase::kAdapt) {
    throw ContractError("train: adaptation runs through adapt()");
  }
  if (train_ds.size() == 0) throw ContractError("train: dataset is empty");

  apply_phase_mask(enc, phase);
  auto params = enc.named_params();
  Adam adam(cfg.lr);
  Rng base(cfg.seed);
  Rng order_rng = base.fork(1);
  Rng noise_rng = base.fork(2);

  std::vector<const Utterance*> items;
  items.reserve(train_ds.size());
  for (const Utterance& u : train_ds.utts()) items.push_back(&u);

  History hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLosses losses = run_epoch(enc, items, cfg, epoch, order_rng, noise_rng, adam, params);
    hist.push_back(epoch_stats(enc, epoch, losses, dev));
  }
  return hist;
}

History adapt(Encoder& enc, const Dataset& new_ds, const Dataset* old_ds, int n_new,
              const Dataset* dev, const TrainConfig& cfg) {
  cfg.validate();
  if (n_new < 1) throw ConfigError("adapt: new expert count must be positive");
  if (new_ds.size() == 0) throw ContractError("adapt: new-domain dataset is empty");
  if (cfg.replay_fraction > 0.0 && (old_ds == nullptr || old_ds->size() == 0)) {
    throw ConfigError("adapt: replay_fraction > 0 requires old-domain data");
  }

  Rng base(cfg.seed);
  Rng extend_rng = base.fork(3);
  int first_new = enc.cfg.n_experts;
  enc.extend_experts(n_new, extend_rng);
  apply_phase_mask(enc, Phase::kAdapt, first_new, cfg.adapt_unfreeze_head);

  auto params = enc.named_params();
  Adam adam(cfg.lr);
  Rng order_rng = base.fork(1);
  Rng noise_rng = base.fork(2);
  Rng replay_rng = base.fork(4);

  History hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<const Utterance*> items;
    items.reserve(new_ds.size());
    for (const Utterance& u : new_ds.utts()) items.push_back(&u);
    if (cfg.replay_fraction > 0.0) {
      auto n_replay = static_cast<std::size_t>(
          std::ceil(cfg.replay_fraction * static_cast<double>(new_ds.size())));
      for (std::size_t i = 0; i < n_replay; ++i) {
        items.push_back(&old_ds->utt(static_cast<std::size_t>(replay_rng.below(old_ds->size()))));
      }
    }
    EpochLosses losses = run_epoch(enc, items, cfg, epoch, order_rng, noise_rng, adam, params);
    hist.push_back(epoch_stats(enc, epoch, losses, dev));
  }
  return hist;
}

EvalResult evaluate(const Encoder& enc, const Dataset& ds) {
  if (ds.size() == 0) throw ContractError("evaluate: dataset is empty");
  EvalResult r;
  r.ids.reserve(ds.size());
  r.labels.reserve(ds.size());
  r.scores.reserve(ds.size());
  for (const Utterance& u : ds.utts()) {
    Tensor logits = enc.forward(u.features, nullptr, nullptr);
    r.ids.push_back(u.id);
    r.labels.push_back(u.label);
    r.scores.push_back(logits.at(1) - logits.at(0));
  }
  r.eer = compute_eer(r.scores, r.labels);
  return r;
}

double mean_effective_rank(Encoder& enc, double tau) {
  std::int64_t n = 0;
  double sum = 0.0;
  for (int l = 0; l < enc.cfg.n_expert_layers; ++l) {
    for (const LoraExpert& e : enc.layers[static_cast<std::size_t>(l)].molex.experts) {
      sum += static_cast<double>(effective_rank(e, tau));
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

void write_history_csv(const std::string& path, const History& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "epoch,l_ce,l_orth,dev_eer,mean_eff_rank\n";
  out << std::setprecision(9);
  for (const EpochStats& s : h) {
    out << s.epoch << "," << s.l_ce << "," << s.l_orth << "," << s.dev_eer << ","
        << s.mean_eff_rank << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace molex
