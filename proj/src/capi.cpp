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

#include "molex/molex.h"

#include <string>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "encoder.hpp"
#include "metrics.hpp"
#include "train.hpp"

struct molex_model {
  molex::Encoder enc;
  std::uint64_t rng_state = 0;
};

struct molex_dataset {
  molex::Dataset ds;
};

namespace {

thread_local std::string g_last_error = "ok";

molex_status map_category(molex::ErrorCategory c) {
  switch (c) {
    case molex::ErrorCategory::kShape: return MOLEX_ERR_SHAPE;
    case molex::ErrorCategory::kConfig: return MOLEX_ERR_CONFIG;
    case molex::ErrorCategory::kContract: return MOLEX_ERR_CONTRACT;
    case molex::ErrorCategory::kNumeric: return MOLEX_ERR_NUMERIC;
    case molex::ErrorCategory::kIo: return MOLEX_ERR_IO;
    case molex::ErrorCategory::kFormat: return MOLEX_ERR_FORMAT;
    case molex::ErrorCategory::kVersion: return MOLEX_ERR_VERSION;
  }
  return MOLEX_ERR_UNKNOWN;
}

template <typename F>
molex_status guarded(F&& f) {
  try {
    f();
    return MOLEX_OK;
  } catch (const molex::Error& e) {
    g_last_error = e.what();
    return map_category(e.category());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MOLEX_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unidentified failure";
    return MOLEX_ERR_UNKNOWN;
  }
}

molex_status require(bool ok, const char* msg) {
  if (ok) return MOLEX_OK;
  g_last_error = msg;
  return MOLEX_ERR_CONTRACT;
}

molex::ModelConfig to_cpp(const molex_model_config& c) {
  molex::ModelConfig m;
  m.d_in = c.d_in;
  m.d_model = c.d_model;
  m.n_heads = c.n_heads;
  m.n_layers = c.n_layers;
  m.n_expert_layers = c.n_expert_layers;
  m.ffn_inner = c.ffn_inner;
  m.n_experts = c.n_experts;
  m.top_k = c.top_k;
  m.rank = c.rank;
  m.lstm_hidden = c.lstm_hidden;
  m.merge_projection = c.merge_projection != 0;
  return m;
}

molex_model_config from_cpp(const molex::ModelConfig& m) {
  molex_model_config c;
  c.d_in = m.d_in;
  c.d_model = m.d_model;
  c.n_heads = m.n_heads;
  c.n_layers = m.n_layers;
  c.n_expert_layers = m.n_expert_layers;
  c.ffn_inner = m.ffn_inner;
  c.n_experts = m.n_experts;
  c.top_k = m.top_k;
  c.rank = m.rank;
  c.lstm_hidden = m.lstm_hidden;
  c.merge_projection = m.merge_projection ? 1 : 0;
  return c;
}

molex::TrainConfig to_cpp(const molex_train_config& c) {
  molex::TrainConfig t;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.lr = c.lr;
  t.lambda_orth = c.lambda_orth;
  t.orth_enabled = c.orth_enabled != 0;
  t.orth_all_experts = c.orth_all_experts != 0;
  t.lambda_balance = c.lambda_balance;
  t.noise_enabled = c.noise_enabled != 0;
  t.seed = c.seed;
  t.replay_fraction = c.replay_fraction;
  t.adapt_unfreeze_head = c.adapt_unfreeze_head != 0;
  return t;
}

molex::SynthSpec to_cpp(const molex_synth_spec& c) {
  molex::SynthSpec s;
  s.seed = c.seed;
  s.per_class = c.per_class;
  s.frames = c.frames;
  s.d_in = c.d_in;
  s.domain = std::string(1, c.domain);
  s.difficulty = c.difficulty;
  return s;
}

molex_param_report from_cpp(const molex::ParamReport& r) {
  molex_param_report o;
  o.total = r.total;
  o.backbone = r.backbone;
  o.experts = r.experts;
  o.gating = r.gating;
  o.merge = r.merge;
  o.classifier = r.classifier;
  o.trainable = r.trainable;
  o.reduction_pct = r.reduction_pct;
  return o;
}

molex::UtilizationAccumulator collect_utilization(const molex::Encoder& enc,
                                                  const molex::Dataset& ds) {
  if (enc.cfg.n_expert_layers == 0) {
    throw molex::ContractError("model carries no expert layers");
  }
  molex::UtilizationAccumulator acc(enc.cfg.n_expert_layers, enc.cfg.n_experts);
  for (const molex::Utterance& u : ds.utts()) {
    molex::ForwardTrace trace;
    enc.forward(u.features, nullptr, &trace);
    acc.add(trace);
  }
  return acc;
}

}  // namespace

extern "C" {

void molex_model_config_default(molex_model_config* out) {
  if (out) *out = from_cpp(molex::ModelConfig{});
}

void molex_train_config_default(molex_train_config* out) {
  if (!out) return;
  molex::TrainConfig t;
  out->epochs = t.epochs;
  out->batch_size = t.batch_size;
  out->lr = t.lr;
  out->lambda_orth = t.lambda_orth;
  out->orth_enabled = t.orth_enabled ? 1 : 0;
  out->orth_all_experts = t.orth_all_experts ? 1 : 0;
  out->lambda_balance = t.lambda_balance;
  out->noise_enabled = t.noise_enabled ? 1 : 0;
  out->seed = t.seed;
  out->replay_fraction = t.replay_fraction;
  out->adapt_unfreeze_head = t.adapt_unfreeze_head ? 1 : 0;
}

void molex_synth_spec_default(molex_synth_spec* out) {
  if (!out) return;
  molex::SynthSpec s;
  out->seed = s.seed;
  out->per_class = s.per_class;
  out->frames = s.frames;
  out->d_in = s.d_in;
  out->domain = s.domain[0];
  out->difficulty = s.difficulty;
}

const char* molex_status_name(molex_status s) {
  switch (s) {
    case MOLEX_OK: return "ok";
    case MOLEX_ERR_SHAPE: return "shape";
    case MOLEX_ERR_CONFIG: return "config";
    case MOLEX_ERR_CONTRACT: return "contract";
    case MOLEX_ERR_NUMERIC: return "numeric";
    case MOLEX_ERR_IO: return "io";
    case MOLEX_ERR_FORMAT: return "format";
    case MOLEX_ERR_VERSION: return "version";
    case MOLEX_ERR_UNKNOWN: return "unknown";
  }
  return "unknown";
}

const char* molex_last_error(void) { return g_last_error.c_str(); }

molex_status molex_dataset_generate(const molex_synth_spec* spec, molex_dataset** out) {
  if (auto st = require(spec && out, "null argument")) return st;
  return guarded([&] { *out = new molex_dataset{molex::Dataset::generate(to_cpp(*spec))}; });
}

molex_status molex_dataset_load(const char* base_path, molex_dataset** out) {
  if (auto st = require(base_path && out, "null argument")) return st;
  return guarded([&] { *out = new molex_dataset{molex::Dataset::load(base_path)}; });
}

molex_status molex_dataset_save(const molex_dataset* ds, const char* base_path) {
  if (auto st = require(ds && base_path, "null argument")) return st;
  return guarded([&] { ds->ds.save(base_path); });
}

molex_status molex_dataset_concat(const molex_dataset* a, const molex_dataset* b,
                                  molex_dataset** out) {
  if (auto st = require(a && b && out, "null argument")) return st;
  return guarded([&] { *out = new molex_dataset{molex::Dataset::concat(a->ds, b->ds)}; });
}

int64_t molex_dataset_size(const molex_dataset* ds) {
  return ds ? static_cast<int64_t>(ds->ds.size()) : 0;
}

void molex_dataset_free(molex_dataset* ds) { delete ds; }

molex_status molex_model_create(const molex_model_config* cfg, uint64_t seed,
                                molex_model** out) {
  if (auto st = require(cfg && out, "null argument")) return st;
  return guarded([&] {
    auto* m = new molex_model{molex::Encoder(to_cpp(*cfg), seed), seed};
    *out = m;
  });
}

molex_status molex_model_load(const char* path, molex_model** out) {
  if (auto st = require(path && out, "null argument")) return st;
  return guarded([&] {
    auto* m = new molex_model{};
    try {
      m->enc = molex::load_checkpoint(path, &m->rng_state);
    } catch (...) {
      delete m;
      throw;
    }
    *out = m;
  });
}

molex_status molex_model_save(molex_model* m, const char* path) {
  if (auto st = require(m && path, "null argument")) return st;
  return guarded([&] { molex::save_checkpoint(path, m->enc, m->rng_state); });
}

molex_status molex_model_get_config(const molex_model* m, molex_model_config* out) {
  if (auto st = require(m && out, "null argument")) return st;
  *out = from_cpp(m->enc.cfg);
  return MOLEX_OK;
}

void molex_model_free(molex_model* m) { delete m; }

static molex_status run_phase(molex_model* m, const molex_dataset* train,
                              const molex_dataset* dev, const molex_train_config* cfg,
                              const char* history_csv_path, molex::Phase phase) {
  if (auto st = require(m && train && cfg, "null argument")) return st;
  return guarded([&] {
    molex::History h = molex::train(m->enc, train->ds, dev ? &dev->ds : nullptr, phase,
                                    to_cpp(*cfg));
    if (history_csv_path) molex::write_history_csv(history_csv_path, h);
  });
}

molex_status molex_pretrain(molex_model* m, const molex_dataset* train,
                            const molex_dataset* dev, const molex_train_config* cfg,
                            const char* history_csv_path) {
  return run_phase(m, train, dev, cfg, history_csv_path, molex::Phase::kPretrain);
}

molex_status molex_finetune(molex_model* m, const molex_dataset* train,
                            const molex_dataset* dev, const molex_train_config* cfg,
                            const char* history_csv_path) {
  return run_phase(m, train, dev, cfg, history_csv_path, molex::Phase::kFinetune);
}

molex_status molex_adapt(molex_model* m, const molex_dataset* new_ds,
                         const molex_dataset* old_ds, int32_t n_new,
                         const molex_dataset* dev, const molex_train_config* cfg,
                         const char* history_csv_path) {
  if (auto st = require(m && new_ds && cfg, "null argument")) return st;
  return guarded([&] {
    molex::History h = molex::adapt(m->enc, new_ds->ds, old_ds ? &old_ds->ds : nullptr, n_new,
                                    dev ? &dev->ds : nullptr, to_cpp(*cfg));
    if (history_csv_path) molex::write_history_csv(history_csv_path, h);
  });
}

molex_status molex_evaluate(const molex_model* m, const molex_dataset* ds,
                            const char* scores_tsv_path, double* eer, int32_t* degenerate) {
  if (auto st = require(m && ds && eer, "null argument")) return st;
  return guarded([&] {
    molex::EvalResult r = molex::evaluate(m->enc, ds->ds);
    if (scores_tsv_path) molex::write_scores_tsv(scores_tsv_path, r.ids, r.labels, r.scores);
    *eer = r.eer.eer;
    if (degenerate) *degenerate = r.eer.degenerate ? 1 : 0;
  });
}

molex_status molex_utilization_csv(const molex_model* m, const molex_dataset* ds,
                                   const char* csv_path) {
  if (auto st = require(m && ds && csv_path, "null argument")) return st;
  return guarded([&] {
    molex::write_heatmap_csv(csv_path, collect_utilization(m->enc, ds->ds).utilization());
  });
}

molex_status molex_utilization(const molex_model* m, const molex_dataset* ds, double* out,
                               int64_t capacity) {
  if (auto st = require(m && ds && out, "null argument")) return st;
  return guarded([&] {
    auto util = collect_utilization(m->enc, ds->ds).utilization();
    std::int64_t need =
        static_cast<std::int64_t>(m->enc.cfg.n_expert_layers) * m->enc.cfg.n_experts;
    if (capacity < need) throw molex::ContractError("utilization buffer too small");
    std::int64_t k = 0;
    for (const auto& row : util)
      for (double v : row) out[k++] = v;
  });
}

molex_status molex_effective_ranks(const molex_model* m, double tau, int32_t* out,
                                   int64_t capacity, double* mean_out) {
  if (auto st = require(m && out, "null argument")) return st;
  return guarded([&] {
    const molex::Encoder& enc = m->enc;
    if (enc.cfg.n_expert_layers == 0) {
      throw molex::ContractError("model carries no expert layers");
    }
    std::int64_t need =
        static_cast<std::int64_t>(enc.cfg.n_expert_layers) * enc.cfg.n_experts;
    if (capacity < need) throw molex::ContractError("effective-rank buffer too small");
    std::int64_t k = 0;
    double sum = 0.0;
    for (int l = 0; l < enc.cfg.n_expert_layers; ++l) {
      for (const molex::LoraExpert& e : enc.layers[static_cast<std::size_t>(l)].molex.experts) {
        int r = molex::effective_rank(e, tau);
        out[k++] = r;
        sum += r;
      }
    }
    if (mean_out) *mean_out = sum / static_cast<double>(need);
  });
}

molex_status molex_params(const molex_model* m, molex_param_report* out) {
  if (auto st = require(m && out, "null argument")) return st;
  return guarded([&] {
    *out = from_cpp(molex::param_report(const_cast<molex_model*>(m)->enc));
  });
}

molex_status molex_params_from_config(const molex_model_config* cfg,
                                            molex_param_report* out) {
  if (auto st = require(cfg && out, "null argument")) return st;
  return guarded([&] { *out = from_cpp(molex::param_report(to_cpp(*cfg))); });
}

}  // extern "C"
