/* Copyright 2026  molex authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *  http://www.apache.org/licenses/LICENSE-2.0
 *
 * THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
 * KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
 * WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
 * MERCHANTABLITY OR NON-INFRINGEMENT.
 * See the Apache 2 License for the specific language governing permissions and
 * limitations under the License.
 */

/* C interface to the routed low-rank expert encoder. Every function returns a
 * status code; on failure molex_last_error() carries a thread-local message.
 * Handles are freed with the matching _free call. */

#ifndef MOLEX_MOLEX_H_
#define MOLEX_MOLEX_H_

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum molex_status {
  MOLEX_OK = 0,
  MOLEX_ERR_SHAPE = 1,
  MOLEX_ERR_CONFIG = 2,
  MOLEX_ERR_CONTRACT = 3,
  MOLEX_ERR_NUMERIC = 4,
  MOLEX_ERR_IO = 5,
  MOLEX_ERR_FORMAT = 6,
  MOLEX_ERR_VERSION = 7,
  MOLEX_ERR_UNKNOWN = 8
} molex_status;

typedef struct molex_model molex_model;
typedef struct molex_dataset molex_dataset;

typedef struct molex_model_config {
  int32_t d_in;
  int32_t d_model;
  int32_t n_heads;
  int32_t n_layers;
  int32_t n_expert_layers; /* leading layers carry expert pools */
  int32_t ffn_inner;
  int32_t n_experts;
  int32_t top_k;
  int32_t rank;
  int32_t lstm_hidden;
  int32_t merge_projection; /* 0 or 1 */
} molex_model_config;

typedef struct molex_train_config {
  int32_t epochs;
  int32_t batch_size;
  double lr;
  double lambda_orth;
  int32_t orth_enabled;
  int32_t orth_all_experts;
  double lambda_balance; /* router importance-balance weight, 0 disables */
  int32_t noise_enabled;
  uint64_t seed;
  double replay_fraction;      /* adaptation only */
  int32_t adapt_unfreeze_head; /* adaptation only */
} molex_train_config;

typedef struct molex_synth_spec {
  uint64_t seed;
  int32_t per_class;
  int32_t frames;
  int32_t d_in;
  char domain; /* 'A', 'B', or 'C' */
  double difficulty;
} molex_synth_spec;

typedef struct molex_param_report {
  int64_t total;
  int64_t backbone;
  int64_t experts;
  int64_t gating;
  int64_t merge;
  int64_t classifier;
  int64_t trainable;
  double reduction_pct;
} molex_param_report;

void molex_model_config_default(molex_model_config* out);
void molex_train_config_default(molex_train_config* out);
void molex_synth_spec_default(molex_synth_spec* out);

const char* molex_status_name(molex_status s);
/* Message from the most recent failing call on this thread; never NULL. */
const char* molex_last_error(void);

/* --- datasets (base path maps to <base>.jsonl + <base>.mold) ------------- */

molex_status molex_dataset_generate(const molex_synth_spec* spec, molex_dataset** out);
molex_status molex_dataset_load(const char* base_path, molex_dataset** out);
molex_status molex_dataset_save(const molex_dataset* ds, const char* base_path);
molex_status molex_dataset_concat(const molex_dataset* a, const molex_dataset* b,
                                  molex_dataset** out);
int64_t molex_dataset_size(const molex_dataset* ds);
void molex_dataset_free(molex_dataset* ds);

/* --- model lifecycle ------------------------------------------------------ */

molex_status molex_model_create(const molex_model_config* cfg, uint64_t seed,
                                molex_model** out);
molex_status molex_model_load(const char* path, molex_model** out);
molex_status molex_model_save(molex_model* m, const char* path);
molex_status molex_model_get_config(const molex_model* m, molex_model_config* out);
void molex_model_free(molex_model* m);

/* --- training ------------------------------------------------------------- */

/* Phase one: backbone and head train; expert pools and routers stay frozen.
 * history_csv_path may be NULL. dev may be NULL. */
molex_status molex_pretrain(molex_model* m, const molex_dataset* train,
                            const molex_dataset* dev, const molex_train_config* cfg,
                            const char* history_csv_path);

/* Phase two: expert pools, routers, merge, and classifier train; backbone
 * stays frozen. */
molex_status molex_finetune(molex_model* m, const molex_dataset* train,
                            const molex_dataset* dev, const molex_train_config* cfg,
                            const char* history_csv_path);

/* Adds n_new experts per expert layer, then trains only the new experts and
 * the routers (plus head when cfg->adapt_unfreeze_head) on new-domain data
 * mixed with a per-epoch replay draw from old_ds. old_ds may be NULL when
 * cfg->replay_fraction is zero. */
molex_status molex_adapt(molex_model* m, const molex_dataset* new_ds,
                         const molex_dataset* old_ds, int32_t n_new,
                         const molex_dataset* dev, const molex_train_config* cfg,
                         const char* history_csv_path);

/* --- evaluation and analysis ---------------------------------------------- */

/* Deterministic scoring (no router noise). Writes id<TAB>label<TAB>score when
 * scores_tsv_path is non-NULL. degenerate may be NULL. */
molex_status molex_evaluate(const molex_model* m, const molex_dataset* ds,
                            const char* scores_tsv_path, double* eer,
                            int32_t* degenerate);

/* Routing-fraction heatmap over ds: layer,expert,utilization CSV. */
molex_status molex_utilization_csv(const molex_model* m, const molex_dataset* ds,
                                   const char* csv_path);

/* Raw utilization matrix, layer-major into out[n_expert_layers * n_experts]. */
molex_status molex_utilization(const molex_model* m, const molex_dataset* ds, double* out,
                               int64_t capacity);

/* Effective rank (singular values >= tau) of each expert's composite map,
 * layer-major into out[n_expert_layers * n_experts]; mean_out may be NULL. */
molex_status molex_effective_ranks(const molex_model* m, double tau, int32_t* out,
                                   int64_t capacity, double* mean_out);

molex_status molex_params(const molex_model* m, molex_param_report* out);
molex_status molex_params_from_config(const molex_model_config* cfg,
                                      molex_param_report* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MOLEX_MOLEX_H_ */
