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

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "molex/molex.h"

namespace {

void check(molex_status st) {
  if (st != MOLEX_OK) {
    std::fprintf(stderr, "error[%s]: %s\n", molex_status_name(st), molex_last_error());
    std::exit(static_cast<int>(st));
  }
}

struct DatasetDeleter {
  void operator()(molex_dataset* p) const { molex_dataset_free(p); }
};
struct ModelDeleter {
  void operator()(molex_model* p) const { molex_model_free(p); }
};
using DatasetPtr = std::unique_ptr<molex_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<molex_model, ModelDeleter>;

DatasetPtr load_dataset(const std::string& base) {
  molex_dataset* ds = nullptr;
  check(molex_dataset_load(base.c_str(), &ds));
  return DatasetPtr(ds);
}

ModelPtr load_model(const std::string& path) {
  molex_model* m = nullptr;
  check(molex_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

void archive_config(CLI::App* sub, const std::string& run_dir) {
  std::filesystem::create_directories(run_dir);
  std::ofstream out(run_dir + "/config.toml");
  if (!out) {
    std::fprintf(stderr, "error[io]: cannot write %s/config.toml\n", run_dir.c_str());
    std::exit(MOLEX_ERR_IO);
  }
  out << sub->config_to_str(true, true);
}

void add_model_options(CLI::App* sub, molex_model_config* cfg, bool* merge_projection) {
  sub->add_option("--d-in", cfg->d_in, "input feature width");
  sub->add_option("--d-model", cfg->d_model, "encoder width");
  sub->add_option("--heads", cfg->n_heads, "attention heads");
  sub->add_option("--layers", cfg->n_layers, "transformer layers");
  sub->add_option("--expert-layers", cfg->n_expert_layers, "leading layers with expert pools");
  sub->add_option("--ffn-inner", cfg->ffn_inner, "feed-forward inner width");
  sub->add_option("--experts", cfg->n_experts, "experts per pool");
  sub->add_option("--top-k", cfg->top_k, "experts selected per position");
  sub->add_option("--rank", cfg->rank, "expert rank");
  sub->add_option("--lstm-hidden", cfg->lstm_hidden, "classifier LSTM width");
  sub->add_flag("--merge-projection,!--no-merge-projection", *merge_projection,
                "per-layer projection in the merge block");
}

void add_train_options(CLI::App* sub, molex_train_config* cfg, bool* orth, bool* orth_all,
                       bool* noise) {
  sub->add_option("--epochs", cfg->epochs, "training epochs");
  sub->add_option("--batch-size", cfg->batch_size, "utterances per batch");
  sub->add_option("--lr", cfg->lr, "Adam learning rate");
  sub->add_option("--lambda", cfg->lambda_orth, "orthogonality penalty weight");
  sub->add_flag("--orth,!--no-orth", *orth, "orthogonality penalty");
  sub->add_flag("--orth-all", *orth_all, "penalize all experts, not only routed ones");
  sub->add_option("--lambda-balance", cfg->lambda_balance,
                  "router importance-balance weight, 0 disables");
  sub->add_flag("--noise,!--no-noise", *noise, "router noise during training");
  sub->add_option("--seed", cfg->seed, "run seed (MOLEX_SEED overrides config files)");
}

void print_params(const molex_param_report& r) {
  std::printf("total        %12lld\n", static_cast<long long>(r.total));
  std::printf("backbone     %12lld\n", static_cast<long long>(r.backbone));
  std::printf("experts      %12lld\n", static_cast<long long>(r.experts));
  std::printf("gating       %12lld\n", static_cast<long long>(r.gating));
  std::printf("merge        %12lld\n", static_cast<long long>(r.merge));
  std::printf("classifier   %12lld\n", static_cast<long long>(r.classifier));
  std::printf("trainable    %12lld\n", static_cast<long long>(r.trainable));
  std::printf("reduction    %11.2f%%\n", r.reduction_pct);
  std::printf(
      "{\"total\":%lld,\"backbone\":%lld,\"experts\":%lld,\"gating\":%lld,\"merge\":%lld,"
      "\"classifier\":%lld,\"trainable\":%lld,\"reduction_pct\":%.4f}\n",
      static_cast<long long>(r.total), static_cast<long long>(r.backbone),
      static_cast<long long>(r.experts), static_cast<long long>(r.gating),
      static_cast<long long>(r.merge), static_cast<long long>(r.classifier),
      static_cast<long long>(r.trainable), r.reduction_pct);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"routed low-rank expert encoder for spoof detection"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; section per subcommand");

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  molex_synth_spec spec;
  molex_synth_spec_default(&spec);
  std::string gen_out, gen_domain = "A";
  gen->add_option("--out", gen_out, "output base path")->required();
  gen->add_option("--seed", spec.seed, "generation seed (MOLEX_SEED overrides config files)");
  gen->add_option("--per-class", spec.per_class, "utterances per label");
  gen->add_option("--frames", spec.frames, "frames per utterance");
  gen->add_option("--d-in", spec.d_in, "feature width");
  gen->add_option("--domain", gen_domain, "artifact family: A, B, or C");
  gen->add_option("--difficulty", spec.difficulty, "class overlap in [0,1]");
  gen->callback([&] {
    spec.domain = gen_domain.empty() ? 'A' : gen_domain[0];
    molex_dataset* ds = nullptr;
    check(molex_dataset_generate(&spec, &ds));
    DatasetPtr holder(ds);
    check(molex_dataset_save(ds, gen_out.c_str()));
    std::printf("wrote %lld utterances to %s.jsonl + %s.mold\n",
                static_cast<long long>(molex_dataset_size(ds)), gen_out.c_str(),
                gen_out.c_str());
  });

  // shared state for the run-style subcommands
  molex_model_config mcfg;
  molex_model_config_default(&mcfg);
  bool merge_projection = mcfg.merge_projection != 0;
  molex_train_config tcfg;
  molex_train_config_default(&tcfg);
  bool orth = tcfg.orth_enabled != 0;
  bool orth_all = tcfg.orth_all_experts != 0;
  bool noise = tcfg.noise_enabled != 0;
  std::string train_base, dev_base, out_dir, init_ckpt;

  auto resolve_train_cfg = [&] {
    tcfg.orth_enabled = orth ? 1 : 0;
    tcfg.orth_all_experts = orth_all ? 1 : 0;
    tcfg.noise_enabled = noise ? 1 : 0;
  };

  auto run_outputs = [&](CLI::App* sub, molex_model* m) {
    std::string ckpt = out_dir + "/model.molx";
    check(molex_model_save(m, ckpt.c_str()));
    archive_config(sub, out_dir);
    std::printf("checkpoint: %s\n", ckpt.c_str());
  };

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "phase one: train backbone and head");
  pre->add_option("--train", train_base, "training dataset base path")->required();
  pre->add_option("--dev", dev_base, "development dataset base path");
  pre->add_option("--out", out_dir, "run directory")->required();
  add_model_options(pre, &mcfg, &merge_projection);
  add_train_options(pre, &tcfg, &orth, &orth_all, &noise);
  pre->callback([&] {
    resolve_train_cfg();
    mcfg.merge_projection = merge_projection ? 1 : 0;
    DatasetPtr train = load_dataset(train_base);
    DatasetPtr dev = dev_base.empty() ? nullptr : load_dataset(dev_base);
    molex_model* m = nullptr;
    check(molex_model_create(&mcfg, tcfg.seed, &m));
    ModelPtr holder(m);
    std::filesystem::create_directories(out_dir);
    std::string history = out_dir + "/history.csv";
    check(molex_pretrain(m, train.get(), dev.get(), &tcfg, history.c_str()));
    run_outputs(pre, m);
  });

  // train (phase two)
  auto* fin = app.add_subcommand("train", "phase two: train experts, routers, and head");
  fin->add_option("--init", init_ckpt, "backbone checkpoint")->required();
  fin->add_option("--train", train_base, "training dataset base path")->required();
  fin->add_option("--dev", dev_base, "development dataset base path");
  fin->add_option("--out", out_dir, "run directory")->required();
  add_train_options(fin, &tcfg, &orth, &orth_all, &noise);
  fin->callback([&] {
    resolve_train_cfg();
    DatasetPtr train = load_dataset(train_base);
    DatasetPtr dev = dev_base.empty() ? nullptr : load_dataset(dev_base);
    ModelPtr m = load_model(init_ckpt);
    std::filesystem::create_directories(out_dir);
    std::string history = out_dir + "/history.csv";
    check(molex_finetune(m.get(), train.get(), dev.get(), &tcfg, history.c_str()));
    run_outputs(fin, m.get());
  });

  // adapt
  auto* ada = app.add_subcommand("adapt", "extend the expert pools onto a new domain");
  std::string new_base, old_base;
  int n_new = 1;
  bool unfreeze_head = false;
  ada->add_option("--init", init_ckpt, "base checkpoint")->required();
  ada->add_option("--new", new_base, "new-domain dataset base path")->required();
  ada->add_option("--old", old_base, "old-domain dataset base path (for replay)");
  ada->add_option("--dev", dev_base, "development dataset base path");
  ada->add_option("--out", out_dir, "run directory")->required();
  ada->add_option("--n-new", n_new, "experts added per pool");
  ada->add_option("--replay", tcfg.replay_fraction, "old-domain replay fraction per epoch");
  ada->add_flag("--unfreeze-head", unfreeze_head, "also update merge and classifier");
  add_train_options(ada, &tcfg, &orth, &orth_all, &noise);
  ada->callback([&] {
    resolve_train_cfg();
    tcfg.adapt_unfreeze_head = unfreeze_head ? 1 : 0;
    DatasetPtr new_ds = load_dataset(new_base);
    DatasetPtr old_ds = old_base.empty() ? nullptr : load_dataset(old_base);
    DatasetPtr dev = dev_base.empty() ? nullptr : load_dataset(dev_base);
    ModelPtr m = load_model(init_ckpt);
    std::filesystem::create_directories(out_dir);
    std::string history = out_dir + "/history.csv";
    check(molex_adapt(m.get(), new_ds.get(), old_ds.get(), n_new, dev.get(), &tcfg,
                      history.c_str()));
    run_outputs(ada, m.get());
  });

  // eval
  auto* ev = app.add_subcommand("eval", "score a dataset and print the EER");
  std::string ckpt_path, data_base, scores_out;
  ev->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  ev->add_option("--data", data_base, "dataset base path")->required();
  ev->add_option("--out", scores_out, "score TSV path");
  ev->callback([&] {
    ModelPtr m = load_model(ckpt_path);
    DatasetPtr ds = load_dataset(data_base);
    double eer = 0.0;
    int32_t degenerate = 0;
    check(molex_evaluate(m.get(), ds.get(), scores_out.empty() ? nullptr : scores_out.c_str(),
                         &eer, &degenerate));
    std::printf("EER: %.2f%%%s\n", 100.0 * eer, degenerate ? " (degenerate)" : "");
  });

  // analyze-rank
  auto* rank = app.add_subcommand("analyze-rank", "effective rank of every expert");
  double tau = 1e-2;
  rank->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  rank->add_option("--tau", tau, "singular value threshold");
  rank->callback([&] {
    ModelPtr m = load_model(ckpt_path);
    molex_model_config cfg;
    check(molex_model_get_config(m.get(), &cfg));
    std::vector<int32_t> ranks(static_cast<std::size_t>(cfg.n_expert_layers) * cfg.n_experts);
    double mean = 0.0;
    check(molex_effective_ranks(m.get(), tau, ranks.data(),
                                static_cast<int64_t>(ranks.size()), &mean));
    std::printf("layer expert eff_rank\n");
    for (int l = 0; l < cfg.n_expert_layers; ++l) {
      for (int e = 0; e < cfg.n_experts; ++e) {
        std::printf("%5d %6d %8d\n", l, e,
                    ranks[static_cast<std::size_t>(l) * cfg.n_experts + e]);
      }
    }
    std::printf("mean effective rank: %.4f (allocated rank %d, tau %g)\n", mean, cfg.rank, tau);
  });

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "expert utilization over a dataset");
  std::string heat_out;
  heat->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  heat->add_option("--data", data_base, "dataset base path")->required();
  heat->add_option("--out", heat_out, "utilization CSV path")->required();
  heat->callback([&] {
    ModelPtr m = load_model(ckpt_path);
    DatasetPtr ds = load_dataset(data_base);
    check(molex_utilization_csv(m.get(), ds.get(), heat_out.c_str()));
    std::printf("heatmap: %s\n", heat_out.c_str());
  });

  // params
  auto* par = app.add_subcommand("params", "parameter accounting");
  par->add_option("--ckpt", ckpt_path, "model checkpoint (counts from its header)");
  add_model_options(par, &mcfg, &merge_projection);
  par->callback([&] {
    molex_param_report report;
    if (!ckpt_path.empty()) {
      ModelPtr m = load_model(ckpt_path);
      check(molex_params(m.get(), &report));
    } else {
      mcfg.merge_projection = merge_projection ? 1 : 0;
      check(molex_params_from_config(&mcfg, &report));
    }
    print_params(report);
  });

  // Precedence: explicit flag beats MOLEX_SEED beats config file beats default.
  // The env value is injected as a trailing flag so the normal CLI machinery
  // resolves it; config-file values only fill options that are still unset.
  std::vector<std::string> args(argv + 1, argv + argc);
  const char* env_seed = std::getenv("MOLEX_SEED");
  if (env_seed != nullptr && *env_seed != '\0') {
    static const char* all_subs[] = {"gen",  "pretrain",     "train",   "adapt",
                                     "eval", "analyze-rank", "heatmap", "params"};
    static const char* seeded[] = {"gen", "pretrain", "train", "adapt"};
    std::string first_sub;
    for (const std::string& a : args) {
      for (const char* name : all_subs) {
        if (first_sub.empty() && a == name) first_sub = a;
      }
    }
    bool takes_seed = false;
    for (const char* name : seeded) takes_seed = takes_seed || first_sub == name;
    bool given = false;
    for (const std::string& a : args) given = given || a.rfind("--seed", 0) == 0;
    if (takes_seed && !given) args.push_back(std::string("--seed=") + env_seed);
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) {
      std::fprintf(stderr, "error[usage]: %s\n", e.what());
      return MOLEX_ERR_CONFIG;
    }
    return app.exit(e);  // --help and friends
  }
  return 0;
}
