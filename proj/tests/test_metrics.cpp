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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "encoder.hpp"
#include "error.hpp"
#include "lora.hpp"
#include "metrics.hpp"
#include "oracles.hpp"
#include "svd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using molex::LoraExpert;
using molex::Tensor;

namespace {

// expert whose composite has the requested singular values, padded with zeros
LoraExpert expert_with_sigma(int d, const std::vector<double>& sig) {
  LoraExpert e;
  int r = static_cast<int>(sig.size());
  e.down = Tensor::zeros({d, r});
  e.up = Tensor::zeros({r, d});
  for (int i = 0; i < r; ++i) {
    e.down.at(i, i) = 1.0;
    e.up.at(i, i) = sig[static_cast<std::size_t>(i)];
  }
  return e;
}

double dense_orth(const LoraExpert& e) {
  int d = e.down.dim(0), r = e.down.dim(1);
  std::vector<double> w = oracle::matmul(e.down.vec(), e.up.vec(), d, r, d);
  std::vector<double> g(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k)
        s += w[static_cast<std::size_t>(i) * d + k] * w[static_cast<std::size_t>(j) * d + k];
      g[static_cast<std::size_t>(i) * d + j] = s;
    }
  double loss = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double diff = g[static_cast<std::size_t>(i) * d + j] - (i == j ? 1.0 : 0.0);
      loss += diff * diff;
    }
  return loss;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("orthogonality loss: zero expert and analytic minimum") {
  molex::Rng rng(1);
  LoraExpert zero = LoraExpert::init(8, 3, rng);
  CHECK(molex::orth_loss_expert(zero).value() == doctest::Approx(8.0).epsilon(1e-14));

  LoraExpert min_e = expert_with_sigma(8, {1.0, 1.0, 1.0});
  CHECK(molex::orth_loss_expert(min_e).value() == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("orthogonality loss equals the dense computation on random experts") {
  molex::Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    LoraExpert e;
    e.down = Tensor::gaussian({16, 4}, rng, 0.0, 0.8);
    e.up = Tensor::gaussian({4, 16}, rng, 0.0, 0.8);
    double got = molex::orth_loss_expert(e).value();
    double want = dense_orth(e);
    CHECK(oracle::close(got, want, 1e-10, 1e-12));
    CHECK(got >= 16.0 - 4.0);  // rank-limited lower bound d - r
  }
}

TEST_CASE("orthogonality loss differentiates against finite differences") {
  molex::Rng rng(3);
  LoraExpert e;
  e.down = Tensor::gaussian({10, 3}, rng, 0.0, 0.6);
  e.up = Tensor::gaussian({3, 10}, rng, 0.0, 0.6);
  for (Tensor* p : {&e.down, &e.up}) {
    p->set_requires_grad(true);
    molex::Tape tape;
    Tensor loss = molex::orth_loss_expert(e);
    tape.backward(loss);
    std::vector<double> a = p->grad().vec();
    p->zero_grad();
    p->set_requires_grad(false);
    std::vector<double> n =
        oracle::fd_grad(*p, [&] { return molex::orth_loss_expert(e).value(); });
    CHECK(oracle::grads_close(a, n, 1e-4));
  }
}

TEST_CASE("orthogonality loss sums over the routed set") {
  LoraExpert a = expert_with_sigma(8, {1.0, 1.0});   // d - r = 6
  LoraExpert b = expert_with_sigma(8, {1.0});        // d - r = 7
  CHECK(molex::orth_loss({&a, &b}).value() == doctest::Approx(13.0).epsilon(1e-12));
  CHECK(molex::orth_loss({}).value() == 0.0);
}

TEST_CASE("effective rank counts singular values above the threshold") {
  molex::Rng rng(4);
  LoraExpert zero = LoraExpert::init(12, 4, rng);
  CHECK(molex::effective_rank(zero, 1e-9) == 0);

  LoraExpert crafted = expert_with_sigma(12, {1.0, 0.5, 1e-4});
  CHECK(molex::effective_rank(crafted, 1e-3) == 2);
  CHECK(molex::effective_rank(crafted, 1e-5) == 3);
  CHECK(molex::effective_rank(crafted, 0.7) == 1);

  LoraExpert e;
  e.down = Tensor::gaussian({12, 4}, rng, 0.0, 0.8);
  e.up = Tensor::gaussian({4, 12}, rng, 0.0, 0.8);
  int prev = 5;
  for (double tau : {1e-6, 1e-3, 1e-1, 1.0, 10.0}) {
    int r = molex::effective_rank(e, tau);
    CHECK(r <= 4);
    CHECK(r <= prev);  // monotone non-increasing in tau
    prev = r;
  }
}

TEST_CASE("composite singular values avoid the d x d product but match it") {
  molex::Rng rng(5);
  LoraExpert e;
  e.down = Tensor::gaussian({14, 3}, rng, 0.0, 1.0);
  e.up = Tensor::gaussian({3, 14}, rng, 0.0, 1.0);
  std::vector<double> got = molex::composite_singular_values(e);
  std::vector<double> dense = oracle::matmul(e.down.vec(), e.up.vec(), 14, 3, 14);
  std::vector<double> want = molex::svd(Tensor({14, 14}, dense)).sigma;
  REQUIRE(got.size() == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(oracle::close(got[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)],
                        1e-10, 1e-12));
}

TEST_CASE("equal error rate: separation, inversion, and the interleaved middle") {
  molex::EerResult perfect =
      molex::compute_eer({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
  CHECK(perfect.eer == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(perfect.degenerate);

  molex::EerResult inverted =
      molex::compute_eer({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1});
  CHECK(inverted.eer == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(inverted.degenerate);

  molex::EerResult half =
      molex::compute_eer({0.1, 0.2, 0.3, 0.4}, {1, 0, 1, 0});
  CHECK(half.eer == doctest::Approx(0.5).epsilon(1e-9));

  CHECK_THROWS_AS(molex::compute_eer({0.5, 0.6}, {1, 1}), molex::ContractError);
  CHECK_THROWS_AS(molex::compute_eer({0.5, 0.6}, {1}), molex::ContractError);
}

TEST_CASE("equal error rate matches the brute-force sweep") {
  molex::Rng rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    int n = 10 + static_cast<int>(rng.below(40));
    std::vector<double> scores;
    std::vector<int> labels;
    bool saw[2] = {false, false};
    for (int i = 0; i < n; ++i) {
      int label = static_cast<int>(rng.below(2));
      double s = (label == 1 ? 0.6 : -0.6) + rng.normal();
      if (rep % 4 == 0) s = std::round(s * 4.0) / 4.0;  // force score ties
      scores.push_back(s);
      labels.push_back(label);
      saw[label] = true;
    }
    if (!saw[0] || !saw[1]) continue;
    double want = oracle::eer_sweep(scores, labels);
    molex::EerResult got = molex::compute_eer(scores, labels);
    CHECK(std::abs(got.eer - want) < 1e-9);
  }
}

TEST_CASE("equal error rate ignores strictly increasing score transforms") {
  std::vector<double> scores = {0.3, -0.2, 0.9, 0.1, -0.7, 0.45, 0.05, -0.1};
  std::vector<int> labels = {1, 0, 1, 1, 0, 1, 0, 0};
  double base = molex::compute_eer(scores, labels).eer;
  std::vector<double> lin(scores), curved(scores);
  for (double& s : lin) s = 3.0 * s + 1.0;
  for (double& s : curved) s = std::atan(s);
  CHECK(molex::compute_eer(lin, labels).eer == doctest::Approx(base).epsilon(1e-12));
  CHECK(molex::compute_eer(curved, labels).eer == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("utilization accumulates full gate rows and normalizes per layer") {
  molex::UtilizationAccumulator acc(2, 3);
  CHECK_THROWS_AS(acc.utilization(), molex::ContractError);

  molex::RouterDecision d;
  d.gates = Tensor({1, 3}, {0.5, 0.3, 0.2});
  d.rows = {{0}, {0}, {}};
  d.topk = {0, 1};
  acc.add(0, d);
  CHECK_THROWS_AS(acc.add(5, d), molex::ContractError);
  molex::RouterDecision d2;
  d2.gates = Tensor({1, 3}, {0.1, 0.1, 0.8});
  d2.rows = {{}, {}, {0}};
  d2.topk = {2};
  acc.add(0, d2);
  acc.add(1, d);
  std::vector<std::vector<double>> u = acc.utilization();
  CHECK(u[0][0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(u[0][1] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(u[0][2] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(u[1][0] == doctest::Approx(0.5).epsilon(1e-12));
  for (auto& row : u) {
    double s = 0.0;
    for (double v : row) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("utilization equals the direct mean and merge is order-independent") {
  molex::Rng rng(7);
  const int n = 4, samples = 1000;
  molex::UtilizationAccumulator left(1, n), right(1, n), whole(1, n);
  std::vector<double> mean(n, 0.0);
  for (int s = 0; s < samples; ++s) {
    std::vector<double> logits(n);
    for (double& v : logits) v = rng.normal();
    std::vector<double> g = oracle::softmax_row(logits);
    molex::RouterDecision d;
    d.gates = Tensor({1, n}, std::vector<double>(g.begin(), g.end()));
    d.rows.assign(n, {});
    d.rows[0] = {0};
    d.topk = {0};
    (s % 2 == 0 ? left : right).add(0, d);
    whole.add(0, d);
    for (int i = 0; i < n; ++i) mean[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
  }
  for (double& v : mean) v /= samples;
  std::vector<std::vector<double>> direct = whole.utilization();
  for (int i = 0; i < n; ++i)
    CHECK(std::abs(direct[0][static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]) < 1e-12);

  molex::UtilizationAccumulator ab = left, ba = right;
  ab.merge(right);
  ba.merge(left);
  std::vector<std::vector<double>> uab = ab.utilization(), uba = ba.utilization();
  for (int i = 0; i < n; ++i)
    CHECK(uab[0][static_cast<std::size_t>(i)] ==
          doctest::Approx(uba[0][static_cast<std::size_t>(i)]).epsilon(1e-12));

  molex::UtilizationAccumulator mismatched(2, n);
  CHECK_THROWS_AS(ab.merge(mismatched), molex::ContractError);
}

TEST_CASE("total variation distance behaves") {
  CHECK(molex::total_variation({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(molex::total_variation({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0));
  CHECK(molex::total_variation({0.7, 0.3}, {0.5, 0.5}) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("parameter accounting: expert arithmetic and the paper-shape bracket") {
  molex::Rng rng(8);
  LoraExpert one = LoraExpert::init(1024, 32, rng);
  CHECK(one.down.numel() + one.up.numel() == 65536);

  molex::ModelConfig paper;  // defaults are the paper-shape dimensions
  molex::ParamReport r = molex::param_report(paper);
  CHECK(r.experts == 9437184);
  CHECK(r.trainable == r.experts + r.gating + r.merge + r.classifier);
  CHECK(r.total == r.backbone + r.trainable);
  CHECK(r.reduction_pct > 80.0);
  CHECK(r.reduction_pct < 90.0);
}

TEST_CASE("parameter accounting: closed form equals the registry walk") {
  molex::ModelConfig cfg;
  cfg.d_in = 5;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 3;
  cfg.n_expert_layers = 2;
  cfg.ffn_inner = 12;
  cfg.n_experts = 3;
  cfg.top_k = 2;
  cfg.rank = 2;
  cfg.lstm_hidden = 6;
  for (bool projection : {true, false}) {
    cfg.merge_projection = projection;
    molex::Encoder enc(cfg, 21);
    molex::ParamReport walked = molex::param_report(enc);
    molex::ParamReport closed = molex::param_report(cfg);
    CHECK(walked.total == closed.total);
    CHECK(walked.backbone == closed.backbone);
    CHECK(walked.experts == closed.experts);
    CHECK(walked.gating == closed.gating);
    CHECK(walked.merge == closed.merge);
    CHECK(walked.classifier == closed.classifier);
    CHECK(walked.trainable == closed.trainable);
  }
}

TEST_CASE("heatmap csv carries six decimals and unit row sums") {
  std::vector<std::vector<double>> util = {{0.25, 0.25, 0.5}, {0.1, 0.2, 0.7}};
  std::string path = temp_path("molex_heatmap_test.csv");
  molex::write_heatmap_csv(path, util);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "layer,expert,utilization");
  double sums[2] = {0.0, 0.0};
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    int layer, expert;
    double v;
    REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf", &layer, &expert, &v) == 3);
    CHECK(line.substr(line.rfind('.') + 1).size() == 6);
    sums[layer] += v;
    ++rows;
  }
  CHECK(rows == 6);
  CHECK(std::abs(sums[0] - 1.0) < 1e-6);
  CHECK(std::abs(sums[1] - 1.0) < 1e-6);
  std::filesystem::remove(path);
}

TEST_CASE("score tsv spells out the labels") {
  std::string path = temp_path("molex_scores_test.tsv");
  molex::write_scores_tsv(path, {"u1", "u2"}, {1, 0}, {0.75, -0.25});
  std::ifstream in(path);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(l1.rfind("u1\tbonafide\t0.75", 0) == 0);
  CHECK(l2.rfind("u2\tspoof\t-0.25", 0) == 0);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
