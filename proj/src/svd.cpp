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

#include "svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace molex {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kOffdiagTol = 1e-12;

// Hestenes rotations on the columns of work (p x q, p >= q).
SvdResult svd_tall(const Tensor& a) {
  const int p = a.rows(), q = a.cols();
  Tensor work = a.clone();
  Tensor v = Tensor::eye(q);

  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (int i = 0; i < q - 1; ++i) {
      for (int j = i + 1; j < q; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int k = 0; k < p; ++k) {
          double wi = work.at(k, i), wj = work.at(k, j);
          alpha += wi * wi;
          beta += wj * wj;
          gamma += wi * wj;
        }
        double norm = std::sqrt(alpha * beta);
        if (norm == 0.0 || std::abs(gamma) <= kOffdiagTol * norm) continue;
        converged = false;
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (int k = 0; k < p; ++k) {
          double wi = work.at(k, i), wj = work.at(k, j);
          work.at(k, i) = c * wi - s * wj;
          work.at(k, j) = s * wi + c * wj;
        }
        for (int k = 0; k < q; ++k) {
          double vi = v.at(k, i), vj = v.at(k, j);
          v.at(k, i) = c * vi - s * vj;
          v.at(k, j) = s * vi + c * vj;
        }
      }
    }
  }
  if (!converged) {
    throw NumericError("svd: Jacobi sweep limit reached without convergence");
  }

  std::vector<double> sigma(static_cast<std::size_t>(q), 0.0);
  for (int j = 0; j < q; ++j) {
    double s2 = 0.0;
    for (int k = 0; k < p; ++k) s2 += work.at(k, j) * work.at(k, j);
    sigma[static_cast<std::size_t>(j)] = std::sqrt(s2);
  }

  std::vector<int> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)];
  });

  SvdResult r;
  r.u = Tensor({p, q});
  r.v = Tensor({q, q});
  r.sigma.resize(static_cast<std::size_t>(q));
  for (int jo = 0; jo < q; ++jo) {
    int js = order[static_cast<std::size_t>(jo)];
    double s = sigma[static_cast<std::size_t>(js)];
    r.sigma[static_cast<std::size_t>(jo)] = s;
    double inv = s > 0.0 ? 1.0 / s : 0.0;
    for (int k = 0; k < p; ++k) r.u.at(k, jo) = work.at(k, js) * inv;
    for (int k = 0; k < q; ++k) r.v.at(k, jo) = v.at(k, js);
  }
  return r;
}

}  // namespace

SvdResult svd(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("svd: expected 2-D tensor, got " + a.shape_str());
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(transpose(a.detached()));
  SvdResult r;
  r.u = std::move(t.v);
  r.sigma = std::move(t.sigma);
  r.v = std::move(t.u);
  return r;
}

std::vector<double> singular_values(const Tensor& a) { return svd(a).sigma; }

}  // namespace molex
