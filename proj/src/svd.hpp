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

#ifndef MOLEX_SVD_HPP_
#define MOLEX_SVD_HPP_

#include <vector>

#include "tensor.hpp"

namespace molex {

// Economy-size factorization a = u * diag(sigma) * v^T with r = min(p, q)
// columns; sigma is sorted descending. Forward-only, detached from any tape.
struct SvdResult {
  Tensor u;                   // p x r
  std::vector<double> sigma;  // r, descending
  Tensor v;                   // q x r
};

// One-sided Jacobi. Throws NumericError if the off-diagonal mass has not
// dropped below 1e-12 (relative) after 100 sweeps.
SvdResult svd(const Tensor& a);

std::vector<double> singular_values(const Tensor& a);

}  // namespace molex

#endif  // MOLEX_SVD_HPP_
