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

#ifndef MOLEX_TENSOR_HPP_
#define MOLEX_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace molex {

class Tape;

namespace detail {
struct AutogradMeta {
  bool requires_grad = false;
  std::shared_ptr<std::vector<double>> grad;  // absent until backward writes it
};
}  // namespace detail

// Dense row-major f64 tensor. Value semantics: copies share the underlying
// buffer; nothing mutates a buffer after forward construction except gradient
// accumulation and explicit optimizer writes through data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor eye(int n);
  static Tensor gaussian(std::vector<int> shape, Rng& rng, double mean, double stddev);

  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const;
  bool is_scalar() const { return numel() == 1; }

  // 2-D accessors; contract-checked.
  int rows() const;
  int cols() const;

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  std::vector<double>& vec() { return *data_; }
  const std::vector<double>& vec() const { return *data_; }
  double at(std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  double at(int r, int c) const;
  double& at(int r, int c);
  double value() const;  // scalar extraction

  Tensor& set_requires_grad(bool v);
  bool requires_grad() const { return meta_ && meta_->requires_grad; }
  bool has_grad() const { return meta_ && meta_->grad; }
  // Gradient as a tensor sharing the accumulation buffer.
  Tensor grad() const;
  void zero_grad();

  Tensor clone() const;     // deep copy, no autograd state
  Tensor detached() const;  // shares data, drops autograd state

  std::string shape_str() const;

 private:
  friend class Tape;
  std::shared_ptr<std::vector<double>> data_;
  std::vector<int> shape_;
  std::shared_ptr<detail::AutogradMeta> meta_;
  // Memoized node on the innermost active tape; stale ids are ignored because
  // tape ids are globally unique.
  mutable std::uint64_t tape_id_ = 0;
  mutable int node_ = -1;
};

// Wengert list for reverse-mode differentiation. Constructing a Tape makes it
// the active tape for the current thread (RAII); ops executed while a tape is
// active record themselves. Tapes are never shared across threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Populates .grad() of every requires_grad leaf reachable from loss.
  // Accumulation is additive across calls.
  void backward(const Tensor& loss);

  // Op-authoring interface.
  bool tracked(const Tensor& t) const;
  int input_node(const Tensor& t);  // -1 when untracked
  int emit(Tensor& out, BackwardFn fn);
  void accumulate(int node, const double* g, std::int64_t n);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::int64_t numel = 0;
    std::shared_ptr<detail::AutogradMeta> leaf;  // non-null for leaves
    BackwardFn backward;                         // null for leaves
  };
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  Tape* prev_;
};

// --- primitive operations -------------------------------------------------
// Each op computes its value eagerly and, when a tape is active and an input
// is tracked, records the gradient rule.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor add_bias(const Tensor& x, const Tensor& b);      // row broadcast
Tensor scale_rows(const Tensor& x, const Tensor& s);    // s: one value per row
Tensor scale_by(const Tensor& x, const Tensor& s);      // s: scalar tensor

Tensor tanh_op(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);

// Softmax along the last axis (rows of a matrix, the whole of a vector),
// computed with max subtraction.
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [T x d] -> [d]
Tensor frobenius_sq(const Tensor& x);
Tensor trace(const Tensor& x);

// Same data, new shape; numel must match.
Tensor reshape(const Tensor& x, std::vector<int> shape);

Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor scatter_rows(const Tensor& x, const std::vector<int>& idx, int total_rows);
Tensor stack_scalars(const std::vector<Tensor>& xs);
Tensor pick(const Tensor& v, int i);
Tensor dot(const Tensor& a, const Tensor& b);

// -log softmax(logits)[label]; logits must have numel = #classes.
Tensor cross_entropy_logits(const Tensor& logits, int label);

// Forward-only: indices of the k largest values, descending, ties broken by
// lower index. Detached from any tape.
std::vector<int> argtopk(const double* values, int n, int k);

// Raw matmul kernels shared with the backward rules (row-major).
namespace detail {
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n);
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n);
}  // namespace detail

}  // namespace molex

#endif  // MOLEX_TENSOR_HPP_
