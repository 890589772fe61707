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

#include "tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace molex {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_to_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch: " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

void check_2d(const char* op, const Tensor& t) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
  }
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape)
    : data_(std::make_shared<std::vector<double>>(
          static_cast<std::size_t>(shape_numel(shape)), 0.0)),
      shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive: " + shape_str());
  }
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : data_(std::make_shared<std::vector<double>>(std::move(values))),
      shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_->size())) {
    throw ShapeError("tensor value count " + std::to_string(data_->size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), v);
  return t;
}

Tensor Tensor::eye(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::gaussian(std::vector<int> shape, Rng& rng, double mean, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : *t.data_) v = mean + stddev * rng.normal();
  return t;
}

std::int64_t Tensor::numel() const {
  return data_ ? static_cast<std::int64_t>(data_->size()) : 0;
}

int Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D: " + shape_str());
  return shape_[0];
}

int Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D: " + shape_str());
  return shape_[1];
}

double Tensor::at(int r, int c) const {
  return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c];
}

double& Tensor::at(int r, int c) {
  return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c];
}

double Tensor::value() const {
  if (!is_scalar()) throw ContractError("value(): tensor is not scalar: " + shape_str());
  return (*data_)[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  if (!meta_) meta_ = std::make_shared<detail::AutogradMeta>();
  meta_->requires_grad = v;
  return *this;
}

Tensor Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad(): no gradient accumulated");
  Tensor g;
  g.data_ = meta_->grad;
  g.shape_ = shape_;
  return g;
}

void Tensor::zero_grad() {
  if (meta_) meta_->grad.reset();
}

Tensor Tensor::clone() const {
  Tensor t;
  t.data_ = std::make_shared<std::vector<double>>(*data_);
  t.shape_ = shape_;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.data_ = data_;
  t.shape_ = shape_;
  return t;
}

std::string Tensor::shape_str() const { return shape_to_str(shape_); }

// --- Tape -------------------------------------------------------------------

Tape::Tape() : id_(g_tape_counter.fetch_add(1)), prev_(g_active_tape) {
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

bool Tape::tracked(const Tensor& t) const {
  return (t.tape_id_ == id_ && t.node_ >= 0) || t.requires_grad();
}

int Tape::input_node(const Tensor& t) {
  if (t.tape_id_ == id_ && t.node_ >= 0) return t.node_;
  if (!t.requires_grad()) return -1;
  Node leaf;
  leaf.numel = t.numel();
  leaf.leaf = t.meta_;
  nodes_.push_back(std::move(leaf));
  t.tape_id_ = id_;
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t.node_;
}

int Tape::emit(Tensor& out, BackwardFn fn) {
  Node node;
  node.numel = out.numel();
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  out.tape_id_ = id_;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out.node_;
}

void Tape::accumulate(int node, const double* g, std::int64_t n) {
  auto& buf = grads_[static_cast<std::size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] += g[i];
}

void Tape::backward(const Tensor& loss) {
  if (!loss.is_scalar()) {
    throw ContractError("backward: loss must be scalar, got " + loss.shape_str());
  }
  if (loss.tape_id_ != id_ || loss.node_ < 0) {
    throw ContractError("backward: loss is not tracked by this tape");
  }
  grads_.assign(nodes_.size(), {});
  double one = 1.0;
  accumulate(loss.node_, &one, 1);
  for (int i = loss.node_; i >= 0; --i) {
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward) {
      node.backward(*this, g);
    } else if (node.leaf && node.leaf->requires_grad) {
      if (!node.leaf->grad) {
        node.leaf->grad = std::make_shared<std::vector<double>>(g.size(), 0.0);
      }
      auto& acc = *node.leaf->grad;
      for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
    }
  }
  grads_.clear();
}

// --- kernels ----------------------------------------------------------------

namespace detail {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double aip = a[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[static_cast<std::size_t>(i) * k + p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double aip = a[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace detail

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " + a.shape_str() +
                     " vs " + b.shape_str());
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    int ia = tp->input_node(a);
    int ib = tp->input_node(b);
    Tensor ac = a.detached(), bc = b.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        std::vector<double> ga(static_cast<std::size_t>(m) * k, 0.0);
        detail::gemm_nt(g.data(), bc.data(), ga.data(), m, n, k);
        t.accumulate(ia, ga.data(), static_cast<std::int64_t>(ga.size()));
      }
      if (ib >= 0) {
        std::vector<double> gb(static_cast<std::size_t>(k) * n, 0.0);
        detail::gemm_tn(ac.data(), g.data(), gb.data(), m, k, n);
        t.accumulate(ib, gb.data(), static_cast<std::int64_t>(gb.size()));
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check_2d("transpose", a);
  const int m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(a)) {
    int ia = tp->input_node(a);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> ga(static_cast<std::size_t>(m) * n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] = g[static_cast<std::size_t>(j) * m + i];
      t.accumulate(ia, ga.data(), static_cast<std::int64_t>(ga.size()));
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    int ia = tp->input_node(a);
    int ib = tp->input_node(b);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) t.accumulate(ia, g.data(), n);
      if (ib >= 0) t.accumulate(ib, g.data(), n);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    int ia = tp->input_node(a);
    int ib = tp->input_node(b);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) t.accumulate(ia, g.data(), n);
      if (ib >= 0) {
        std::vector<double> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
        t.accumulate(ib, gb.data(), n);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    int ia = tp->input_node(a);
    int ib = tp->input_node(b);
    Tensor ac = a.detached(), bc = b.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        std::vector<double> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bc.at(static_cast<std::int64_t>(i));
        t.accumulate(ia, ga.data(), n);
      }
      if (ib >= 0) {
        std::vector<double> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * ac.at(static_cast<std::int64_t>(i));
        t.accumulate(ib, gb.data(), n);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;

  Tape* tp = Tape::active();
  if (tp && tp->tracked(a)) {
    int ia = tp->input_node(a);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
      t.accumulate(ia, ga.data(), n);
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + c;

  Tape* tp = Tape::active();
  if (tp && tp->tracked(a)) {
    int ia = tp->input_node(a);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      t.accumulate(ia, g.data(), n);
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check_2d("add_bias", x);
  if (b.numel() != x.cols()) {
    throw ShapeError("add_bias: bias " + b.shape_str() + " does not match columns of " +
                     x.shape_str());
  }
  const int m = x.rows(), d = x.cols();
  Tensor out({m, d});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + b.at(j);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(x) || tp->tracked(b))) {
    int ix = tp->input_node(x);
    int ib = tp->input_node(b);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ix >= 0) t.accumulate(ix, g.data(), static_cast<std::int64_t>(g.size()));
      if (ib >= 0) {
        std::vector<double> gb(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
        t.accumulate(ib, gb.data(), d);
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  check_2d("scale_rows", x);
  if (s.numel() != x.rows()) {
    throw ShapeError("scale_rows: scale " + s.shape_str() + " does not match rows of " +
                     x.shape_str());
  }
  const int m = x.rows(), d = x.cols();
  Tensor out({m, d});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) * s.at(i);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(x) || tp->tracked(s))) {
    int ix = tp->input_node(x);
    int is = tp->input_node(s);
    Tensor xc = x.detached(), sc = s.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ix >= 0) {
        std::vector<double> gx(g.size());
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < d; ++j)
            gx[static_cast<std::size_t>(i) * d + j] = g[static_cast<std::size_t>(i) * d + j] * sc.at(i);
        t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
      }
      if (is >= 0) {
        std::vector<double> gs(static_cast<std::size_t>(m), 0.0);
        for (int i = 0; i < m; ++i) {
          double acc = 0.0;
          for (int j = 0; j < d; ++j)
            acc += g[static_cast<std::size_t>(i) * d + j] * xc.at(i, j);
          gs[static_cast<std::size_t>(i)] = acc;
        }
        t.accumulate(is, gs.data(), m);
      }
    });
  }
  return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (!s.is_scalar()) throw ShapeError("scale_by: scale must be scalar, got " + s.shape_str());
  const double sv = s.at(0);
  Tensor out(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = x.at(i) * sv;

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(x) || tp->tracked(s))) {
    int ix = tp->input_node(x);
    int is = tp->input_node(s);
    Tensor xc = x.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ix >= 0) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * sv;
        t.accumulate(ix, gx.data(), n);
      }
      if (is >= 0) {
        double gs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gs += g[i] * xc.at(static_cast<std::int64_t>(i));
        t.accumulate(is, &gs, 1);
      }
    });
  }
  return out;
}

namespace {

template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df_from_xy) {
  Tensor out(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = f(x.at(i));

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    Tensor xc = x.detached(), yc = out.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto k = static_cast<std::int64_t>(i);
        gx[i] = g[i] * df_from_xy(xc.at(k), yc.at(k));
      }
      t.accumulate(ix, gx.data(), n);
    });
  }
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

Tensor tanh_op(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x, [](double v) { return stable_softplus(v); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() != 1 && x.ndim() != 2) {
    throw ShapeError("softmax: expected 1-D or 2-D tensor, got " + x.shape_str());
  }
  const int m = x.ndim() == 2 ? x.rows() : 1;
  const int d = x.ndim() == 2 ? x.cols() : x.dim(0);
  Tensor out(x.shape());
  for (int i = 0; i < m; ++i) {
    const double* row = x.data() + static_cast<std::size_t>(i) * d;
    double* orow = out.data() + static_cast<std::size_t>(i) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    if (!std::isfinite(mx)) throw NumericError("softmax: non-finite input");
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= z;
  }

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    Tensor yc = out.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(g.size());
      for (int i = 0; i < m; ++i) {
        const double* y = yc.data() + static_cast<std::size_t>(i) * d;
        const double* gr = g.data() + static_cast<std::size_t>(i) * d;
        double dotv = 0.0;
        for (int j = 0; j < d; ++j) dotv += gr[j] * y[j];
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(i) * d + j] = y[j] * (gr[j] - dotv);
      }
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_2d("layer_norm", x);
  const int m = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta do not match feature dim of " + x.shape_str());
  }
  Tensor out({m, d});
  std::vector<double> xhat(static_cast<std::size_t>(m) * d);
  std::vector<double> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = x.data() + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      double h = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(i) * d + j] = h;
      out.at(i, j) = gamma.at(j) * h + beta.at(j);
    }
  }

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(x) || tp->tracked(gamma) || tp->tracked(beta))) {
    int ix = tp->input_node(x);
    int ig = tp->input_node(gamma);
    int ib = tp->input_node(beta);
    Tensor gc = gamma.detached();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ib >= 0) {
        std::vector<double> gb(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
        t.accumulate(ib, gb.data(), d);
      }
      if (ig >= 0) {
        std::vector<double> gg(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < d; ++j)
            gg[static_cast<std::size_t>(j)] +=
                g[static_cast<std::size_t>(i) * d + j] * (*xh)[static_cast<std::size_t>(i) * d + j];
        t.accumulate(ig, gg.data(), d);
      }
      if (ix >= 0) {
        std::vector<double> gx(static_cast<std::size_t>(m) * d);
        for (int i = 0; i < m; ++i) {
          const double* gr = g.data() + static_cast<std::size_t>(i) * d;
          const double* h = xh->data() + static_cast<std::size_t>(i) * d;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          std::vector<double> dh(static_cast<std::size_t>(d));
          for (int j = 0; j < d; ++j) {
            dh[static_cast<std::size_t>(j)] = gr[j] * gc.at(j);
            mean_dh += dh[static_cast<std::size_t>(j)];
            mean_dh_h += dh[static_cast<std::size_t>(j)] * h[j];
          }
          mean_dh /= d;
          mean_dh_h /= d;
          double is = (*istd)[static_cast<std::size_t>(i)];
          for (int j = 0; j < d; ++j)
            gx[static_cast<std::size_t>(i) * d + j] =
                is * (dh[static_cast<std::size_t>(j)] - mean_dh - h[j] * mean_dh_h);
        }
        t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) s += x.at(i);
  Tensor out = Tensor::scalar(s);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(n), g[0]);
      t.accumulate(ix, gx.data(), n);
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const std::int64_t n = x.numel();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x.at(i);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(n), g[0] / static_cast<double>(n));
      t.accumulate(ix, gx.data(), n);
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  check_2d("mean_rows", x);
  const int m = x.rows(), d = x.cols();
  Tensor out({d});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out.at(j) += x.at(i, j);
  for (int j = 0; j < d; ++j) out.at(j) /= m;

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(m) * d);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(i) * d + j] = g[static_cast<std::size_t>(j)] / m;
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor frobenius_sq(const Tensor& x) {
  double s = 0.0;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) s += x.at(i) * x.at(i);
  Tensor out = Tensor::scalar(s);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    Tensor xc = x.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i)
        gx[static_cast<std::size_t>(i)] = 2.0 * xc.at(i) * g[0];
      t.accumulate(ix, gx.data(), n);
    });
  }
  return out;
}

Tensor trace(const Tensor& x) {
  check_2d("trace", x);
  if (x.rows() != x.cols()) throw ShapeError("trace: matrix is not square: " + x.shape_str());
  const int n = x.rows();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x.at(i, i);
  Tensor out = Tensor::scalar(s);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(n) * n, 0.0);
      for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i) * n + i] = g[0];
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  Tensor out(std::move(shape), std::vector<double>(x.vec()));
  if (out.numel() != x.numel()) {
    throw ShapeError("reshape: cannot view " + x.shape_str() + " as " + out.shape_str());
  }
  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      t.accumulate(ix, g.data(), static_cast<std::int64_t>(g.size()));
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  check_2d("slice_cols", x);
  if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                        std::to_string(c1) + ") for " + x.shape_str());
  }
  const int m = x.rows(), d = x.cols(), w = c1 - c0;
  Tensor out({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(m) * d, 0.0);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          gx[static_cast<std::size_t>(i) * d + c0 + j] = g[static_cast<std::size_t>(i) * w + j];
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  check_2d("slice_rows", x);
  if (r0 < 0 || r1 > x.rows() || r0 >= r1) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) + ", " +
                        std::to_string(r1) + ") for " + x.shape_str());
  }
  const int m = x.rows(), d = x.cols(), h = r1 - r0;
  Tensor out({h, d});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(r0 + i, j);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(m) * d, 0.0);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(r0 + i) * d + j] = g[static_cast<std::size_t>(i) * d + j];
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_cols: empty input list");
  const int m = xs[0].rows();
  int total = 0;
  for (const Tensor& t : xs) {
    check_2d("concat_cols", t);
    if (t.rows() != m) throw ShapeError("concat_cols: row mismatch: " + t.shape_str());
    total += t.cols();
  }
  Tensor out({m, total});
  int off = 0;
  for (const Tensor& t : xs) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
    off += t.cols();
  }

  Tape* tp = Tape::active();
  bool any = false;
  if (tp)
    for (const Tensor& t : xs) any = any || tp->tracked(t);
  if (tp && any) {
    std::vector<int> ids;
    std::vector<int> widths;
    ids.reserve(xs.size());
    for (const Tensor& t : xs) {
      ids.push_back(tp->input_node(t));
      widths.push_back(t.cols());
    }
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      int o = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        int w = widths[p];
        if (ids[p] >= 0) {
          std::vector<double> gp(static_cast<std::size_t>(m) * w);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              gp[static_cast<std::size_t>(i) * w + j] = g[static_cast<std::size_t>(i) * total + o + j];
          t.accumulate(ids[p], gp.data(), static_cast<std::int64_t>(gp.size()));
        }
        o += w;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  check_2d("gather_rows", x);
  const int m = x.rows(), d = x.cols();
  const int k = static_cast<int>(idx.size());
  if (k == 0) throw ContractError("gather_rows: empty index list");
  for (int i : idx)
    if (i < 0 || i >= m) throw ContractError("gather_rows: index out of range");
  Tensor out({k, d});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(idx[static_cast<std::size_t>(i)], j);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    std::vector<int> ic = idx;
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(m) * d, 0.0);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(ic[static_cast<std::size_t>(i)]) * d + j] +=
              g[static_cast<std::size_t>(i) * d + j];
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& x, const std::vector<int>& idx, int total_rows) {
  check_2d("scatter_rows", x);
  const int k = x.rows(), d = x.cols();
  if (static_cast<int>(idx.size()) != k) {
    throw ContractError("scatter_rows: index count does not match rows");
  }
  for (int i : idx)
    if (i < 0 || i >= total_rows) throw ContractError("scatter_rows: index out of range");
  Tensor out({total_rows, d});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) out.at(idx[static_cast<std::size_t>(i)], j) += x.at(i, j);

  Tape* tp = Tape::active();
  if (tp && tp->tracked(x)) {
    int ix = tp->input_node(x);
    std::vector<int> ic = idx;
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gx(static_cast<std::size_t>(k) * d);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(i) * d + j] =
              g[static_cast<std::size_t>(ic[static_cast<std::size_t>(i)]) * d + j];
      t.accumulate(ix, gx.data(), static_cast<std::int64_t>(gx.size()));
    });
  }
  return out;
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("stack_scalars: empty input list");
  const int n = static_cast<int>(xs.size());
  Tensor out({n});
  for (int i = 0; i < n; ++i) out.at(i) = xs[static_cast<std::size_t>(i)].value();

  Tape* tp = Tape::active();
  bool any = false;
  if (tp)
    for (const Tensor& t : xs) any = any || tp->tracked(t);
  if (tp && any) {
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (const Tensor& t : xs) ids.push_back(tp->input_node(t));
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      for (int i = 0; i < n; ++i) {
        if (ids[static_cast<std::size_t>(i)] >= 0)
          t.accumulate(ids[static_cast<std::size_t>(i)], &g[static_cast<std::size_t>(i)], 1);
      }
    });
  }
  return out;
}

Tensor pick(const Tensor& v, int i) {
  const std::int64_t n = v.numel();
  if (i < 0 || i >= n) throw ContractError("pick: index out of range");
  Tensor out = Tensor::scalar(v.at(i));

  Tape* tp = Tape::active();
  if (tp && tp->tracked(v)) {
    int iv = tp->input_node(v);
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gv(static_cast<std::size_t>(n), 0.0);
      gv[static_cast<std::size_t>(i)] = g[0];
      t.accumulate(iv, gv.data(), n);
    });
  }
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("dot: size mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  const std::int64_t n = a.numel();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a.at(i) * b.at(i);
  Tensor out = Tensor::scalar(s);

  Tape* tp = Tape::active();
  if (tp && (tp->tracked(a) || tp->tracked(b))) {
    int ia = tp->input_node(a);
    int ib = tp->input_node(b);
    Tensor ac = a.detached(), bc = b.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        std::vector<double> ga(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] = g[0] * bc.at(i);
        t.accumulate(ia, ga.data(), n);
      }
      if (ib >= 0) {
        std::vector<double> gb(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] = g[0] * ac.at(i);
        t.accumulate(ib, gb.data(), n);
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int label) {
  const std::int64_t c = logits.numel();
  if (label < 0 || label >= c) throw ContractError("cross_entropy_logits: label out of range");
  double mx = logits.at(0);
  for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, logits.at(i));
  double z = 0.0;
  for (std::int64_t i = 0; i < c; ++i) z += std::exp(logits.at(i) - mx);
  double lse = mx + std::log(z);
  Tensor out = Tensor::scalar(lse - logits.at(label));

  Tape* tp = Tape::active();
  if (tp && tp->tracked(logits)) {
    int il = tp->input_node(logits);
    Tensor lc = logits.detached();
    tp->emit(out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double> gl(static_cast<std::size_t>(c));
      for (std::int64_t i = 0; i < c; ++i) {
        double p = std::exp(lc.at(i) - lse);
        gl[static_cast<std::size_t>(i)] = g[0] * (p - (i == label ? 1.0 : 0.0));
      }
      t.accumulate(il, gl.data(), c);
    });
  }
  return out;
}

std::vector<int> argtopk(const double* values, int n, int k) {
  if (k < 1 || k > n) {
    throw ConfigError("argtopk: k=" + std::to_string(k) + " out of range for n=" +
                      std::to_string(n));
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

}  // namespace molex
