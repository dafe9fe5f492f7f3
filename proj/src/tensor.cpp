#include "pgs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pgs/common.hpp"

namespace pgs {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    check(d > 0, "tensor shape dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

void check_finite_span(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " contains a non-finite value");
  }
}

}  // namespace

namespace testhooks {
namespace {
double g_relu_eps = 0.0;
}
void set_relu_backward_perturbation(double eps) { g_relu_eps = eps; }
double relu_backward_perturbation() { return g_relu_eps; }
}  // namespace testhooks

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape) {
  const std::size_t n = shape_product(shape);
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value.assign(n, 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values) {
  const std::size_t n = shape_product(shape);
  check(n == values.size(), "tensor shape " + shape_str(shape) + " expects " + std::to_string(n) +
                                " values, got " + std::to_string(values.size()));
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  check(rows.size() > 0, "matrix literal needs at least one row");
  const std::size_t c = rows.begin()->size();
  std::vector<double> vals;
  vals.reserve(rows.size() * c);
  for (const auto& r : rows) {
    check(r.size() == c, "matrix literal rows have unequal lengths");
    vals.insert(vals.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), c}, std::move(vals));
}

const std::vector<std::size_t>& Tensor::shape() const {
  check(valid(), "use of empty tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return shape().empty() ? 0 : node_->value.size(); }

std::size_t Tensor::rows() const { return shape().at(0); }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.size() >= 2 ? s[1] : 1;
}

std::span<const double> Tensor::values() const {
  check(valid(), "use of empty tensor");
  return node_->value;
}

std::span<double> Tensor::values_mut() {
  check(valid(), "use of empty tensor");
  check(node_->graph == nullptr, "graph tensors are immutable; mutate free tensors only");
  return node_->value;
}

double Tensor::at(std::size_t i) const {
  check(i < size(), "tensor index " + std::to_string(i) + " out of range");
  return node_->value[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  check(shape().size() == 2, "2-index access on tensor of shape " + shape_str(shape()));
  check(r < rows() && c < cols(), "tensor index out of range");
  return node_->value[r * cols() + c];
}

double Tensor::scalar_value() const {
  check(size() == 1, "scalar_value on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::on_graph() const { return valid() && node_->graph != nullptr; }

Graph* Tensor::graph() const { return valid() ? node_->graph : nullptr; }

bool Tensor::has_grad() const { return valid() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  check(has_grad(), "tensor has no gradient buffer (not on a graph)");
  return node_->grad;
}

Tensor Tensor::clone() const {
  check(valid(), "use of empty tensor");
  return Tensor(node_->shape, node_->value);
}

// ---------------------------------------------------------------------------
// Graph

detail::Node* Graph::expect_mine(const Tensor& t, const char* op) const {
  check(t.valid(), std::string(op) + ": empty tensor argument");
  check(t.node_->graph == this, std::string(op) + ": tensor is not on this graph");
  return t.node_.get();
}

Tensor Graph::make_node(std::vector<std::size_t> shape, std::vector<double> values) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->grad.assign(n->value.size(), 0.0);
  n->graph = this;
  tape_.push_back(n);
  return Tensor(n);
}

Tensor Graph::input(std::vector<std::size_t> shape, std::vector<double> values) {
  check(shape_product(shape) == values.size(),
        "input: shape " + shape_str(shape) + " does not match value count");
  check_finite_span(values, "graph input");
  return make_node(std::move(shape), std::move(values));
}

Tensor Graph::input(const Tensor& t) {
  check(t.valid(), "input: empty tensor");
  return input(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  detail::Node* na = expect_mine(a, "matmul");
  detail::Node* nb = expect_mine(b, "matmul");
  check(na->shape.size() == 2 && nb->shape.size() == 2,
        "matmul: rank-2 tensors required, got " + shape_str(na->shape) + " and " + shape_str(nb->shape));
  const std::size_t m = na->shape[0], p = na->shape[1], p2 = nb->shape[0], n = nb->shape[1];
  check(p == p2, "matmul: inner dimensions disagree: " + shape_str(na->shape) + " vs " + shape_str(nb->shape));

  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = na->value[i * p + k];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * nb->value[k * n + j];
    }
  Tensor t = make_node({m, n}, std::move(out));
  detail::Node* nc = t.node_.get();
  nc->backprop = [na, nb, nc, m, p, n] {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = nc->pass_grad[i * n + j];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < p; ++k) {
          na->pass_grad[i * p + k] += g * nb->value[k * n + j];
          nb->pass_grad[k * n + j] += g * na->value[i * p + k];
        }
      }
  };
  return t;
}

Tensor Graph::relu(const Tensor& x) {
  detail::Node* nx = expect_mine(x, "relu");
  std::vector<double> out(nx->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nx->value[i] > 0.0 ? nx->value[i] : 0.0;
  Tensor t = make_node(nx->shape, std::move(out));
  detail::Node* ny = t.node_.get();
  ny->backprop = [nx, ny] {
    const double scale = 1.0 + testhooks::relu_backward_perturbation();
    for (std::size_t i = 0; i < ny->pass_grad.size(); ++i)
      if (nx->value[i] > 0.0) nx->pass_grad[i] += scale * ny->pass_grad[i];  // subgradient 0 at 0
  };
  return t;
}

Tensor Graph::add_bias(const Tensor& x, const Tensor& b) {
  detail::Node* nx = expect_mine(x, "add_bias");
  detail::Node* nb = expect_mine(b, "add_bias");
  check(nx->shape.size() == 2, "add_bias: x must be rank-2, got " + shape_str(nx->shape));
  check(nb->shape.size() == 1, "add_bias: bias must be rank-1, got " + shape_str(nb->shape));
  const std::size_t m = nx->shape[0], k = nx->shape[1];
  check(nb->shape[0] == k, "add_bias: trailing dimensions disagree: " + shape_str(nx->shape) + " vs " +
                               shape_str(nb->shape));
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = nx->value[i * k + j] + nb->value[j];
  Tensor t = make_node({m, k}, std::move(out));
  detail::Node* ny = t.node_.get();
  ny->backprop = [nx, nb, ny, m, k] {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double g = ny->pass_grad[i * k + j];
        nx->pass_grad[i * k + j] += g;
        nb->pass_grad[j] += g;
      }
  };
  return t;
}

Tensor Graph::gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  detail::Node* nx = expect_mine(x, "gather_rows");
  check(nx->shape.size() == 2, "gather_rows: x must be rank-2, got " + shape_str(nx->shape));
  const std::size_t m = nx->shape[0], k = nx->shape[1];
  for (std::size_t i : idx)
    check(i < m, "gather_rows: index " + std::to_string(i) + " out of range [0, " + std::to_string(m) + ")");
  check(!idx.empty(), "gather_rows: empty index list");

  std::vector<std::size_t> rows(idx.begin(), idx.end());
  std::vector<double> out(rows.size() * k);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(nx->value.begin() + static_cast<std::ptrdiff_t>(rows[r] * k), k, out.begin() + static_cast<std::ptrdiff_t>(r * k));
  Tensor t = make_node({rows.size(), k}, std::move(out));
  detail::Node* ny = t.node_.get();
  ny->backprop = [nx, ny, rows = std::move(rows), k] {
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < k; ++j) nx->pass_grad[rows[r] * k + j] += ny->pass_grad[r * k + j];
  };
  return t;
}

Tensor Graph::neighborhood_max(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors) {
  detail::Node* nx = expect_mine(x, "neighborhood_max");
  check(nx->shape.size() == 2, "neighborhood_max: x must be rank-2, got " + shape_str(nx->shape));
  const std::size_t m = nx->shape[0], k = nx->shape[1];
  const std::size_t mo = neighbors.size();
  check(mo > 0, "neighborhood_max: no output groups");
  for (const auto& nb : neighbors) {
    check(!nb.empty(), "neighborhood_max: empty neighbor list");
    for (std::size_t j : nb)
      check(j < m, "neighborhood_max: neighbor index " + std::to_string(j) + " out of range [0, " +
                       std::to_string(m) + ")");
  }

  std::vector<double> out(mo * k);
  std::vector<std::size_t> argmax(mo * k);  // lowest-index maximizer per cell
  for (std::size_t i = 0; i < mo; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t best = neighbors[i][0];
      double bv = nx->value[best * k + c];
      for (std::size_t t = 1; t < neighbors[i].size(); ++t) {
        const std::size_t j = neighbors[i][t];
        const double v = nx->value[j * k + c];
        if (v > bv || (v == bv && j < best)) {
          bv = v;
          best = j;
        }
      }
      out[i * k + c] = bv;
      argmax[i * k + c] = best;
    }
  }
  Tensor t = make_node({mo, k}, std::move(out));
  detail::Node* ny = t.node_.get();
  ny->backprop = [nx, ny, argmax = std::move(argmax), k, mo] {
    for (std::size_t i = 0; i < mo; ++i)
      for (std::size_t c = 0; c < k; ++c) nx->pass_grad[argmax[i * k + c] * k + c] += ny->pass_grad[i * k + c];
  };
  return t;
}

Tensor Graph::softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                    std::span<const double> class_weights) {
  detail::Node* nx = expect_mine(logits, "softmax_cross_entropy");
  check(nx->shape.size() == 2, "softmax_cross_entropy: logits must be rank-2, got " + shape_str(nx->shape));
  const std::size_t n = nx->shape[0], c = nx->shape[1];
  check(labels.size() == n, "softmax_cross_entropy: expected " + std::to_string(n) + " labels, got " +
                                std::to_string(labels.size()));
  std::vector<double> w(c, 1.0);
  if (!class_weights.empty()) {
    check(class_weights.size() == c, "softmax_cross_entropy: weight count does not match class count");
    w.assign(class_weights.begin(), class_weights.end());
  }
  for (int y : labels)
    check(y >= 0 && static_cast<std::size_t>(y) < c,
          "softmax_cross_entropy: label " + std::to_string(y) + " out of range [0, " + std::to_string(c) + ")");

  // max-subtracted softmax, kept for backward
  std::vector<double> soft(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = nx->value[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, nx->value[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      soft[i * c + j] = std::exp(nx->value[i * c + j] - mx);
      z += soft[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) soft[i * c + j] /= z;
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    loss += -w[y] * (nx->value[i * c + y] - mx - std::log(z));
  }
  loss /= static_cast<double>(n);

  Tensor t = make_node({1}, {loss});
  detail::Node* ny = t.node_.get();
  std::vector<int> ls(labels.begin(), labels.end());
  ny->backprop = [nx, ny, soft = std::move(soft), ls = std::move(ls), w = std::move(w), n, c] {
    const double g = ny->pass_grad[0] / static_cast<double>(n);
    if (g == 0.0) return;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = static_cast<std::size_t>(ls[i]);
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = (j == y) ? 1.0 : 0.0;
        nx->pass_grad[i * c + j] += g * w[y] * (soft[i * c + j] - onehot);
      }
    }
  };
  return t;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  detail::Node* na = expect_mine(a, "add");
  detail::Node* nb = expect_mine(b, "add");
  check(na->shape == nb->shape,
        "add: shapes disagree: " + shape_str(na->shape) + " vs " + shape_str(nb->shape));
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] + nb->value[i];
  Tensor t = make_node(na->shape, std::move(out));
  detail::Node* nc = t.node_.get();
  nc->backprop = [na, nb, nc] {
    for (std::size_t i = 0; i < nc->pass_grad.size(); ++i) {
      na->pass_grad[i] += nc->pass_grad[i];
      nb->pass_grad[i] += nc->pass_grad[i];
    }
  };
  return t;
}

Tensor Graph::scale(const Tensor& x, double alpha) {
  detail::Node* nx = expect_mine(x, "scale");
  std::vector<double> out(nx->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * nx->value[i];
  Tensor t = make_node(nx->shape, std::move(out));
  detail::Node* ny = t.node_.get();
  ny->backprop = [nx, ny, alpha] {
    for (std::size_t i = 0; i < ny->pass_grad.size(); ++i) nx->pass_grad[i] += alpha * ny->pass_grad[i];
  };
  return t;
}

Tensor Graph::sum(const Tensor& x) {
  detail::Node* nx = expect_mine(x, "sum");
  double s = 0.0;
  for (double v : nx->value) s += v;
  Tensor t = make_node({1}, {s});
  detail::Node* ny = t.node_.get();
  ny->backprop = [nx, ny] {
    const double g = ny->pass_grad[0];
    for (double& pg : nx->pass_grad) pg += g;
  };
  return t;
}

Tensor Graph::concat_cols(const Tensor& a, const Tensor& b) {
  detail::Node* na = expect_mine(a, "concat_cols");
  detail::Node* nb = expect_mine(b, "concat_cols");
  check(na->shape.size() == 2 && nb->shape.size() == 2 && na->shape[0] == nb->shape[0],
        "concat_cols: row counts disagree: " + shape_str(na->shape) + " vs " + shape_str(nb->shape));
  const std::size_t m = na->shape[0], ka = na->shape[1], kb = nb->shape[1];
  std::vector<double> out(m * (ka + kb));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(na->value.begin() + static_cast<std::ptrdiff_t>(i * ka), ka,
                out.begin() + static_cast<std::ptrdiff_t>(i * (ka + kb)));
    std::copy_n(nb->value.begin() + static_cast<std::ptrdiff_t>(i * kb), kb,
                out.begin() + static_cast<std::ptrdiff_t>(i * (ka + kb) + ka));
  }
  Tensor t = make_node({m, ka + kb}, std::move(out));
  detail::Node* nc = t.node_.get();
  nc->backprop = [na, nb, nc, m, ka, kb] {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < ka; ++j) na->pass_grad[i * ka + j] += nc->pass_grad[i * (ka + kb) + j];
      for (std::size_t j = 0; j < kb; ++j) nb->pass_grad[i * kb + j] += nc->pass_grad[i * (ka + kb) + ka + j];
    }
  };
  return t;
}

void Graph::backward(const Tensor& objective) {
  detail::Node* obj = expect_mine(objective, "backward");
  check(obj->value.size() == 1, "backward: objective must be scalar, got shape " + shape_str(obj->shape));

  for (auto& n : tape_) n->pass_grad.assign(n->value.size(), 0.0);
  obj->pass_grad[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
  for (auto& n : tape_) {
    for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->pass_grad[i];
    n->pass_grad.clear();
  }
  ++backward_runs_;
}

void Graph::zero_grad() {
  for (auto& n : tape_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

void Graph::check_finite() const {
  for (const auto& n : tape_) {
    check_finite_span(n->value, "graph value");
    check_finite_span(n->grad, "graph gradient");
  }
}

}  // namespace pgs
