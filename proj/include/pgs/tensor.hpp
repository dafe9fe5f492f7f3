#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace pgs {

class Graph;

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;       // persistent, accumulated across backward runs
  std::vector<double> pass_grad;  // scratch for the sweep in flight
  Graph* graph = nullptr;
  std::function<void()> backprop;  // reads own pass_grad, adds into parents'
};

}  // namespace detail

// Dense row-major array of 64-bit reals. A Tensor is a shared handle: free
// tensors (parameters, constants) own just values; tensors created through a
// Graph additionally carry a gradient buffer and stay linked to that graph's
// tape. Use clone() when an independent copy is needed.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool valid() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t rows() const;  // rank-2 (and rank-1: size)
  std::size_t cols() const;  // rank-2 (rank-1: 1)

  std::span<const double> values() const;
  std::span<double> values_mut();  // free tensors only (parameter updates)
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;
  double scalar_value() const;  // single-element tensors

  bool on_graph() const;
  Graph* graph() const;
  bool has_grad() const;
  std::span<const double> grad() const;

  Tensor clone() const;  // deep copy, detached from any graph

 private:
  friend class Graph;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

namespace testhooks {
// Multiplies the relu backward rule by (1 + eps). Exists so the gradient-check
// CLI can demonstrate that a broken backward rule is detected. Default 0.
void set_relu_backward_perturbation(double eps);
double relu_backward_perturbation();
}  // namespace testhooks

// Reverse-mode tape. Nodes are recorded in execution order (a topological
// order by construction); backward() replays them in exact reverse order.
// One graph is confined to one thread; distinct graphs are independent.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves. Values are copied onto the tape; finiteness is enforced here so
  // downstream passes only ever see finite numbers.
  Tensor input(std::vector<std::size_t> shape, std::vector<double> values);
  Tensor input(const Tensor& t);

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor relu(const Tensor& x);
  Tensor add_bias(const Tensor& x, const Tensor& b);
  Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
  // groups[i] lists the input rows reduced into output row i (channelwise max).
  // Backward routes each channel's gradient to the lowest-index maximizer.
  Tensor neighborhood_max(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors);
  // Mean over rows of weight[label]*crossentropy(row). Empty weights = all 1.
  Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                               std::span<const double> class_weights = {});
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double alpha);
  Tensor sum(const Tensor& x);
  Tensor concat_cols(const Tensor& a, const Tensor& b);

  // Accumulates d(objective)/d(node) into every node's grad. Calling again
  // without zero_grad() adds the new pass on top (documented behavior).
  void backward(const Tensor& objective);
  void zero_grad();

  std::size_t node_count() const { return tape_.size(); }
  int backward_runs() const { return backward_runs_; }
  void check_finite() const;  // throws on any non-finite value or grad

 private:
  detail::Node* expect_mine(const Tensor& t, const char* op) const;
  Tensor make_node(std::vector<std::size_t> shape, std::vector<double> values);

  std::vector<std::shared_ptr<detail::Node>> tape_;
  int backward_runs_ = 0;
};

}  // namespace pgs
