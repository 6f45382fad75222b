#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every op records a closure that pushes the output
// gradient back into its inputs; Tensor::backward() replays them in
// reverse topological order.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace lamb {

class Rng;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  bool has_grad() const { return grad.size() != 0; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value);
  static Tensor leaf(Matrix value);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  // Seeds d(self)/d(self) = 1; self must be 1x1.
  void backward() const;
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaves reachable from `root` through gradient-carrying edges.
std::vector<const Node*> reachable_leaves(const Tensor& root);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// Adds a 1 x cols row vector to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& a);
// Row-wise softmax. With causal=true, entry (i, j) for j > i is masked out.
Tensor softmax_rows(const Tensor& a, bool causal = false);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
Tensor mean_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor dropout(const Tensor& a, double p, Rng& rng);
// Per-row negative log-likelihood of targets under softmax(logits): (T x 1).
Tensor nll_rows(const Tensor& logits, std::span<const int> targets);

}  // namespace ag

using ag::Tensor;

}  // namespace lamb
