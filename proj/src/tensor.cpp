#include "lamb/tensor.hpp"

#include "lamb/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace lamb::ag {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Builds the output node. Inputs and the backward closure are only kept
// when some input participates in differentiation.
Tensor make_result(Matrix value, std::vector<std::shared_ptr<Node>> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  require(rows() == 1 && cols() == 1, "Tensor::item on non-scalar");
  return value()(0, 0);
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

namespace {

std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS: (node, next input index).
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  require(rows() == 1 && cols() == 1, "backward() requires a 1x1 tensor");
  if (!requires_grad()) return;
  const auto order = topological_order(node_.get());
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

std::vector<const Node*> reachable_leaves(const Tensor& root) {
  std::vector<const Node*> leaves;
  if (!root.requires_grad()) return leaves;
  for (Node* n : topological_order(root.node())) {
    if (n->inputs.empty() && n->requires_grad) leaves.push_back(n);
  }
  return leaves;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  auto an = a.shared();
  auto bn = b.shared();
  return make_result(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * self.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Matrix out = a.value() * b.value().transpose();
  auto an = a.shared();
  auto bn = b.shared();
  return make_result(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value);
    if (bn->requires_grad) bn->accumulate(self.grad.transpose() * an->value);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix out = a.value() + b.value();
  auto an = a.shared();
  auto bn = b.shared();
  return make_result(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  auto an = a.shared();
  auto rn = row.shared();
  return make_result(std::move(out), {an, rn}, [an, rn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (rn->requires_grad) rn->accumulate(self.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value() * s;
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an, s](Node& self) {
    an->accumulate(self.grad * s);
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

Tensor gelu(const Tensor& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an](Node& self) {
    const Matrix& xv = an->value;
    Matrix g(xv.rows(), xv.cols());
    const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * kInvSqrt2;
    for (Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g.data()[i] = self.grad.data()[i] * (cdf + v * pdf);
    }
    an->accumulate(g);
  });
}

Tensor softmax_rows(const Tensor& a, bool causal) {
  const Matrix& x = a.value();
  Matrix p = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index width = causal ? std::min<Index>(i + 1, x.cols()) : x.cols();
    const double m = x.row(i).head(width).maxCoeff();
    double z = 0.0;
    for (Index j = 0; j < width; ++j) {
      p(i, j) = std::exp(x(i, j) - m);
      z += p(i, j);
    }
    p.row(i).head(width) /= z;
  }
  auto an = a.shared();
  Matrix probs = p;
  return make_result(std::move(p), {an}, [an, probs = std::move(probs)](Node& self) {
    Matrix g(probs.rows(), probs.cols());
    for (Index i = 0; i < probs.rows(); ++i) {
      const double dot = self.grad.row(i).dot(probs.row(i));
      g.row(i) = probs.row(i).cwiseProduct((self.grad.row(i).array() - dot).matrix());
    }
    an->accumulate(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Index d = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d,
          "layer_norm: parameter shape mismatch");
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  auto xn = x.shared();
  auto gn = gamma.shared();
  auto bn = beta.shared();
  return make_result(std::move(out), {xn, gn, bn},
                     [xn, gn, bn, xhat = std::move(xhat), inv_std](Node& self) {
    const Matrix& dy = self.grad;
    if (gn->requires_grad) gn->accumulate(dy.cwiseProduct(xhat).colwise().sum());
    if (bn->requires_grad) bn->accumulate(dy.colwise().sum());
    if (xn->requires_grad) {
      const Index n = xhat.cols();
      Matrix dx(xhat.rows(), n);
      for (Index i = 0; i < xhat.rows(); ++i) {
        Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gn->value.row(0));
        const double mean_d = dxhat.mean();
        const double mean_dx = dxhat.dot(xhat.row(i)) / static_cast<double>(n);
        dx.row(i) = inv_std(i) * (dxhat.array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
      }
      xn->accumulate(dx);
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(t.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = t.row(ids[i]);
  }
  auto tn = table.shared();
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {tn}, [tn, idx = std::move(idx)](Node& self) {
    Matrix g = Matrix::Zero(tn->value.rows(), tn->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    tn->accumulate(g);
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<Index> offsets;
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    inputs.push_back(p.shared());
    offsets.push_back(r);
    r += p.rows();
  }
  auto captured = inputs;
  return make_result(std::move(out), std::move(inputs),
                     [captured = std::move(captured), offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < captured.size(); ++k) {
      if (captured[k]->requires_grad) {
        captured[k]->accumulate(self.grad.middleRows(offsets[k], captured[k]->value.rows()));
      }
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<Index> offsets;
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    inputs.push_back(p.shared());
    offsets.push_back(c);
    c += p.cols();
  }
  auto captured = inputs;
  return make_result(std::move(out), std::move(inputs),
                     [captured = std::move(captured), offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < captured.size(); ++k) {
      if (captured[k]->requires_grad) {
        captured[k]->accumulate(self.grad.middleCols(offsets[k], captured[k]->value.cols()));
      }
    }
  });
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows: out of range");
  Matrix out = a.value().middleRows(begin, count);
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an, begin, count](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    g.middleRows(begin, count) = self.grad;
    an->accumulate(g);
  });
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(begin, count);
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an, begin, count](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    g.middleCols(begin, count) = self.grad;
    an->accumulate(g);
  });
}

Tensor mean_rows(const Tensor& a) {
  require(a.rows() > 0, "mean_rows: empty input");
  Matrix out = a.value().colwise().mean();
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an](Node& self) {
    const double inv = 1.0 / static_cast<double>(an->value.rows());
    Matrix g = self.grad.replicate(an->value.rows(), 1) * inv;
    an->accumulate(g);
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an](Node& self) {
    an->accumulate(Matrix::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  require(p < 1.0, "dropout: p must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
  }
  Matrix out = a.value().cwiseProduct(mask);
  auto an = a.shared();
  return make_result(std::move(out), {an}, [an, mask = std::move(mask)](Node& self) {
    an->accumulate(self.grad.cwiseProduct(mask));
  });
}

Tensor nll_rows(const Tensor& logits, std::span<const int> targets) {
  require(static_cast<Index>(targets.size()) == logits.rows(), "nll_rows: target count mismatch");
  const Matrix& z = logits.value();
  Matrix out(z.rows(), 1);
  Matrix probs(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= z.cols()) throw std::out_of_range("nll_rows: target id out of range");
    const double m = z.row(i).maxCoeff();
    const double log_z = m + std::log((z.row(i).array() - m).exp().sum());
    out(i, 0) = log_z - z(i, t);
    probs.row(i) = (z.row(i).array() - log_z).exp().matrix();
  }
  auto zn = logits.shared();
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(std::move(out), {zn},
                     [zn, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
    Matrix g = probs;
    for (Index i = 0; i < g.rows(); ++i) {
      g(i, tgt[static_cast<std::size_t>(i)]) -= 1.0;
      g.row(i) *= self.grad(i, 0);
    }
    zn->accumulate(g);
  });
}

}  // namespace lamb::ag
