#include "lamb/nn.hpp"
#include "lamb/random.hpp"
#include "lamb/tensor.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace lamb;

namespace {

Matrix random_matrix(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

// Max relative error between backprop and central differences.
double op_grad_error(std::vector<Tensor> leaves, const std::function<Tensor(const std::vector<Tensor>&)>& f) {
  Rng rng(99);
  const Matrix probe = f(leaves).value();
  // u^T f v with random u, v: a fixed linear functional of the output.
  const Tensor u = Tensor::constant(random_matrix(rng, 1, probe.rows()));
  const Tensor v = Tensor::constant(random_matrix(rng, probe.cols(), 1));
  auto loss = [&] { return ag::matmul(ag::matmul(u, f(leaves)), v); };
  for (auto& l : leaves) l.zero_grad();
  loss().backward();
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& l : leaves) {
    const Matrix analytic = l.grad();
    for (Index i = 0; i < l.value().size(); ++i) {
      double& x = l.mutable_value().data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss().item();
      x = saved - h;
      const double down = loss().item();
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.size() ? analytic.data()[i] : 0.0;
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and matrix ops match central differences") {
  Rng rng(1);
  const Tensor a = Tensor::leaf(random_matrix(rng, 3, 4));
  const Tensor b = Tensor::leaf(random_matrix(rng, 4, 2));
  const Tensor c = Tensor::leaf(random_matrix(rng, 3, 4));
  const Tensor row = Tensor::leaf(random_matrix(rng, 1, 4));
  const Tensor g = Tensor::leaf(random_matrix(rng, 1, 4));
  const Tensor beta = Tensor::leaf(random_matrix(rng, 1, 4));

  CHECK(op_grad_error({a, b}, [](const auto& v) { return ag::matmul(v[0], v[1]); }) < 1e-7);
  CHECK(op_grad_error({a, c}, [](const auto& v) { return ag::matmul_nt(v[0], v[1]); }) < 1e-7);
  CHECK(op_grad_error({a, c}, [](const auto& v) { return ag::add(v[0], v[1]); }) < 1e-7);
  CHECK(op_grad_error({a, row}, [](const auto& v) { return ag::add_row(v[0], v[1]); }) < 1e-7);
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::scale(v[0], -2.5); }) < 1e-7);
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::gelu(v[0]); }) < 1e-6);
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::softmax_rows(v[0]); }) < 1e-6);
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::mean_rows(v[0]); }) < 1e-7);
  CHECK(op_grad_error({a, g, beta}, [](const auto& v) { return ag::layer_norm(v[0], v[1], v[2]); }) < 1e-5);
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::slice_cols(v[0], 1, 2); }) < 1e-7);
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::slice_rows(v[0], 1, 2); }) < 1e-7);
  CHECK(op_grad_error({a, c}, [](const auto& v) {
          const std::vector<Tensor> parts{v[0], v[1]};
          return ag::concat_rows(parts);
        }) < 1e-7);
  CHECK(op_grad_error({a, c}, [](const auto& v) {
          const std::vector<Tensor> parts{v[0], v[1]};
          return ag::concat_cols(parts);
        }) < 1e-7);
  const std::vector<int> ids{2, 0, 2};
  CHECK(op_grad_error({a}, [&](const auto& v) { return ag::gather_rows(v[0], ids); }) < 1e-7);
  const std::vector<int> targets{1, 3, 0};
  CHECK(op_grad_error({a}, [&](const auto& v) { return ag::nll_rows(v[0], targets); }) < 1e-6);
}

TEST_CASE("causal softmax masks the future and rows sum to one") {
  Rng rng(2);
  const Tensor a = Tensor::leaf(random_matrix(rng, 4, 4));
  const Matrix p = ag::softmax_rows(a, true).value();
  for (Index i = 0; i < 4; ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (Index j = i + 1; j < 4; ++j) CHECK(p(i, j) == 0.0);
  }
  CHECK(op_grad_error({a}, [](const auto& v) { return ag::softmax_rows(v[0], true); }) < 1e-6);
}

TEST_CASE("softmax rows match the oracle") {
  Rng rng(3);
  const Matrix m = random_matrix(rng, 3, 5) * 10.0;
  const Matrix p = ag::softmax_rows(Tensor::constant(m)).value();
  for (int i = 0; i < 3; ++i) {
    const auto ref = oracle::softmax(oracle::row(m, i));
    for (int j = 0; j < 5; ++j) CHECK(std::abs(p(i, j) - ref[static_cast<std::size_t>(j)]) < 1e-15);
  }
}

TEST_CASE("layer norm matches the oracle") {
  Rng rng(4);
  const Matrix x = random_matrix(rng, 3, 6);
  const Matrix g = random_matrix(rng, 1, 6), b = random_matrix(rng, 1, 6);
  const Matrix out = ag::layer_norm(Tensor::constant(x), Tensor::constant(g), Tensor::constant(b)).value();
  const auto ref = oracle::layer_norm(oracle::to_mat(x), oracle::row(g, 0), oracle::row(b, 0));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 6; ++j) CHECK(std::abs(out(i, j) - ref[i][j]) < 1e-12);
  }
}

TEST_CASE("gradient accumulates over reused nodes") {
  const Tensor x = Tensor::leaf(Matrix::Constant(1, 1, 3.0));
  ag::sum(ag::add(x, ag::scale(x, 2.0))).backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("constants take no gradient and reachable leaves skip them") {
  const Tensor c = Tensor::constant(Matrix::Ones(2, 2));
  const Tensor w = Tensor::leaf(Matrix::Ones(2, 2));
  const Tensor unused = Tensor::leaf(Matrix::Ones(2, 2));
  const Tensor loss = ag::sum(ag::matmul(c, w));
  const auto leaves = ag::reachable_leaves(loss);
  REQUIRE(leaves.size() == 1);
  CHECK(leaves[0] == w.node());
  loss.backward();
  CHECK_FALSE(c.node()->has_grad());
  CHECK_FALSE(unused.node()->has_grad());
}

TEST_CASE("backward requires a scalar") {
  const Tensor w = Tensor::leaf(Matrix::Ones(2, 2));
  CHECK_THROWS(ag::scale(w, 2.0).backward());
}

TEST_CASE("dropout is identity at rate zero and scales survivors") {
  Rng rng(5);
  const Tensor x = Tensor::leaf(Matrix::Ones(20, 20));
  CHECK(ag::dropout(x, 0.0, rng).value() == x.value());
  const Matrix y = ag::dropout(x, 0.5, rng).value();
  for (Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
  }
}

TEST_CASE("rng is reproducible and its state round-trips") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  a.normal();
  const std::string s = a.state();
  const double x = a.normal(), y = a.uniform();
  Rng c(0);
  c.set_state(s);
  CHECK(c.normal() == x);
  CHECK(c.uniform() == y);
  for (int i = 0; i < 1000; ++i) CHECK(a.below(7) < 7);
}

TEST_CASE("parameter store rejects duplicate names") {
  nn::ParameterStore store;
  store.add("w", Matrix::Zero(2, 2));
  CHECK_THROWS_AS(store.add("w", Matrix::Zero(2, 2)), std::logic_error);
  CHECK(store.find("w") != nullptr);
  CHECK(store.find("missing") == nullptr);
  CHECK(store.scalar_count() == 4);
}
