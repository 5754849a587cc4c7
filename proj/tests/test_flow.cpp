#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "sflow/flow.hpp"

using namespace sflow;

namespace {

// Generic coupling weights (identity-initialized stacks hide bugs).
// Fan-in scaling keeps the stack from inflating magnitudes layer by layer.
FlowParams random_nice(int dim, int layers, int hidden, Rng &rng) {
  FlowParams p = FlowParams::nice(dim, layers, hidden, rng);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(dim / 2));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto &layer : p.layers) {
    layer.W1 = uniform_matrix(layer.W1.rows(), layer.W1.cols(), s1, rng);
    layer.b1 = uniform_matrix(layer.b1.size(), 1, 0.5, rng);
    layer.W2 = uniform_matrix(layer.W2.rows(), layer.W2.cols(), s2, rng);
    layer.b2 = uniform_matrix(layer.b2.size(), 1, 0.5, rng);
  }
  return p;
}

// Flat packing of flow parameters for finite differences.
VectorXd pack(const FlowParams &p) {
  std::vector<double> vals;
  for (const auto &l : p.layers) {
    for (int i = 0; i < l.W1.rows(); ++i)
      for (int j = 0; j < l.W1.cols(); ++j) vals.push_back(l.W1(i, j));
    for (int i = 0; i < l.b1.size(); ++i) vals.push_back(l.b1(i));
    for (int i = 0; i < l.W2.rows(); ++i)
      for (int j = 0; j < l.W2.cols(); ++j) vals.push_back(l.W2(i, j));
    for (int i = 0; i < l.b2.size(); ++i) vals.push_back(l.b2(i));
  }
  if (p.kind == FlowKind::Linear)
    for (int i = 0; i < p.W.rows(); ++i)
      for (int j = 0; j < p.W.cols(); ++j) vals.push_back(p.W(i, j));
  return Eigen::Map<VectorXd>(vals.data(), vals.size());
}

void unpack(const VectorXd &flat, FlowParams &p) {
  int off = 0;
  for (auto &l : p.layers) {
    for (int i = 0; i < l.W1.rows(); ++i)
      for (int j = 0; j < l.W1.cols(); ++j) l.W1(i, j) = flat(off++);
    for (int i = 0; i < l.b1.size(); ++i) l.b1(i) = flat(off++);
    for (int i = 0; i < l.W2.rows(); ++i)
      for (int j = 0; j < l.W2.cols(); ++j) l.W2(i, j) = flat(off++);
    for (int i = 0; i < l.b2.size(); ++i) l.b2(i) = flat(off++);
  }
  if (p.kind == FlowKind::Linear)
    for (int i = 0; i < p.W.rows(); ++i)
      for (int j = 0; j < p.W.cols(); ++j) p.W(i, j) = flat(off++);
}

VectorXd pack_grads(const FlowGrads &g, FlowKind kind) {
  std::vector<double> vals;
  for (const auto &l : g.layers) {
    for (int i = 0; i < l.W1.rows(); ++i)
      for (int j = 0; j < l.W1.cols(); ++j) vals.push_back(l.W1(i, j));
    for (int i = 0; i < l.b1.size(); ++i) vals.push_back(l.b1(i));
    for (int i = 0; i < l.W2.rows(); ++i)
      for (int j = 0; j < l.W2.cols(); ++j) vals.push_back(l.W2(i, j));
    for (int i = 0; i < l.b2.size(); ++i) vals.push_back(l.b2(i));
  }
  if (kind == FlowKind::Linear)
    for (int i = 0; i < g.W.rows(); ++i)
      for (int j = 0; j < g.W.cols(); ++j) vals.push_back(g.W(i, j));
  return Eigen::Map<VectorXd>(vals.data(), vals.size());
}

}  // namespace

TEST_CASE("nice with zero shift nets is the identity with logdet 0") {
  Rng rng(1);
  FlowParams p = FlowParams::nice(6, 4, 6, rng);  // W2, b2 zero at init
  MatrixXd x = gaussian_matrix(5, 6, 1.0, rng);
  auto inv = flow_inverse(p, x);
  CHECK((inv.e - x).norm() == 0.0);
  CHECK(inv.logdet_per_token == 0.0);
}

TEST_CASE("linear diag(2,2,2) scales and has logdet 3 ln 2") {
  FlowParams p = FlowParams::linear(3);
  p.W = 2.0 * MatrixXd::Identity(3, 3);
  MatrixXd x = MatrixXd::Ones(2, 3);
  auto inv = flow_inverse(p, x);
  CHECK((inv.e - 2.0 * x).norm() == 0.0);
  CHECK(inv.logdet_per_token ==
        doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("nice logdet is identically zero for generic parameters") {
  Rng rng(2);
  FlowParams p = random_nice(8, 5, 8, rng);
  MatrixXd x = gaussian_matrix(7, 8, 2.0, rng);
  CHECK(flow_inverse(p, x).logdet_per_token == 0.0);
}

TEST_CASE("round trip: forward(inverse(x)) = x, random 8-layer nice, D=150") {
  Rng rng(3);
  FlowParams p = random_nice(150, 8, 150, rng);
  MatrixXd x = gaussian_matrix(12, 150, 1.0, rng);
  auto inv = flow_inverse(p, x);
  MatrixXd back = flow_forward(p, inv.e);
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("identity and linear W=I pass through") {
  Rng rng(4);
  MatrixXd e = gaussian_matrix(3, 4, 1.0, rng);
  CHECK((flow_forward(FlowParams::identity(4), e) - e).norm() == 0.0);
  CHECK((flow_forward(FlowParams::linear(4), e) - e).norm() == 0.0);
}

TEST_CASE("flow_backward returns zero when upstream gradients vanish") {
  Rng rng(5);
  FlowParams p = random_nice(6, 2, 6, rng);
  MatrixXd x = gaussian_matrix(4, 6, 1.0, rng);
  FlowCache cache;
  flow_inverse(p, x, &cache);
  FlowGrads g;
  MatrixXd grad_x;
  flow_backward(p, cache, MatrixXd::Zero(4, 6), 0.0, &g, &grad_x);
  CHECK(grad_x.norm() == 0.0);
  CHECK(pack_grads(g, p.kind).norm() == 0.0);
}

TEST_CASE("nice parameter and input gradients match finite differences") {
  Rng rng(6);
  const int D = 6, L = 2, l = 3;
  FlowParams p = random_nice(D, L, D, rng);
  MatrixXd x = gaussian_matrix(l, D, 1.0, rng);
  MatrixXd grad_e = gaussian_matrix(l, D, 1.0, rng);

  FlowCache cache;
  flow_inverse(p, x, &cache);
  FlowGrads g;
  MatrixXd grad_x;
  flow_backward(p, cache, grad_e, 0.0, &g, &grad_x);

  auto objective = [&](const FlowParams &q, const MatrixXd &xx) {
    return (grad_e.array() * flow_inverse(q, xx).e.array()).sum();
  };

  VectorXd flat = pack(p);
  auto f_params = [&](const VectorXd &v) {
    FlowParams q = p;
    unpack(v, q);
    return objective(q, x);
  };
  CHECK(oracle::max_rel_error(f_params, flat, pack_grads(g, p.kind)) < 1e-4);

  VectorXd xflat = Eigen::Map<const VectorXd>(x.data(), x.size());
  auto f_x = [&](const VectorXd &v) {
    MatrixXd xx = Eigen::Map<const MatrixXd>(v.data(), l, D);
    return objective(p, xx);
  };
  VectorXd gx = Eigen::Map<const VectorXd>(grad_x.data(), grad_x.size());
  CHECK(oracle::max_rel_error(f_x, xflat, gx) < 1e-4);
}

TEST_CASE("linear logdet gradient is the inverse transpose") {
  FlowParams p = FlowParams::linear(2);
  p.W = Eigen::Vector2d(2.0, 4.0).asDiagonal();
  MatrixXd x = MatrixXd::Zero(1, 2);
  FlowCache cache;
  flow_inverse(p, x, &cache);
  FlowGrads g;
  MatrixXd grad_x;
  flow_backward(p, cache, MatrixXd::Zero(1, 2), 1.0, &g, &grad_x);
  CHECK(g.W(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g.W(1, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(std::abs(g.W(0, 1)) < 1e-12);
  CHECK(std::abs(g.W(1, 0)) < 1e-12);
}

TEST_CASE("linear flow full gradient matches finite differences") {
  Rng rng(7);
  const int D = 4, l = 3;
  FlowParams p = FlowParams::linear(D);
  p.W = MatrixXd::Identity(D, D) + gaussian_matrix(D, D, 0.2, rng);
  MatrixXd x = gaussian_matrix(l, D, 1.0, rng);
  MatrixXd grad_e = gaussian_matrix(l, D, 1.0, rng);
  const double grad_logdet = 0.7;

  FlowCache cache;
  flow_inverse(p, x, &cache);
  FlowGrads g;
  MatrixXd grad_x;
  flow_backward(p, cache, grad_e, grad_logdet, &g, &grad_x);

  VectorXd flat = pack(p);
  auto f = [&](const VectorXd &v) {
    FlowParams q = p;
    unpack(v, q);
    auto inv = flow_inverse(q, x);
    return (grad_e.array() * inv.e.array()).sum() +
           grad_logdet * inv.logdet_per_token;
  };
  CHECK(oracle::max_rel_error(f, flat, pack_grads(g, p.kind)) < 1e-4);
}

TEST_CASE("alternating parity couples every coordinate") {
  Rng rng(8);
  const int D = 4;
  FlowParams p = random_nice(D, 2, D, rng);
  MatrixXd x = gaussian_matrix(1, D, 1.0, rng);
  // d e_j / d x_i must be nonzero for all (i, j) once both parities compose.
  FlowCache cache;
  flow_inverse(p, x, &cache);
  for (int j = 0; j < D; ++j) {
    MatrixXd grad_e = MatrixXd::Zero(1, D);
    grad_e(0, j) = 1.0;
    FlowGrads g;
    MatrixXd grad_x;
    flow_backward(p, cache, grad_e, 0.0, &g, &grad_x);
    for (int i = 0; i < D; ++i) CHECK(std::abs(grad_x(0, i)) > 1e-12);
  }
}

TEST_CASE("construction and validation reject bad flows") {
  Rng rng(9);
  CHECK_THROWS_AS(FlowParams::nice(5, 2, 5, rng), DataError);
  FlowParams p = FlowParams::linear(2);
  p.W = MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(validate_flow(p), NumericalError);
  CHECK_THROWS_AS(flow_forward(p, MatrixXd::Zero(1, 2)), NumericalError);
  FlowParams nice = FlowParams::nice(4, 2, 4, rng);
  nice.layers[1].transform_low = nice.layers[0].transform_low;
  CHECK_THROWS_AS(validate_flow(nice), DataError);
}

TEST_CASE("flow_backward without a cache is an error") {
  Rng rng(10);
  FlowParams p = random_nice(4, 2, 4, rng);
  FlowCache cache;  // never filled
  FlowGrads g;
  MatrixXd grad_x;
  CHECK_THROWS_AS(
      flow_backward(p, cache, MatrixXd::Zero(1, 4), 0.0, &g, &grad_x),
      NumericalError);
}
