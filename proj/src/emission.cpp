#include "sflow/emission.hpp"

namespace sflow {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

EmissionParams EmissionParams::init(int num_cats, int dim, Rng &rng) {
  EmissionParams p;
  p.num_cats = num_cats;
  p.dim = dim;
  p.means = gaussian_matrix(num_cats, dim, 0.1, rng);
  p.log_vars = MatrixXd::Zero(num_cats, dim);
  return p;
}

EmissionGrads zero_emission_grads(const EmissionParams &params) {
  return EmissionGrads{MatrixXd::Zero(params.num_cats, params.dim),
                       MatrixXd::Zero(params.num_cats, params.dim)};
}

MatrixXd emission_loglikes(const EmissionParams &params, const MatrixXd &e) {
  if (e.cols() != params.dim)
    throw DataError("latent embeddings have dimension " +
                    std::to_string(e.cols()) + "; emission expects " +
                    std::to_string(params.dim));
  const int l = static_cast<int>(e.rows());
  MatrixXd out(l, params.num_cats);
  MatrixXd vars = params.log_vars.array().exp() + kVarianceFloor;
  for (int k = 0; k < params.num_cats; ++k) {
    auto var = vars.row(k).array();
    double base = -0.5 * params.dim * kLog2Pi - 0.5 * var.log().sum();
    for (int i = 0; i < l; ++i) {
      auto diff = e.row(i).array() - params.means.row(k).array();
      out(i, k) = base - 0.5 * (diff.square() / var).sum();
    }
  }
  return out;
}

void emission_backward(const EmissionParams &params, const MatrixXd &e,
                       const MatrixXd &weights, EmissionGrads *grads,
                       MatrixXd *grad_e) {
  const int l = static_cast<int>(e.rows());
  if (weights.rows() != l || weights.cols() != params.num_cats)
    throw DataError("emission weights shape mismatch");
  *grads = zero_emission_grads(params);
  grad_e->setZero(l, params.dim);
  MatrixXd vars = params.log_vars.array().exp() + kVarianceFloor;
  for (int k = 0; k < params.num_cats; ++k) {
    auto var = vars.row(k).array();
    auto dvar_dlogvar = params.log_vars.row(k).array().exp();
    for (int i = 0; i < l; ++i) {
      double w = weights(i, k);
      if (w == 0.0) continue;
      auto diff = e.row(i).array() - params.means.row(k).array();
      auto by_var = diff / var;
      grads->means.row(k).array() += w * by_var;
      // d/d var of [-0.5 log var - diff^2/(2 var)], times d var/d log_var.
      grads->log_vars.row(k).array() +=
          w * (-0.5 / var + 0.5 * by_var.square()) * dvar_dlogvar;
      grad_e->row(i).array() -= w * by_var;
    }
  }
}

}  // namespace sflow
