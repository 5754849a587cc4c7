#ifndef SFLOW_EMISSION_HPP
#define SFLOW_EMISSION_HPP

#include "sflow/common.hpp"

namespace sflow {

// Effective variance = exp(log_var) + kVarianceFloor, so densities never
// degenerate no matter where the optimizer pushes log_var.
constexpr double kVarianceFloor = 1e-4;

// Per-category diagonal Gaussian densities over latent embeddings.
struct EmissionParams {
  int num_cats = 0;
  int dim = 0;
  MatrixXd means;     // K x D
  MatrixXd log_vars;  // K x D

  // means ~ N(0, 0.01) per coordinate, log_vars = 0.
  static EmissionParams init(int num_cats, int dim, Rng &rng);
};

struct EmissionGrads {
  MatrixXd means;
  MatrixXd log_vars;
};

EmissionGrads zero_emission_grads(const EmissionParams &params);

// loglikes[i][k] = log N(e_i; mean_k, diag(var_k)). e is length x D.
MatrixXd emission_loglikes(const EmissionParams &params, const MatrixXd &e);

// Gradients of sum_i sum_k weights[i][k] * loglikes[i][k] with respect to
// means, log_vars and e. weights rows are posteriors or one-hot.
void emission_backward(const EmissionParams &params, const MatrixXd &e,
                       const MatrixXd &weights, EmissionGrads *grads,
                       MatrixXd *grad_e);

}  // namespace sflow

#endif  // SFLOW_EMISSION_HPP
