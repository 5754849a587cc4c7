#ifndef SFLOW_FLOW_HPP
#define SFLOW_FLOW_HPP

#include <string>
#include <vector>

#include "sflow/common.hpp"

namespace sflow {

enum class FlowKind { Identity, Linear, Nice };

FlowKind flow_kind_from_string(const std::string &name);
std::string to_string(FlowKind kind);

// One additive coupling layer. The coupling net m(a) = W2*relu(W1*a + b1) + b2
// shifts one half of the coordinates by a function of the other half.
struct CouplingLayer {
  MatrixXd W1;  // hidden x (D/2)
  VectorXd b1;  // hidden
  MatrixXd W2;  // (D/2) x hidden
  VectorXd b2;  // D/2
  bool transform_low = true;  // which half receives the shift
};

// Invertible projection between latent embeddings e and observations x.
// The linear variant parameterizes the inverse map directly: e = W * x.
struct FlowParams {
  FlowKind kind = FlowKind::Identity;
  int dim = 0;
  std::vector<CouplingLayer> layers;  // Nice
  MatrixXd W;                         // Linear

  int num_layers() const { return static_cast<int>(layers.size()); }

  static FlowParams identity(int dim);
  // Coupling stack with alternating parity, low half transformed first.
  // W1 ~ U(+-1/sqrt(D/2)), W2 and biases zero, so the stack starts as the
  // identity map. hidden <= 0 selects hidden width = dim.
  static FlowParams nice(int dim, int num_layers, int hidden, Rng &rng);
  static FlowParams linear(int dim);  // W = I
};

// Rejects odd dim for Nice and |det W| <= 1e-12 for Linear.
void validate_flow(const FlowParams &params);

// log|det W| via LU; throws NumericalError if W is singular.
double linear_log_abs_det(const MatrixXd &W);

// Intermediates of flow_inverse, needed by flow_backward.
struct FlowCache {
  std::vector<MatrixXd> layer_inputs;  // Nice: input of each inverse step
  MatrixXd x;                          // Linear/Identity: the input
  bool valid = false;
};

struct FlowInverseResult {
  MatrixXd e;                  // length x D
  double logdet_per_token = 0; // log|det d f^-1 / d x|, identical per token
};

// e = f^-1(x). Nice applies layers in reverse order with b -= m(a) and has
// logdet 0 by construction; Linear computes e = W*x with logdet log|det W|.
FlowInverseResult flow_inverse(const FlowParams &params, const MatrixXd &x,
                               FlowCache *cache = nullptr);

// x = f(e); exact inverse of flow_inverse. Linear solves W*x = e by LU.
MatrixXd flow_forward(const FlowParams &params, const MatrixXd &e);

struct FlowGrads {
  std::vector<CouplingLayer> layers;  // same shapes, parity ignored
  MatrixXd W;

  void setZero();
};

FlowGrads zero_flow_grads(const FlowParams &params);

// Gradients of [sum_i grad_e_i . e_i + grad_logdet * logdet_per_token] with
// respect to the flow parameters and to x. Requires the cache produced by
// flow_inverse for the same (params, x).
void flow_backward(const FlowParams &params, const FlowCache &cache,
                   const MatrixXd &grad_e, double grad_logdet,
                   FlowGrads *grad_params, MatrixXd *grad_x);

}  // namespace sflow

#endif  // SFLOW_FLOW_HPP
