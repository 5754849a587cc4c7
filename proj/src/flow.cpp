#include "sflow/flow.hpp"

#include <Eigen/LU>

namespace sflow {

FlowKind flow_kind_from_string(const std::string &name) {
  if (name == "identity") return FlowKind::Identity;
  if (name == "linear") return FlowKind::Linear;
  if (name == "nice") return FlowKind::Nice;
  throw DataError("unknown flow kind '" + name + "'");
}

std::string to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::Identity: return "identity";
    case FlowKind::Linear: return "linear";
    case FlowKind::Nice: return "nice";
  }
  return "?";
}

FlowParams FlowParams::identity(int dim) {
  FlowParams p;
  p.kind = FlowKind::Identity;
  p.dim = dim;
  return p;
}

FlowParams FlowParams::nice(int dim, int num_layers, int hidden, Rng &rng) {
  FlowParams p;
  p.kind = FlowKind::Nice;
  p.dim = dim;
  if (dim % 2 != 0)
    throw DataError("nice flow requires an even dimension, got " +
                    std::to_string(dim));
  const int half = dim / 2;
  const int h = hidden > 0 ? hidden : dim;
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(half));
  for (int i = 0; i < num_layers; ++i) {
    CouplingLayer layer;
    layer.W1 = uniform_matrix(h, half, w1_scale, rng);
    layer.b1 = VectorXd::Zero(h);
    layer.W2 = MatrixXd::Zero(half, h);
    layer.b2 = VectorXd::Zero(half);
    layer.transform_low = (i % 2 == 0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

FlowParams FlowParams::linear(int dim) {
  FlowParams p;
  p.kind = FlowKind::Linear;
  p.dim = dim;
  p.W = MatrixXd::Identity(dim, dim);
  return p;
}

double linear_log_abs_det(const MatrixXd &W) {
  Eigen::PartialPivLU<MatrixXd> lu(W);
  double logdet = 0.0;
  for (int i = 0; i < W.rows(); ++i) {
    double d = std::abs(lu.matrixLU()(i, i));
    if (d <= 0.0 || !std::isfinite(d))
      throw NumericalError("linear flow matrix is singular");
    logdet += std::log(d);
  }
  return logdet;
}

void validate_flow(const FlowParams &params) {
  switch (params.kind) {
    case FlowKind::Identity:
      break;
    case FlowKind::Linear: {
      if (params.W.rows() != params.dim || params.W.cols() != params.dim)
        throw DataError("linear flow matrix shape mismatch");
      double logdet = linear_log_abs_det(params.W);
      if (logdet < std::log(1e-12))
        throw NumericalError("linear flow |det W| below 1e-12");
      break;
    }
    case FlowKind::Nice: {
      if (params.dim % 2 != 0)
        throw DataError("nice flow requires an even dimension");
      for (int i = 0; i < params.num_layers(); ++i) {
        if (i > 0 &&
            params.layers[i].transform_low == params.layers[i - 1].transform_low)
          throw DataError("nice coupling parities must alternate (layer " +
                          std::to_string(i) + ")");
      }
      break;
    }
  }
}

namespace {

// Column blocks of the kept (a) and transformed (b) halves.
inline void halves(const CouplingLayer &layer, int dim, int &a_off, int &b_off) {
  const int half = dim / 2;
  if (layer.transform_low) {
    b_off = 0;
    a_off = half;
  } else {
    a_off = 0;
    b_off = half;
  }
}

// m(A) for all rows at once; optionally keeps the hidden pre-activations.
MatrixXd coupling_shift(const CouplingLayer &layer, const MatrixXd &A,
                        MatrixXd *pre_out = nullptr) {
  MatrixXd pre = (A * layer.W1.transpose()).rowwise() + layer.b1.transpose();
  MatrixXd hidden = pre.cwiseMax(0.0);
  if (pre_out) *pre_out = std::move(pre);
  return (hidden * layer.W2.transpose()).rowwise() + layer.b2.transpose();
}

}  // namespace

FlowInverseResult flow_inverse(const FlowParams &params, const MatrixXd &x,
                               FlowCache *cache) {
  require_finite(x, "flow input");
  FlowInverseResult result;
  if (cache) {
    cache->layer_inputs.clear();
    cache->valid = true;
  }
  switch (params.kind) {
    case FlowKind::Identity:
      result.e = x;
      result.logdet_per_token = 0.0;
      if (cache) cache->x = x;
      break;
    case FlowKind::Linear:
      result.e = x * params.W.transpose();
      result.logdet_per_token = linear_log_abs_det(params.W);
      if (cache) cache->x = x;
      break;
    case FlowKind::Nice: {
      const int half = params.dim / 2;
      MatrixXd cur = x;
      for (int i = params.num_layers() - 1; i >= 0; --i) {
        const CouplingLayer &layer = params.layers[i];
        if (cache) cache->layer_inputs.push_back(cur);
        int a_off, b_off;
        halves(layer, params.dim, a_off, b_off);
        MatrixXd shift = coupling_shift(layer, cur.middleCols(a_off, half));
        cur.middleCols(b_off, half) -= shift;
        if (!cur.allFinite())
          throw NumericalError("non-finite values after inverting coupling layer " +
                               std::to_string(i));
      }
      result.e = std::move(cur);
      result.logdet_per_token = 0.0;  // additive couplings are volume preserving
      break;
    }
  }
  return result;
}

MatrixXd flow_forward(const FlowParams &params, const MatrixXd &e) {
  switch (params.kind) {
    case FlowKind::Identity:
      return e;
    case FlowKind::Linear: {
      Eigen::PartialPivLU<MatrixXd> lu(params.W);
      double det = std::abs(lu.determinant());
      if (!(det > 0.0) || !std::isfinite(det))
        throw NumericalError("linear flow matrix is singular");
      // Solve W * x_i = e_i for every row.
      return lu.solve(e.transpose()).transpose();
    }
    case FlowKind::Nice: {
      const int half = params.dim / 2;
      MatrixXd cur = e;
      for (int i = 0; i < params.num_layers(); ++i) {
        const CouplingLayer &layer = params.layers[i];
        int a_off, b_off;
        halves(layer, params.dim, a_off, b_off);
        MatrixXd shift = coupling_shift(layer, cur.middleCols(a_off, half));
        cur.middleCols(b_off, half) += shift;
        if (!cur.allFinite())
          throw NumericalError("non-finite values in coupling layer " +
                               std::to_string(i));
      }
      return cur;
    }
  }
  throw NumericalError("unreachable flow kind");
}

void FlowGrads::setZero() {
  for (auto &layer : layers) {
    layer.W1.setZero();
    layer.b1.setZero();
    layer.W2.setZero();
    layer.b2.setZero();
  }
  W.setZero();
}

FlowGrads zero_flow_grads(const FlowParams &params) {
  FlowGrads g;
  if (params.kind == FlowKind::Nice) {
    for (const auto &layer : params.layers) {
      CouplingLayer zl;
      zl.W1 = MatrixXd::Zero(layer.W1.rows(), layer.W1.cols());
      zl.b1 = VectorXd::Zero(layer.b1.size());
      zl.W2 = MatrixXd::Zero(layer.W2.rows(), layer.W2.cols());
      zl.b2 = VectorXd::Zero(layer.b2.size());
      g.layers.push_back(std::move(zl));
    }
  } else if (params.kind == FlowKind::Linear) {
    g.W = MatrixXd::Zero(params.W.rows(), params.W.cols());
  }
  return g;
}

void flow_backward(const FlowParams &params, const FlowCache &cache,
                   const MatrixXd &grad_e, double grad_logdet,
                   FlowGrads *grad_params, MatrixXd *grad_x) {
  if (!cache.valid) throw NumericalError("flow_backward called without cache");
  *grad_params = zero_flow_grads(params);
  switch (params.kind) {
    case FlowKind::Identity:
      *grad_x = grad_e;
      break;
    case FlowKind::Linear: {
      // e = W x per token, plus grad_logdet * log|det W|.
      grad_params->W = grad_e.transpose() * cache.x;
      if (grad_logdet != 0.0)
        grad_params->W += grad_logdet * params.W.inverse().transpose();
      *grad_x = grad_e * params.W;
      break;
    }
    case FlowKind::Nice: {
      const int half = params.dim / 2;
      const int L = params.num_layers();
      if (static_cast<int>(cache.layer_inputs.size()) != L)
        throw NumericalError("flow cache does not match layer count");
      MatrixXd grad = grad_e;
      // Inverse pass visited layers L-1..0; retrace in opposite order.
      for (int step = L - 1; step >= 0; --step) {
        const int layer_idx = L - 1 - step;
        const CouplingLayer &layer = params.layers[layer_idx];
        CouplingLayer &g = grad_params->layers[layer_idx];
        const MatrixXd &input = cache.layer_inputs[step];
        int a_off, b_off;
        halves(layer, params.dim, a_off, b_off);
        const auto A = input.middleCols(a_off, half);

        MatrixXd pre = (A * layer.W1.transpose()).rowwise() + layer.b1.transpose();
        MatrixXd hidden = pre.cwiseMax(0.0);

        // out_b = b - m(a): the shift enters with a minus sign.
        MatrixXd g_m = -grad.middleCols(b_off, half);
        g.W2 += g_m.transpose() * hidden;
        g.b2 += g_m.colwise().sum().transpose();
        MatrixXd g_hidden = (g_m * layer.W2).cwiseProduct(
            (pre.array() > 0.0).cast<double>().matrix());
        g.W1 += g_hidden.transpose() * A;
        g.b1 += g_hidden.colwise().sum().transpose();
        grad.middleCols(a_off, half) += g_hidden * layer.W1;
      }
      *grad_x = std::move(grad);
      break;
    }
  }
}

}  // namespace sflow
