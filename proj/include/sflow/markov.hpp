#ifndef SFLOW_MARKOV_HPP
#define SFLOW_MARKOV_HPP

#include <vector>

#include "sflow/common.hpp"

namespace sflow {

// First-order Markov chain over tag categories. Probabilities are row-wise
// softmaxes of the logits, so normalization holds by construction.
struct MarkovParams {
  int num_tags = 0;
  VectorXd init_logits;   // K
  MatrixXd trans_logits;  // K x K, row = previous tag

  static MarkovParams zeros(int num_tags);
};

struct MarkovGrads {
  VectorXd init_logits;
  MatrixXd trans_logits;
};

MarkovGrads zero_markov_grads(const MarkovParams &params);

// log sum_z p(z) * prod_i exp(loglikes[i][z_i]), by the forward recursion
// in log space. loglikes is length x K.
double forward_logprob(const MarkovParams &params, const MatrixXd &loglikes);

struct HmmPosteriors {
  MatrixXd gamma;             // length x K, rows sum to 1
  std::vector<MatrixXd> xi;   // length-1 slices, K x K, each sums to 1
  double log_z = 0;
};

HmmPosteriors posteriors(const MarkovParams &params, const MatrixXd &loglikes);

// d log_z / d logits, assembled from the expected counts in `post`.
MarkovGrads marginal_grad_logits(const MarkovParams &params,
                                 const HmmPosteriors &post);

// Argmax tag sequence; ties broken toward the lower tag index.
std::vector<int> viterbi(const MarkovParams &params, const MatrixXd &loglikes);

// log p(tags) of an observed sequence; grads (of the returned value) are
// observed counts minus softmax probabilities on every visited row.
double supervised_logprob(const MarkovParams &params,
                          const std::vector<int> &tags,
                          MarkovGrads *grads = nullptr);

}  // namespace sflow

#endif  // SFLOW_MARKOV_HPP
