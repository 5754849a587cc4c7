#include "sflow/markov.hpp"

namespace sflow {

MarkovParams MarkovParams::zeros(int num_tags) {
  MarkovParams p;
  p.num_tags = num_tags;
  p.init_logits = VectorXd::Zero(num_tags);
  p.trans_logits = MatrixXd::Zero(num_tags, num_tags);
  return p;
}

MarkovGrads zero_markov_grads(const MarkovParams &params) {
  return MarkovGrads{VectorXd::Zero(params.num_tags),
                     MatrixXd::Zero(params.num_tags, params.num_tags)};
}

namespace {

struct LogDists {
  VectorXd init;   // log softmax of init_logits
  MatrixXd trans;  // row-wise log softmax
};

LogDists log_dists(const MarkovParams &params) {
  LogDists d;
  d.init = log_softmax(params.init_logits);
  d.trans.resize(params.num_tags, params.num_tags);
  for (int j = 0; j < params.num_tags; ++j)
    d.trans.row(j) = log_softmax(params.trans_logits.row(j).transpose()).transpose();
  return d;
}

MatrixXd forward_pass(const LogDists &d, const MatrixXd &loglikes) {
  const int l = static_cast<int>(loglikes.rows());
  const int K = static_cast<int>(loglikes.cols());
  MatrixXd alpha(l, K);
  alpha.row(0) = d.init.transpose() + loglikes.row(0);
  for (int i = 1; i < l; ++i)
    for (int k = 0; k < K; ++k)
      alpha(i, k) = logsumexp(alpha.row(i - 1).transpose() + d.trans.col(k)) +
                    loglikes(i, k);
  return alpha;
}

void check_input(const MarkovParams &params, const MatrixXd &loglikes) {
  if (loglikes.rows() < 1)
    throw DataError("markov prior needs at least one token");
  if (loglikes.cols() != params.num_tags)
    throw DataError("emission loglikes have " +
                    std::to_string(loglikes.cols()) + " columns; expected " +
                    std::to_string(params.num_tags));
}

}  // namespace

double forward_logprob(const MarkovParams &params, const MatrixXd &loglikes) {
  check_input(params, loglikes);
  LogDists d = log_dists(params);
  MatrixXd alpha = forward_pass(d, loglikes);
  double log_z = logsumexp(alpha.row(alpha.rows() - 1).transpose());
  require_finite(log_z, "forward log probability");
  return log_z;
}

HmmPosteriors posteriors(const MarkovParams &params, const MatrixXd &loglikes) {
  check_input(params, loglikes);
  const int l = static_cast<int>(loglikes.rows());
  const int K = params.num_tags;
  LogDists d = log_dists(params);
  MatrixXd alpha = forward_pass(d, loglikes);

  MatrixXd beta = MatrixXd::Zero(l, K);
  for (int i = l - 2; i >= 0; --i)
    for (int j = 0; j < K; ++j)
      beta(i, j) = logsumexp(d.trans.row(j).transpose() +
                             loglikes.row(i + 1).transpose() +
                             beta.row(i + 1).transpose());

  HmmPosteriors post;
  post.log_z = logsumexp(alpha.row(l - 1).transpose());
  require_finite(post.log_z, "forward log probability");
  post.gamma = ((alpha + beta).array() - post.log_z).exp();
  post.xi.reserve(l - 1);
  for (int i = 0; i + 1 < l; ++i) {
    MatrixXd slice(K, K);
    for (int j = 0; j < K; ++j)
      for (int k = 0; k < K; ++k)
        slice(j, k) = std::exp(alpha(i, j) + d.trans(j, k) +
                               loglikes(i + 1, k) + beta(i + 1, k) -
                               post.log_z);
    post.xi.push_back(std::move(slice));
  }
  return post;
}

MarkovGrads marginal_grad_logits(const MarkovParams &params,
                                 const HmmPosteriors &post) {
  const int K = params.num_tags;
  MarkovGrads g = zero_markov_grads(params);
  g.init_logits = post.gamma.row(0).transpose() - softmax(params.init_logits);
  MatrixXd counts = MatrixXd::Zero(K, K);
  for (const auto &slice : post.xi) counts += slice;
  for (int j = 0; j < K; ++j) {
    double row_total = counts.row(j).sum();
    g.trans_logits.row(j) =
        counts.row(j) -
        row_total * softmax(params.trans_logits.row(j).transpose()).transpose();
  }
  return g;
}

std::vector<int> viterbi(const MarkovParams &params, const MatrixXd &loglikes) {
  check_input(params, loglikes);
  const int l = static_cast<int>(loglikes.rows());
  const int K = params.num_tags;
  LogDists d = log_dists(params);

  MatrixXd delta(l, K);
  Eigen::MatrixXi back(l, K);
  delta.row(0) = d.init.transpose() + loglikes.row(0);
  back.row(0).setZero();
  for (int i = 1; i < l; ++i) {
    for (int k = 0; k < K; ++k) {
      int best_j = 0;
      double best = delta(i - 1, 0) + d.trans(0, k);
      for (int j = 1; j < K; ++j) {
        double s = delta(i - 1, j) + d.trans(j, k);
        if (s > best) {
          best = s;
          best_j = j;
        }
      }
      delta(i, k) = best + loglikes(i, k);
      back(i, k) = best_j;
    }
  }
  int best_k = 0;
  for (int k = 1; k < K; ++k)
    if (delta(l - 1, k) > delta(l - 1, best_k)) best_k = k;
  std::vector<int> tags(l);
  tags[l - 1] = best_k;
  for (int i = l - 1; i > 0; --i) tags[i - 1] = back(i, tags[i]);
  return tags;
}

double supervised_logprob(const MarkovParams &params,
                          const std::vector<int> &tags, MarkovGrads *grads) {
  if (tags.empty()) throw DataError("markov prior needs at least one token");
  for (int t : tags)
    if (t < 0 || t >= params.num_tags)
      throw DataError("tag id out of range in supervised sequence");
  LogDists d = log_dists(params);
  double logp = d.init(tags[0]);
  for (size_t i = 1; i < tags.size(); ++i)
    logp += d.trans(tags[i - 1], tags[i]);
  if (grads) {
    *grads = zero_markov_grads(params);
    grads->init_logits = -softmax(params.init_logits);
    grads->init_logits(tags[0]) += 1.0;
    for (size_t i = 1; i < tags.size(); ++i) {
      int j = tags[i - 1];
      grads->trans_logits.row(j) -=
          softmax(params.trans_logits.row(j).transpose()).transpose();
      grads->trans_logits(j, tags[i]) += 1.0;
    }
  }
  return logp;
}

}  // namespace sflow
