// Test-only reference implementations: brute-force enumeration over tag
// sequences and projective trees, an independent generative-story scorer,
// and a central finite-difference checker. These deliberately avoid the
// library's dynamic programs so that agreement is meaningful.

#ifndef SFLOW_TESTS_ORACLES_HPP
#define SFLOW_TESTS_ORACLES_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "sflow/common.hpp"
#include "sflow/dmv.hpp"
#include "sflow/markov.hpp"

namespace oracle {

using sflow::MatrixXd;
using sflow::VectorXd;

inline double lse(const std::vector<double> &v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline VectorXd norm_log(const VectorXd &logits) {
  VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return (e / e.sum()).array().log();
}

// --- HMM by enumeration over all K^l sequences ------------------------------

struct HmmEnum {
  double log_z;
  MatrixXd gamma;                 // l x K
  std::vector<MatrixXd> xi;       // (l-1) slices K x K
  std::vector<int> best_path;
  double best_score;
};

inline HmmEnum hmm_enumerate(const sflow::MarkovParams &params,
                             const MatrixXd &loglikes) {
  const int l = static_cast<int>(loglikes.rows());
  const int K = params.num_tags;
  VectorXd lpi = norm_log(params.init_logits);
  MatrixXd la(K, K);
  for (int j = 0; j < K; ++j)
    la.row(j) = norm_log(params.trans_logits.row(j).transpose()).transpose();

  HmmEnum out;
  out.gamma = MatrixXd::Zero(l, K);
  out.xi.assign(l - 1, MatrixXd::Zero(K, K));
  out.best_score = -std::numeric_limits<double>::infinity();

  std::vector<int> z(l, 0);
  std::vector<double> scores;
  std::vector<std::vector<int>> paths;
  while (true) {
    double s = lpi(z[0]) + loglikes(0, z[0]);
    for (int i = 1; i < l; ++i) s += la(z[i - 1], z[i]) + loglikes(i, z[i]);
    scores.push_back(s);
    paths.push_back(z);
    if (s > out.best_score) {
      out.best_score = s;
      out.best_path = z;
    }
    int pos = l - 1;
    while (pos >= 0 && ++z[pos] == K) z[pos--] = 0;
    if (pos < 0) break;
  }
  out.log_z = lse(scores);
  for (size_t p = 0; p < paths.size(); ++p) {
    double w = std::exp(scores[p] - out.log_z);
    for (int i = 0; i < l; ++i) out.gamma(i, paths[p][i]) += w;
    for (int i = 0; i + 1 < l; ++i)
      out.xi[i](paths[p][i], paths[p][i + 1]) += w;
  }
  return out;
}

// --- projective single-root trees -------------------------------------------

inline bool oracle_projective(const std::vector<int> &heads) {
  const int l = static_cast<int>(heads.size());
  int roots = 0;
  for (int h : heads)
    if (h == 0) ++roots;
  if (roots != 1) return false;
  for (int i = 1; i <= l; ++i) {  // acyclic
    int cur = i, steps = 0;
    while (cur != 0) {
      cur = heads[cur - 1];
      if (++steps > l) return false;
    }
  }
  for (int m = 1; m <= l; ++m) {  // arcs cover only descendants of the head
    int h = heads[m - 1];
    if (h == 0) continue;
    int lo = std::min(h, m), hi = std::max(h, m);
    for (int k = lo + 1; k < hi; ++k) {
      int cur = k;
      bool under = false;
      while (cur != 0) {
        if (cur == h) {
          under = true;
          break;
        }
        cur = heads[cur - 1];
      }
      if (!under) return false;
    }
  }
  return true;
}

inline std::vector<std::vector<int>> projective_trees(int l) {
  std::vector<std::vector<int>> trees;
  std::vector<int> heads(l, 0);
  while (true) {
    if (oracle_projective(heads)) trees.push_back(heads);
    int pos = l - 1;
    while (pos >= 0 && ++heads[pos] == l + 1) heads[pos--] = 0;
    if (pos < 0) break;
  }
  return trees;
}

// Generative score of one tree, written straight from the story: root
// choice, then per head and direction a continue+child term per attachment
// (first one adjacent) and a final stop term.
inline double score_tree(const sflow::DmvParams &params,
                         const std::vector<int> &upos,
                         const std::vector<int> &heads) {
  const int l = static_cast<int>(upos.size());
  VectorXd lroot = norm_log(params.root_logits);
  auto lstop = [&](int tag, int dir, int adj) {
    double s = params.stop_logits[dir](tag, adj);
    return -std::log1p(std::exp(-std::abs(s))) + std::min(s, 0.0);
  };
  auto lcont = [&](int tag, int dir, int adj) {
    double s = -params.stop_logits[dir](tag, adj);
    return -std::log1p(std::exp(-std::abs(s))) + std::min(s, 0.0);
  };
  std::array<MatrixXd, 2> lchild;
  for (int d = 0; d < 2; ++d) {
    lchild[d].resize(params.num_tags, params.num_tags);
    for (int k = 0; k < params.num_tags; ++k)
      lchild[d].row(k) =
          norm_log(params.child_logits[d].row(k).transpose()).transpose();
  }

  double score = 0;
  for (int m = 0; m < l; ++m)
    if (heads[m] == 0) score += lroot(upos[m]);
  for (int h = 0; h < l; ++h) {
    for (int dir = 0; dir < 2; ++dir) {
      std::vector<int> kids;
      for (int m = 0; m < l; ++m)
        if (heads[m] == h + 1 && (dir == sflow::kLeft ? m < h : m > h))
          kids.push_back(m);
      for (size_t j = 0; j < kids.size(); ++j) {
        score += lcont(upos[h], dir, j == 0 ? 0 : 1);
        score += lchild[dir](upos[h], upos[kids[j]]);
      }
      score += lstop(upos[h], dir, kids.empty() ? 0 : 1);
    }
  }
  return score;
}

// --- finite differences ------------------------------------------------------

// Central differences of f at x; returns max relative error against grad.
// Relative error uses max(|analytic|, |numeric|, floor) as the denominator.
inline double max_rel_error(const std::function<double(const VectorXd &)> &f,
                            const VectorXd &x, const VectorXd &grad,
                            double step = 1e-4, double floor = 1e-6) {
  double worst = 0;
  VectorXd p = x;
  for (int i = 0; i < x.size(); ++i) {
    p(i) = x(i) + step;
    double hi = f(p);
    p(i) = x(i) - step;
    double lo = f(p);
    p(i) = x(i);
    double numeric = (hi - lo) / (2 * step);
    double denom = std::max({std::abs(numeric), std::abs(grad(i)), floor});
    worst = std::max(worst, std::abs(numeric - grad(i)) / denom);
  }
  return worst;
}

}  // namespace oracle

#endif  // SFLOW_TESTS_ORACLES_HPP
