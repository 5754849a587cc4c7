#ifndef SFLOW_DMV_HPP
#define SFLOW_DMV_HPP

#include <array>
#include <vector>

#include "sflow/common.hpp"

namespace sflow {

// Directions and adjacency states of the valence model. A head decides
// stop/continue before each attachment attempt; the decision is conditioned
// on whether it already has a child in that direction.
enum Dir : int { kLeft = 0, kRight = 1 };
enum Adjacency : int { kNoChildYet = 0, kHasChild = 1 };

// Dependency model with valence over observed tag sequences. Child choices
// are per-(head, direction) softmaxes; stop decisions are Bernoulli with
// p_stop = sigmoid(stop_logit).
struct DmvParams {
  int num_tags = 0;
  VectorXd root_logits;                  // K
  std::array<MatrixXd, 2> child_logits;  // [dir](head tag, child tag)
  std::array<MatrixXd, 2> stop_logits;   // [dir](head tag, adjacency)

  static DmvParams zeros(int num_tags);
};

struct DmvGrads {
  VectorXd root_logits;
  std::array<MatrixXd, 2> child_logits;
  std::array<MatrixXd, 2> stop_logits;
};

DmvGrads zero_dmv_grads(const DmvParams &params);

// heads[i] is 0 for the root token, otherwise the 1-based head position.
using Heads = std::vector<int>;

// Range, single-root and acyclicity checks; throws DataError.
void validate_tree(const Heads &heads);

// True when every arc (h, m) covers only descendants of h; with a single
// root this is equivalent to the no-crossing-arcs picture.
bool is_projective(const Heads &heads);

// log of the summed generative probability over all single-root projective
// trees of the tag sequence, by an O(l^3) split-head dynamic program.
double inside_logprob(const DmvParams &params, const std::vector<int> &upos);

// Gradient of inside_logprob with respect to every logit, via inside-outside
// expected counts. Optionally also returns the inside log probability and
// the expected arc-count matrix [dir](head tag, child tag).
DmvGrads dmv_expected_counts(const DmvParams &params,
                             const std::vector<int> &upos,
                             double *log_z = nullptr,
                             std::array<MatrixXd, 2> *arc_counts = nullptr);

// Deterministic generative score of one tree; works for non-projective
// trees too (valence read off the tree's own adjacency structure).
double tree_logprob(const DmvParams &params, const std::vector<int> &upos,
                    const Heads &heads, DmvGrads *grads = nullptr);

// Argmax single-root projective tree. Ties prefer earlier split points,
// then left attachment. The returned tree is validated structurally.
Heads viterbi_parse(const DmvParams &params, const std::vector<int> &upos,
                    double *best_score = nullptr);

}  // namespace sflow

#endif  // SFLOW_DMV_HPP
