#include "sflow/dmv.hpp"

#include <stdexcept>

namespace sflow {

DmvParams DmvParams::zeros(int num_tags) {
  DmvParams p;
  p.num_tags = num_tags;
  p.root_logits = VectorXd::Zero(num_tags);
  for (int d = 0; d < 2; ++d) {
    p.child_logits[d] = MatrixXd::Zero(num_tags, num_tags);
    p.stop_logits[d] = MatrixXd::Zero(num_tags, 2);
  }
  return p;
}

DmvGrads zero_dmv_grads(const DmvParams &params) {
  DmvGrads g;
  g.root_logits = VectorXd::Zero(params.num_tags);
  for (int d = 0; d < 2; ++d) {
    g.child_logits[d] = MatrixXd::Zero(params.num_tags, params.num_tags);
    g.stop_logits[d] = MatrixXd::Zero(params.num_tags, 2);
  }
  return g;
}

void validate_tree(const Heads &heads) {
  const int l = static_cast<int>(heads.size());
  if (l == 0) throw DataError("empty tree");
  int roots = 0;
  for (int h : heads) {
    if (h < 0 || h > l) throw DataError("head index out of range");
    if (h == 0) ++roots;
  }
  if (roots != 1) throw DataError("tree must have exactly one root");
  for (int i = 1; i <= l; ++i) {
    int cur = i, steps = 0;
    while (cur != 0) {
      cur = heads[cur - 1];
      if (++steps > l) throw DataError("cycle in tree");
    }
  }
}

bool is_projective(const Heads &heads) {
  const int l = static_cast<int>(heads.size());
  auto descends_from = [&](int node, int ancestor) {
    int cur = node;
    while (cur != 0) {
      if (cur == ancestor) return true;
      cur = heads[cur - 1];
    }
    return false;
  };
  for (int m = 1; m <= l; ++m) {
    int h = heads[m - 1];
    if (h == 0) continue;
    int lo = std::min(h, m), hi = std::max(h, m);
    for (int k = lo + 1; k < hi; ++k)
      if (!descends_from(k, h)) return false;
  }
  return true;
}

namespace {

// Log-probability tables derived from the logits.
struct LogTables {
  VectorXd root;                  // K
  std::array<MatrixXd, 2> child;  // [dir](head, child), rows log-normalized
  std::array<MatrixXd, 2> stop;   // [dir](head, adjacency) log p_stop
  std::array<MatrixXd, 2> cont;   // log(1 - p_stop)
};

LogTables log_tables(const DmvParams &params) {
  LogTables t;
  t.root = log_softmax(params.root_logits);
  for (int d = 0; d < 2; ++d) {
    t.child[d].resize(params.num_tags, params.num_tags);
    for (int k = 0; k < params.num_tags; ++k)
      t.child[d].row(k) =
          log_softmax(params.child_logits[d].row(k).transpose()).transpose();
    t.stop[d].resize(params.num_tags, 2);
    t.cont[d].resize(params.num_tags, 2);
    for (int k = 0; k < params.num_tags; ++k)
      for (int a = 0; a < 2; ++a) {
        double s = params.stop_logits[d](k, a);
        t.stop[d](k, a) = log_sigmoid(s);
        t.cont[d](k, a) = log_sigmoid(-s);
      }
  }
  return t;
}

void check_sentence(const DmvParams &params, const std::vector<int> &upos) {
  if (upos.empty()) throw DataError("dmv prior needs at least one token");
  for (int t : upos)
    if (t < 0 || t >= params.num_tags)
      throw DataError("tag id out of range for dmv prior");
}

// Inside charts over 0-based positions. Open complete items have made all
// attach/continue decisions inside the span but not the final stop; closed
// items add the stop term. Incomplete items carry the arc h -> m.
struct InsideCharts {
  MatrixXd open_r, open_l;  // (h, outer end)
  MatrixXd inc_r, inc_l;    // (h, m)
  double log_z = kNegInf;

  double closed_r(const LogTables &t, const std::vector<int> &upos, int h,
                  int e) const {
    return open_r(h, e) + t.stop[kRight](upos[h], e == h ? kNoChildYet : kHasChild);
  }
  double closed_l(const LogTables &t, const std::vector<int> &upos, int h,
                  int b) const {
    return open_l(h, b) + t.stop[kLeft](upos[h], b == h ? kNoChildYet : kHasChild);
  }
};

InsideCharts inside_charts(const LogTables &t, const std::vector<int> &upos) {
  const int l = static_cast<int>(upos.size());
  InsideCharts c;
  c.open_r = MatrixXd::Constant(l, l, kNegInf);
  c.open_l = MatrixXd::Constant(l, l, kNegInf);
  c.inc_r = MatrixXd::Constant(l, l, kNegInf);
  c.inc_l = MatrixXd::Constant(l, l, kNegInf);
  for (int h = 0; h < l; ++h) {
    c.open_r(h, h) = 0.0;
    c.open_l(h, h) = 0.0;
  }
  for (int w = 1; w < l; ++w) {
    for (int i = 0; i + w < l; ++i) {
      const int j = i + w;
      // Arc i -> j; q splits i's inner right children from j's left span.
      double acc = kNegInf;
      for (int q = i; q < j; ++q) {
        double term = c.open_r(i, q) +
                      t.cont[kRight](upos[i], q == i ? kNoChildYet : kHasChild) +
                      t.child[kRight](upos[i], upos[j]) +
                      c.closed_l(t, upos, j, q + 1);
        acc = log_add(acc, term);
      }
      c.inc_r(i, j) = acc;
      // Arc j -> i; s splits i's right span from j's inner left children.
      acc = kNegInf;
      for (int s = i; s < j; ++s) {
        double term = c.closed_r(t, upos, i, s) + c.open_l(j, s + 1) +
                      t.cont[kLeft](upos[j], s + 1 == j ? kNoChildYet : kHasChild) +
                      t.child[kLeft](upos[j], upos[i]);
        acc = log_add(acc, term);
      }
      c.inc_l(j, i) = acc;
      // Rightmost attached child m of i completes the right span to j.
      acc = kNegInf;
      for (int m = i + 1; m <= j; ++m)
        acc = log_add(acc, c.inc_r(i, m) + c.closed_r(t, upos, m, j));
      c.open_r(i, j) = acc;
      // Leftmost attached child m of j completes the left span to i.
      acc = kNegInf;
      for (int m = i; m < j; ++m)
        acc = log_add(acc, c.inc_l(j, m) + c.closed_l(t, upos, m, i));
      c.open_l(j, i) = acc;
    }
  }
  VectorXd root_terms(l);
  for (int r = 0; r < l; ++r)
    root_terms(r) = t.root(upos[r]) + c.closed_l(t, upos, r, 0) +
                    c.closed_r(t, upos, r, l - 1);
  c.log_z = logsumexp(root_terms);
  return c;
}

// Expected-count accumulators in probability space.
struct Counts {
  VectorXd root;
  std::array<MatrixXd, 2> child;
  std::array<MatrixXd, 2> stop;  // (tag, adjacency)
  std::array<MatrixXd, 2> cont;

  explicit Counts(int K) {
    root = VectorXd::Zero(K);
    for (int d = 0; d < 2; ++d) {
      child[d] = MatrixXd::Zero(K, K);
      stop[d] = MatrixXd::Zero(K, 2);
      cont[d] = MatrixXd::Zero(K, 2);
    }
  }
};

// Chain rule from event counts to logit gradients.
DmvGrads counts_to_grads(const DmvParams &params, const Counts &n) {
  DmvGrads g = zero_dmv_grads(params);
  g.root_logits = n.root - n.root.sum() * softmax(params.root_logits);
  for (int d = 0; d < 2; ++d) {
    for (int k = 0; k < params.num_tags; ++k) {
      double total = n.child[d].row(k).sum();
      g.child_logits[d].row(k) =
          n.child[d].row(k) -
          total * softmax(params.child_logits[d].row(k).transpose()).transpose();
      for (int a = 0; a < 2; ++a) {
        double sig = sigmoid(params.stop_logits[d](k, a));
        g.stop_logits[d](k, a) =
            n.stop[d](k, a) * (1.0 - sig) - n.cont[d](k, a) * sig;
      }
    }
  }
  return g;
}

}  // namespace

double inside_logprob(const DmvParams &params, const std::vector<int> &upos) {
  check_sentence(params, upos);
  LogTables t = log_tables(params);
  InsideCharts c = inside_charts(t, upos);
  require_finite(c.log_z, "dmv inside log probability");
  return c.log_z;
}

DmvGrads dmv_expected_counts(const DmvParams &params,
                             const std::vector<int> &upos, double *log_z,
                             std::array<MatrixXd, 2> *arc_counts) {
  check_sentence(params, upos);
  const int l = static_cast<int>(upos.size());
  LogTables t = log_tables(params);
  InsideCharts c = inside_charts(t, upos);
  require_finite(c.log_z, "dmv inside log probability");
  if (log_z) *log_z = c.log_z;

  // Adjoints d log_z / d inside(item) for the open and incomplete items.
  MatrixXd a_open_r = MatrixXd::Zero(l, l);
  MatrixXd a_open_l = MatrixXd::Zero(l, l);
  MatrixXd a_inc_r = MatrixXd::Zero(l, l);
  MatrixXd a_inc_l = MatrixXd::Zero(l, l);
  Counts n(params.num_tags);

  // A use of a closed item contributes one stop event and flows through to
  // the open item underneath.
  auto use_closed_r = [&](int h, int e, double w) {
    n.stop[kRight](upos[h], e == h ? kNoChildYet : kHasChild) += w;
    a_open_r(h, e) += w;
  };
  auto use_closed_l = [&](int h, int b, double w) {
    n.stop[kLeft](upos[h], b == h ? kNoChildYet : kHasChild) += w;
    a_open_l(h, b) += w;
  };

  for (int r = 0; r < l; ++r) {
    double w = std::exp(t.root(upos[r]) + c.closed_l(t, upos, r, 0) +
                        c.closed_r(t, upos, r, l - 1) - c.log_z);
    n.root(upos[r]) += w;
    use_closed_l(r, 0, w);
    use_closed_r(r, l - 1, w);
  }

  for (int w = l - 1; w >= 1; --w) {
    for (int i = 0; i + w < l; ++i) {
      const int j = i + w;
      // Open items of this width consume incomplete items of width <= w,
      // so they distribute before the incomplete items below.
      if (a_open_r(i, j) != 0.0 && c.open_r(i, j) != kNegInf) {
        double a = a_open_r(i, j);
        for (int m = i + 1; m <= j; ++m) {
          double share = a * std::exp(c.inc_r(i, m) +
                                      c.closed_r(t, upos, m, j) - c.open_r(i, j));
          if (share == 0.0) continue;
          a_inc_r(i, m) += share;
          use_closed_r(m, j, share);
        }
      }
      if (a_open_l(j, i) != 0.0 && c.open_l(j, i) != kNegInf) {
        double a = a_open_l(j, i);
        for (int m = i; m < j; ++m) {
          double share = a * std::exp(c.inc_l(j, m) +
                                      c.closed_l(t, upos, m, i) - c.open_l(j, i));
          if (share == 0.0) continue;
          a_inc_l(j, m) += share;
          use_closed_l(m, i, share);
        }
      }
      if (a_inc_r(i, j) != 0.0 && c.inc_r(i, j) != kNegInf) {
        double a = a_inc_r(i, j);
        for (int q = i; q < j; ++q) {
          int adj = q == i ? kNoChildYet : kHasChild;
          double share =
              a * std::exp(c.open_r(i, q) + t.cont[kRight](upos[i], adj) +
                           t.child[kRight](upos[i], upos[j]) +
                           c.closed_l(t, upos, j, q + 1) - c.inc_r(i, j));
          if (share == 0.0) continue;
          a_open_r(i, q) += share;
          n.cont[kRight](upos[i], adj) += share;
          n.child[kRight](upos[i], upos[j]) += share;
          use_closed_l(j, q + 1, share);
        }
      }
      if (a_inc_l(j, i) != 0.0 && c.inc_l(j, i) != kNegInf) {
        double a = a_inc_l(j, i);
        for (int s = i; s < j; ++s) {
          int adj = s + 1 == j ? kNoChildYet : kHasChild;
          double share =
              a * std::exp(c.closed_r(t, upos, i, s) + c.open_l(j, s + 1) +
                           t.cont[kLeft](upos[j], adj) +
                           t.child[kLeft](upos[j], upos[i]) - c.inc_l(j, i));
          if (share == 0.0) continue;
          use_closed_r(i, s, share);
          a_open_l(j, s + 1) += share;
          n.cont[kLeft](upos[j], adj) += share;
          n.child[kLeft](upos[j], upos[i]) += share;
        }
      }
    }
  }

  if (arc_counts) *arc_counts = n.child;
  return counts_to_grads(params, n);
}

double tree_logprob(const DmvParams &params, const std::vector<int> &upos,
                    const Heads &heads, DmvGrads *grads) {
  check_sentence(params, upos);
  if (heads.size() != upos.size())
    throw DataError("tree length does not match sentence length");
  validate_tree(heads);
  const int l = static_cast<int>(upos.size());
  LogTables t = log_tables(params);

  Counts n(params.num_tags);
  double logp = 0.0;
  for (int m = 0; m < l; ++m) {
    if (heads[m] == 0) {
      logp += t.root(upos[m]);
      n.root(upos[m]) += 1.0;
    }
  }
  for (int h = 0; h < l; ++h) {
    int n_children[2] = {0, 0};
    for (int m = 0; m < l; ++m) {
      if (heads[m] != h + 1) continue;
      int dir = m < h ? kLeft : kRight;
      int adj = n_children[dir] == 0 ? kNoChildYet : kHasChild;
      logp += t.cont[dir](upos[h], adj) + t.child[dir](upos[h], upos[m]);
      n.cont[dir](upos[h], adj) += 1.0;
      n.child[dir](upos[h], upos[m]) += 1.0;
      ++n_children[dir];
    }
    for (int dir = 0; dir < 2; ++dir) {
      int adj = n_children[dir] == 0 ? kNoChildYet : kHasChild;
      logp += t.stop[dir](upos[h], adj);
      n.stop[dir](upos[h], adj) += 1.0;
    }
  }
  if (grads) *grads = counts_to_grads(params, n);
  return logp;
}

namespace {

// Max-product charts with backpointers; same item layout as inside_charts.
struct ViterbiCharts {
  MatrixXd open_r, open_l, inc_r, inc_l;
  Eigen::MatrixXi b_open_r, b_open_l, b_inc_r, b_inc_l;

  double closed_r(const LogTables &t, const std::vector<int> &upos, int h,
                  int e) const {
    return open_r(h, e) + t.stop[kRight](upos[h], e == h ? kNoChildYet : kHasChild);
  }
  double closed_l(const LogTables &t, const std::vector<int> &upos, int h,
                  int b) const {
    return open_l(h, b) + t.stop[kLeft](upos[h], b == h ? kNoChildYet : kHasChild);
  }
};

void decode_open_r(const ViterbiCharts &c, int h, int e, Heads &heads);
void decode_open_l(const ViterbiCharts &c, int h, int b, Heads &heads);

void decode_inc_r(const ViterbiCharts &c, int h, int m, Heads &heads) {
  int q = c.b_inc_r(h, m);
  decode_open_r(c, h, q, heads);
  decode_open_l(c, m, q + 1, heads);
}

void decode_inc_l(const ViterbiCharts &c, int h, int m, Heads &heads) {
  int s = c.b_inc_l(h, m);
  decode_open_r(c, m, s, heads);
  decode_open_l(c, h, s + 1, heads);
}

void decode_open_r(const ViterbiCharts &c, int h, int e, Heads &heads) {
  if (e == h) return;
  int m = c.b_open_r(h, e);
  heads[m] = h + 1;
  decode_inc_r(c, h, m, heads);
  decode_open_r(c, m, e, heads);
}

void decode_open_l(const ViterbiCharts &c, int h, int b, Heads &heads) {
  if (b == h) return;
  int m = c.b_open_l(h, b);
  heads[m] = h + 1;
  decode_inc_l(c, h, m, heads);
  decode_open_l(c, m, b, heads);
}

}  // namespace

Heads viterbi_parse(const DmvParams &params, const std::vector<int> &upos,
                    double *best_score) {
  check_sentence(params, upos);
  const int l = static_cast<int>(upos.size());
  LogTables t = log_tables(params);

  ViterbiCharts c;
  c.open_r = MatrixXd::Constant(l, l, kNegInf);
  c.open_l = MatrixXd::Constant(l, l, kNegInf);
  c.inc_r = MatrixXd::Constant(l, l, kNegInf);
  c.inc_l = MatrixXd::Constant(l, l, kNegInf);
  c.b_open_r.setConstant(l, l, -1);
  c.b_open_l.setConstant(l, l, -1);
  c.b_inc_r.setConstant(l, l, -1);
  c.b_inc_l.setConstant(l, l, -1);
  for (int h = 0; h < l; ++h) {
    c.open_r(h, h) = 0.0;
    c.open_l(h, h) = 0.0;
  }

  for (int w = 1; w < l; ++w) {
    for (int i = 0; i + w < l; ++i) {
      const int j = i + w;
      for (int q = i; q < j; ++q) {
        double term = c.open_r(i, q) +
                      t.cont[kRight](upos[i], q == i ? kNoChildYet : kHasChild) +
                      t.child[kRight](upos[i], upos[j]) +
                      c.closed_l(t, upos, j, q + 1);
        if (term > c.inc_r(i, j)) {
          c.inc_r(i, j) = term;
          c.b_inc_r(i, j) = q;
        }
      }
      for (int s = i; s < j; ++s) {
        double term = c.closed_r(t, upos, i, s) + c.open_l(j, s + 1) +
                      t.cont[kLeft](upos[j], s + 1 == j ? kNoChildYet : kHasChild) +
                      t.child[kLeft](upos[j], upos[i]);
        if (term > c.inc_l(j, i)) {
          c.inc_l(j, i) = term;
          c.b_inc_l(j, i) = s;
        }
      }
      for (int m = i + 1; m <= j; ++m) {
        double term = c.inc_r(i, m) + c.closed_r(t, upos, m, j);
        if (term > c.open_r(i, j)) {
          c.open_r(i, j) = term;
          c.b_open_r(i, j) = m;
        }
      }
      for (int m = i; m < j; ++m) {
        double term = c.inc_l(j, m) + c.closed_l(t, upos, m, i);
        if (term > c.open_l(j, i)) {
          c.open_l(j, i) = term;
          c.b_open_l(j, i) = m;
        }
      }
    }
  }

  int best_r = 0;
  double best = kNegInf;
  for (int r = 0; r < l; ++r) {
    double term = t.root(upos[r]) + c.closed_l(t, upos, r, 0) +
                  c.closed_r(t, upos, r, l - 1);
    if (term > best) {
      best = term;
      best_r = r;
    }
  }
  if (best_score) *best_score = best;

  Heads heads(l, -1);
  heads[best_r] = 0;
  decode_open_l(c, best_r, 0, heads);
  decode_open_r(c, best_r, l - 1, heads);

  validate_tree(heads);
  if (!is_projective(heads))
    throw std::logic_error("viterbi_parse produced a non-projective tree");
  return heads;
}

}  // namespace sflow
