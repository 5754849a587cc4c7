#include "sflow/model.hpp"

namespace sflow {

Task task_from_string(const std::string &name) {
  if (name == "tag") return Task::Tag;
  if (name == "parse") return Task::Parse;
  throw DataError("unknown task '" + name + "'");
}

std::string to_string(Task task) {
  return task == Task::Tag ? "tag" : "parse";
}

int ModelParams::num_tags() const { return emission.num_cats; }

void ModelParams::validate() const {
  const int K = emission.num_cats;
  if (task == Task::Tag) {
    if (!std::holds_alternative<MarkovParams>(prior))
      throw DataError("tag task requires a markov prior");
    if (markov().num_tags != K) throw DataError("prior/emission K mismatch");
    if (tag_embeddings.size() != 0)
      throw DataError("tag embeddings are a parsing-only feature");
  } else {
    if (!std::holds_alternative<DmvParams>(prior))
      throw DataError("parse task requires a dmv prior");
    if (dmv().num_tags != K) throw DataError("prior/emission K mismatch");
    if (tag_embeddings.size() != 0 && tag_embeddings.rows() != K)
      throw DataError("tag embedding rows must equal K");
  }
  if (emission.dim != flow.dim)
    throw DataError("emission dimension " + std::to_string(emission.dim) +
                    " does not match flow dimension " +
                    std::to_string(flow.dim));
  validate_flow(flow);
}

ModelParams ModelParams::init(Task task, int num_tags, int word_dim,
                              int tag_dim, FlowKind flow_kind,
                              int coupling_layers, Rng &rng) {
  if (task == Task::Tag && tag_dim != 0)
    throw DataError("tag task does not use tag embeddings");
  ModelParams p;
  p.task = task;
  const int dim = word_dim + tag_dim;
  if (task == Task::Tag)
    p.prior = MarkovParams::zeros(num_tags);
  else
    p.prior = DmvParams::zeros(num_tags);
  p.emission = EmissionParams::init(num_tags, dim, rng);
  switch (flow_kind) {
    case FlowKind::Identity: p.flow = FlowParams::identity(dim); break;
    case FlowKind::Linear: p.flow = FlowParams::linear(dim); break;
    case FlowKind::Nice: p.flow = FlowParams::nice(dim, coupling_layers, dim, rng); break;
  }
  if (tag_dim > 0) p.tag_embeddings = gaussian_matrix(num_tags, tag_dim, 0.1, rng);
  p.validate();
  return p;
}

ModelGrads zero_model_grads(const ModelParams &params) {
  ModelGrads g;
  if (params.task == Task::Tag)
    g.prior = zero_markov_grads(params.markov());
  else
    g.prior = zero_dmv_grads(params.dmv());
  g.emission = zero_emission_grads(params.emission);
  g.flow = zero_flow_grads(params.flow);
  g.tag_embeddings = MatrixXd::Zero(params.tag_embeddings.rows(),
                                    params.tag_embeddings.cols());
  return g;
}

// --- flat parameter view ---------------------------------------------------

namespace {

template <typename P, typename F>
void visit_param_tensors(P &p, F &&f) {
  if (std::holds_alternative<MarkovParams>(p.prior)) {
    auto &m = std::get<MarkovParams>(p.prior);
    f("prior.init_logits", m.init_logits);
    f("prior.trans_logits", m.trans_logits);
  } else {
    auto &d = std::get<DmvParams>(p.prior);
    f("prior.root_logits", d.root_logits);
    f("prior.child_logits.left", d.child_logits[kLeft]);
    f("prior.child_logits.right", d.child_logits[kRight]);
    f("prior.stop_logits.left", d.stop_logits[kLeft]);
    f("prior.stop_logits.right", d.stop_logits[kRight]);
  }
  f("emission.means", p.emission.means);
  f("emission.log_vars", p.emission.log_vars);
  if (p.flow.kind == FlowKind::Nice) {
    for (size_t i = 0; i < p.flow.layers.size(); ++i) {
      auto &layer = p.flow.layers[i];
      std::string prefix = "flow.nice." + std::to_string(i) + ".";
      f(prefix + "W1", layer.W1);
      f(prefix + "b1", layer.b1);
      f(prefix + "W2", layer.W2);
      f(prefix + "b2", layer.b2);
    }
  } else if (p.flow.kind == FlowKind::Linear) {
    f("flow.linear.W", p.flow.W);
  }
  if (p.tag_embeddings.size() != 0) f("tag_embeddings", p.tag_embeddings);
}

template <typename G, typename F>
void visit_grad_tensors(G &g, F &&f) {
  if (std::holds_alternative<MarkovGrads>(g.prior)) {
    auto &m = std::get<MarkovGrads>(g.prior);
    f(m.init_logits);
    f(m.trans_logits);
  } else {
    auto &d = std::get<DmvGrads>(g.prior);
    f(d.root_logits);
    f(d.child_logits[kLeft]);
    f(d.child_logits[kRight]);
    f(d.stop_logits[kLeft]);
    f(d.stop_logits[kRight]);
  }
  f(g.emission.means);
  f(g.emission.log_vars);
  for (auto &layer : g.flow.layers) {
    f(layer.W1);
    f(layer.b1);
    f(layer.W2);
    f(layer.b2);
  }
  if (g.flow.W.size() != 0) f(g.flow.W);
  if (g.tag_embeddings.size() != 0) f(g.tag_embeddings);
}

int group_of(const std::string &name) {
  if (name.rfind("prior.", 0) == 0) return 0;
  if (name.rfind("emission.", 0) == 0) return 1;
  if (name.rfind("flow.", 0) == 0) return 2;
  return 3;  // tag_embeddings
}

}  // namespace

GroupSpans group_spans(const ModelParams &params) {
  int sizes[4] = {0, 0, 0, 0};
  visit_param_tensors(params, [&](const std::string &name, const auto &t) {
    sizes[group_of(name)] += static_cast<int>(t.size());
  });
  GroupSpans s;
  s.prior = {0, sizes[0]};
  s.emission = {sizes[0], sizes[1]};
  s.flow = {sizes[0] + sizes[1], sizes[2]};
  s.tag = {sizes[0] + sizes[1] + sizes[2], sizes[3]};
  s.total = sizes[0] + sizes[1] + sizes[2] + sizes[3];
  return s;
}

VectorXd flatten(const ModelParams &params) {
  VectorXd flat(group_spans(params).total);
  int off = 0;
  visit_param_tensors(params, [&](const std::string &, const auto &t) {
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) flat(off++) = t(i, j);
  });
  return flat;
}

VectorXd flatten(const ModelGrads &grads) {
  int total = 0;
  visit_grad_tensors(grads, [&](const auto &t) { total += static_cast<int>(t.size()); });
  VectorXd flat(total);
  int off = 0;
  visit_grad_tensors(grads, [&](const auto &t) {
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) flat(off++) = t(i, j);
  });
  return flat;
}

void unflatten(const VectorXd &flat, ModelParams *params) {
  if (flat.size() != group_spans(*params).total)
    throw DataError("flat parameter vector has wrong size");
  int off = 0;
  visit_param_tensors(*params, [&](const std::string &, auto &t) {
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) t(i, j) = flat(off++);
  });
}

std::vector<NamedTensor> tensor_manifest(const ModelParams &params) {
  std::vector<NamedTensor> manifest;
  visit_param_tensors(params, [&](const std::string &name, const auto &t) {
    NamedTensor nt;
    nt.name = name;
    if (t.cols() == 1)
      nt.shape = {static_cast<int>(t.rows())};
    else
      nt.shape = {static_cast<int>(t.rows()), static_cast<int>(t.cols())};
    manifest.push_back(std::move(nt));
  });
  return manifest;
}

// --- losses ----------------------------------------------------------------

namespace {

void check_obs(const ModelParams &params, const ObservedSequence &obs) {
  if (obs.length() < 1) throw DataError("empty observation sequence");
  if (obs.dim() != params.dim())
    throw DataError("observation dimension " + std::to_string(obs.dim()) +
                    " does not match model dimension " +
                    std::to_string(params.dim()));
  for (int t : obs.upos)
    if (t < 0 || t >= params.num_tags())
      throw DataError("UPOS id out of range for model");
}

MatrixXd one_hot_weights(const std::vector<int> &tags, int K) {
  MatrixXd w = MatrixXd::Zero(static_cast<int>(tags.size()), K);
  for (size_t i = 0; i < tags.size(); ++i) w(static_cast<int>(i), tags[i]) = 1.0;
  return w;
}

// Shared tail of every loss: emission/flow backward for the objective
// (log-likelihood) direction, then negation into negloglik gradients.
void assemble(const ModelParams &params, const ObservedSequence &obs,
              const FlowCache &cache, const MatrixXd &e,
              const MatrixXd &weights, double obj, LossResult *out) {
  const double l = static_cast<double>(obs.length());
  EmissionGrads eg;
  MatrixXd grad_e;
  emission_backward(params.emission, e, weights, &eg, &grad_e);
  FlowGrads fg = zero_flow_grads(params.flow);
  MatrixXd grad_x;
  flow_backward(params.flow, cache, grad_e, l, &fg, &grad_x);

  out->negloglik = -obj;
  require_finite(out->negloglik, "negative log likelihood");
  out->grads.emission = std::move(eg);
  out->grads.flow = std::move(fg);
  out->grads.tag_embeddings = MatrixXd::Zero(params.tag_embeddings.rows(),
                                             params.tag_embeddings.cols());
  const int dt = params.tag_dim();
  if (dt > 0)
    for (int i = 0; i < obs.length(); ++i)
      out->grads.tag_embeddings.row(obs.upos[i]) += grad_x.row(i).tail(dt);

  // Everything above is d(obj); losses report d(-obj).
  out->grads.emission.means *= -1.0;
  out->grads.emission.log_vars *= -1.0;
  for (auto &layer : out->grads.flow.layers) {
    layer.W1 *= -1.0;
    layer.b1 *= -1.0;
    layer.W2 *= -1.0;
    layer.b2 *= -1.0;
  }
  if (out->grads.flow.W.size() != 0) out->grads.flow.W *= -1.0;
  out->grads.tag_embeddings *= -1.0;
}

void negate_markov(MarkovGrads &g) {
  g.init_logits *= -1.0;
  g.trans_logits *= -1.0;
}

void negate_dmv(DmvGrads &g) {
  g.root_logits *= -1.0;
  for (int d = 0; d < 2; ++d) {
    g.child_logits[d] *= -1.0;
    g.stop_logits[d] *= -1.0;
  }
}

}  // namespace

LossResult unsupervised_tag_loss(const ModelParams &params,
                                 const ObservedSequence &obs) {
  check_obs(params, obs);
  FlowCache cache;
  FlowInverseResult inv = flow_inverse(params.flow, obs.x, &cache);
  MatrixXd loglikes = emission_loglikes(params.emission, inv.e);
  HmmPosteriors post = posteriors(params.markov(), loglikes);
  double obj = post.log_z + obs.length() * inv.logdet_per_token;

  LossResult out;
  MarkovGrads mg = marginal_grad_logits(params.markov(), post);
  negate_markov(mg);
  out.grads.prior = std::move(mg);
  assemble(params, obs, cache, inv.e, post.gamma, obj, &out);
  return out;
}

LossResult supervised_tag_loss(const ModelParams &params,
                               const ObservedSequence &obs) {
  check_obs(params, obs);
  FlowCache cache;
  FlowInverseResult inv = flow_inverse(params.flow, obs.x, &cache);
  MatrixXd loglikes = emission_loglikes(params.emission, inv.e);
  MarkovGrads mg;
  double prior_logp = supervised_logprob(params.markov(), obs.upos, &mg);
  double emis = 0.0;
  for (int i = 0; i < obs.length(); ++i) emis += loglikes(i, obs.upos[i]);
  double obj = prior_logp + emis + obs.length() * inv.logdet_per_token;

  LossResult out;
  negate_markov(mg);
  out.grads.prior = std::move(mg);
  assemble(params, obs, cache, inv.e,
           one_hot_weights(obs.upos, params.num_tags()), obj, &out);
  return out;
}

LossResult unsupervised_parse_loss(const ModelParams &params,
                                   const ObservedSequence &obs) {
  check_obs(params, obs);
  FlowCache cache;
  FlowInverseResult inv = flow_inverse(params.flow, obs.x, &cache);
  MatrixXd loglikes = emission_loglikes(params.emission, inv.e);
  double tree_marginal = 0.0;
  DmvGrads dg = dmv_expected_counts(params.dmv(), obs.upos, &tree_marginal);
  double emis = 0.0;
  for (int i = 0; i < obs.length(); ++i) emis += loglikes(i, obs.upos[i]);
  double obj = tree_marginal + emis + obs.length() * inv.logdet_per_token;

  LossResult out;
  negate_dmv(dg);
  out.grads.prior = std::move(dg);
  assemble(params, obs, cache, inv.e,
           one_hot_weights(obs.upos, params.num_tags()), obj, &out);
  return out;
}

LossResult supervised_parse_loss(const ModelParams &params,
                                 const ObservedSequence &obs) {
  check_obs(params, obs);
  if (!obs.gold_heads)
    throw DataError("supervised parse loss needs gold heads");
  FlowCache cache;
  FlowInverseResult inv = flow_inverse(params.flow, obs.x, &cache);
  MatrixXd loglikes = emission_loglikes(params.emission, inv.e);
  DmvGrads dg;
  double prior_logp = tree_logprob(params.dmv(), obs.upos, *obs.gold_heads, &dg);
  double emis = 0.0;
  for (int i = 0; i < obs.length(); ++i) emis += loglikes(i, obs.upos[i]);
  double obj = prior_logp + emis + obs.length() * inv.logdet_per_token;

  LossResult out;
  negate_dmv(dg);
  out.grads.prior = std::move(dg);
  assemble(params, obs, cache, inv.e,
           one_hot_weights(obs.upos, params.num_tags()), obj, &out);
  return out;
}

LossResult supervised_loss(const ModelParams &params,
                           const ObservedSequence &obs) {
  return params.task == Task::Tag ? supervised_tag_loss(params, obs)
                                  : supervised_parse_loss(params, obs);
}

LossResult unsupervised_loss(const ModelParams &params,
                             const ObservedSequence &obs) {
  return params.task == Task::Tag ? unsupervised_tag_loss(params, obs)
                                  : unsupervised_parse_loss(params, obs);
}

std::vector<int> decode_tags(const ModelParams &params,
                             const ObservedSequence &obs) {
  check_obs(params, obs);
  FlowInverseResult inv = flow_inverse(params.flow, obs.x);
  MatrixXd loglikes = emission_loglikes(params.emission, inv.e);
  return viterbi(params.markov(), loglikes);
}

Heads decode_parse(const ModelParams &params, const ObservedSequence &obs) {
  check_obs(params, obs);
  return viterbi_parse(params.dmv(), obs.upos);
}

ObservedSequence with_tag_features(const ModelParams &params,
                                   const ObservedSequence &word_obs) {
  const int dt = params.tag_dim();
  if (dt == 0) return word_obs;
  if (word_obs.dim() != params.word_dim())
    throw DataError("word observations have dimension " +
                    std::to_string(word_obs.dim()) + "; expected " +
                    std::to_string(params.word_dim()));
  ObservedSequence obs = word_obs;
  obs.x.conservativeResize(Eigen::NoChange, params.dim());
  for (int i = 0; i < obs.length(); ++i) {
    if (obs.upos[i] >= params.tag_embeddings.rows())
      throw DataError("UPOS id out of range for tag embeddings");
    obs.x.row(i).tail(dt) = params.tag_embeddings.row(obs.upos[i]);
  }
  return obs;
}

}  // namespace sflow
