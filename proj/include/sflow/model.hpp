#ifndef SFLOW_MODEL_HPP
#define SFLOW_MODEL_HPP

#include <string>
#include <variant>
#include <vector>

#include "sflow/common.hpp"
#include "sflow/corpus.hpp"
#include "sflow/dmv.hpp"
#include "sflow/emission.hpp"
#include "sflow/flow.hpp"
#include "sflow/markov.hpp"

namespace sflow {

enum class Task { Tag, Parse };

Task task_from_string(const std::string &name);
std::string to_string(Task task);

// Structured prior + Gaussian emissions + invertible projection, bundled
// with the optional tag-embedding matrix used for parsing observations.
struct ModelParams {
  Task task = Task::Tag;
  std::variant<MarkovParams, DmvParams> prior;
  EmissionParams emission;
  FlowParams flow;
  MatrixXd tag_embeddings;  // K x dt; 0 x 0 when unused

  int num_tags() const;
  int dim() const { return flow.dim; }
  int tag_dim() const { return static_cast<int>(tag_embeddings.cols()); }
  int word_dim() const { return dim() - tag_dim(); }

  const MarkovParams &markov() const { return std::get<MarkovParams>(prior); }
  const DmvParams &dmv() const { return std::get<DmvParams>(prior); }

  // Consistency checks: emission.K = prior.K, emission.D = flow.D.
  void validate() const;

  static ModelParams init(Task task, int num_tags, int word_dim, int tag_dim,
                          FlowKind flow_kind, int coupling_layers, Rng &rng);
};

struct ModelGrads {
  std::variant<MarkovGrads, DmvGrads> prior;
  EmissionGrads emission;
  FlowGrads flow;
  MatrixXd tag_embeddings;
};

ModelGrads zero_model_grads(const ModelParams &params);

struct LossResult {
  double negloglik = 0;
  ModelGrads grads;  // gradients of negloglik
};

// -log of the marginal likelihood; pipeline flow_inverse -> emissions ->
// forward recursion plus the per-token Jacobian term.
LossResult unsupervised_tag_loss(const ModelParams &params,
                                 const ObservedSequence &obs);

// -log of the joint likelihood at the observed tags (obs.upos).
LossResult supervised_tag_loss(const ModelParams &params,
                               const ObservedSequence &obs);

// -log of the tree marginal at clamped gold tags.
LossResult unsupervised_parse_loss(const ModelParams &params,
                                   const ObservedSequence &obs);

// -log of the joint likelihood at the observed tree (obs.gold_heads).
LossResult supervised_parse_loss(const ModelParams &params,
                                 const ObservedSequence &obs);

LossResult supervised_loss(const ModelParams &params,
                           const ObservedSequence &obs);
LossResult unsupervised_loss(const ModelParams &params,
                             const ObservedSequence &obs);

std::vector<int> decode_tags(const ModelParams &params,
                             const ObservedSequence &obs);
Heads decode_parse(const ModelParams &params, const ObservedSequence &obs);

// Appends the current tag-embedding rows to word-only observations.
// Returns obs unchanged when the model carries no tag embeddings.
ObservedSequence with_tag_features(const ModelParams &params,
                                   const ObservedSequence &word_obs);

// --- Flat parameter view -------------------------------------------------
// All trainable tensors concatenated in a fixed manifest order: prior,
// emission, flow, tag embeddings. The same order is used for gradients,
// optimizer state, the L2 penalty groups, and checkpoint tensors.

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
};

struct Span {
  int offset = 0;
  int size = 0;
};

// Parameter-group extents within the flat vector.
struct GroupSpans {
  Span prior;       // theta
  Span emission;    // eta
  Span flow;        // phi
  Span tag;         // tag embeddings (never L2-penalized)
  int total = 0;
};

GroupSpans group_spans(const ModelParams &params);
VectorXd flatten(const ModelParams &params);
VectorXd flatten(const ModelGrads &grads);
void unflatten(const VectorXd &flat, ModelParams *params);

// Manifest of named tensors in flatten order (row-major within a tensor).
std::vector<NamedTensor> tensor_manifest(const ModelParams &params);

}  // namespace sflow

#endif  // SFLOW_MODEL_HPP
