#ifndef SFLOW_TRANSFER_HPP
#define SFLOW_TRANSFER_HPP

#include <optional>
#include <string>
#include <vector>

#include "sflow/model.hpp"

namespace sflow {

// Training and fine-tuning knobs. beta1/2/3 are the L2 penalty coefficients
// for the prior, emission, and flow groups.
struct TransferConfig {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::optional<int> max_finetune_length;
  int restarts = 5;
  uint64_t seed = 0;
  Task task = Task::Tag;

  // Model structure.
  int num_tags = kNumUposTags;
  FlowKind flow_kind = FlowKind::Nice;
  int coupling_layers = 8;
  int tag_dim = 0;  // parsing observations append a learned tag embedding

  static TransferConfig defaults_for(Task task);
};

// Applies fields present in a JSON object on top of `base`; unknown keys
// are rejected. Throws DataError on malformed input.
TransferConfig parse_config_json(const std::string &text,
                                 const TransferConfig &base);
std::string config_to_json_string(const TransferConfig &config);

// --- optimizer -------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index n)
      : m(VectorXd::Zero(n)), v(VectorXd::Zero(n)) {}
};

// One bias-corrected Adam update, in place. Deterministic given inputs.
void adam_step(AdamState &state, VectorXd &params, const VectorXd &grads,
               double learning_rate, const AdamConfig &config = {});

// --- soft parameter sharing --------------------------------------------------

// value = sum_g (beta_g / 2) ||q_g - p_g||^2 over the prior/emission/flow
// groups; grad (on q) accumulates beta_g * (q_g - p_g). Tag embeddings are
// excluded. Groups with beta exactly 0 contribute nothing at all.
double l2_penalty_flat(const VectorXd &params_q, const VectorXd &anchor_p,
                       const GroupSpans &spans, double beta1, double beta2,
                       double beta3, VectorXd *grad);

double l2_penalty(const ModelParams &params_q, const ModelParams &anchor_p,
                  double beta1, double beta2, double beta3, VectorXd *grad_flat);

// --- checkpoints -------------------------------------------------------------

struct CheckpointError : DataError { using DataError::DataError; };
struct BadMagicError : CheckpointError { using CheckpointError::CheckpointError; };
struct VersionMismatchError : CheckpointError { using CheckpointError::CheckpointError; };
struct TruncatedError : CheckpointError { using CheckpointError::CheckpointError; };
struct MalformedError : CheckpointError { using CheckpointError::CheckpointError; };

struct Checkpoint {
  ModelParams params;
  TransferConfig config;  // echo of the run that produced the parameters
  std::optional<AdamState> opt_state;
};

// File format: magic "SFLOW1", little-endian u64 metadata length, JSON
// metadata (dims, K, task, config echo, tensor manifest), then the tensors
// as little-endian 64-bit floats in manifest order (row-major).
void save_checkpoint(const Checkpoint &ckpt, const std::string &path);
Checkpoint load_checkpoint(const std::string &path);

// --- training ----------------------------------------------------------------

struct TrainLog {
  std::vector<double> restart_dev_metrics;   // best-epoch metric per restart
  double selected_dev_metric = 0.0;
  std::vector<double> epoch_mean_nll;        // fine-tuning; entry 0 = before
  int non_projective_gold = 0;
  int skipped_long = 0;
};

// Supervised source training with random restarts. Each restart runs Adam
// over shuffled minibatches and keeps its best epoch by dev metric (tag
// accuracy or UAS); the best restart wins, ties to the lowest seed. `dev`
// may be empty, in which case the training set is used for selection.
Checkpoint pretrain_source(const std::vector<ObservedSequence> &train,
                           const std::vector<ObservedSequence> &dev,
                           const TransferConfig &config,
                           TrainLog *log = nullptr);

// Unsupervised fine-tuning of a copy of the source model, L2-regularized
// toward the frozen source parameters. Sentences longer than
// max_finetune_length are excluded from training (never from evaluation);
// tag embeddings stay frozen.
Checkpoint finetune_target(const Checkpoint &source,
                           const std::vector<ObservedSequence> &target,
                           const TransferConfig &config,
                           TrainLog *log = nullptr);

// Mean unsupervised negative log-likelihood per sentence.
double mean_negloglik(const ModelParams &params,
                      const std::vector<ObservedSequence> &corpus);

}  // namespace sflow

#endif  // SFLOW_TRANSFER_HPP
