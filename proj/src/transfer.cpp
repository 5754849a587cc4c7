#include "sflow/transfer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "sflow/eval.hpp"

namespace sflow {

using nlohmann::json;

TransferConfig TransferConfig::defaults_for(Task task) {
  TransferConfig c;
  c.task = task;
  if (task == Task::Tag) {
    c.beta1 = 0.0;
    c.beta2 = 500.0;
    c.beta3 = 80.0;
    c.epochs = 10;
    c.batch_size = 32;
    c.tag_dim = 0;
  } else {
    c.beta1 = 0.1;
    c.beta2 = 0.1;
    c.beta3 = 0.1;
    c.epochs = 5;
    c.batch_size = 16;
    c.max_finetune_length = 40;
    c.tag_dim = 10;
  }
  return c;
}

namespace {

json config_to_json(const TransferConfig &c) {
  json j;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["beta3"] = c.beta3;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  if (c.max_finetune_length)
    j["max_finetune_length"] = *c.max_finetune_length;
  else
    j["max_finetune_length"] = nullptr;
  j["restarts"] = c.restarts;
  j["seed"] = c.seed;
  j["task"] = to_string(c.task);
  j["num_tags"] = c.num_tags;
  j["flow_kind"] = to_string(c.flow_kind);
  j["coupling_layers"] = c.coupling_layers;
  j["tag_dim"] = c.tag_dim;
  return j;
}

TransferConfig config_from_json(const json &j, const TransferConfig &base) {
  TransferConfig c = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string &key = it.key();
    const json &v = it.value();
    if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "beta3") c.beta3 = v.get<double>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "max_finetune_length") {
      if (v.is_null()) c.max_finetune_length.reset();
      else c.max_finetune_length = v.get<int>();
    } else if (key == "restarts") c.restarts = v.get<int>();
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else if (key == "task") c.task = task_from_string(v.get<std::string>());
    else if (key == "num_tags") c.num_tags = v.get<int>();
    else if (key == "flow_kind") c.flow_kind = flow_kind_from_string(v.get<std::string>());
    else if (key == "coupling_layers") c.coupling_layers = v.get<int>();
    else if (key == "tag_dim") c.tag_dim = v.get<int>();
    else throw DataError("unknown config key '" + key + "'");
  }
  if (c.beta1 < 0 || c.beta2 < 0 || c.beta3 < 0)
    throw DataError("penalty coefficients must be nonnegative");
  if (c.epochs < 0 || c.batch_size < 1 || c.restarts < 1)
    throw DataError("bad epochs/batch_size/restarts");
  return c;
}

}  // namespace

TransferConfig parse_config_json(const std::string &text,
                                 const TransferConfig &base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw DataError(std::string("bad config JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config JSON must be an object");
  return config_from_json(j, base);
}

std::string config_to_json_string(const TransferConfig &config) {
  return config_to_json(config).dump(2);
}

void adam_step(AdamState &state, VectorXd &params, const VectorXd &grads,
               double learning_rate, const AdamConfig &config) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DataError("adam_step size mismatch");
  ++state.step;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads;
  state.v = config.beta2 * state.v +
            (1.0 - config.beta2) * grads.cwiseProduct(grads);
  const double m_corr = 1.0 - std::pow(config.beta1, state.step);
  const double v_corr = 1.0 - std::pow(config.beta2, state.step);
  params -= learning_rate *
            ((state.m / m_corr).array() /
             ((state.v / v_corr).array().sqrt() + config.epsilon))
                .matrix();
}

double l2_penalty_flat(const VectorXd &params_q, const VectorXd &anchor_p,
                       const GroupSpans &spans, double beta1, double beta2,
                       double beta3, VectorXd *grad) {
  if (params_q.size() != anchor_p.size() || params_q.size() != spans.total)
    throw DataError("l2_penalty parameter shapes do not match");
  if (grad && grad->size() != params_q.size())
    throw DataError("l2_penalty gradient buffer has wrong size");
  double value = 0.0;
  const Span group_spans[3] = {spans.prior, spans.emission, spans.flow};
  const double betas[3] = {beta1, beta2, beta3};
  for (int g = 0; g < 3; ++g) {
    if (betas[g] == 0.0 || group_spans[g].size == 0) continue;
    auto dq = params_q.segment(group_spans[g].offset, group_spans[g].size) -
              anchor_p.segment(group_spans[g].offset, group_spans[g].size);
    value += 0.5 * betas[g] * dq.squaredNorm();
    if (grad)
      grad->segment(group_spans[g].offset, group_spans[g].size) += betas[g] * dq;
  }
  return value;
}

double l2_penalty(const ModelParams &params_q, const ModelParams &anchor_p,
                  double beta1, double beta2, double beta3,
                  VectorXd *grad_flat) {
  GroupSpans sq = group_spans(params_q);
  GroupSpans sp = group_spans(anchor_p);
  if (sq.total != sp.total || sq.prior.size != sp.prior.size ||
      sq.emission.size != sp.emission.size || sq.flow.size != sp.flow.size)
    throw DataError("l2_penalty models have different parameter layouts");
  VectorXd q = flatten(params_q);
  VectorXd p = flatten(anchor_p);
  if (grad_flat) grad_flat->setZero(sq.total);
  return l2_penalty_flat(q, p, sq, beta1, beta2, beta3, grad_flat);
}

// --- checkpoint i/o ----------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'S', 'F', 'L', 'O', 'W', '1'};
constexpr int kVersion = 1;

void write_u64(std::ostream &out, uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char *>(bytes), 8);
}

uint64_t read_u64(std::istream &in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char *>(bytes), 8);
  if (in.gcount() != 8) throw TruncatedError("checkpoint truncated in header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream &out, const VectorXd &v) {
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char *>(v.data()),
            static_cast<std::streamsize>(v.size() * 8));
}

VectorXd read_doubles(std::istream &in, Eigen::Index n,
                      const std::string &what) {
  VectorXd v(n);
  in.read(reinterpret_cast<char *>(v.data()),
          static_cast<std::streamsize>(n * 8));
  if (in.gcount() != static_cast<std::streamsize>(n * 8))
    throw TruncatedError("checkpoint truncated in " + what);
  return v;
}

ModelParams params_from_metadata(const json &meta) {
  Task task = task_from_string(meta.at("task").get<std::string>());
  int num_tags = meta.at("num_tags").get<int>();
  int word_dim = meta.at("word_dim").get<int>();
  int tag_dim = meta.at("tag_dim").get<int>();
  FlowKind kind = flow_kind_from_string(meta.at("flow_kind").get<std::string>());
  int layers = meta.at("coupling_layers").get<int>();
  int hidden = meta.at("hidden_dim").get<int>();

  ModelParams p;
  p.task = task;
  if (task == Task::Tag)
    p.prior = MarkovParams::zeros(num_tags);
  else
    p.prior = DmvParams::zeros(num_tags);
  const int dim = word_dim + tag_dim;
  p.emission.num_cats = num_tags;
  p.emission.dim = dim;
  p.emission.means = MatrixXd::Zero(num_tags, dim);
  p.emission.log_vars = MatrixXd::Zero(num_tags, dim);
  switch (kind) {
    case FlowKind::Identity: p.flow = FlowParams::identity(dim); break;
    case FlowKind::Linear: p.flow = FlowParams::linear(dim); break;
    case FlowKind::Nice: {
      Rng rng(0);  // shapes only; values are overwritten by the tensors
      p.flow = FlowParams::nice(dim, layers, hidden, rng);
      break;
    }
  }
  if (tag_dim > 0) p.tag_embeddings = MatrixXd::Zero(num_tags, tag_dim);
  return p;
}

}  // namespace

void save_checkpoint(const Checkpoint &ckpt, const std::string &path) {
  json meta;
  meta["version"] = kVersion;
  meta["task"] = to_string(ckpt.params.task);
  meta["num_tags"] = ckpt.params.num_tags();
  meta["word_dim"] = ckpt.params.word_dim();
  meta["tag_dim"] = ckpt.params.tag_dim();
  meta["dim"] = ckpt.params.dim();
  meta["flow_kind"] = to_string(ckpt.params.flow.kind);
  meta["coupling_layers"] = ckpt.params.flow.num_layers();
  meta["hidden_dim"] = ckpt.params.flow.kind == FlowKind::Nice
                           ? static_cast<int>(ckpt.params.flow.layers[0].W1.rows())
                           : 0;
  meta["seed"] = ckpt.config.seed;
  meta["config"] = config_to_json(ckpt.config);
  json tensors = json::array();
  for (const auto &t : tensor_manifest(ckpt.params))
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  meta["tensors"] = tensors;
  meta["optimizer_state"] = ckpt.opt_state.has_value();
  if (ckpt.opt_state) meta["adam_step"] = ckpt.opt_state->step;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  std::string meta_str = meta.dump();
  write_u64(out, meta_str.size());
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  write_doubles(out, flatten(ckpt.params));
  if (ckpt.opt_state) {
    write_doubles(out, ckpt.opt_state->m);
    write_doubles(out, ckpt.opt_state->v);
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[6];
  in.read(magic, 6);
  if (in.gcount() != 6) throw TruncatedError("checkpoint shorter than magic");
  if (std::memcmp(magic, "SFLOW", 5) != 0)
    throw BadMagicError("bad checkpoint magic");
  if (magic[5] != '1')
    throw VersionMismatchError("unsupported checkpoint format version");

  uint64_t meta_len = read_u64(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (in.gcount() != static_cast<std::streamsize>(meta_len))
    throw TruncatedError("checkpoint truncated in metadata");
  json meta;
  try {
    meta = json::parse(meta_str);
  } catch (const json::exception &e) {
    throw MalformedError(std::string("bad checkpoint metadata: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    if (meta.at("version").get<int>() != kVersion)
      throw VersionMismatchError("unsupported checkpoint metadata version");
    ckpt.params = params_from_metadata(meta);
    ckpt.config = config_from_json(meta.at("config"),
                                   TransferConfig::defaults_for(ckpt.params.task));

    auto manifest = tensor_manifest(ckpt.params);
    const json &tensors = meta.at("tensors");
    if (tensors.size() != manifest.size())
      throw MalformedError("tensor count mismatch: metadata lists " +
                           std::to_string(tensors.size()) + ", model needs " +
                           std::to_string(manifest.size()));
    for (size_t i = 0; i < manifest.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != manifest[i].name ||
          tensors[i].at("shape").get<std::vector<int>>() != manifest[i].shape)
        throw MalformedError("tensor manifest entry " + std::to_string(i) +
                             " does not match model layout");
    }
  } catch (const json::exception &e) {
    throw MalformedError(std::string("bad checkpoint metadata: ") + e.what());
  }

  GroupSpans spans = group_spans(ckpt.params);
  VectorXd flat = read_doubles(in, spans.total, "parameter tensors");
  unflatten(flat, &ckpt.params);
  if (meta.value("optimizer_state", false)) {
    AdamState state(spans.total);
    state.step = meta.value("adam_step", 0L);
    state.m = read_doubles(in, spans.total, "optimizer state");
    state.v = read_doubles(in, spans.total, "optimizer state");
    ckpt.opt_state = std::move(state);
  }
  ckpt.params.validate();
  return ckpt;
}

// --- training ----------------------------------------------------------------

namespace {

void check_corpus(const std::vector<ObservedSequence> &corpus, int word_dim,
                  int num_tags) {
  for (const auto &obs : corpus) {
    if (obs.dim() != word_dim)
      throw DataError("corpus observation dimension " +
                      std::to_string(obs.dim()) + " != expected word dim " +
                      std::to_string(word_dim));
    for (int t : obs.upos)
      if (t < 0 || t >= num_tags)
        throw DataError("UPOS id out of range for model");
  }
}

// Dev metric for restart/epoch selection: tag accuracy or UAS.
double dev_metric(const ModelParams &params,
                  const std::vector<ObservedSequence> &dev) {
  if (params.task == Task::Tag) {
    std::vector<std::vector<int>> pred, gold;
    for (const auto &word_obs : dev) {
      ObservedSequence obs = with_tag_features(params, word_obs);
      pred.push_back(decode_tags(params, obs));
      gold.push_back(obs.upos);
    }
    return tagging_accuracy(pred, gold);
  }
  std::vector<Heads> pred, gold;
  std::vector<std::vector<int>> upos;
  for (const auto &word_obs : dev) {
    if (!word_obs.gold_heads)
      throw DataError("parse dev corpus lacks gold heads");
    ObservedSequence obs = with_tag_features(params, word_obs);
    pred.push_back(decode_parse(params, obs));
    gold.push_back(*obs.gold_heads);
    upos.push_back(obs.upos);
  }
  return uas(pred, gold, upos);
}

}  // namespace

double mean_negloglik(const ModelParams &params,
                      const std::vector<ObservedSequence> &corpus) {
  if (corpus.empty()) throw DataError("empty corpus");
  double total = 0.0;
  for (const auto &word_obs : corpus) {
    ObservedSequence obs = with_tag_features(params, word_obs);
    total += unsupervised_loss(params, obs).negloglik;
  }
  return total / static_cast<double>(corpus.size());
}

Checkpoint pretrain_source(const std::vector<ObservedSequence> &train,
                           const std::vector<ObservedSequence> &dev,
                           const TransferConfig &config, TrainLog *log) {
  if (train.empty()) throw DataError("empty training corpus");
  const int word_dim = train[0].dim();
  check_corpus(train, word_dim, config.num_tags);
  check_corpus(dev, word_dim, config.num_tags);
  const std::vector<ObservedSequence> &dev_set = dev.empty() ? train : dev;
  if (config.task == Task::Parse) {
    for (const auto &obs : train)
      if (!obs.gold_heads)
        throw DataError("parse source training needs gold heads");
  }

  TrainLog local_log;
  TrainLog &tl = log ? *log : local_log;
  tl.restart_dev_metrics.clear();

  ModelParams best_params;
  double best_metric = -1.0;

  for (int restart = 0; restart < config.restarts; ++restart) {
    Rng rng(config.seed + static_cast<uint64_t>(restart));
    ModelParams params =
        ModelParams::init(config.task, config.num_tags, word_dim,
                          config.task == Task::Parse ? config.tag_dim : 0,
                          config.flow_kind, config.coupling_layers, rng);
    VectorXd flat = flatten(params);
    AdamState adam(flat.size());

    if (config.task == Task::Parse) {
      int nonproj = 0;
      for (const auto &obs : train)
        if (!is_projective(*obs.gold_heads)) ++nonproj;
      tl.non_projective_gold = nonproj;
    }

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    double restart_best = -1.0;
    VectorXd restart_best_flat = flat;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (size_t start = 0; start < order.size();
           start += static_cast<size_t>(config.batch_size)) {
        size_t stop = std::min(order.size(),
                               start + static_cast<size_t>(config.batch_size));
        VectorXd grad = VectorXd::Zero(flat.size());
        for (size_t b = start; b < stop; ++b) {
          ObservedSequence obs = with_tag_features(params, train[order[b]]);
          LossResult r = supervised_loss(params, obs);
          grad += flatten(r.grads);
        }
        adam_step(adam, flat, grad, config.learning_rate);
        unflatten(flat, &params);
      }
      double metric = dev_metric(params, dev_set);
      if (metric > restart_best) {
        restart_best = metric;
        restart_best_flat = flat;
      }
    }
    if (config.epochs == 0) restart_best = dev_metric(params, dev_set);
    tl.restart_dev_metrics.push_back(restart_best);

    unflatten(restart_best_flat, &params);
    if (restart_best > best_metric) {
      best_metric = restart_best;
      best_params = params;
    }
  }

  tl.selected_dev_metric = best_metric;
  Checkpoint ckpt;
  ckpt.params = std::move(best_params);
  ckpt.config = config;
  return ckpt;
}

Checkpoint finetune_target(const Checkpoint &source,
                           const std::vector<ObservedSequence> &target,
                           const TransferConfig &config, TrainLog *log) {
  if (config.task != source.params.task)
    throw DataError("fine-tuning task does not match source checkpoint task");
  if (target.empty()) throw DataError("empty target corpus");
  const int word_dim = source.params.word_dim();
  check_corpus(target, word_dim, source.params.num_tags());

  TrainLog local_log;
  TrainLog &tl = log ? *log : local_log;

  std::vector<size_t> train_idx;
  for (size_t i = 0; i < target.size(); ++i) {
    if (config.max_finetune_length &&
        target[i].length() > *config.max_finetune_length) {
      ++tl.skipped_long;
      continue;
    }
    train_idx.push_back(i);
  }
  if (train_idx.empty())
    throw DataError("no target sentences within max_finetune_length");
  std::vector<ObservedSequence> train_view;
  for (size_t i : train_idx) train_view.push_back(target[i]);

  ModelParams params = source.params;  // initializer and anchor
  const VectorXd anchor = flatten(source.params);
  const GroupSpans spans = group_spans(params);
  VectorXd flat = anchor;
  AdamState adam(flat.size());
  Rng rng(config.seed);

  tl.epoch_mean_nll.clear();
  tl.epoch_mean_nll.push_back(mean_negloglik(params, train_view));

  std::vector<size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      size_t stop = std::min(order.size(),
                             start + static_cast<size_t>(config.batch_size));
      VectorXd grad = VectorXd::Zero(flat.size());
      for (size_t b = start; b < stop; ++b) {
        ObservedSequence obs =
            with_tag_features(params, target[train_idx[order[b]]]);
        LossResult r = unsupervised_loss(params, obs);
        grad += flatten(r.grads);
      }
      l2_penalty_flat(flat, anchor, spans, config.beta1, config.beta2,
                      config.beta3, &grad);
      if (spans.tag.size > 0)
        grad.segment(spans.tag.offset, spans.tag.size).setZero();
      adam_step(adam, flat, grad, config.learning_rate);
      unflatten(flat, &params);
    }
    tl.epoch_mean_nll.push_back(mean_negloglik(params, train_view));
  }

  Checkpoint ckpt;
  ckpt.params = std::move(params);
  ckpt.config = config;
  return ckpt;
}

}  // namespace sflow
