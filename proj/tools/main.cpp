// Command-line surface: train-source, finetune, predict, evaluate, distance.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sflow/corpus.hpp"
#include "sflow/eval.hpp"
#include "sflow/model.hpp"
#include "sflow/transfer.hpp"

namespace {

using namespace sflow;

std::ifstream open_or_throw(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

std::vector<Sentence> read_treebank(const std::string &path) {
  auto in = open_or_throw(path);
  return parse_conllu(in);
}

EmbeddingTable read_embeddings(const std::string &path,
                               const std::string &alignment_path) {
  auto in = open_or_throw(path);
  EmbeddingTable table = load_embeddings(in);
  if (!alignment_path.empty()) {
    auto ain = open_or_throw(alignment_path);
    apply_alignment(table, load_alignment_matrix(ain, table.dim));
  }
  return table;
}

// Word-level observations (tag features are appended by the model).
std::vector<ObservedSequence> word_observations(
    const std::vector<Sentence> &sentences, const EmbeddingTable *table,
    const ContextualStore *store) {
  std::vector<ObservedSequence> out;
  out.reserve(sentences.size());
  for (const auto &s : sentences)
    out.push_back(store ? build_observations(s, *store)
                        : build_observations(s, *table));
  return out;
}

// Shared flags for commands that read a treebank plus embeddings.
struct DataArgs {
  std::string treebank;
  std::string embeddings;
  std::string alignment;
  std::string contextual;

  void attach(CLI::App *cmd, bool need_embeddings = true) {
    cmd->add_option("--treebank", treebank, "CoNLL-U file")->required();
    auto *emb = cmd->add_option("--embeddings", embeddings,
                                "word embedding text file ('count dim' header)");
    cmd->add_option("--alignment", alignment,
                    "optional alignment matrix applied to the embeddings");
    cmd->add_option("--contextual", contextual,
                    "per-token vector file replacing word embedding lookups");
    if (need_embeddings) emb->required(false);
  }

  std::vector<ObservedSequence> load(const std::vector<Sentence> &sentences) const {
    if (!contextual.empty()) {
      auto in = open_or_throw(contextual);
      ContextualStore store = load_contextual_embeddings(in, sentences);
      return word_observations(sentences, nullptr, &store);
    }
    if (embeddings.empty())
      throw DataError("either --embeddings or --contextual is required");
    EmbeddingTable table = read_embeddings(embeddings, alignment);
    return word_observations(sentences, &table, nullptr);
  }
};

// Config file first, then explicit flags on top.
struct ConfigArgs {
  std::string config_path;
  std::string task = "tag";
  std::optional<double> beta1, beta2, beta3, learning_rate;
  std::optional<int> epochs, batch_size, restarts, num_tags, coupling_layers,
      tag_dim, max_len;
  std::optional<uint64_t> seed;
  std::optional<std::string> flow_kind;

  void attach(CLI::App *cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--task", task, "tag or parse")->check(CLI::IsMember({"tag", "parse"}));
    cmd->add_option("--beta1", beta1, "L2 coefficient for prior parameters");
    cmd->add_option("--beta2", beta2, "L2 coefficient for emission parameters");
    cmd->add_option("--beta3", beta3, "L2 coefficient for flow parameters");
    cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch-size", batch_size, "sentences per batch");
    cmd->add_option("--restarts", restarts, "random restarts (source training)");
    cmd->add_option("--num-tags", num_tags, "tag categories (default 17)");
    cmd->add_option("--coupling-layers", coupling_layers, "nice layer count");
    cmd->add_option("--tag-dim", tag_dim, "tag embedding width (parse)");
    cmd->add_option("--max-finetune-length", max_len,
                    "skip longer sentences during fine-tuning");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--flow", flow_kind, "nice, linear or identity")
        ->check(CLI::IsMember({"nice", "linear", "identity"}));
  }

  TransferConfig resolve() const {
    TransferConfig c = TransferConfig::defaults_for(task_from_string(task));
    if (!config_path.empty()) {
      auto in = open_or_throw(config_path);
      std::stringstream buf;
      buf << in.rdbuf();
      c = parse_config_json(buf.str(), c);
      if (c.task != task_from_string(task))
        throw DataError("--task disagrees with the config file task");
    }
    if (beta1) c.beta1 = *beta1;
    if (beta2) c.beta2 = *beta2;
    if (beta3) c.beta3 = *beta3;
    if (learning_rate) c.learning_rate = *learning_rate;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (restarts) c.restarts = *restarts;
    if (num_tags) c.num_tags = *num_tags;
    if (coupling_layers) c.coupling_layers = *coupling_layers;
    if (tag_dim) c.tag_dim = *tag_dim;
    if (max_len) c.max_finetune_length = *max_len;
    if (seed) c.seed = *seed;
    if (flow_kind) c.flow_kind = flow_kind_from_string(*flow_kind);
    return c;
  }
};

int run(int argc, char **argv) {
  CLI::App app{"Generative syntactic transfer: structured priors over latent "
               "embeddings with invertible projections"};
  app.require_subcommand(1);

  // train-source
  auto *train_cmd = app.add_subcommand(
      "train-source", "supervised training on a labeled treebank");
  DataArgs train_data;
  train_data.attach(train_cmd);
  std::string dev_treebank, train_out;
  ConfigArgs train_cfg;
  train_cfg.attach(train_cmd);
  train_cmd->add_option("--dev-treebank", dev_treebank,
                        "labeled dev treebank for restart selection");
  train_cmd->add_option("--out", train_out, "checkpoint output path")->required();

  // finetune
  auto *ft_cmd = app.add_subcommand(
      "finetune", "unsupervised fine-tuning anchored to a source checkpoint");
  DataArgs ft_data;
  ft_data.attach(ft_cmd);
  std::string ft_source, ft_out;
  ConfigArgs ft_cfg;
  ft_cfg.attach(ft_cmd);
  ft_cmd->add_option("--source-checkpoint", ft_source, "source model")->required();
  ft_cmd->add_option("--out", ft_out, "checkpoint output path")->required();

  // predict
  auto *pred_cmd = app.add_subcommand(
      "predict", "fill UPOS (tag) or HEAD (parse) columns with predictions");
  DataArgs pred_data;
  pred_data.attach(pred_cmd);
  std::string pred_ckpt, pred_out;
  pred_cmd->add_option("--checkpoint", pred_ckpt, "model checkpoint")->required();
  pred_cmd->add_option("--out", pred_out, "output CoNLL-U path (default stdout)");

  // evaluate
  auto *eval_cmd = app.add_subcommand(
      "evaluate", "score a predicted treebank against gold; JSON to stdout");
  std::string eval_pred, eval_gold, eval_task = "tag";
  eval_cmd->add_option("--pred", eval_pred, "predicted CoNLL-U")->required();
  eval_cmd->add_option("--gold", eval_gold, "gold CoNLL-U")->required();
  eval_cmd->add_option("--task", eval_task, "tag or parse")
      ->check(CLI::IsMember({"tag", "parse"}));

  // distance
  auto *dist_cmd = app.add_subcommand(
      "distance", "mean of genetic, geographic and syntactic distances");
  double d_gen = 0, d_geo = 0, d_syn = 0;
  dist_cmd->add_option("genetic", d_gen)->required();
  dist_cmd->add_option("geographic", d_geo)->required();
  dist_cmd->add_option("syntactic", d_syn)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*train_cmd) {
    auto sentences = read_treebank(train_data.treebank);
    auto train_obs = train_data.load(sentences);
    std::vector<ObservedSequence> dev_obs;
    if (!dev_treebank.empty()) {
      auto dev_sentences = read_treebank(dev_treebank);
      DataArgs dev_data = train_data;
      dev_data.treebank = dev_treebank;
      if (!dev_data.contextual.empty())
        throw DataError("contextual vectors cover one treebank; "
                        "train/dev must share --embeddings");
      dev_obs = dev_data.load(dev_sentences);
    }
    TransferConfig config = train_cfg.resolve();
    TrainLog log;
    Checkpoint ckpt = pretrain_source(train_obs, dev_obs, config, &log);
    save_checkpoint(ckpt, train_out);
    std::cerr << "selected restart dev metric " << log.selected_dev_metric
              << "\n";
    return 0;
  }

  if (*ft_cmd) {
    Checkpoint source = load_checkpoint(ft_source);
    auto sentences = read_treebank(ft_data.treebank);
    auto target_obs = ft_data.load(sentences);
    TransferConfig config = ft_cfg.resolve();
    TrainLog log;
    Checkpoint ckpt = finetune_target(source, target_obs, config, &log);
    save_checkpoint(ckpt, ft_out);
    std::cerr << "mean target NLL per epoch:";
    for (double v : log.epoch_mean_nll) std::cerr << " " << v;
    std::cerr << "\n";
    return 0;
  }

  if (*pred_cmd) {
    Checkpoint ckpt = load_checkpoint(pred_ckpt);
    auto sentences = read_treebank(pred_data.treebank);
    auto word_obs = pred_data.load(sentences);
    for (size_t i = 0; i < sentences.size(); ++i) {
      ObservedSequence obs = with_tag_features(ckpt.params, word_obs[i]);
      if (ckpt.params.task == Task::Tag) {
        sentences[i].upos = decode_tags(ckpt.params, obs);
      } else {
        sentences[i].heads = decode_parse(ckpt.params, obs);
      }
    }
    if (pred_out.empty()) {
      write_conllu(std::cout, sentences);
    } else {
      std::ofstream out(pred_out);
      if (!out) throw DataError("cannot open '" + pred_out + "' for writing");
      write_conllu(out, sentences);
    }
    return 0;
  }

  if (*eval_cmd) {
    auto pred = read_treebank(eval_pred);
    auto gold = read_treebank(eval_gold);
    EvalReport report =
        evaluate_treebanks(pred, gold, task_from_string(eval_task));
    std::cout << report_to_json_string(report) << "\n";
    return 0;
  }

  if (*dist_cmd) {
    std::cout << language_distance(d_gen, d_geo, d_syn) << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return run(argc, argv);
  } catch (const sflow::NumericalError &e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const sflow::DataError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
