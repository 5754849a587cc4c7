#include "sflow/eval.hpp"

#include "json.hpp"

namespace sflow {

using nlohmann::json;

double tagging_accuracy(const std::vector<std::vector<int>> &pred,
                        const std::vector<std::vector<int>> &gold) {
  if (pred.size() != gold.size())
    throw DataError("prediction/gold sentence counts differ");
  long correct = 0, total = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gold[s].size())
      throw DataError("prediction/gold length mismatch in sentence " +
                      std::to_string(s + 1));
    for (size_t i = 0; i < pred[s].size(); ++i) {
      if (pred[s][i] == gold[s][i]) ++correct;
      ++total;
    }
  }
  if (total == 0) throw DataError("empty corpus in tagging_accuracy");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double uas(const std::vector<Heads> &pred, const std::vector<Heads> &gold,
           const std::vector<std::vector<int>> &gold_upos) {
  if (pred.size() != gold.size() || gold.size() != gold_upos.size())
    throw DataError("prediction/gold sentence counts differ");
  long correct = 0, total = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gold[s].size() ||
        gold[s].size() != gold_upos[s].size())
      throw DataError("prediction/gold length mismatch in sentence " +
                      std::to_string(s + 1));
    for (size_t i = 0; i < pred[s].size(); ++i) {
      if (gold_upos[s][i] == kPunctId) continue;
      if (pred[s][i] == gold[s][i]) ++correct;
      ++total;
    }
  }
  if (total == 0) throw DataError("no non-punctuation tokens to score");
  return static_cast<double>(correct) / static_cast<double>(total);
}

RelationRecall relation_recall(
    const std::vector<Heads> &pred, const std::vector<Heads> &gold,
    const std::vector<std::vector<std::string>> &gold_deprels,
    const std::string &label) {
  if (pred.size() != gold.size() || gold.size() != gold_deprels.size())
    throw DataError("prediction/gold sentence counts differ");
  long correct = 0, count = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gold[s].size() ||
        gold[s].size() != gold_deprels[s].size())
      throw DataError("prediction/gold length mismatch in sentence " +
                      std::to_string(s + 1));
    for (size_t i = 0; i < pred[s].size(); ++i) {
      if (gold_deprels[s][i] != label) continue;
      ++count;
      if (pred[s][i] == gold[s][i]) ++correct;
    }
  }
  RelationRecall r;
  r.gold_count = count;
  r.recall = count == 0 ? 0.0
                        : static_cast<double>(correct) / static_cast<double>(count);
  return r;
}

double language_distance(double genetic, double geographic, double syntactic) {
  for (double v : {genetic, geographic, syntactic})
    if (v < 0.0 || v > 1.0)
      throw DataError("distance components must lie in [0, 1]");
  return (genetic + geographic + syntactic) / 3.0;
}

EvalReport evaluate_treebanks(const std::vector<Sentence> &pred,
                              const std::vector<Sentence> &gold, Task task) {
  if (pred.size() != gold.size())
    throw DataError("prediction/gold sentence counts differ");
  EvalReport report;
  report.task = task;
  report.sentence_count = static_cast<long>(gold.size());
  for (const auto &s : gold) report.token_count += s.length();

  if (task == Task::Tag) {
    std::vector<std::vector<int>> p, g;
    for (size_t s = 0; s < pred.size(); ++s) {
      p.push_back(pred[s].upos);
      g.push_back(gold[s].upos);
    }
    report.metric = tagging_accuracy(p, g);
    return report;
  }

  std::vector<Heads> p, g;
  std::vector<std::vector<int>> upos;
  std::vector<std::vector<std::string>> deprels;
  bool have_deprels = true;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (!pred[s].heads)
      throw DataError("predicted treebank lacks heads in sentence " +
                      pred[s].sent_id);
    if (!gold[s].heads)
      throw DataError("gold treebank lacks heads in sentence " +
                      gold[s].sent_id);
    p.push_back(*pred[s].heads);
    g.push_back(*gold[s].heads);
    upos.push_back(gold[s].upos);
    if (gold[s].deprels)
      deprels.push_back(*gold[s].deprels);
    else
      have_deprels = false;
  }
  report.metric = uas(p, g, upos);
  if (have_deprels) {
    std::map<std::string, bool> labels;
    for (const auto &sent : deprels)
      for (const auto &d : sent) labels[d] = true;
    for (const auto &kv : labels)
      report.per_relation_recall[kv.first] =
          relation_recall(p, g, deprels, kv.first);
  }
  return report;
}

std::string report_to_json_string(const EvalReport &report) {
  json j;
  j["task"] = to_string(report.task);
  j["sentence_count"] = report.sentence_count;
  j["token_count"] = report.token_count;
  j["metric"] = report.metric;
  json rel = json::object();
  for (const auto &kv : report.per_relation_recall) {
    rel[kv.first] = {{"recall", kv.second.recall},
                     {"gold_count", kv.second.gold_count}};
  }
  j["per_relation_recall"] = rel;
  return j.dump(2);
}

EvalReport report_from_json_string(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw DataError(std::string("bad report JSON: ") + e.what());
  }
  EvalReport report;
  report.task = task_from_string(j.at("task").get<std::string>());
  report.sentence_count = j.at("sentence_count").get<long>();
  report.token_count = j.at("token_count").get<long>();
  report.metric = j.at("metric").get<double>();
  for (auto it = j.at("per_relation_recall").begin();
       it != j.at("per_relation_recall").end(); ++it) {
    RelationRecall r;
    r.recall = it.value().at("recall").get<double>();
    r.gold_count = it.value().at("gold_count").get<long>();
    report.per_relation_recall[it.key()] = r;
  }
  return report;
}

}  // namespace sflow
