#ifndef SFLOW_EVAL_HPP
#define SFLOW_EVAL_HPP

#include <map>
#include <string>
#include <vector>

#include "sflow/corpus.hpp"
#include "sflow/dmv.hpp"
#include "sflow/model.hpp"

namespace sflow {

// Token-level exact-match fraction over all tokens of the corpus.
double tagging_accuracy(const std::vector<std::vector<int>> &pred,
                        const std::vector<std::vector<int>> &gold);

// Fraction of non-punctuation tokens (gold UPOS != PUNCT) whose predicted
// head matches gold. Sentences of all lengths are included.
double uas(const std::vector<Heads> &pred, const std::vector<Heads> &gold,
           const std::vector<std::vector<int>> &gold_upos);

struct RelationRecall {
  double recall = 0.0;  // 0 when no gold arcs carry the label
  long gold_count = 0;
};

// Among gold arcs labeled `label`, the fraction with correct predicted head.
RelationRecall relation_recall(
    const std::vector<Heads> &pred, const std::vector<Heads> &gold,
    const std::vector<std::vector<std::string>> &gold_deprels,
    const std::string &label);

// Mean of the three URIEL-style distance components.
double language_distance(double genetic, double geographic, double syntactic);

struct EvalReport {
  Task task = Task::Tag;
  long sentence_count = 0;
  long token_count = 0;
  double metric = 0.0;  // tagging accuracy or UAS
  std::map<std::string, RelationRecall> per_relation_recall;
};

// Compares predicted and gold treebanks sentence by sentence. Per-relation
// recall is filled for parsing when the gold treebank carries deprels.
EvalReport evaluate_treebanks(const std::vector<Sentence> &pred,
                              const std::vector<Sentence> &gold, Task task);

std::string report_to_json_string(const EvalReport &report);
EvalReport report_from_json_string(const std::string &text);

}  // namespace sflow

#endif  // SFLOW_EVAL_HPP
