#ifndef SFLOW_CORPUS_HPP
#define SFLOW_CORPUS_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sflow/common.hpp"

namespace sflow {

// The 17 universal POS tags, alphabetical. Tag ids index this table.
extern const std::vector<std::string> kUposTags;
constexpr int kNumUposTags = 17;

// Id of a UPOS tag string; throws DataError on anything outside the inventory.
int upos_id(const std::string &tag);
const std::string &upos_name(int id);
extern const int kPunctId;

// One treebank sentence. `heads` uses 0 for the artificial root and 1-based
// token positions otherwise; absent when the HEAD column is unannotated.
struct Sentence {
  std::vector<std::string> tokens;
  std::vector<int> upos;
  std::optional<std::vector<int>> heads;
  std::optional<std::vector<std::string>> deprels;
  std::string sent_id;

  int length() const { return static_cast<int>(tokens.size()); }
};

// Reads blank-line-delimited CoNLL-U blocks. Multiword-token ranges ("1-2")
// and empty nodes ("1.1") are skipped; comments are kept only for sent_id.
std::vector<Sentence> parse_conllu(std::istream &in);

// Inverse of parse_conllu on the token/upos/head/deprel fields.
void write_conllu(std::ostream &out, const std::vector<Sentence> &sentences);

// Checks head range, single root, and acyclicity; throws DataError.
void validate_heads(const std::vector<int> &heads, const std::string &sent_id);

struct EmbeddingTable {
  int dim = 0;
  std::unordered_map<std::string, VectorXd> entries;
  VectorXd fallback;

  // Raw form first, then a lowercased retry, then the fallback vector.
  const VectorXd &lookup(const std::string &form) const;
};

// Text format: "count dim" header, then "token v1 ... vd" rows.
// The fallback is the componentwise mean of all loaded vectors.
EmbeddingTable load_embeddings(std::istream &in);

// Multiplies every entry and the fallback by `matrix` (side = table.dim).
void apply_alignment(EmbeddingTable &table, const MatrixXd &matrix);

// Alignment matrix as text: one row per line, space-separated.
MatrixXd load_alignment_matrix(std::istream &in, int dim);

// Externally produced per-token vectors, replacing word-embedding lookups.
struct ContextualStore {
  int dim = 0;
  std::unordered_map<std::string, std::vector<VectorXd>> by_sent;
};

// Lines "sent_id \t token_index \t v1 ... vd" with 1-based token_index.
// Every (sentence, token) of `corpus` must be covered exactly once.
ContextualStore load_contextual_embeddings(std::istream &in,
                                           const std::vector<Sentence> &corpus);

// Per-token observation vectors plus whatever gold annotation is available.
struct ObservedSequence {
  MatrixXd x;  // length x D, rows are tokens
  std::vector<int> upos;
  std::optional<std::vector<int>> gold_heads;
  int word_dim = 0;  // leading columns of x that come from word embeddings

  int length() const { return static_cast<int>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
};

// x_i = word vector, or concat(word vector, tag_embeddings row) when a
// K x dt tag-embedding matrix is supplied (parsing observations).
ObservedSequence build_observations(const Sentence &sentence,
                                    const EmbeddingTable &table,
                                    const MatrixXd *tag_embeddings = nullptr);
ObservedSequence build_observations(const Sentence &sentence,
                                    const ContextualStore &store,
                                    const MatrixXd *tag_embeddings = nullptr);

}  // namespace sflow

#endif  // SFLOW_CORPUS_HPP
