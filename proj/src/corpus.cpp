#include "sflow/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

namespace sflow {

const std::vector<std::string> kUposTags = {
    "ADJ",  "ADP",   "ADV",  "AUX",  "CCONJ", "DET",  "INTJ", "NOUN", "NUM",
    "PART", "PRON",  "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"};

const int kPunctId = 12;  // index of "PUNCT" above

int upos_id(const std::string &tag) {
  for (int i = 0; i < kNumUposTags; ++i)
    if (kUposTags[i] == tag) return i;
  throw DataError("unknown UPOS tag '" + tag + "'");
}

const std::string &upos_name(int id) {
  if (id < 0 || id >= kNumUposTags)
    throw DataError("UPOS id " + std::to_string(id) + " out of range");
  return kUposTags[id];
}

namespace {

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool all_digits(const std::string &s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isdigit(c); });
}

// Token id is "n-m" (multiword range) or "n.m" (empty node)?
bool is_skipped_id(const std::string &id) {
  auto dash = id.find('-');
  auto dot = id.find('.');
  if (dash != std::string::npos)
    return all_digits(id.substr(0, dash)) && all_digits(id.substr(dash + 1));
  if (dot != std::string::npos)
    return all_digits(id.substr(0, dot)) && all_digits(id.substr(dot + 1));
  return false;
}

std::string strip(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct RawToken {
  std::string form;
  std::string upos;
  std::string head;
  std::string deprel;
};

Sentence finish_sentence(std::vector<RawToken> &raw, std::string &sent_id,
                         int sentence_index, int first_line) {
  Sentence sent;
  sent.sent_id =
      sent_id.empty() ? std::to_string(sentence_index + 1) : sent_id;
  const int l = static_cast<int>(raw.size());
  bool any_head = false, any_deprel = false;
  for (const auto &t : raw) {
    if (t.head != "_") any_head = true;
    if (t.deprel != "_") any_deprel = true;
  }
  std::vector<int> heads;
  std::vector<std::string> deprels;
  for (int i = 0; i < l; ++i) {
    sent.tokens.push_back(raw[i].form);
    sent.upos.push_back(upos_id(raw[i].upos));
    if (any_head) {
      const std::string &h = raw[i].head;
      if (!all_digits(h))
        throw DataError("non-integer head '" + h + "' near line " +
                        std::to_string(first_line));
      heads.push_back(std::stoi(h));
    }
    if (any_deprel) deprels.push_back(raw[i].deprel);
  }
  if (any_head) {
    validate_heads(heads, sent.sent_id);
    sent.heads = std::move(heads);
  }
  if (any_deprel) sent.deprels = std::move(deprels);
  raw.clear();
  sent_id.clear();
  return sent;
}

}  // namespace

void validate_heads(const std::vector<int> &heads, const std::string &sent_id) {
  const int l = static_cast<int>(heads.size());
  int roots = 0;
  for (int h : heads) {
    if (h < 0 || h > l)
      throw DataError("head index " + std::to_string(h) +
                      " out of range in sentence " + sent_id);
    if (h == 0) ++roots;
  }
  if (roots != 1)
    throw DataError("sentence " + sent_id + " has " + std::to_string(roots) +
                    " roots; expected exactly one");
  // Every token must reach the root: walk up with a step bound.
  for (int i = 1; i <= l; ++i) {
    int cur = i, steps = 0;
    while (cur != 0) {
      cur = heads[cur - 1];
      if (++steps > l)
        throw DataError("cycle in heads of sentence " + sent_id);
    }
  }
}

std::vector<Sentence> parse_conllu(std::istream &in) {
  std::vector<Sentence> sentences;
  std::vector<RawToken> raw;
  std::string sent_id;
  std::string line;
  int line_no = 0;
  int block_first_line = 0;

  auto flush = [&]() {
    if (!raw.empty())
      sentences.push_back(finish_sentence(raw, sent_id,
                                          static_cast<int>(sentences.size()),
                                          block_first_line));
    sent_id.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (strip(line).empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq != std::string::npos &&
          strip(line.substr(1, eq - 1)) == "sent_id")
        sent_id = strip(line.substr(eq + 1));
      continue;
    }
    auto fields = split(line, '\t');
    if (fields.size() != 10)
      throw DataError("line " + std::to_string(line_no) + ": expected 10 " +
                      "tab-separated columns, found " +
                      std::to_string(fields.size()));
    if (is_skipped_id(fields[0])) continue;
    if (!all_digits(fields[0]))
      throw DataError("line " + std::to_string(line_no) +
                      ": malformed token id '" + fields[0] + "'");
    if (raw.empty()) block_first_line = line_no;
    raw.push_back(RawToken{fields[1], fields[3], fields[6], fields[7]});
  }
  flush();
  return sentences;
}

void write_conllu(std::ostream &out, const std::vector<Sentence> &sentences) {
  for (const auto &s : sentences) {
    out << "# sent_id = " << s.sent_id << "\n";
    for (int i = 0; i < s.length(); ++i) {
      out << (i + 1) << '\t' << s.tokens[i] << "\t_\t"
          << upos_name(s.upos[i]) << "\t_\t_\t";
      if (s.heads)
        out << (*s.heads)[i];
      else
        out << '_';
      out << '\t' << (s.deprels ? (*s.deprels)[i] : std::string("_"))
          << "\t_\t_\n";
    }
    out << "\n";
  }
}

const VectorXd &EmbeddingTable::lookup(const std::string &form) const {
  auto it = entries.find(form);
  if (it != entries.end()) return it->second;
  std::string lower = form;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  it = entries.find(lower);
  if (it != entries.end()) return it->second;
  return fallback;
}

EmbeddingTable load_embeddings(std::istream &in) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty embedding file");
  std::istringstream hs(header);
  long count = 0;
  int dim = 0;
  if (!(hs >> count >> dim) || dim <= 0)
    throw DataError("embedding header must be 'count dim'");

  EmbeddingTable table;
  table.dim = dim;
  VectorXd sum = VectorXd::Zero(dim);
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    if (strip(line).empty()) continue;
    ++row;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    VectorXd v(dim);
    int d = 0;
    double val;
    while (ls >> val) {
      if (d < dim) v(d) = val;
      ++d;
    }
    if (d != dim)
      throw DataError("embedding row " + std::to_string(row) + " ('" + token +
                      "') has " + std::to_string(d) + " values; expected " +
                      std::to_string(dim));
    sum += v;
    table.entries[token] = std::move(v);
  }
  table.fallback = table.entries.empty()
                       ? VectorXd::Zero(dim)
                       : VectorXd(sum / static_cast<double>(table.entries.size()));
  return table;
}

void apply_alignment(EmbeddingTable &table, const MatrixXd &matrix) {
  if (matrix.rows() != matrix.cols() || matrix.rows() != table.dim)
    throw DataError("alignment matrix is " + std::to_string(matrix.rows()) +
                    "x" + std::to_string(matrix.cols()) +
                    "; expected square of side " + std::to_string(table.dim));
  for (auto &kv : table.entries) kv.second = matrix * kv.second;
  table.fallback = matrix * table.fallback;
}

MatrixXd load_alignment_matrix(std::istream &in, int dim) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (strip(line).empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    rows.push_back(std::move(row));
  }
  if (static_cast<int>(rows.size()) != dim)
    throw DataError("alignment matrix has " + std::to_string(rows.size()) +
                    " rows; expected " + std::to_string(dim));
  MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i) {
    if (static_cast<int>(rows[i].size()) != dim)
      throw DataError("alignment matrix row " + std::to_string(i + 1) +
                      " has " + std::to_string(rows[i].size()) +
                      " values; expected " + std::to_string(dim));
    for (int j = 0; j < dim; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

ContextualStore load_contextual_embeddings(
    std::istream &in, const std::vector<Sentence> &corpus) {
  std::unordered_map<std::string, int> lengths;
  for (const auto &s : corpus) {
    if (lengths.count(s.sent_id))
      throw DataError("duplicate sent_id '" + s.sent_id +
                      "' in corpus; contextual vectors need unique ids");
    lengths[s.sent_id] = s.length();
  }

  ContextualStore store;
  store.dim = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw DataError("contextual line " + std::to_string(line_no) +
                      ": expected 'sent_id\\tindex\\tvalues'");
    const std::string &sid = fields[0];
    auto it = lengths.find(sid);
    if (it == lengths.end())
      throw DataError("contextual line " + std::to_string(line_no) +
                      ": unknown sent_id '" + sid + "'");
    if (!all_digits(fields[1]))
      throw DataError("contextual line " + std::to_string(line_no) +
                      ": bad token index '" + fields[1] + "'");
    int idx = std::stoi(fields[1]);
    if (idx < 1 || idx > it->second)
      throw DataError("contextual line " + std::to_string(line_no) +
                      ": token index " + std::to_string(idx) +
                      " out of range for sentence '" + sid + "'");
    std::istringstream vs(fields[2]);
    std::vector<double> vals;
    double v;
    while (vs >> v) vals.push_back(v);
    if (store.dim < 0) store.dim = static_cast<int>(vals.size());
    if (static_cast<int>(vals.size()) != store.dim || store.dim == 0)
      throw DataError("contextual line " + std::to_string(line_no) + ": " +
                      std::to_string(vals.size()) + " values; expected " +
                      std::to_string(store.dim));
    auto &vecs = store.by_sent[sid];
    vecs.resize(it->second);
    if (vecs[idx - 1].size() != 0)
      throw DataError("duplicate contextual vector for (" + sid + ", " +
                      std::to_string(idx) + ")");
    vecs[idx - 1] = Eigen::Map<VectorXd>(vals.data(), store.dim);
  }

  for (const auto &s : corpus) {
    auto it = store.by_sent.find(s.sent_id);
    for (int i = 0; i < s.length(); ++i) {
      if (it == store.by_sent.end() || it->second[i].size() == 0)
        throw DataError("missing contextual vector for (" + s.sent_id + ", " +
                        std::to_string(i + 1) + ")");
    }
  }
  return store;
}

namespace {

ObservedSequence assemble(const Sentence &sentence, int word_dim,
                          const std::function<const VectorXd &(int)> &word_vec,
                          const MatrixXd *tag_embeddings) {
  const int l = sentence.length();
  const int tag_dim =
      tag_embeddings ? static_cast<int>(tag_embeddings->cols()) : 0;
  ObservedSequence obs;
  obs.word_dim = word_dim;
  obs.upos = sentence.upos;
  obs.gold_heads = sentence.heads;
  obs.x.resize(l, word_dim + tag_dim);
  for (int i = 0; i < l; ++i) {
    obs.x.row(i).head(word_dim) = word_vec(i);
    if (tag_embeddings) {
      if (sentence.upos[i] >= tag_embeddings->rows())
        throw DataError("UPOS id out of range for tag embeddings in sentence " +
                        sentence.sent_id);
      obs.x.row(i).tail(tag_dim) = tag_embeddings->row(sentence.upos[i]);
    }
  }
  require_finite(obs.x, "observations for sentence " + sentence.sent_id);
  return obs;
}

}  // namespace

ObservedSequence build_observations(const Sentence &sentence,
                                    const EmbeddingTable &table,
                                    const MatrixXd *tag_embeddings) {
  return assemble(
      sentence, table.dim,
      [&](int i) -> const VectorXd & { return table.lookup(sentence.tokens[i]); },
      tag_embeddings);
}

ObservedSequence build_observations(const Sentence &sentence,
                                    const ContextualStore &store,
                                    const MatrixXd *tag_embeddings) {
  auto it = store.by_sent.find(sentence.sent_id);
  if (it == store.by_sent.end())
    throw DataError("no contextual vectors for sentence " + sentence.sent_id);
  return assemble(
      sentence, store.dim,
      [&](int i) -> const VectorXd & { return it->second[i]; }, tag_embeddings);
}

}  // namespace sflow
