#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "sflow/corpus.hpp"

using namespace sflow;

namespace {

const char *kTwoTokenBlock =
    "1\tdogs\tdog\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
    "2\tbark\tbark\tVERB\t_\t_\t0\troot\t_\t_\n";

std::vector<Sentence> parse(const std::string &text) {
  std::istringstream in(text);
  return parse_conllu(in);
}

}  // namespace

TEST_CASE("two-token block parses into one sentence") {
  auto sents = parse(kTwoTokenBlock);
  REQUIRE(sents.size() == 1);
  const Sentence &s = sents[0];
  CHECK(s.tokens == std::vector<std::string>{"dogs", "bark"});
  CHECK(s.upos == std::vector<int>{upos_id("NOUN"), upos_id("VERB")});
  REQUIRE(s.heads.has_value());
  CHECK(*s.heads == std::vector<int>{2, 0});
  REQUIRE(s.deprels.has_value());
  CHECK(*s.deprels == std::vector<std::string>{"nsubj", "root"});
}

TEST_CASE("empty input yields empty corpus") {
  CHECK(parse("").empty());
  CHECK(parse("\n\n\n").empty());
}

TEST_CASE("multiword ranges and empty nodes are skipped") {
  std::string text =
      "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
      "1\tdo\tdo\tAUX\t_\t_\t0\troot\t_\t_\n"
      "2\tnot\tnot\tPART\t_\t_\t1\tadvmod\t_\t_\n"
      "2.1\tghost\t_\tNOUN\t_\t_\t_\t_\t_\t_\n";
  auto sents = parse(text);
  REQUIRE(sents.size() == 1);
  CHECK(sents[0].length() == 2);
  CHECK(sents[0].tokens == std::vector<std::string>{"do", "not"});
}

TEST_CASE("sent_id comments are kept, others dropped") {
  std::string text = std::string("# sent_id = train-42\n# text = dogs bark\n") +
                     kTwoTokenBlock;
  auto sents = parse(text);
  REQUIRE(sents.size() == 1);
  CHECK(sents[0].sent_id == "train-42");
  // Without a sent_id comment the ordinal is used.
  auto plain = parse(kTwoTokenBlock);
  CHECK(plain[0].sent_id == "1");
}

TEST_CASE("malformed lines name the line number") {
  CHECK_THROWS_WITH_AS(parse("1\tdogs\tNOUN\n"),
                       doctest::Contains("line 1"), DataError);
  std::string bad_head =
      "1\tdogs\tdog\tNOUN\t_\t_\tx\tnsubj\t_\t_\n"
      "2\tbark\tbark\tVERB\t_\t_\t0\troot\t_\t_\n";
  CHECK_THROWS_AS(parse(bad_head), DataError);
}

TEST_CASE("tree validation rejects bad head structures") {
  // Two roots.
  CHECK_THROWS_AS(parse("1\ta\t_\tNOUN\t_\t_\t0\troot\t_\t_\n"
                        "2\tb\t_\tVERB\t_\t_\t0\troot\t_\t_\n"),
                  DataError);
  // Cycle.
  CHECK_THROWS_AS(parse("1\ta\t_\tNOUN\t_\t_\t2\tdep\t_\t_\n"
                        "2\tb\t_\tVERB\t_\t_\t1\tdep\t_\t_\n"
                        "3\tc\t_\tVERB\t_\t_\t0\troot\t_\t_\n"),
                  DataError);
  // Head out of range.
  CHECK_THROWS_AS(parse("1\ta\t_\tNOUN\t_\t_\t5\tdep\t_\t_\n"),
                  DataError);
}

TEST_CASE("unknown UPOS tag is rejected") {
  CHECK_THROWS_AS(parse("1\ta\t_\tNOUNISH\t_\t_\t0\troot\t_\t_\n"), DataError);
}

TEST_CASE("unannotated HEAD column gives absent heads") {
  auto sents = parse("1\tdogs\t_\tNOUN\t_\t_\t_\t_\t_\t_\n"
                     "2\tbark\t_\tVERB\t_\t_\t_\t_\t_\t_\n");
  REQUIRE(sents.size() == 1);
  CHECK(!sents[0].heads.has_value());
  CHECK(!sents[0].deprels.has_value());
}

TEST_CASE("parse_conllu round-trips through write_conllu") {
  std::string text = std::string("# sent_id = a\n") + kTwoTokenBlock + "\n" +
                     "# sent_id = b\n"
                     "1\tok\tok\tINTJ\t_\t_\t0\troot\t_\t_\n";
  auto sents = parse(text);
  std::ostringstream out;
  write_conllu(out, sents);
  auto again = parse(out.str());
  REQUIRE(again.size() == sents.size());
  for (size_t i = 0; i < sents.size(); ++i) {
    CHECK(again[i].tokens == sents[i].tokens);
    CHECK(again[i].upos == sents[i].upos);
    CHECK(again[i].heads == sents[i].heads);
    CHECK(again[i].deprels == sents[i].deprels);
    CHECK(again[i].sent_id == sents[i].sent_id);
  }
}

TEST_CASE("embedding table load, fallback and lookup") {
  std::istringstream in("2 2\na 1 0\nb 0 1\n");
  EmbeddingTable table = load_embeddings(in);
  CHECK(table.dim == 2);
  CHECK(table.entries.at("a") == VectorXd(Eigen::Vector2d(1, 0)));
  CHECK(table.entries.at("b") == VectorXd(Eigen::Vector2d(0, 1)));
  CHECK(table.fallback == VectorXd(Eigen::Vector2d(0.5, 0.5)));
  // Unseen token falls back to the mean vector.
  CHECK(table.lookup("c") == table.fallback);
  // Lowercased retry.
  CHECK(table.lookup("A") == table.entries.at("a"));
}

TEST_CASE("embedding dimension mismatch names the row") {
  std::istringstream in("2 2\na 1 0 3\nb 0 1\n");
  CHECK_THROWS_WITH_AS(load_embeddings(in), doctest::Contains("row 1"),
                       DataError);
}

TEST_CASE("alignment application and shape checks") {
  std::istringstream in("2 2\na 1 0\nb 0 1\n");
  EmbeddingTable table = load_embeddings(in);

  SUBCASE("identity leaves the table unchanged") {
    apply_alignment(table, MatrixXd::Identity(2, 2));
    CHECK(table.entries.at("a") == VectorXd(Eigen::Vector2d(1, 0)));
  }
  SUBCASE("scaling by 2I doubles entries") {
    apply_alignment(table, 2.0 * MatrixXd::Identity(2, 2));
    CHECK(table.entries.at("a") == VectorXd(Eigen::Vector2d(2, 0)));
    CHECK(table.fallback == VectorXd(Eigen::Vector2d(1, 1)));
  }
  SUBCASE("wrong side is rejected") {
    CHECK_THROWS_AS(apply_alignment(table, MatrixXd::Identity(3, 3)),
                    DataError);
  }
}

TEST_CASE("orthogonal alignment preserves pairwise distances") {
  std::ostringstream text;
  Rng rng(7);
  const int n = 20, d = 5;
  text << n << " " << d << "\n";
  std::normal_distribution<double> dist(0, 1);
  for (int i = 0; i < n; ++i) {
    text << "w" << i;
    for (int j = 0; j < d; ++j) text << " " << dist(rng);
    text << "\n";
  }
  std::istringstream in(text.str());
  EmbeddingTable table = load_embeddings(in);
  EmbeddingTable before = table;

  MatrixXd g = gaussian_matrix(d, d, 1.0, rng);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ();
  apply_alignment(table, q);

  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double orig = (before.entries.at("w" + std::to_string(i)) -
                     before.entries.at("w" + std::to_string(j)))
                        .norm();
      double now = (table.entries.at("w" + std::to_string(i)) -
                    table.entries.at("w" + std::to_string(j)))
                       .norm();
      CHECK(std::abs(orig - now) < 1e-6);
    }
}

TEST_CASE("contextual store covers the corpus or errors") {
  auto sents = parse(std::string("# sent_id = s1\n") + kTwoTokenBlock);

  SUBCASE("complete store") {
    std::istringstream in("s1\t1\t1 2\ns1\t2\t3 4\n");
    ContextualStore store = load_contextual_embeddings(in, sents);
    CHECK(store.dim == 2);
    CHECK(store.by_sent.at("s1").size() == 2);
    ObservedSequence obs = build_observations(sents[0], store);
    CHECK(obs.x(1, 1) == 4.0);
  }
  SUBCASE("missing token is named") {
    std::istringstream in("s1\t1\t1 2\n");
    CHECK_THROWS_WITH_AS(load_contextual_embeddings(in, sents),
                         doctest::Contains("(s1, 2)"), DataError);
  }
  SUBCASE("duplicate key is rejected") {
    std::istringstream in("s1\t1\t1 2\ns1\t1\t9 9\ns1\t2\t3 4\n");
    CHECK_THROWS_AS(load_contextual_embeddings(in, sents), DataError);
  }
  SUBCASE("dimension inconsistency is rejected") {
    std::istringstream in("s1\t1\t1 2\ns1\t2\t3 4 5\n");
    CHECK_THROWS_AS(load_contextual_embeddings(in, sents), DataError);
  }
}

TEST_CASE("build_observations concatenates tag embeddings") {
  auto sents = parse(kTwoTokenBlock);
  std::istringstream in("2 2\ndogs 1 0\nbark 0 1\n");
  EmbeddingTable table = load_embeddings(in);

  SUBCASE("tagging observations equal the word vectors") {
    ObservedSequence obs = build_observations(sents[0], table);
    CHECK(obs.dim() == 2);
    CHECK(obs.word_dim == 2);
    CHECK(obs.x.row(0) == Eigen::RowVector2d(1, 0));
    CHECK(obs.length() == 2);
  }
  SUBCASE("parsing observations append the tag embedding row") {
    MatrixXd tag_emb = MatrixXd::Zero(kNumUposTags, 1);
    tag_emb(upos_id("NOUN"), 0) = 0.5;
    ObservedSequence obs = build_observations(sents[0], table, &tag_emb);
    CHECK(obs.dim() == 3);
    CHECK(obs.x(0, 2) == 0.5);
    CHECK(obs.x(0, 0) == 1.0);
  }
}

TEST_CASE("every UPOS tag id round-trips") {
  for (int i = 0; i < kNumUposTags; ++i) CHECK(upos_id(upos_name(i)) == i);
  CHECK(upos_name(kPunctId) == "PUNCT");
}
