#include <doctest.h>

#include <filesystem>
#include <set>

#include "advtext/attack.hpp"
#include "support.hpp"

using namespace advtext;
using V = std::vector<std::string>;

namespace {

/// Two classes; each token adds its weight to class 1's logit.
testing::FnPredictor weighted(std::map<std::string, double> weights, double bias = 0.0) {
  return testing::FnPredictor(2, [weights, bias](std::span<const std::string> tokens) {
    double z = bias;
    for (const auto& t : tokens) {
      if (auto it = weights.find(t); it != weights.end()) z += it->second;
    }
    return victim::softmax(std::vector<double>{0.0, z});
  });
}

embed::EmbeddingTable flat_table(const V& words) {
  embed::EmbeddingTable t(2);
  for (const auto& w : words) t.set(w, std::vector<double>{1.0, 0.0});
  return t;
}

corpus::Document doc(V tokens, ClassIndex label) {
  corpus::Document d;
  d.tokens = std::move(tokens);
  d.label = label;
  return d;
}

}  // namespace

TEST_CASE("query budget") {
  attack::AttackConstraints c;
  CHECK(attack::query_budget(c, 44) == 2200);
  CHECK(attack::query_budget(c, 1) == 50);
  c.q_policy = attack::QueryPolicy::fixed;
  c.q_fixed = 300;
  CHECK(attack::query_budget(c, 7) == 300);
  CHECK(attack::query_budget(c, 500) == 300);
}

TEST_CASE("modification ratio") {
  CHECK(attack::modification_ratio(V{"a", "b"}, V{"a", "b"}) == 0.0);
  CHECK(attack::modification_ratio(V{"the", "movie", "was", "great"}, V{"the", "film", "was", "great"}) == 0.25);
  CHECK(attack::modification_ratio(V{"a", "b"}, V{"c", "d"}) == 1.0);
  CHECK_THROWS_AS(attack::modification_ratio(V{"a"}, V{"a", "b"}), Error);
}

TEST_CASE("constraint validation names the field") {
  attack::AttackConstraints c;
  c.rho_max = 1.5;
  try {
    c.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("rho_max") != std::string::npos);
  }
}

TEST_CASE("deletion importance uses one query per position") {
  const auto p = weighted({{"good", 3.0}, {"fine", 0.5}});
  const V tokens{"a", "fine", "good", "b", "c"};
  const auto clean = p.predict(tokens);
  attack::QueryCounter counter(p, 1000);
  const auto r = attack::word_importance(counter, tokens, 1, clean[1], attack::Ordering::deletion_importance);
  CHECK(counter.used() == tokens.size());
  CHECK(r.positions[0] == 2);
  CHECK(r.positions[1] == 1);
  CHECK(!r.partial);

  attack::QueryCounter same_counter(p, 1000);
  const V same{"x", "x", "x", "x"};
  const auto tie = attack::word_importance(same_counter, same, 0, p.predict(same)[0], attack::Ordering::deletion_importance);
  CHECK(tie.positions == std::vector<std::size_t>{0, 1, 2, 3});

  attack::QueryCounter tight(p, 3);
  const auto partial = attack::word_importance(tight, tokens, 1, clean[1], attack::Ordering::deletion_importance);
  CHECK(partial.partial);
  CHECK(tight.used() == 3);
}

TEST_CASE("typo candidates") {
  CHECK(attack::typo_candidates("cat", 4) == V{"act", "cta", "at", "ct"});
  const auto long_word = attack::typo_candidates("house", 50);
  for (const auto& c : long_word) {
    CHECK(c.front() == 'h');
    CHECK(c.back() == 'e');
    CHECK(c != "house");
  }
  CHECK(std::set<std::string>(long_word.begin(), long_word.end()).size() == long_word.size());
  for (const auto& c : attack::typo_candidates("ab", 10)) CHECK(c.size() == 2);
  CHECK(attack::typo_candidates("cat", 2).size() == 2);
}

TEST_CASE("synonym candidates follow the attacker index") {
  auto idx = std::make_shared<embed::SynonymIndex>(50, embed::IndexSource::attacker);
  std::vector<embed::Neighbor> list;
  for (int i = 0; i < 50; ++i) list.push_back({"s" + std::to_string(i), 1.0 - i * 0.01});
  idx->set("word", list);
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  CHECK(attack::candidates("word", recipe, 2) == V{"s0", "s1"});
  CHECK(attack::candidates("absent", recipe, 5).empty());

  recipe.name = attack::RecipeName::mixed_greedy;
  const auto mixed = attack::candidates("word", recipe, 6);
  CHECK(mixed.size() == 6);
  CHECK(mixed[0] == "s0");
  CHECK(std::set<std::string>(mixed.begin(), mixed.end()).size() == 6);
  CHECK(attack::candidates("absent", recipe, 3).size() == 3);
}

TEST_CASE("misclassified input is skipped after one query") {
  const auto p = weighted({{"good", 2.0}});
  const auto table = flat_table({"good", "bad"});
  attack::AttackRecipe recipe;
  const auto out = attack::greedy_attack(p, doc({"good", "day"}, 0), attack::AttackConstraints{}, recipe, table);
  CHECK(out.status == attack::Status::skipped);
  CHECK(out.queries_used == 1);
  CHECK(out.trace.empty());
}

TEST_CASE("single pivotal word flips with its top synonym") {
  const auto p = weighted({{"good", 2.0}, {"bad", -2.0}}, 0.0);
  const V words{"good", "bad", "fine", "the", "movie", "was", "a", "b", "c", "d"};
  const auto table = flat_table(words);
  auto idx = std::make_shared<embed::SynonymIndex>(3, embed::IndexSource::attacker);
  idx->set("good", {{"bad", 0.9}, {"fine", 0.8}});
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  const V tokens{"the", "movie", "was", "good", "a", "b", "c", "d", "the", "movie"};
  const testing::CountingPredictor counted(p);
  const auto out = attack::greedy_attack(counted, doc(tokens, 1), attack::AttackConstraints{}, recipe, table);
  CHECK(out.status == attack::Status::success);
  CHECK(out.rho == doctest::Approx(1.0 / tokens.size()));
  REQUIRE(out.trace.size() == 1);
  CHECK(out.trace[0].position == 3);
  CHECK(out.trace[0].word == "bad");
  CHECK(out.queries_used == counted.calls);
  CHECK(out.queries_used <= 50 * tokens.size());

  const auto cert = attack::certify(p, doc(tokens, 1), out, attack::AttackConstraints{}, table);
  CHECK(cert.valid());

  const auto brute = attack::brute_force_attack(p, doc(tokens, 1), {.k_max = 3}, recipe, table);
  CHECK(brute.status == attack::Status::success);
  CHECK(brute.rho == doctest::Approx(1.0 / tokens.size()));
}

TEST_CASE("attack gives up when no candidate lowers the true class") {
  const auto p = weighted({{"good", 2.0}, {"great", 3.0}});
  const auto table = flat_table({"good", "great", "x"});
  auto idx = std::make_shared<embed::SynonymIndex>(3, embed::IndexSource::attacker);
  idx->set("good", {{"great", 0.9}});
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  const auto out = attack::greedy_attack(p, doc({"good", "x"}, 1), {.rho_max = 1.0}, recipe, table);
  CHECK(out.status == attack::Status::failed);
  CHECK(out.trace.empty());
  const auto brute = attack::brute_force_attack(p, doc({"good", "x"}, 1), {.k_max = 3, .rho_max = 1.0}, recipe, table);
  CHECK(brute.status == attack::Status::failed);
}

TEST_CASE("similarity floor blocks distant substitutes") {
  const auto p = weighted({{"good", 2.0}, {"bad", -2.0}});
  embed::EmbeddingTable table(2);
  table.set("good", std::vector<double>{1.0, 0.0});
  table.set("bad", std::vector<double>{0.0, 1.0});
  table.set("x", std::vector<double>{1.0, 0.0});
  auto idx = std::make_shared<embed::SynonymIndex>(3, embed::IndexSource::attacker);
  idx->set("good", {{"bad", 0.9}});
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  // replacing good: mean (0,1)+(1,0) vs (2,0): cosine 0.707 < 0.84
  const auto out = attack::greedy_attack(p, doc({"good", "x"}, 1), {.rho_max = 1.0}, recipe, table);
  CHECK(out.status == attack::Status::failed);
  const auto loose = attack::greedy_attack(p, doc({"good", "x"}, 1), {.epsilon_min = 0.5, .rho_max = 1.0}, recipe, table);
  CHECK(loose.status == attack::Status::success);
  CHECK(loose.similarity >= 0.5);
}

TEST_CASE("query budget is a hard limit") {
  const auto p = weighted({{"a", 0.1}, {"b", 0.1}, {"c", 0.1}});
  const V words{"a", "b", "c", "d", "e", "f"};
  const auto table = flat_table(words);
  auto idx = std::make_shared<embed::SynonymIndex>(5, embed::IndexSource::attacker);
  for (const auto& w : words) {
    std::vector<embed::Neighbor> nb;
    for (const auto& o : words) {
      if (o != w) nb.push_back({o, 0.5});
    }
    idx->set(w, nb);
  }
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  for (std::size_t q : {1u, 2u, 4u, 7u, 12u}) {
    attack::AttackConstraints c{.rho_max = 1.0, .q_policy = attack::QueryPolicy::fixed, .q_fixed = q};
    const testing::CountingPredictor counted(p);
    const auto out = attack::greedy_attack(counted, doc({"a", "b", "c"}, 1), c, recipe, table);
    CHECK(out.queries_used <= q);
    CHECK(counted.calls == out.queries_used);
  }
}

TEST_CASE("trace log round trip") {
  attack::AttackOutcome a{.id = 3, .status = attack::Status::success, .adversarial = {},
                          .queries_used = 12, .query_budget = 100, .rho = 0.25, .similarity = 0.9,
                          .trace = {{1, "film", 0.3}}};
  attack::AttackOutcome b{.id = 4, .status = attack::Status::skipped, .queries_used = 1, .query_budget = 50};
  const auto path = std::filesystem::temp_directory_path() / "advtext_trace.jsonl";
  const std::vector<attack::AttackOutcome> outs{a, b};
  attack::write_trace_log(outs, path);
  const auto back = attack::read_trace_log(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == 3);
  CHECK(back[0].status == attack::Status::success);
  CHECK(back[0].trace == a.trace);
  CHECK(back[0].queries_used == 12);
  CHECK(back[1].status == attack::Status::skipped);
}

TEST_CASE("attack_all keeps input order across threads") {
  const auto p = weighted({{"good", 2.0}, {"bad", -2.0}});
  const auto table = flat_table({"good", "bad", "x"});
  auto idx = std::make_shared<embed::SynonymIndex>(3, embed::IndexSource::attacker);
  idx->set("good", {{"bad", 0.9}});
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  std::vector<corpus::Document> docs;
  for (std::uint64_t i = 0; i < 9; ++i) {
    auto d = doc(i % 3 ? V{"good", "x"} : V{"bad", "x"}, 1);
    d.id = i;
    docs.push_back(d);
  }
  const attack::AttackConstraints c{.rho_max = 1.0};
  const auto one = attack::attack_all(p, docs, c, recipe, table, 1);
  const auto three = attack::attack_all(p, docs, c, recipe, table, 3);
  CHECK(one == three);
  for (std::size_t i = 0; i < docs.size(); ++i) CHECK(one[i].id == i);
}

TEST_CASE("exhaustive search refuses large instances") {
  const auto p = weighted({{"good", 2.0}});
  V words, tokens;
  for (int i = 0; i < 40; ++i) words.push_back("w" + std::to_string(i));
  for (int i = 0; i < 40; ++i) tokens.push_back(words[i]);
  const auto table = flat_table(words);
  auto idx = std::make_shared<embed::SynonymIndex>(4, embed::IndexSource::attacker);
  attack::AttackRecipe recipe{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance, idx};
  CHECK_THROWS_AS(attack::brute_force_attack(p, doc(tokens, 0), {.k_max = 4}, recipe, table), Error);
}
