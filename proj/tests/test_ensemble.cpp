#include <doctest.h>

#include <cmath>

#include "advtext/ensemble.hpp"
#include "support.hpp"

using namespace advtext;

namespace {

victim::Model two_class_bias(double b0, double b1) {
  victim::Model m(corpus::Vocabulary::from_words({"x"}), 1, 1, 2, victim::Activation::tanh);
  m.b2 = {b0, b1};
  return m;
}

}  // namespace

TEST_CASE("singleton ensemble equals plain prediction") {
  const auto m = testing::random_model(1, 10, 3, 4, 3, victim::Activation::tanh, 2.0);
  const std::vector<std::string> doc{"w1", "w5", "w7"};
  const auto plain = victim::forward(m, m.vocab().encode(doc));
  for (auto s : {victim::Strategy::logit, victim::Strategy::vote}) {
    for (auto p : {victim::Perturber::identity, victim::Perturber::random_mask}) {
      victim::EnsembleConfig cfg{.strategy = s, .size = 1, .perturber = p, .mask_rate = 0.0};
      const auto out = victim::ensemble_predict(m, doc, cfg);
      CHECK(out.label == victim::argmax(plain.logits));
      CHECK(out.members.size() == 1);
      if (s == victim::Strategy::logit) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(out.probs[c] == doctest::Approx(plain.probs[c]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("identity perturber returns the plain prediction for any size") {
  const auto m = testing::random_model(2, 10, 3, 4, 3, victim::Activation::relu, 2.0);
  const std::vector<std::string> doc{"w2", "w3"};
  const auto plain = victim::forward(m, m.vocab().encode(doc));
  for (std::size_t c : {2u, 7u, 16u}) {
    victim::EnsembleConfig cfg{.strategy = victim::Strategy::logit, .size = c};
    const auto out = victim::ensemble_predict(m, doc, cfg);
    CHECK(out.label == victim::argmax(plain.logits));
    for (std::size_t k = 0; k < 3; ++k) CHECK(out.probs[k] == doctest::Approx(plain.probs[k]).epsilon(1e-12));
  }
}

TEST_CASE("vote ties go to the lowest class") {
  // equal logits: every member votes class 0 by argmax tie-break
  const auto tie = two_class_bias(0.0, 0.0);
  victim::EnsembleConfig cfg{.strategy = victim::Strategy::vote, .size = 10};
  CHECK(victim::ensemble_predict(tie, std::vector<std::string>{"x"}, cfg).label == 0);

  // half the members see a masked input that favors class 1
  victim::Model m(corpus::Vocabulary::from_words({"x"}), 1, 1, 2, victim::Activation::tanh);
  m.embedding(corpus::Vocabulary::kUnk, 0) = 1.0;
  m.w1(0, 0) = 1.0;
  m.w2(0, 1) = 1.0;
  std::size_t masked = 0;
  std::uint64_t seed = 0;
  // find a seed whose 10 members split 5/5 between masked and unmasked
  for (; seed < 10000; ++seed) {
    masked = 0;
    for (std::size_t k = 0; k < 10; ++k) masked += hashed_uniform(seed, k, 0) < 0.5;
    if (masked == 5) break;
  }
  REQUIRE(masked == 5);
  victim::EnsembleConfig split{.strategy = victim::Strategy::vote, .size = 10,
                               .perturber = victim::Perturber::random_mask, .mask_rate = 0.5, .seed = seed};
  const auto out = victim::ensemble_predict(m, std::vector<std::string>{"x"}, split);
  CHECK(out.probs[0] == 0.5);
  CHECK(out.probs[1] == 0.5);
  CHECK(out.label == 0);
}

TEST_CASE("vote probabilities are multiples of 1/C") {
  const auto m = testing::random_model(3, 12, 3, 5, 4, victim::Activation::tanh, 3.0);
  victim::EnsembleConfig cfg{.strategy = victim::Strategy::vote, .size = 16,
                             .perturber = victim::Perturber::random_mask, .mask_rate = 0.4, .seed = 11};
  advtext::Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::string> doc;
    for (int i = 0; i < 6; ++i) doc.push_back("w" + std::to_string(rng.below(12)));
    const auto out = victim::ensemble_predict(m, doc, cfg);
    double s = 0;
    for (double p : out.probs) {
      const double scaled = p * 16;
      CHECK(scaled == std::round(scaled));
      s += p;
    }
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("ensemble prediction is a deterministic function of the input") {
  const auto m = testing::random_model(4, 12, 3, 5, 3, victim::Activation::tanh, 2.0);
  auto index = std::make_shared<embed::SynonymIndex>(3, embed::IndexSource::defender);
  index->set("w1", {{"w2", 0.9}, {"w3", 0.8}});
  index->set("w2", {{"w1", 0.9}});
  victim::EnsembleConfig cfg{.strategy = victim::Strategy::logit, .size = 8,
                             .perturber = victim::Perturber::random_synonym, .index = index, .synonym_k = 2, .seed = 5};
  victim::Ensemble e(m, cfg);
  const std::vector<std::string> doc{"w1", "w2", "w4"};
  CHECK(e.predict(doc) == e.predict(doc));
  bool changed = false;
  for (const auto& member : e.run(doc).members) {
    changed = changed || member.logits != victim::forward(m, m.vocab().encode(doc)).logits;
  }
  CHECK(changed);
}

TEST_CASE("substitution sets hold the word and its leading neighbors") {
  const auto vocab = corpus::Vocabulary::from_words({"a", "b", "c", "d"});
  embed::SynonymIndex idx(3, embed::IndexSource::defender);
  idx.set("a", {{"b", 0.9}, {"c", 0.8}, {"d", 0.7}});
  const auto sets = victim::substitution_sets(vocab, idx, 2);
  CHECK(sets[vocab.id("a")] == std::vector<TokenId>{vocab.id("a"), vocab.id("b"), vocab.id("c")});
  CHECK(sets[vocab.id("d")] == std::vector<TokenId>{vocab.id("d")});
}
