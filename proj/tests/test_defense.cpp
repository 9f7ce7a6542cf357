#include <doctest.h>

#include <cmath>

#include "advtext/bench.hpp"
#include "advtext/defense.hpp"
#include "support.hpp"

using namespace advtext;
using defense::Method;

namespace {

std::vector<victim::Example> toy_examples(const victim::Model& m, std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  return testing::random_batch(rng, m, n, 8);
}

const victim::TrainConfig kTrain{.epochs = 3, .learning_rate = 0.3, .batch_size = 4, .embedding_lr_scale = 1.0, .seed = 2};

const bench::Assets& small_toy() {
  static const bench::Assets assets = [] {
    toy::ToyConfig c;
    c.train_docs = 400;
    c.test_docs = 200;
    c.vocab_size = 300;
    c.topic_words_per_class = 20;
    return bench::make_assets("small", toy::make_toy(c), {.attacker_k = 10, .defender_k = 10});
  }();
  return assets;
}

}  // namespace

TEST_CASE("one ascent step from zero has norm alpha") {
  const auto m = testing::random_model(1, 10, 4, 5, 3, victim::Activation::tanh);
  const auto batch = toy_examples(m, 1, 6);
  auto state = defense::zero_state(batch, 4, 0.37, std::nullopt, false);
  defense::ascend(m, batch, state);
  for (const auto& d : state.delta) CHECK(d.frobenius() == doctest::Approx(0.37).epsilon(1e-12));
  CHECK(state.step == 1);
}

TEST_CASE("projection scales a norm-2 perturbation onto the unit ball") {
  const auto m = testing::random_model(2, 10, 4, 5, 3, victim::Activation::tanh);
  const auto batch = toy_examples(m, 2, 3);
  auto state = defense::zero_state(batch, 4, 2.0, 1.0, true);
  defense::ascend(m, batch, state);
  for (const auto& d : state.delta) CHECK(d.frobenius() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("unprojected growth is bounded by t alpha; a loose bound never binds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = testing::random_model(seed, 10, 3, 4, 2, victim::Activation::relu);
    const auto batch = toy_examples(m, seed, 4);
    const double alpha = 0.05 + 0.01 * seed;
    const std::size_t t = 1 + seed % 6;
    auto free = defense::zero_state(batch, 3, alpha, std::nullopt, false);
    auto loose = defense::zero_state(batch, 3, alpha, t * alpha, true);
    for (std::size_t s = 1; s <= t; ++s) {
      defense::ascend(m, batch, free);
      defense::ascend(m, batch, loose);
      for (const auto& d : free.delta) CHECK(d.frobenius() <= s * alpha + 1e-6);
    }
    CHECK(free.delta == loose.delta);
  }
}

TEST_CASE("small ascent steps do not lower the loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = testing::random_model(seed, 10, 3, 4, 3, victim::Activation::tanh);
    const auto batch = toy_examples(m, seed + 100, 5);
    auto state = defense::zero_state(batch, 3, 1e-4, std::nullopt, false);
    const double before = defense::ascend(m, batch, state).loss;
    const double after = victim::loss_and_grads(m, batch, state.delta).loss;
    CHECK(after >= before - 1e-8);
  }
}

TEST_CASE("degenerate gradients leave delta unchanged") {
  victim::Model m(corpus::Vocabulary::from_words({"a"}), 2, 2, 2, victim::Activation::tanh);
  const std::vector<victim::Example> batch{{{2}, 0}};
  auto state = defense::zero_state(batch, 2, 0.5, std::nullopt, false);
  defense::ascend(m, batch, state);
  CHECK(state.degenerate == 1);
  CHECK(state.delta[0].frobenius() == 0.0);
}

TEST_CASE("degenerate schedules reduce to plain training") {
  const auto init = testing::random_model(5, 12, 3, 4, 3, victim::Activation::tanh, 0.5);
  const auto data = toy_examples(init, 5, 24);
  auto plain = init;
  victim::train(plain, data, kTrain);

  SUBCASE("pgd with t = 1 and alpha = 0") {
    auto m = init;
    defense::pgd_train(m, data, kTrain, {.method = Method::pgd_k, .steps = 1, .alpha = 0.0});
    CHECK(m == plain);
  }
  SUBCASE("freelb with t = 1 and a zero start") {
    auto m = init;
    defense::freelb_train(m, data, kTrain, {.method = Method::freelb, .steps = 1, .alpha = 0.0});
    CHECK(m == plain);
  }
  SUBCASE("mask rate 0") {
    auto m = init;
    defense::smooth_train(m, data, kTrain, {.method = Method::smooth_mask, .mask_rate = 0.0});
    CHECK(m == plain);
  }
}

TEST_CASE("mask rate 1 leaves only the class prior") {
  const auto& a = small_toy();
  auto m = bench::initial_model(a, {}, 1);
  defense::DefenseConfig cfg{.method = Method::smooth_mask, .mask_rate = 1.0};
  defense::defend(m, a.train, {.epochs = 3, .learning_rate = 0.5, .batch_size = 16, .embedding_lr_scale = 0, .seed = 1},
                  cfg);
  victim::Ensemble ens(m, defense::matching_ensemble(cfg, victim::Strategy::vote, 4, 1));
  // balanced four-class test split: a constant prediction is right a quarter of the time
  CHECK(bench::evaluate_clean(ens, a.test) == doctest::Approx(25.0));
}

TEST_CASE("gradient trainers are deterministic and differ from plain training") {
  const auto init = testing::random_model(6, 12, 3, 4, 3, victim::Activation::relu, 0.5);
  const auto data = toy_examples(init, 6, 20);
  auto plain = init;
  victim::train(plain, data, kTrain);
  for (auto method : {Method::pgd_k, Method::freelb, Method::freelb_pp}) {
    defense::DefenseConfig cfg{.method = method, .steps = 3, .alpha = 0.1, .epsilon = 0.2};
    auto a = init, b = init;
    method == Method::pgd_k ? defense::pgd_train(a, data, kTrain, cfg) : defense::freelb_train(a, data, kTrain, cfg);
    method == Method::pgd_k ? defense::pgd_train(b, data, kTrain, cfg) : defense::freelb_train(b, data, kTrain, cfg);
    CHECK(a == b);
    CHECK(!(a == plain));
  }
}

TEST_CASE("pgd training lowers the loss at its own worst-case perturbation") {
  const auto& a = small_toy();
  const auto held_out = victim::encode(a.test, bench::victim_vocabulary(a));
  const victim::TrainConfig train{.epochs = 8, .learning_rate = 0.5, .batch_size = 16, .embedding_lr_scale = 0, .seed = 0};
  const defense::DefenseConfig pgd{.method = Method::pgd_k, .steps = 5, .alpha = 0.1};
  const auto adversarial_loss = [&](const victim::Model& m) {
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < held_out.size(); start += 20, ++batches) {
      const std::span<const victim::Example> batch(held_out.data() + start, std::min<std::size_t>(20, held_out.size() - start));
      auto state = defense::zero_state(batch, m.dim(), pgd.alpha, std::nullopt, false);
      for (std::size_t t = 0; t < pgd.steps; ++t) defense::ascend(m, batch, state);
      total += victim::loss_and_grads(m, batch, state.delta).loss;
    }
    return total / static_cast<double>(batches);
  };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto t = train;
    t.seed = seed;
    auto plain = bench::initial_model(a, {}, seed);
    auto robust = plain;
    defense::defend(plain, a.train, t, {.method = Method::none});
    defense::defend(robust, a.train, t, pgd);
    CHECK(adversarial_loss(robust) <= adversarial_loss(plain));
  }
}

TEST_CASE("adversarial data augmentation") {
  const auto& a = small_toy();
  const victim::TrainConfig train{.epochs = 5, .learning_rate = 0.5, .batch_size = 16, .embedding_lr_scale = 0, .seed = 3};
  const defense::AdaAttacker attacker{{attack::RecipeName::synonym_greedy, attack::Ordering::deletion_importance,
                                       a.attacker_index},
                                      {.k_max = 10},
                                      a.attacker_table};
  const auto init = bench::initial_model(a, {}, 3);

  SUBCASE("mix 0 equals plain training") {
    auto plain = init, ada = init;
    victim::train(plain, victim::encode(a.train, plain.vocab()), train);
    defense::ada_train(ada, a.train, train, {.method = Method::ada, .ada_mix = 0.0}, attacker);
    CHECK(ada == plain);
  }

  SUBCASE("added adversarial examples get a lower loss and runs repeat exactly") {
    const defense::DefenseConfig cfg{.method = Method::ada, .ada_rounds = 1, .ada_mix = 1.0, .ada_sample = 60, .seed = 9};
    auto plain = init;
    victim::train(plain, victim::encode(a.train, plain.vocab()), train);
    // the first round attacks the plainly trained model on this sample
    const auto sample = corpus::sample_eval(a.train, 60, mix_seed(9, 0xada0));
    const victim::ModelPredictor predictor(plain);
    std::vector<victim::Example> added;
    for (const auto& d : sample.documents) {
      const auto o = attack::greedy_attack(predictor, d, attacker.constraints, attacker.recipe, *a.attacker_table);
      if (o.status == attack::Status::success) added.push_back({plain.vocab().encode(o.adversarial), d.label});
    }
    REQUIRE(!added.empty());

    auto ada = init;
    const auto stats = defense::ada_train(ada, a.train, train, cfg, attacker);
    REQUIRE(stats.rounds.size() == 1);
    CHECK(stats.rounds[0].added == added.size());
    CHECK(victim::loss_and_grads(ada, added).loss < victim::loss_and_grads(plain, added).loss);

    auto again = init;
    defense::ada_train(again, a.train, train, {.method = Method::ada, .ada_rounds = 2, .ada_mix = 1.0, .ada_sample = 30, .seed = 9}, attacker);
    auto third = init;
    defense::ada_train(third, a.train, train, {.method = Method::ada, .ada_rounds = 2, .ada_mix = 1.0, .ada_sample = 30, .seed = 9}, attacker);
    CHECK(again == third);
  }
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((defense::DefenseConfig{.method = Method::pgd_k, .steps = 0}.validate()), Error);
  CHECK_THROWS_AS((defense::DefenseConfig{.method = Method::smooth_mask, .mask_rate = 1.5}.validate()), Error);
  CHECK_THROWS_AS((defense::DefenseConfig{.method = Method::smooth_synonym}.validate()), Error);
  CHECK(defense::method_from_string("freelb_pp") == Method::freelb_pp);
}

TEST_CASE("run manifest records config and checkpoint hash") {
  const auto j = defense::run_manifest({.method = Method::freelb_pp, .steps = 30}, kTrain, "abc");
  CHECK(j["defense"]["method"] == "freelb_pp");
  CHECK(j["defense"]["steps"] == 30);
  CHECK(j["defense"]["epsilon"].is_null());
  CHECK(j["checkpoint_sha256"] == "abc");
}
