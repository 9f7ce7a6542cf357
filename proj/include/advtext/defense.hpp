#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advtext/attack.hpp"
#include "advtext/corpus.hpp"
#include "advtext/embedding.hpp"
#include "advtext/victim.hpp"

namespace advtext::defense {

enum class Method { none, ada, pgd_k, freelb, freelb_pp, smooth_mask, smooth_synonym };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool is_smoothing(Method m);

struct DefenseConfig {
  Method method = Method::none;
  std::size_t steps = 1;           // ascent steps t
  double alpha = 0.03;             // ascent step size
  std::optional<double> epsilon;   // Frobenius bound; unset means no projection
  std::size_t ada_rounds = 1;
  double ada_mix = 1.0;            // adversarial examples added per attacked example
  std::size_t ada_sample = 200;    // training documents attacked per round
  double mask_rate = 0.05;
  std::shared_ptr<const embed::SynonymIndex> smoothing_index;
  std::size_t synonym_k = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Embedding perturbation for one batch, one (len x dim) matrix per example.
/// Norms are taken per example.
struct PerturbState {
  std::vector<victim::Matrix> delta;
  std::size_t step = 0;
  double alpha = 0.0;
  std::optional<double> epsilon;
  bool project = false;
  std::size_t degenerate = 0;  // zero-gradient examples left unchanged so far
};

PerturbState zero_state(std::span<const victim::Example> batch, std::size_t dim, double alpha,
                        std::optional<double> epsilon, bool project);

/// One normalized gradient-ascent step on delta followed by the optional
/// projection onto the epsilon ball. Returns the loss and gradients measured
/// at the delta before the step.
victim::LossResult ascend(const victim::Model& model, std::span<const victim::Example> batch, PerturbState& state,
                          std::uint64_t batch_id = 0);

/// Below this gradient norm an example's delta is not moved.
inline constexpr double kGradientFloor = 1e-12;

/// Min-max training: per batch, t ascent steps from delta = 0, then a
/// parameter step at the final delta.
victim::TrainStats pgd_train(victim::Model& model, std::span<const victim::Example> data,
                             const victim::TrainConfig& train, const DefenseConfig& config);

/// FreeLB / FreeLB++: parameter gradients are averaged over the t ascent
/// steps; FreeLB++ never projects.
victim::TrainStats freelb_train(victim::Model& model, std::span<const victim::Example> data,
                                const victim::TrainConfig& train, const DefenseConfig& config);

/// Trains on randomly masked or synonym-substituted copies drawn afresh for
/// every batch.
victim::TrainStats smooth_train(victim::Model& model, std::span<const victim::Example> data,
                                const victim::TrainConfig& train, const DefenseConfig& config);

/// What the augmentation rounds attack with.
struct AdaAttacker {
  attack::AttackRecipe recipe;
  attack::AttackConstraints constraints;
  std::shared_ptr<const embed::EmbeddingTable> sim_table;
};

struct AdaRound {
  std::size_t attacked = 0;
  std::size_t successes = 0;
  std::size_t added = 0;
};

struct AdaStats {
  std::vector<AdaRound> rounds;
  victim::TrainStats last;
};

/// Adversarial data augmentation. `model` holds the initial parameters; every
/// round retrains from them on the growing pool.
AdaStats ada_train(victim::Model& model, const corpus::Dataset& data, const victim::TrainConfig& train,
                   const DefenseConfig& config, const AdaAttacker& attacker);

/// Dispatches on `config.method`; `attacker` is needed only for ada.
victim::TrainStats defend(victim::Model& model, const corpus::Dataset& data, const victim::TrainConfig& train,
                          const DefenseConfig& config, const AdaAttacker* attacker = nullptr);

/// Ensemble wrapper matching a smoothing defense at prediction time.
victim::EnsembleConfig matching_ensemble(const DefenseConfig& config, victim::Strategy strategy,
                                         std::size_t size, std::uint64_t seed);

nlohmann::json to_json(const DefenseConfig& config);

/// Run record stored next to a checkpoint.
nlohmann::json run_manifest(const DefenseConfig& config, const victim::TrainConfig& train,
                            const std::string& checkpoint_hash);

}  // namespace advtext::defense
