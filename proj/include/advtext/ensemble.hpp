#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advtext/embedding.hpp"
#include "advtext/victim.hpp"

namespace advtext::victim {

/// Anything an attacker can query: token strings in, class probabilities out.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::vector<double> predict(std::span<const std::string> tokens) const = 0;
};

/// Plain softmax output of a single model.
class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(const Model& model) : model_(model) {}
  std::size_t num_classes() const override { return model_.num_classes(); }
  std::vector<double> predict(std::span<const std::string> tokens) const override;

 private:
  const Model& model_;
};

enum class Strategy { logit, vote };
enum class Perturber { identity, random_mask, random_synonym };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
std::string to_string(Perturber p);

struct EnsembleConfig {
  Strategy strategy = Strategy::logit;
  std::size_t size = 16;
  Perturber perturber = Perturber::identity;
  double mask_rate = 0.0;
  /// Source of substitutes for random_synonym.
  std::shared_ptr<const embed::SynonymIndex> index;
  /// Leading neighbors per word eligible for substitution.
  std::size_t synonym_k = 8;
  std::uint64_t seed = 0;
};

/// Per-vocabulary-id substitution sets {w} + top-k neighbors of w.
std::vector<std::vector<TokenId>> substitution_sets(const corpus::Vocabulary& vocab,
                                                    const embed::SynonymIndex& index, std::size_t k);

struct MemberRecord {
  ClassIndex label = 0;
  std::vector<double> logits;
};

struct EnsemblePrediction {
  ClassIndex label = 0;
  std::vector<double> probs;
  std::vector<MemberRecord> members;
};

/// Randomized-smoothing ensemble. Member m perturbs position i with a draw
/// that depends only on (seed, m, i), so a prediction is a deterministic
/// function of the input tokens.
class Ensemble final : public Predictor {
 public:
  Ensemble(const Model& model, EnsembleConfig config);

  EnsemblePrediction run(std::span<const std::string> tokens, bool keep_members = true) const;

  std::size_t num_classes() const override { return model_.num_classes(); }
  std::vector<double> predict(std::span<const std::string> tokens) const override;

  const EnsembleConfig& config() const { return config_; }

 private:
  std::vector<TokenId> member_input(std::span<const TokenId> ids, std::span<const std::string> tokens,
                                    std::size_t member) const;

  const Model& model_;
  EnsembleConfig config_;
  std::vector<std::vector<TokenId>> sets_;
};

EnsemblePrediction ensemble_predict(const Model& model, std::span<const std::string> tokens,
                                    const EnsembleConfig& config);

}  // namespace advtext::victim
