#include "advtext/ensemble.hpp"

#include <algorithm>

#include "advtext/rng.hpp"

namespace advtext::victim {

std::vector<double> ModelPredictor::predict(std::span<const std::string> tokens) const {
  return forward(model_, model_.vocab().encode(tokens)).probs;
}

std::string to_string(Strategy s) { return s == Strategy::logit ? "logit" : "vote"; }

Strategy strategy_from_string(const std::string& s) {
  if (s == "logit") return Strategy::logit;
  if (s == "vote") return Strategy::vote;
  throw Error("victim", "unknown ensemble strategy '" + s + "'");
}

std::string to_string(Perturber p) {
  switch (p) {
    case Perturber::identity: return "identity";
    case Perturber::random_mask: return "random-mask";
    case Perturber::random_synonym: return "random-synonym";
  }
  return "?";
}

std::vector<std::vector<TokenId>> substitution_sets(const corpus::Vocabulary& vocab,
                                                    const embed::SynonymIndex& index, std::size_t k) {
  std::vector<std::vector<TokenId>> sets(vocab.size());
  for (std::size_t v = 0; v < vocab.size(); ++v) {
    auto& set = sets[v];
    set.push_back(static_cast<TokenId>(v));
    const auto nbs = index.neighbors(vocab.word(static_cast<TokenId>(v)));
    for (std::size_t r = 0; r < std::min(k, nbs.size()); ++r) set.push_back(vocab.id(nbs[r].word));
  }
  return sets;
}

Ensemble::Ensemble(const Model& model, EnsembleConfig config) : model_(model), config_(std::move(config)) {
  if (config_.size == 0) throw Error("victim", "ensemble size must be >= 1");
  if (config_.mask_rate < 0.0 || config_.mask_rate > 1.0) throw Error("victim", "mask rate outside [0, 1]");
  if (config_.perturber == Perturber::random_synonym) {
    if (!config_.index) throw Error("victim", "random-synonym ensemble needs a synonym index");
    sets_ = substitution_sets(model_.vocab(), *config_.index, config_.synonym_k);
  }
}

std::vector<TokenId> Ensemble::member_input(std::span<const TokenId> ids, std::span<const std::string> tokens,
                                            std::size_t member) const {
  std::vector<TokenId> out(ids.begin(), ids.end());
  if (config_.perturber == Perturber::identity) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = hashed_uniform(config_.seed, member, i);
    if (config_.perturber == Perturber::random_mask) {
      if (u < config_.mask_rate) out[i] = corpus::Vocabulary::kUnk;
      continue;
    }
    if (out[i] != corpus::Vocabulary::kUnk) {
      const auto& set = sets_[out[i]];
      out[i] = set[static_cast<std::size_t>(u * static_cast<double>(set.size()))];
      continue;
    }
    // out-of-vocabulary token: substitutes come straight from the index
    const auto nbs = config_.index->neighbors(tokens[i]);
    const std::size_t n = 1 + std::min(config_.synonym_k, nbs.size());
    const auto pick = static_cast<std::size_t>(u * static_cast<double>(n));
    if (pick > 0) out[i] = model_.vocab().id(nbs[pick - 1].word);
  }
  return out;
}

EnsemblePrediction Ensemble::run(std::span<const std::string> tokens, bool keep_members) const {
  const auto ids = model_.vocab().encode(tokens);
  const std::size_t k = model_.num_classes();
  std::vector<double> logit_sum(k, 0.0);
  std::vector<std::size_t> votes(k, 0);
  EnsemblePrediction out;
  if (keep_members) out.members.reserve(config_.size);
  for (std::size_t m = 0; m < config_.size; ++m) {
    const auto input = member_input(ids, tokens, m);
    auto tr = forward(model_, input);
    const auto label = argmax(tr.logits);
    ++votes[label];
    for (std::size_t c = 0; c < k; ++c) logit_sum[c] += tr.logits[c];
    if (keep_members) out.members.push_back({label, std::move(tr.logits)});
  }
  const double inv = 1.0 / static_cast<double>(config_.size);
  if (config_.strategy == Strategy::logit) {
    for (double& x : logit_sum) x *= inv;
    out.label = argmax(logit_sum);
    out.probs = softmax(logit_sum);
  } else {
    out.probs.resize(k);
    for (std::size_t c = 0; c < k; ++c) out.probs[c] = static_cast<double>(votes[c]) * inv;
    out.label = argmax(out.probs);
  }
  return out;
}

std::vector<double> Ensemble::predict(std::span<const std::string> tokens) const {
  return run(tokens, false).probs;
}

EnsemblePrediction ensemble_predict(const Model& model, std::span<const std::string> tokens,
                                    const EnsembleConfig& config) {
  return Ensemble(model, config).run(tokens);
}

}  // namespace advtext::victim
