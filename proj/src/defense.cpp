#include "advtext/defense.hpp"

#include <algorithm>
#include <cmath>

#include "advtext/rng.hpp"

namespace advtext::defense {

namespace {

Error defense_error(const std::string& message) { return Error("defense", message); }

bool is_gradient_method(Method m) { return m == Method::pgd_k || m == Method::freelb || m == Method::freelb_pp; }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::ada: return "ada";
    case Method::pgd_k: return "pgd_k";
    case Method::freelb: return "freelb";
    case Method::freelb_pp: return "freelb_pp";
    case Method::smooth_mask: return "smooth_mask";
    case Method::smooth_synonym: return "smooth_synonym";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (auto m : {Method::none, Method::ada, Method::pgd_k, Method::freelb, Method::freelb_pp, Method::smooth_mask,
                 Method::smooth_synonym}) {
    if (to_string(m) == s) return m;
  }
  throw defense_error("unknown defense '" + s + "'");
}

bool is_smoothing(Method m) { return m == Method::smooth_mask || m == Method::smooth_synonym; }

void DefenseConfig::validate() const {
  if (is_gradient_method(method) && steps < 1) throw defense_error("steps must be >= 1");
  if (alpha < 0.0) throw defense_error("alpha must be >= 0");
  if (epsilon && *epsilon < 0.0) throw defense_error("epsilon must be >= 0");
  if (mask_rate < 0.0 || mask_rate > 1.0) throw defense_error("mask_rate must lie in [0, 1]");
  if (ada_mix < 0.0) throw defense_error("ada_mix must be >= 0");
  if (method == Method::smooth_synonym && !smoothing_index) {
    throw defense_error("smooth_synonym needs a synonym index");
  }
}

PerturbState zero_state(std::span<const victim::Example> batch, std::size_t dim, double alpha,
                        std::optional<double> epsilon, bool project) {
  PerturbState s;
  s.alpha = alpha;
  s.epsilon = epsilon;
  s.project = project && epsilon.has_value();
  s.delta.reserve(batch.size());
  for (const auto& ex : batch) s.delta.emplace_back(ex.ids.size(), dim);
  return s;
}

victim::LossResult ascend(const victim::Model& model, std::span<const victim::Example> batch, PerturbState& state,
                          std::uint64_t batch_id) {
  if (state.delta.size() != batch.size()) throw defense_error("perturbation state does not match batch");
  auto res = victim::loss_and_grads(model, batch, state.delta, batch_id);
  for (std::size_t e = 0; e < batch.size(); ++e) {
    auto& delta = state.delta[e];
    const auto& g = res.delta_grads[e];
    const double gnorm = g.frobenius();
    if (gnorm < kGradientFloor) {
      ++state.degenerate;
      continue;
    }
    const double step = state.alpha / gnorm;
    for (std::size_t i = 0; i < delta.data.size(); ++i) delta.data[i] += step * g.data[i];
    if (state.project) {
      const double norm = delta.frobenius();
      // a bound met to rounding error leaves delta untouched
      if (norm > *state.epsilon * (1.0 + 1e-12)) {
        const double s = *state.epsilon / norm;
        for (double& x : delta.data) x *= s;
      }
    }
  }
  ++state.step;
  return res;
}

victim::TrainStats pgd_train(victim::Model& model, std::span<const victim::Example> data,
                             const victim::TrainConfig& train, const DefenseConfig& config) {
  if (config.method != Method::pgd_k) throw defense_error("pgd_train expects method pgd_k");
  config.validate();
  const auto step = [&](const victim::Model& m, std::span<const victim::Example> batch, std::uint64_t,
                        std::uint64_t batch_id) {
    auto state = zero_state(batch, m.dim(), config.alpha, config.epsilon, config.epsilon.has_value());
    for (std::size_t t = 0; t < config.steps; ++t) ascend(m, batch, state, batch_id);
    return victim::loss_and_grads(m, batch, state.delta, batch_id);
  };
  return victim::train(model, data, train, step);
}

victim::TrainStats freelb_train(victim::Model& model, std::span<const victim::Example> data,
                                const victim::TrainConfig& train, const DefenseConfig& config) {
  if (config.method != Method::freelb && config.method != Method::freelb_pp) {
    throw defense_error("freelb_train expects method freelb or freelb_pp");
  }
  config.validate();
  const bool project = config.method == Method::freelb && config.epsilon.has_value();
  const auto step = [&](const victim::Model& m, std::span<const victim::Example> batch, std::uint64_t stream,
                        std::uint64_t batch_id) {
    auto state = zero_state(batch, m.dim(), config.alpha, config.epsilon, project);
    Rng rng(mix_seed(stream, 0xf7eeb));
    const double bound = config.alpha / std::sqrt(static_cast<double>(m.dim()));
    for (std::size_t e = 0; e < batch.size(); ++e) {
      for (std::size_t i = 0; i < batch[e].ids.size(); ++i) {
        if (batch[e].ids[i] == corpus::Vocabulary::kPad) continue;
        for (double& x : state.delta[e].row(i)) x = rng.uniform(-bound, bound);
      }
    }
    victim::LossResult total;
    total.grads = victim::Gradients::zeros_like(m);
    const double w = 1.0 / static_cast<double>(config.steps);
    for (std::size_t t = 0; t < config.steps; ++t) {
      auto res = ascend(m, batch, state, batch_id);
      total.grads.add_scaled(res.grads, w);
      total.loss += w * res.loss;
    }
    return total;
  };
  return victim::train(model, data, train, step);
}

victim::TrainStats smooth_train(victim::Model& model, std::span<const victim::Example> data,
                                const victim::TrainConfig& train, const DefenseConfig& config) {
  if (!is_smoothing(config.method)) throw defense_error("smooth_train expects a smoothing method");
  config.validate();
  std::vector<std::vector<TokenId>> sets;
  if (config.method == Method::smooth_synonym) {
    sets = victim::substitution_sets(model.vocab(), *config.smoothing_index, config.synonym_k);
  }
  const auto step = [&](const victim::Model& m, std::span<const victim::Example> batch, std::uint64_t stream,
                        std::uint64_t batch_id) {
    Rng rng(mix_seed(stream, 0x5300));
    std::vector<victim::Example> noisy(batch.begin(), batch.end());
    for (auto& ex : noisy) {
      for (auto& id : ex.ids) {
        if (config.method == Method::smooth_mask) {
          if (rng.uniform() < config.mask_rate) id = corpus::Vocabulary::kUnk;
        } else {
          const auto& set = sets[id];
          id = set[rng.below(set.size())];
        }
      }
    }
    return victim::loss_and_grads(m, noisy, {}, batch_id);
  };
  return victim::train(model, data, train, step);
}

AdaStats ada_train(victim::Model& model, const corpus::Dataset& data, const victim::TrainConfig& train,
                   const DefenseConfig& config, const AdaAttacker& attacker) {
  config.validate();
  if (!attacker.sim_table) throw defense_error("ada needs a similarity table");
  const victim::Model init = model;
  const auto& vocab = init.vocab();
  corpus::Dataset pool = data;
  AdaStats stats;
  stats.last = victim::train(model, victim::encode(pool, vocab), train);
  if (config.ada_mix <= 0.0) return stats;

  for (std::size_t round = 0; round < config.ada_rounds; ++round) {
    const std::size_t n = std::min(config.ada_sample, data.size());
    const auto sample = corpus::sample_eval(data, n, mix_seed(config.seed, 0xada0 + round));
    const victim::ModelPredictor predictor(model);
    AdaRound info;
    info.attacked = n;
    const auto cap = static_cast<std::size_t>(std::floor(config.ada_mix * static_cast<double>(n)));
    for (const auto& doc : sample.documents) {
      const auto outcome = attack::greedy_attack(predictor, doc, attacker.constraints, attacker.recipe,
                                                 *attacker.sim_table);
      if (outcome.status != attack::Status::success) continue;
      ++info.successes;
      if (info.added >= cap) continue;
      corpus::Document adv;
      adv.id = pool.size();
      adv.label = doc.label;
      adv.tokens = outcome.adversarial;
      for (std::size_t i = 0; i < adv.tokens.size(); ++i) adv.raw += (i ? " " : "") + adv.tokens[i];
      pool.documents.push_back(std::move(adv));
      ++info.added;
    }
    stats.rounds.push_back(info);
    model = init;
    stats.last = victim::train(model, victim::encode(pool, vocab), train);
  }
  return stats;
}

victim::TrainStats defend(victim::Model& model, const corpus::Dataset& data, const victim::TrainConfig& train,
                          const DefenseConfig& config, const AdaAttacker* attacker) {
  switch (config.method) {
    case Method::none: return victim::train(model, victim::encode(data, model.vocab()), train);
    case Method::pgd_k: return pgd_train(model, victim::encode(data, model.vocab()), train, config);
    case Method::freelb:
    case Method::freelb_pp: return freelb_train(model, victim::encode(data, model.vocab()), train, config);
    case Method::smooth_mask:
    case Method::smooth_synonym: return smooth_train(model, victim::encode(data, model.vocab()), train, config);
    case Method::ada:
      if (!attacker) throw defense_error("ada needs an attacker");
      return ada_train(model, data, train, config, *attacker).last;
  }
  throw defense_error("unhandled defense method");
}

victim::EnsembleConfig matching_ensemble(const DefenseConfig& config, victim::Strategy strategy,
                                         std::size_t size, std::uint64_t seed) {
  victim::EnsembleConfig e;
  e.strategy = strategy;
  e.size = size;
  e.seed = seed;
  e.synonym_k = config.synonym_k;
  if (config.method == Method::smooth_mask) {
    e.perturber = victim::Perturber::random_mask;
    e.mask_rate = config.mask_rate;
  } else if (config.method == Method::smooth_synonym) {
    e.perturber = victim::Perturber::random_synonym;
    e.index = config.smoothing_index;
  }
  return e;
}

nlohmann::json to_json(const DefenseConfig& c) {
  nlohmann::json j = {{"method", to_string(c.method)},
                      {"steps", c.steps},
                      {"alpha", c.alpha},
                      {"epsilon", c.epsilon ? nlohmann::json(*c.epsilon) : nlohmann::json(nullptr)},
                      {"ada_rounds", c.ada_rounds},
                      {"ada_mix", c.ada_mix},
                      {"ada_sample", c.ada_sample},
                      {"mask_rate", c.mask_rate},
                      {"synonym_k", c.synonym_k},
                      {"seed", c.seed}};
  if (c.smoothing_index) {
    j["smoothing_index"] = c.smoothing_index->source() == embed::IndexSource::attacker ? "attacker" : "defender";
  }
  return j;
}

nlohmann::json run_manifest(const DefenseConfig& config, const victim::TrainConfig& train,
                            const std::string& checkpoint_hash) {
  return {{"defense", to_json(config)},
          {"train",
           {{"epochs", train.epochs},
            {"learning_rate", train.learning_rate},
            {"batch_size", train.batch_size},
            {"embedding_lr_scale", train.embedding_lr_scale},
            {"seed", train.seed}}},
          {"checkpoint_sha256", checkpoint_hash}};
}

}  // namespace advtext::defense
