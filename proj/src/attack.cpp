#include "advtext/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace advtext::attack {

namespace {

Error attack_error(const std::string& message) { return Error("attack", message); }

constexpr double kRatioSlack = 1e-12;

char keyboard_neighbor(char c) {
  static constexpr std::string_view kRows[] = {"1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"};
  for (auto row : kRows) {
    const auto i = row.find(c);
    if (i == std::string_view::npos) continue;
    return i + 1 < row.size() ? row[i + 1] : row[i - 1];
  }
  return '\0';
}

void push_unique(std::vector<std::string>& out, std::string cand, std::string_view word) {
  if (cand.empty() || cand == word) return;
  if (std::find(out.begin(), out.end(), cand) != out.end()) return;
  out.push_back(std::move(cand));
}

std::vector<std::string> synonym_list(std::string_view word, const AttackRecipe& recipe, std::size_t k) {
  std::vector<std::string> out;
  if (!recipe.index) return out;
  const auto nbs = recipe.index->neighbors(word);
  for (std::size_t i = 0; i < nbs.size() && out.size() < k; ++i) push_unique(out, nbs[i].word, word);
  return out;
}

double true_prob(const std::vector<double>& probs, ClassIndex label) { return probs.at(label); }

}  // namespace

void AttackConstraints::validate() const {
  if (!(epsilon_min >= 0.0 && epsilon_min <= 1.0)) throw attack_error("epsilon_min must lie in [0, 1]");
  if (k_max < 1) throw attack_error("k_max must be >= 1");
  if (!(rho_max > 0.0 && rho_max <= 1.0)) throw attack_error("rho_max must lie in (0, 1]");
  if (q_policy == QueryPolicy::fixed && q_fixed < 1) throw attack_error("fixed query budget must be >= 1");
}

std::size_t query_budget(const AttackConstraints& constraints, std::size_t length) {
  if (length < 1) throw attack_error("query budget for an empty sentence");
  return constraints.q_policy == QueryPolicy::fixed ? constraints.q_fixed : constraints.k_max * length;
}

std::size_t max_substitutions(double rho_max, std::size_t length) {
  return static_cast<std::size_t>(std::floor(rho_max * static_cast<double>(length) + 1e-9));
}

double modification_ratio(std::span<const std::string> original, std::span<const std::string> adversarial) {
  if (original.size() != adversarial.size()) {
    throw attack_error("modification ratio of sequences with different lengths");
  }
  if (original.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < original.size(); ++i) diff += original[i] != adversarial[i];
  return static_cast<double>(diff) / static_cast<double>(original.size());
}

std::optional<std::vector<double>> QueryCounter::query(std::span<const std::string> tokens) {
  if (used_ >= budget_) return std::nullopt;
  ++used_;
  return predictor_.predict(tokens);
}

std::string to_string(RecipeName r) {
  switch (r) {
    case RecipeName::synonym_greedy: return "synonym-greedy";
    case RecipeName::typo_greedy: return "typo-greedy";
    case RecipeName::mixed_greedy: return "mixed-greedy";
  }
  return "?";
}

RecipeName recipe_from_string(const std::string& s) {
  if (s == "synonym-greedy") return RecipeName::synonym_greedy;
  if (s == "typo-greedy") return RecipeName::typo_greedy;
  if (s == "mixed-greedy") return RecipeName::mixed_greedy;
  throw attack_error("unknown attack recipe '" + s + "'");
}

std::vector<std::string> typo_candidates(std::string_view word, std::size_t k) {
  std::vector<std::string> out;
  const std::size_t n = word.size();
  if (n == 0 || k == 0) return out;
  const std::string w(word);
  auto done = [&] { return out.size() >= k; };

  if (n < 3) {
    for (std::size_t i = 0; i < n && !done(); ++i) {
      if (const char c = keyboard_neighbor(w[i])) {
        std::string s = w;
        s[i] = c;
        push_unique(out, std::move(s), word);
      }
    }
    return out;
  }
  const std::size_t lo = n >= 4 ? 1 : 0;
  const std::size_t hi = n >= 4 ? n - 1 : n;  // exclusive
  for (std::size_t i = lo; i + 1 < hi && !done(); ++i) {
    std::string s = w;
    std::swap(s[i], s[i + 1]);
    push_unique(out, std::move(s), word);
  }
  for (std::size_t i = lo; i < hi && !done(); ++i) {
    std::string s = w;
    s.erase(i, 1);
    push_unique(out, std::move(s), word);
  }
  for (std::size_t i = lo; i < hi && !done(); ++i) {
    std::string s = w;
    s.insert(i, 1, w[i]);
    push_unique(out, std::move(s), word);
  }
  for (std::size_t i = lo; i < hi && !done(); ++i) {
    if (const char c = keyboard_neighbor(w[i])) {
      std::string s = w;
      s[i] = c;
      push_unique(out, std::move(s), word);
    }
  }
  return out;
}

std::vector<std::string> candidates(std::string_view word, const AttackRecipe& recipe, std::size_t k_max) {
  switch (recipe.name) {
    case RecipeName::synonym_greedy: return synonym_list(word, recipe, k_max);
    case RecipeName::typo_greedy: return typo_candidates(word, k_max);
    case RecipeName::mixed_greedy: {
      const auto syn = synonym_list(word, recipe, k_max);
      const auto typo = typo_candidates(word, k_max);
      std::vector<std::string> out;
      for (std::size_t i = 0; out.size() < k_max && (i < syn.size() || i < typo.size()); ++i) {
        if (i < syn.size()) push_unique(out, syn[i], word);
        if (out.size() < k_max && i < typo.size()) push_unique(out, typo[i], word);
      }
      return out;
    }
  }
  return {};
}

Ranking word_importance(QueryCounter& counter, std::span<const std::string> tokens, ClassIndex label,
                        double clean_true_prob, Ordering ordering, const CandidateFn& candidate_fn,
                        const embed::EmbeddingTable* sim_table, double epsilon_min) {
  if (tokens.empty()) throw attack_error("importance ranking of an empty document");
  const std::size_t n = tokens.size();
  std::vector<double> score(n, 0.0);
  std::vector<bool> scored(n, false);
  Ranking out;
  std::vector<std::string> work(tokens.begin(), tokens.end());

  for (std::size_t i = 0; i < n; ++i) {
    work[i] = std::string(corpus::Vocabulary::kUnkToken);
    const auto probs = counter.query(work);
    work[i] = tokens[i];
    if (!probs) {
      out.partial = true;
      break;
    }
    score[i] = clean_true_prob - true_prob(*probs, label);
    scored[i] = true;
  }

  if (!out.partial && ordering == Ordering::saliency_weighted) {
    if (!candidate_fn) throw attack_error("saliency ordering needs a candidate source");
    for (std::size_t i = 0; i < n && !out.partial; ++i) {
      double best_drop = 0.0;
      for (const auto& cand : candidate_fn(tokens[i])) {
        work[i] = cand;
        if (sim_table && embed::sentence_similarity(tokens, work, *sim_table).value < epsilon_min) continue;
        const auto probs = counter.query(work);
        if (!probs) {
          out.partial = true;
          break;
        }
        best_drop = std::max(best_drop, clean_true_prob - true_prob(*probs, label));
      }
      work[i] = tokens[i];
      if (out.partial) {
        // positions without a complete estimate fall back to the unweighted tail
        for (std::size_t j = i; j < n; ++j) scored[j] = false;
        break;
      }
      score[i] *= best_drop;
    }
  }

  std::vector<std::size_t> ranked;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) (scored[i] ? ranked : rest).push_back(i);
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  for (auto i : ranked) {
    out.positions.push_back(i);
    out.scores.push_back(score[i]);
  }
  for (auto i : rest) {
    out.positions.push_back(i);
    out.scores.push_back(0.0);
  }
  return out;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::success: return "success";
    case Status::failed: return "failed";
    case Status::skipped: return "skipped";
  }
  return "?";
}

Status status_from_string(const std::string& s) {
  if (s == "success") return Status::success;
  if (s == "failed") return Status::failed;
  if (s == "skipped") return Status::skipped;
  throw attack_error("unknown status '" + s + "'");
}

AttackOutcome greedy_attack(const victim::Predictor& predictor, const corpus::Document& document,
                            const AttackConstraints& constraints, const AttackRecipe& recipe,
                            const embed::EmbeddingTable& sim_table) {
  constraints.validate();
  const auto& original = document.tokens;
  const std::size_t n = original.size();
  AttackOutcome out;
  out.id = document.id;
  out.query_budget = query_budget(constraints, n);
  QueryCounter counter(predictor, out.query_budget);
  auto finish = [&](Status status) {
    out.status = status;
    out.queries_used = counter.used();
    return out;
  };

  const auto clean = counter.query(original);
  if (!clean) return finish(Status::failed);
  if (victim::argmax(*clean) != document.label) return finish(Status::skipped);

  double current_prob = true_prob(*clean, document.label);
  const auto candidate_fn = [&](std::string_view w) { return candidates(w, recipe, constraints.k_max); };
  const auto ranking = word_importance(counter, original, document.label, current_prob, recipe.ordering,
                                       candidate_fn, &sim_table, constraints.epsilon_min);
  if (ranking.partial) return finish(Status::failed);

  const std::size_t max_subs = max_substitutions(constraints.rho_max, n);
  std::vector<std::string> current(original.begin(), original.end());
  std::size_t substitutions = 0;

  for (const std::size_t pos : ranking.positions) {
    if (substitutions >= max_subs) break;
    struct Best {
      std::string word;
      double prob = 0.0;
      double sim = 0.0;
      bool flips = false;
    };
    std::optional<Best> best;
    bool out_of_budget = false;
    for (const auto& cand : candidate_fn(original[pos])) {
      current[pos] = cand;
      const auto sim = embed::sentence_similarity(original, current, sim_table).value;
      if (sim < constraints.epsilon_min) continue;
      const auto probs = counter.query(current);
      if (!probs) {
        out_of_budget = true;
        break;
      }
      const double p = true_prob(*probs, document.label);
      if (!(p < current_prob)) continue;
      const bool flips = victim::argmax(*probs) != document.label;
      // a flipping candidate beats any non-flipping one; otherwise lowest probability wins
      if (!best || (flips && !best->flips) || (flips == best->flips && p < best->prob)) {
        best = Best{cand, p, sim, flips};
      }
    }
    current[pos] = best ? best->word : original[pos];
    if (best) {
      ++substitutions;
      current_prob = best->prob;
      out.similarity = best->sim;
      out.trace.push_back({pos, best->word, best->prob});
      if (best->flips) {
        out.adversarial = current;
        out.rho = modification_ratio(original, current);
        return finish(Status::success);
      }
    }
    if (out_of_budget) break;
  }
  out.rho = modification_ratio(original, current);
  return finish(Status::failed);
}

AttackOutcome brute_force_attack(const victim::Predictor& predictor, const corpus::Document& document,
                                 const AttackConstraints& constraints, const AttackRecipe& recipe,
                                 const embed::EmbeddingTable& sim_table) {
  constraints.validate();
  const auto& original = document.tokens;
  const std::size_t n = original.size();
  {
    // Rough count of substitution sets; refuse anything that would not finish quickly.
    const std::size_t subs = max_substitutions(constraints.rho_max, n);
    double combos = 0.0, term = 1.0;
    for (std::size_t s = 0; s <= subs; ++s) {
      combos += term;
      term *= static_cast<double>(n - s) / static_cast<double>(s + 1) * static_cast<double>(constraints.k_max);
    }
    if (combos > 1e6) throw attack_error("instance too large for exhaustive search");
  }
  AttackOutcome out;
  out.id = document.id;
  out.query_budget = query_budget(constraints, n);

  const auto clean = predictor.predict(original);
  ++out.queries_used;
  if (victim::argmax(clean) != document.label) {
    out.status = Status::skipped;
    return out;
  }
  std::vector<std::vector<std::string>> cands(n);
  for (std::size_t i = 0; i < n; ++i) cands[i] = candidates(original[i], recipe, constraints.k_max);

  const std::size_t max_subs = max_substitutions(constraints.rho_max, n);
  std::vector<std::string> current(original.begin(), original.end());
  std::vector<std::size_t> subset;

  // depth-first over position subsets of a fixed size, then candidate choices
  std::function<bool(std::size_t, std::size_t)> choose;
  std::function<bool(std::size_t)> assign = [&](std::size_t slot) -> bool {
    if (slot == subset.size()) {
      const auto sim = embed::sentence_similarity(original, current, sim_table).value;
      if (sim < constraints.epsilon_min) return false;
      const auto probs = predictor.predict(current);
      ++out.queries_used;
      if (victim::argmax(probs) == document.label) return false;
      out.similarity = sim;
      return true;
    }
    const auto pos = subset[slot];
    for (const auto& c : cands[pos]) {
      current[pos] = c;
      if (assign(slot + 1)) return true;
    }
    current[pos] = original[pos];
    return false;
  };
  choose = [&](std::size_t start, std::size_t remaining) -> bool {
    if (remaining == 0) return assign(0);
    for (std::size_t p = start; p + remaining <= n; ++p) {
      if (cands[p].empty()) continue;
      subset.push_back(p);
      if (choose(p + 1, remaining - 1)) return true;
      subset.pop_back();
    }
    return false;
  };

  for (std::size_t size = 1; size <= max_subs; ++size) {
    subset.clear();
    if (choose(0, size)) {
      out.status = Status::success;
      out.adversarial = current;
      out.rho = modification_ratio(original, current);
      for (auto p : subset) out.trace.push_back({p, current[p], 0.0});
      return out;
    }
  }
  out.status = Status::failed;
  return out;
}

Certificate certify(const victim::Predictor& predictor, const corpus::Document& document,
                    const AttackOutcome& outcome, const AttackConstraints& constraints,
                    const embed::EmbeddingTable& sim_table) {
  Certificate c;
  const auto& orig = document.tokens;
  const auto& adv = outcome.adversarial;
  c.lengths_match = !orig.empty() && orig.size() == adv.size();
  if (!c.lengths_match) return c;

  std::size_t changed = 0;
  for (std::size_t i = 0; i < orig.size(); ++i) {
    if (orig[i] != adv[i]) ++changed;
  }
  c.rho = static_cast<double>(changed) / static_cast<double>(orig.size());
  c.ratio_ok = changed >= 1 && c.rho <= constraints.rho_max + kRatioSlack;

  c.similarity = embed::sentence_similarity(orig, adv, sim_table).value;
  c.similarity_ok = c.similarity >= constraints.epsilon_min;

  const std::size_t q_max = constraints.q_policy == QueryPolicy::fixed ? constraints.q_fixed
                                                                       : constraints.k_max * orig.size();
  c.budget_ok = outcome.queries_used <= q_max;

  const auto probs = predictor.predict(adv);
  std::size_t label = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[label]) label = k;
  }
  c.label_flipped = label != document.label;
  return c;
}

nlohmann::json to_json(const AttackOutcome& o) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : o.trace) trace.push_back({{"position", s.position}, {"word", s.word}, {"score", s.score}});
  return {{"id", o.id},       {"status", to_string(o.status)}, {"queries", o.queries_used},
          {"rho", o.rho},     {"sim", o.similarity},           {"trace", std::move(trace)}};
}

AttackOutcome outcome_from_json(const nlohmann::json& j) {
  AttackOutcome o;
  o.id = j.at("id").get<std::uint64_t>();
  o.status = status_from_string(j.at("status").get<std::string>());
  o.queries_used = j.at("queries").get<std::size_t>();
  o.rho = j.at("rho").get<double>();
  o.similarity = j.at("sim").get<double>();
  for (const auto& s : j.at("trace")) {
    o.trace.push_back({s.at("position").get<std::size_t>(), s.at("word").get<std::string>(),
                       s.at("score").get<double>()});
  }
  return o;
}

void write_trace_log(std::span<const AttackOutcome> outcomes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw attack_error("cannot write " + path.string());
  for (const auto& o : outcomes) out << to_json(o).dump() << '\n';
}

std::vector<AttackOutcome> read_trace_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw attack_error("cannot open " + path.string());
  std::vector<AttackOutcome> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(outcome_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

std::vector<AttackOutcome> attack_all(const victim::Predictor& predictor, std::span<const corpus::Document> docs,
                                      const AttackConstraints& constraints, const AttackRecipe& recipe,
                                      const embed::EmbeddingTable& sim_table, unsigned jobs) {
  std::vector<AttackOutcome> out(docs.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < docs.size(); i += stride) {
      out[i] = greedy_attack(predictor, docs[i], constraints, recipe, sim_table);
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, docs.size()))));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> threads;
    for (unsigned w = 0; w < jobs; ++w) threads.emplace_back(work, w, jobs);
  }
  return out;
}

}  // namespace advtext::attack
