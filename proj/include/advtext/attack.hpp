#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "advtext/corpus.hpp"
#include "advtext/embedding.hpp"
#include "advtext/ensemble.hpp"

namespace advtext::attack {

enum class QueryPolicy { k_times_l, fixed };

/// The four attack budgets: similarity floor, synonyms per word, share of
/// modified words and number of victim queries.
struct AttackConstraints {
  double epsilon_min = 0.84;
  std::size_t k_max = 50;
  double rho_max = 0.3;
  QueryPolicy q_policy = QueryPolicy::k_times_l;
  std::size_t q_fixed = 0;

  /// Throws naming the offending field.
  void validate() const;
};

std::size_t query_budget(const AttackConstraints& constraints, std::size_t length);

/// Largest substitution count with count / length <= rho_max.
std::size_t max_substitutions(double rho_max, std::size_t length);

/// Hamming distance over length; throws when lengths differ.
double modification_ratio(std::span<const std::string> original, std::span<const std::string> adversarial);

/// Every victim call made by an attack goes through one of these.
class QueryCounter {
 public:
  QueryCounter(const victim::Predictor& predictor, std::size_t budget) : predictor_(predictor), budget_(budget) {}

  /// nullopt once the budget is spent.
  std::optional<std::vector<double>> query(std::span<const std::string> tokens);

  std::size_t used() const { return used_; }
  std::size_t budget() const { return budget_; }
  std::size_t remaining() const { return budget_ - used_; }
  bool exhausted() const { return used_ >= budget_; }

 private:
  const victim::Predictor& predictor_;
  std::size_t budget_;
  std::size_t used_ = 0;
};

enum class RecipeName { synonym_greedy, typo_greedy, mixed_greedy };
enum class Ordering { deletion_importance, saliency_weighted };

std::string to_string(RecipeName r);
RecipeName recipe_from_string(const std::string& s);

struct AttackRecipe {
  RecipeName name = RecipeName::synonym_greedy;
  Ordering ordering = Ordering::deletion_importance;
  std::shared_ptr<const embed::SynonymIndex> index;  // attacker's synonyms
};

/// Single-character edits in the order: adjacent swaps, deletions,
/// insertions (doubling a letter), substitutions (first QWERTY neighbor);
/// each by position. Words of length >= 4 keep their first and last
/// character; words shorter than 3 only get substitutions.
std::vector<std::string> typo_candidates(std::string_view word, std::size_t k);

/// At most `k_max` substitutes for `word` under `recipe`.
std::vector<std::string> candidates(std::string_view word, const AttackRecipe& recipe, std::size_t k_max);

struct Ranking {
  std::vector<std::size_t> positions;
  std::vector<double> scores;  // aligned with positions
  bool partial = false;        // budget ran out before every position was scored
};

using CandidateFn = std::function<std::vector<std::string>(std::string_view)>;

/// Deletion importance: drop in true-class probability when a token becomes
/// UNK, one query per position. Saliency weighting multiplies that by the
/// best single-substitute drop (one query per admissible candidate). Ties
/// keep the leftmost position first.
Ranking word_importance(QueryCounter& counter, std::span<const std::string> tokens, ClassIndex label,
                        double clean_true_prob, Ordering ordering, const CandidateFn& candidate_fn = {},
                        const embed::EmbeddingTable* sim_table = nullptr, double epsilon_min = 0.0);

enum class Status { success, failed, skipped };

std::string to_string(Status s);
Status status_from_string(const std::string& s);

struct TraceStep {
  std::size_t position = 0;
  std::string word;
  double score = 0.0;  // true-class probability after the substitution

  bool operator==(const TraceStep&) const = default;
};

struct AttackOutcome {
  std::uint64_t id = 0;
  Status status = Status::failed;
  std::vector<std::string> adversarial;  // filled on success
  std::size_t queries_used = 0;
  std::size_t query_budget = 0;
  double rho = 0.0;
  double similarity = 1.0;
  std::vector<TraceStep> trace;

  bool operator==(const AttackOutcome&) const = default;
};

/// Greedy word substitution under hard budgets: skip misclassified inputs,
/// rank positions, then substitute each position at most once with the
/// admissible candidate that lowers the true-class probability the most.
AttackOutcome greedy_attack(const victim::Predictor& predictor, const corpus::Document& document,
                            const AttackConstraints& constraints, const AttackRecipe& recipe,
                            const embed::EmbeddingTable& sim_table);

/// Exhaustive search for a minimal-rho adversarial example. Ignores the
/// query budget. Only for L <= 8 and k_max <= 4.
AttackOutcome brute_force_attack(const victim::Predictor& predictor, const corpus::Document& document,
                                 const AttackConstraints& constraints, const AttackRecipe& recipe,
                                 const embed::EmbeddingTable& sim_table);

struct Certificate {
  bool label_flipped = false;
  bool similarity_ok = false;
  bool ratio_ok = false;
  bool budget_ok = false;
  bool lengths_match = false;
  double similarity = 0.0;
  double rho = 0.0;

  bool valid() const { return label_flipped && similarity_ok && ratio_ok && budget_ok && lengths_match; }
};

/// Re-checks a success outcome from scratch against the constraints,
/// querying `predictor` directly.
Certificate certify(const victim::Predictor& predictor, const corpus::Document& document,
                    const AttackOutcome& outcome, const AttackConstraints& constraints,
                    const embed::EmbeddingTable& sim_table);

nlohmann::json to_json(const AttackOutcome& outcome);
AttackOutcome outcome_from_json(const nlohmann::json& j);

/// JSON-lines trace: one {id, status, queries, rho, sim, trace} per document.
void write_trace_log(std::span<const AttackOutcome> outcomes, const std::filesystem::path& path);
std::vector<AttackOutcome> read_trace_log(const std::filesystem::path& path);

/// Attacks every document; documents are spread over `jobs` threads and the
/// result order follows the input.
std::vector<AttackOutcome> attack_all(const victim::Predictor& predictor, std::span<const corpus::Document> docs,
                                      const AttackConstraints& constraints, const AttackRecipe& recipe,
                                      const embed::EmbeddingTable& sim_table, unsigned jobs = 1);

}  // namespace advtext::attack
