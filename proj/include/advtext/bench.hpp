#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advtext/attack.hpp"
#include "advtext/corpus.hpp"
#include "advtext/defense.hpp"
#include "advtext/embedding.hpp"
#include "advtext/ensemble.hpp"
#include "advtext/toy.hpp"
#include "advtext/victim.hpp"

namespace advtext::bench {

/// Everything a benchmark cell reads: splits, both embedding tables and the
/// synonym indices built from them. Attacks measure similarity with the
/// attacker table.
struct Assets {
  std::string name;
  corpus::Dataset train;
  corpus::Dataset test;
  std::shared_ptr<const embed::EmbeddingTable> attacker_table;
  std::shared_ptr<const embed::EmbeddingTable> defender_table;
  std::shared_ptr<const embed::SynonymIndex> attacker_index;
  std::shared_ptr<const embed::SynonymIndex> defender_index;
};

struct IndexSettings {
  std::size_t attacker_k = 50;
  std::size_t defender_k = 50;
  double min_cos = 0.0;
};

Assets make_assets(std::string name, corpus::Dataset train, corpus::Dataset test, embed::EmbeddingTable attacker,
                   embed::EmbeddingTable defender, const IndexSettings& index);
Assets make_assets(std::string name, toy::ToyAssets toy, const IndexSettings& index);

/// Victim shape and training schedule. Embeddings stay frozen at the
/// defender table by default.
struct ModelSpec {
  std::size_t hidden = 32;
  victim::Activation activation = victim::Activation::tanh;
  victim::TrainConfig train{.epochs = 20, .learning_rate = 0.5, .batch_size = 16, .embedding_lr_scale = 0.0, .seed = 0};
};

/// Vocabulary over training words and defender-table words.
corpus::Vocabulary victim_vocabulary(const Assets& assets);
victim::Model initial_model(const Assets& assets, const ModelSpec& spec, std::uint64_t seed);

/// Percentage of documents `predictor` labels correctly.
double evaluate_clean(const victim::Predictor& predictor, const corpus::Dataset& dataset);

/// One (defense, attacker, dataset, seed) cell.
struct Row {
  std::string defense;
  std::string attacker;
  std::string dataset;
  std::uint64_t seed = 0;
  double clean_pct = 0.0;
  double clean_eval_pct = 0.0;
  double aua_pct = 0.0;
  double suc_pct = 0.0;
  double mean_queries = 0.0;      // over attempted examples
  double mean_queries_all = 0.0;  // over every evaluated example
  std::size_t n_eval = 0;
  std::size_t n_attempted = 0;
  std::size_t n_skipped = 0;
  std::size_t n_success = 0;
  std::size_t n_failed = 0;
  std::size_t max_query_budget = 0;
  std::string fingerprint;
  bool failed = false;  // cell could not be evaluated
  std::string error;
};

/// Fills the attack metrics of `row` from per-document outcomes.
void tally(Row& row, std::span<const attack::AttackOutcome> outcomes);

/// Count conservation and Aua = Clean_eval * (1 - Suc), both as exact count
/// algebra and within floating-point rounding of the reported percentages.
bool metric_identity_holds(const Row& row);

struct AttackerEntry {
  std::string name;
  attack::AttackRecipe recipe;
  attack::AttackConstraints constraints;
};

struct UnderAttack {
  Row row;
  std::vector<attack::AttackOutcome> outcomes;
};

/// Attacks every example of `eval`; metrics follow the skip policy.
UnderAttack evaluate_under_attack(const victim::Predictor& predictor, const corpus::Dataset& eval,
                                  const AttackerEntry& attacker, const embed::EmbeddingTable& sim_table,
                                  unsigned jobs = 1);

struct PredictorSpec {
  victim::Strategy strategy = victim::Strategy::logit;
  std::size_t ensemble_size = 16;
};

struct DefenseEntry {
  std::string name;
  defense::DefenseConfig config;
  PredictorSpec predictor;
  /// When set the model is loaded from here instead of being trained.
  std::optional<std::filesystem::path> checkpoint;
};

struct BenchmarkSpec {
  std::vector<DefenseEntry> defenses;
  std::vector<AttackerEntry> attackers;
  std::vector<const Assets*> datasets;
  std::vector<std::uint64_t> seeds;
  ModelSpec model;
  std::size_t eval_size = 1000;
  unsigned jobs = 1;
  /// When set, every cell's attack trace is written here.
  std::optional<std::filesystem::path> trace_dir;
};

struct EvalReport {
  std::vector<Row> rows;
  bool all_ok() const;
};

/// Caches trained models across cells keyed by everything training reads.
class ModelCache {
 public:
  struct Entry {
    victim::Model model;
    std::string hash;
  };
  const Entry& get(const Assets& assets, const DefenseEntry& defense, const ModelSpec& spec, std::uint64_t seed,
                   const AttackerEntry* ada_attacker);

 private:
  std::map<std::string, Entry> entries_;
};

/// The full defenses x attackers x datasets x seeds cross product. A cell
/// that cannot run is kept as a failed row.
EvalReport run_benchmark(const BenchmarkSpec& spec, ModelCache* cache = nullptr);

/// Single cell, shared by run_benchmark and sweep.
Row run_cell(const Assets& assets, const DefenseEntry& defense, const AttackerEntry& attacker,
             const ModelSpec& model, std::size_t eval_size, std::uint64_t seed, unsigned jobs, ModelCache& cache,
             const std::optional<std::filesystem::path>& trace_path = std::nullopt);

std::string csv_header();
std::string to_csv(const Row& row);
nlohmann::json to_json(const Row& row);
void write_report(const EvalReport& report, const std::filesystem::path& csv, const std::filesystem::path& json);

enum class SweepParam { k_max, rho_max, steps, epsilon, strategy, synonym_source, alpha, mask_rate };

std::string to_string(SweepParam p);
SweepParam sweep_param_from_string(const std::string& s);

struct SweepSpec {
  SweepParam param = SweepParam::k_max;
  std::vector<std::string> grid;
  const Assets* assets = nullptr;
  DefenseEntry defense;
  AttackerEntry attacker;
  ModelSpec model;
  std::size_t eval_size = 200;
  std::vector<std::uint64_t> seeds;
  unsigned jobs = 1;
};

struct SweepPoint {
  std::string value;
  std::vector<Row> rows;  // one per seed
  double aua_mean = 0.0;
  double aua_std = 0.0;
  double clean_mean = 0.0;
  double clean_std = 0.0;
  double suc_mean = 0.0;
  double suc_std = 0.0;
};

struct SweepReport {
  SweepParam param = SweepParam::k_max;
  std::vector<SweepPoint> points;
};

/// Applies one grid value to copies of the defense and attacker entries.
void apply_sweep_value(SweepParam param, const std::string& value, const Assets& assets, DefenseEntry& defense,
                       AttackerEntry& attacker);

SweepReport sweep(const SweepSpec& spec, ModelCache* cache = nullptr);

/// Long format: param,value,seed,metric,metric_value.
void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path);

/// Two-sided exact sign test p-value for `wins` successes out of `trials`.
double sign_test_p(std::size_t wins, std::size_t trials);

}  // namespace advtext::bench
