#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advtext/attack.hpp"
#include "advtext/bench.hpp"
#include "advtext/common.hpp"
#include "advtext/defense.hpp"

namespace advtext::config {

/// Bad user input; names the offending field.
class UsageError : public Error {
 public:
  UsageError(std::string field, const std::string& message)
      : Error("cli", field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Fully resolved settings of one CLI run.
struct RunConfig {
  std::string subcommand;

  // run
  std::optional<std::uint64_t> seed;
  std::size_t num_seeds = 1;
  std::filesystem::path out;
  unsigned jobs = 1;
  bool strict = false;
  std::size_t eval_size = 1000;

  // corpus
  std::filesystem::path dataset;  // directory with train.tsv, test.tsv and optionally classes.txt
  std::size_t num_classes = 0;    // 0: count the lines of classes.txt

  // embedspace
  std::filesystem::path attacker_vectors;
  std::filesystem::path defender_vectors;
  std::size_t index_k = 50;
  double min_cos = 0.0;
  std::filesystem::path cache_dir;

  // victim
  bench::ModelSpec model;
  victim::Strategy ensemble = victim::Strategy::logit;
  std::size_t ensemble_size = 100;
  std::filesystem::path checkpoint;

  // attack
  std::vector<attack::RecipeName> attacks{attack::RecipeName::synonym_greedy};
  attack::Ordering ordering = attack::Ordering::deletion_importance;
  attack::AttackConstraints constraints;

  // defense
  std::vector<defense::Method> defenses{defense::Method::none};
  std::optional<std::size_t> steps;  // unset: 30 for freelb_pp, 10 otherwise
  double alpha = 0.1;
  std::optional<double> epsilon_norm;
  bool no_projection = false;
  double mask_rate = 0.05;
  embed::IndexSource smoothing_index = embed::IndexSource::defender;
  std::size_t synonym_k = 8;
  std::size_t ada_rounds = 1;
  double ada_mix = 1.0;
  std::size_t ada_sample = 200;

  // bench
  std::string param;
  std::vector<std::string> grid;
  bool trace = false;
};

struct FieldInfo {
  std::string section;
  std::string key;  // config-file key; the flag is --key with '_' spelled '-'
  std::string help;
  bool is_switch = false;
};

/// Every settable field, in resolved-config order.
const std::vector<FieldInfo>& fields();

std::string flag_name(const std::string& key);

/// Parses `value` into field `key`; throws UsageError naming the field.
void set_field(RunConfig& config, const std::string& key, const std::string& value);

/// Applies an INI file (sections per module, keys as in fields()) or a
/// previously written resolved_config.json.
void apply_file(RunConfig& config, const std::filesystem::path& path);

/// Range checks and path existence for what `subcommand` reads.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);

/// Short hash of the resolved config.
std::string fingerprint(const RunConfig& config);

/// Seeds the run iterates over: seed, seed + 1, ...
std::vector<std::uint64_t> seeds(const RunConfig& config);

/// Defense entry for one method under the shared defense settings.
bench::DefenseEntry defense_entry(const RunConfig& config, defense::Method method, const bench::Assets& assets);

bench::AttackerEntry attacker_entry(const RunConfig& config, attack::RecipeName recipe, const bench::Assets& assets);

}  // namespace advtext::config
