#include "advtext/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "advtext/digest.hpp"
#include "advtext/rng.hpp"

namespace advtext::bench {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

nlohmann::json to_json(const attack::AttackConstraints& c) {
  return {{"epsilon_min", c.epsilon_min},
          {"k_max", c.k_max},
          {"rho_max", c.rho_max},
          {"queries", c.q_policy == attack::QueryPolicy::k_times_l ? std::string("kxl")
                                                                   : "fixed:" + std::to_string(c.q_fixed)}};
}

nlohmann::json to_json(const attack::AttackRecipe& r) {
  nlohmann::json j = {
      {"name", attack::to_string(r.name)},
      {"ordering", r.ordering == attack::Ordering::deletion_importance ? "deletion-importance" : "saliency-weighted"}};
  if (r.index) {
    j["index"] = r.index->source() == embed::IndexSource::attacker ? "attacker" : "defender";
    j["index_k"] = r.index->k_max();
  }
  return j;
}

nlohmann::json to_json(const ModelSpec& m) {
  return {{"hidden", m.hidden},
          {"activation", victim::to_string(m.activation)},
          {"epochs", m.train.epochs},
          {"learning_rate", m.train.learning_rate},
          {"batch_size", m.train.batch_size},
          {"embedding_lr_scale", m.train.embedding_lr_scale}};
}

}  // namespace

Assets make_assets(std::string name, corpus::Dataset train, corpus::Dataset test, embed::EmbeddingTable attacker,
                   embed::EmbeddingTable defender, const IndexSettings& index) {
  if (train.empty() || test.empty()) throw Error("bench", "dataset " + name + " has an empty split");
  Assets a;
  a.name = std::move(name);
  a.train = std::move(train);
  a.test = std::move(test);
  a.attacker_table = std::make_shared<const embed::EmbeddingTable>(std::move(attacker));
  a.defender_table = std::make_shared<const embed::EmbeddingTable>(std::move(defender));
  a.attacker_index = std::make_shared<const embed::SynonymIndex>(
      embed::build_synonym_index(*a.attacker_table, index.attacker_k, index.min_cos, embed::IndexSource::attacker));
  a.defender_index = std::make_shared<const embed::SynonymIndex>(
      embed::build_synonym_index(*a.defender_table, index.defender_k, index.min_cos, embed::IndexSource::defender));
  return a;
}

Assets make_assets(std::string name, toy::ToyAssets toy, const IndexSettings& index) {
  return make_assets(std::move(name), std::move(toy.train), std::move(toy.test), std::move(toy.attacker),
                     std::move(toy.defender), index);
}

corpus::Vocabulary victim_vocabulary(const Assets& assets) {
  std::vector<std::string> words = assets.defender_table->words();
  for (const auto& doc : assets.train.documents) words.insert(words.end(), doc.tokens.begin(), doc.tokens.end());
  return corpus::Vocabulary::from_words(std::move(words));
}

victim::Model initial_model(const Assets& assets, const ModelSpec& spec, std::uint64_t seed) {
  return victim::Model::initialize(victim_vocabulary(assets), assets.defender_table.get(),
                                   assets.defender_table->dim(), spec.hidden, assets.train.num_classes,
                                   spec.activation, seed);
}

double evaluate_clean(const victim::Predictor& predictor, const corpus::Dataset& dataset) {
  if (dataset.empty()) throw Error("bench", "evaluate_clean on an empty dataset");
  std::size_t correct = 0;
  for (const auto& doc : dataset.documents) {
    if (victim::argmax(predictor.predict(doc.tokens)) == doc.label) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void tally(Row& row, std::span<const attack::AttackOutcome> outcomes) {
  row.n_eval = outcomes.size();
  row.n_skipped = row.n_success = row.n_failed = 0;
  row.max_query_budget = 0;
  std::size_t attempted_queries = 0;
  std::size_t all_queries = 0;
  for (const auto& o : outcomes) {
    all_queries += o.queries_used;
    row.max_query_budget = std::max(row.max_query_budget, o.query_budget);
    switch (o.status) {
      case attack::Status::skipped: ++row.n_skipped; break;
      case attack::Status::success: ++row.n_success; attempted_queries += o.queries_used; break;
      case attack::Status::failed: ++row.n_failed; attempted_queries += o.queries_used; break;
    }
  }
  row.n_attempted = row.n_success + row.n_failed;
  const auto n = static_cast<double>(row.n_eval);
  const auto attempted = static_cast<double>(row.n_attempted);
  row.clean_eval_pct = n > 0 ? 100.0 * attempted / n : 0.0;
  row.aua_pct = n > 0 ? 100.0 * static_cast<double>(row.n_failed) / n : 0.0;
  row.suc_pct = attempted > 0 ? 100.0 * static_cast<double>(row.n_success) / attempted : 0.0;
  row.mean_queries = attempted > 0 ? static_cast<double>(attempted_queries) / attempted : 0.0;
  row.mean_queries_all = n > 0 ? static_cast<double>(all_queries) / n : 0.0;
}

bool metric_identity_holds(const Row& row) {
  if (row.n_eval != row.n_skipped + row.n_success + row.n_failed) return false;
  if (row.n_attempted != row.n_success + row.n_failed) return false;
  if (row.n_eval == 0) return false;
  // Count form: failed * n_eval == attempted * n_eval * (1 - success / attempted).
  const double n = static_cast<double>(row.n_eval);
  if (std::llround(row.aua_pct * n / 100.0) != static_cast<long long>(row.n_failed)) return false;
  if (std::llround(row.clean_eval_pct * n / 100.0) != static_cast<long long>(row.n_attempted)) return false;
  const double rhs = row.clean_eval_pct / 100.0 * (1.0 - row.suc_pct / 100.0);
  return std::abs(row.aua_pct / 100.0 - rhs) <= 1e-9;
}

UnderAttack evaluate_under_attack(const victim::Predictor& predictor, const corpus::Dataset& eval,
                                  const AttackerEntry& attacker, const embed::EmbeddingTable& sim_table,
                                  unsigned jobs) {
  if (eval.empty()) throw Error("bench", "evaluate_under_attack on an empty eval set");
  UnderAttack result;
  result.outcomes =
      attack::attack_all(predictor, eval.documents, attacker.constraints, attacker.recipe, sim_table, jobs);
  result.row.attacker = attacker.name;
  tally(result.row, result.outcomes);
  return result;
}

bool EvalReport::all_ok() const {
  return std::none_of(rows.begin(), rows.end(), [](const Row& r) { return r.failed; });
}

const ModelCache::Entry& ModelCache::get(const Assets& assets, const DefenseEntry& defense, const ModelSpec& spec,
                                         std::uint64_t seed, const AttackerEntry* ada_attacker) {
  nlohmann::json key = {{"dataset", assets.name},
                        {"defense", defense::to_json(defense.config)},
                        {"model", to_json(spec)},
                        {"seed", seed}};
  if (defense.config.method == defense::Method::ada && ada_attacker) {
    key["ada_attacker"] = {{"constraints", to_json(ada_attacker->constraints)},
                           {"recipe", to_json(ada_attacker->recipe)}};
  }
  const std::string k = key.dump();
  if (auto it = entries_.find(k); it != entries_.end()) return it->second;

  victim::Model model = initial_model(assets, spec, mix_seed(seed, 0x1417));
  victim::TrainConfig train = spec.train;
  train.seed = seed;
  defense::DefenseConfig config = defense.config;
  config.seed = seed;
  std::optional<defense::AdaAttacker> ada;
  if (config.method == defense::Method::ada) {
    if (!ada_attacker) throw Error("bench", "ada defense " + defense.name + " needs an attacker");
    ada = defense::AdaAttacker{ada_attacker->recipe, ada_attacker->constraints, assets.attacker_table};
  }
  defense::defend(model, assets.train, train, config, ada ? &*ada : nullptr);
  std::string hash = victim::checkpoint_hash(model);
  return entries_.emplace(k, Entry{std::move(model), std::move(hash)}).first->second;
}

Row run_cell(const Assets& assets, const DefenseEntry& defense, const AttackerEntry& attacker,
             const ModelSpec& model_spec, std::size_t eval_size, std::uint64_t seed, unsigned jobs,
             ModelCache& cache, const std::optional<std::filesystem::path>& trace_path) {
  victim::Model loaded;
  const victim::Model* model = nullptr;
  std::string hash;
  if (defense.checkpoint) {
    if (!std::filesystem::exists(*defense.checkpoint)) {
      throw Error("bench", "missing checkpoint " + defense.checkpoint->string());
    }
    loaded = victim::load_checkpoint(*defense.checkpoint);
    model = &loaded;
    hash = victim::checkpoint_hash(loaded);
  } else {
    const auto& entry = cache.get(assets, defense, model_spec, seed, &attacker);
    model = &entry.model;
    hash = entry.hash;
  }

  std::unique_ptr<victim::Predictor> predictor;
  if (defense::is_smoothing(defense.config.method)) {
    auto config = defense::matching_ensemble(defense.config, defense.predictor.strategy,
                                             defense.predictor.ensemble_size, mix_seed(seed, 0xe45e));
    predictor = std::make_unique<victim::Ensemble>(*model, std::move(config));
  } else {
    predictor = std::make_unique<victim::ModelPredictor>(*model);
  }

  const corpus::Dataset eval = corpus::sample_eval(assets.test, std::min(eval_size, assets.test.size()), seed);
  Row row;
  row.clean_pct = evaluate_clean(*predictor, assets.test);
  auto attacked = evaluate_under_attack(*predictor, eval, attacker, *assets.attacker_table, jobs);
  const double clean = row.clean_pct;
  row = std::move(attacked.row);
  row.clean_pct = clean;
  row.defense = defense.name;
  row.dataset = assets.name;
  row.seed = seed;

  nlohmann::json fp = {{"checkpoint", hash},
                       {"eval_manifest", sha256_hex(corpus::manifest(eval))},
                       {"dataset", assets.name},
                       {"constraints", to_json(attacker.constraints)},
                       {"recipe", to_json(attacker.recipe)},
                       {"seed", seed}};
  if (defense::is_smoothing(defense.config.method)) {
    fp["predictor"] = {{"strategy", victim::to_string(defense.predictor.strategy)},
                       {"size", defense.predictor.ensemble_size},
                       {"defense", defense::to_json(defense.config)}};
  }
  row.fingerprint = sha256_hex(fp.dump()).substr(0, 16);
  if (trace_path) attack::write_trace_log(attacked.outcomes, *trace_path);
  return row;
}

EvalReport run_benchmark(const BenchmarkSpec& spec, ModelCache* cache) {
  ModelCache local;
  ModelCache& models = cache ? *cache : local;
  EvalReport report;
  for (const Assets* assets : spec.datasets) {
    for (std::uint64_t seed : spec.seeds) {
      for (const auto& defense : spec.defenses) {
        for (const auto& attacker : spec.attackers) {
          std::optional<std::filesystem::path> trace;
          if (spec.trace_dir) {
            trace = *spec.trace_dir /
                    (assets->name + "_" + defense.name + "_" + attacker.name + "_" + std::to_string(seed) + ".jsonl");
          }
          try {
            report.rows.push_back(
                run_cell(*assets, defense, attacker, spec.model, spec.eval_size, seed, spec.jobs, models, trace));
          } catch (const std::exception& e) {
            Row row;
            row.defense = defense.name;
            row.attacker = attacker.name;
            row.dataset = assets->name;
            row.seed = seed;
            row.failed = true;
            row.error = e.what();
            row.fingerprint = sha256_hex(row.dataset + "|" + row.defense + "|" + row.attacker + "|" +
                                         std::to_string(seed)).substr(0, 16);
            std::clog << "bench: cell " << row.defense << "/" << row.attacker << "/" << row.dataset << "/" << seed
                      << " failed: " << e.what() << '\n';
            report.rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const Row& a, const Row& b) { return a.fingerprint < b.fingerprint; });
  return report;
}

std::string csv_header() {
  return "defense,attacker,dataset,seed,clean_pct,clean_eval_pct,aua_pct,suc_pct,mean_queries,n_eval,n_skipped,"
         "fingerprint,mean_queries_all,n_attempted,n_success,n_failed,status,error";
}

std::string to_csv(const Row& r) {
  std::ostringstream out;
  out << csv_field(r.defense) << ',' << csv_field(r.attacker) << ',' << csv_field(r.dataset) << ',' << r.seed << ','
      << fmt(r.clean_pct) << ',' << fmt(r.clean_eval_pct) << ',' << fmt(r.aua_pct) << ',' << fmt(r.suc_pct) << ','
      << fmt(r.mean_queries) << ',' << r.n_eval << ',' << r.n_skipped << ',' << r.fingerprint << ','
      << fmt(r.mean_queries_all) << ',' << r.n_attempted << ',' << r.n_success << ',' << r.n_failed << ','
      << (r.failed ? "failed" : "ok") << ',' << csv_field(r.error);
  return out.str();
}

nlohmann::json to_json(const Row& r) {
  return {{"defense", r.defense},
          {"attacker", r.attacker},
          {"dataset", r.dataset},
          {"seed", r.seed},
          {"clean_pct", r.clean_pct},
          {"clean_eval_pct", r.clean_eval_pct},
          {"aua_pct", r.aua_pct},
          {"suc_pct", r.suc_pct},
          {"mean_queries", r.mean_queries},
          {"mean_queries_all", r.mean_queries_all},
          {"n_eval", r.n_eval},
          {"n_attempted", r.n_attempted},
          {"n_skipped", r.n_skipped},
          {"n_success", r.n_success},
          {"n_failed", r.n_failed},
          {"fingerprint", r.fingerprint},
          {"status", r.failed ? "failed" : "ok"},
          {"error", r.error}};
}

void write_report(const EvalReport& report, const std::filesystem::path& csv, const std::filesystem::path& json) {
  std::ofstream c(csv);
  if (!c) throw Error("bench", "cannot write " + csv.string());
  c << csv_header() << '\n';
  for (const auto& row : report.rows) c << to_csv(row) << '\n';

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) rows.push_back(to_json(row));
  std::ofstream j(json);
  if (!j) throw Error("bench", "cannot write " + json.string());
  j << nlohmann::json{{"rows", rows}}.dump(2) << '\n';
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::k_max: return "k_max";
    case SweepParam::rho_max: return "rho_max";
    case SweepParam::steps: return "t";
    case SweepParam::epsilon: return "epsilon";
    case SweepParam::strategy: return "strategy";
    case SweepParam::synonym_source: return "synonym_source";
    case SweepParam::alpha: return "alpha";
    case SweepParam::mask_rate: return "mask_rate";
  }
  return "?";
}

SweepParam sweep_param_from_string(const std::string& s) {
  for (auto p : {SweepParam::k_max, SweepParam::rho_max, SweepParam::steps, SweepParam::epsilon,
                 SweepParam::strategy, SweepParam::synonym_source, SweepParam::alpha, SweepParam::mask_rate}) {
    if (to_string(p) == s) return p;
  }
  if (s == "steps") return SweepParam::steps;
  throw Error("bench", "unknown sweep parameter: " + s);
}

namespace {

double parse_number(const std::string& param, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error("bench", "bad " + param + " value: " + value);
  }
}

std::size_t parse_count(const std::string& param, const std::string& value) {
  const double v = parse_number(param, value);
  if (v < 0 || v != std::floor(v)) throw Error("bench", "bad " + param + " value: " + value);
  return static_cast<std::size_t>(v);
}

}  // namespace

void apply_sweep_value(SweepParam param, const std::string& value, const Assets& assets, DefenseEntry& defense,
                       AttackerEntry& attacker) {
  const std::string name = to_string(param);
  switch (param) {
    case SweepParam::k_max: attacker.constraints.k_max = parse_count(name, value); break;
    case SweepParam::rho_max: attacker.constraints.rho_max = parse_number(name, value); break;
    case SweepParam::steps: defense.config.steps = parse_count(name, value); break;
    case SweepParam::epsilon:
      if (value == "none") {
        defense.config.epsilon.reset();
      } else {
        defense.config.epsilon = parse_number(name, value);
      }
      break;
    case SweepParam::strategy: defense.predictor.strategy = victim::strategy_from_string(value); break;
    case SweepParam::synonym_source:
      if (value == "shared") {
        defense.config.smoothing_index = assets.attacker_index;
      } else if (value == "separate") {
        defense.config.smoothing_index = assets.defender_index;
      } else {
        throw Error("bench", "synonym_source must be shared or separate, got " + value);
      }
      break;
    case SweepParam::alpha: defense.config.alpha = parse_number(name, value); break;
    case SweepParam::mask_rate: defense.config.mask_rate = parse_number(name, value); break;
  }
  attacker.constraints.validate();
  defense.config.validate();
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace

SweepReport sweep(const SweepSpec& spec, ModelCache* cache) {
  if (spec.grid.empty()) throw Error("bench", "sweep grid is empty");
  if (spec.seeds.empty()) throw Error("bench", "sweep needs at least one seed");
  if (!spec.assets) throw Error("bench", "sweep has no dataset");
  ModelCache local;
  ModelCache& models = cache ? *cache : local;
  SweepReport report;
  report.param = spec.param;
  for (const auto& value : spec.grid) {
    SweepPoint point;
    point.value = value;
    DefenseEntry defense = spec.defense;
    AttackerEntry attacker = spec.attacker;
    apply_sweep_value(spec.param, value, *spec.assets, defense, attacker);
    std::vector<double> aua, clean, suc;
    for (std::uint64_t seed : spec.seeds) {
      try {
        Row row = run_cell(*spec.assets, defense, attacker, spec.model, spec.eval_size, seed, spec.jobs, models);
        aua.push_back(row.aua_pct);
        clean.push_back(row.clean_pct);
        suc.push_back(row.suc_pct);
        point.rows.push_back(std::move(row));
      } catch (const std::exception& e) {
        std::clog << "sweep: " << to_string(spec.param) << "=" << value << " seed " << seed << " failed: " << e.what()
                  << '\n';
        Row row;
        row.defense = defense.name;
        row.attacker = attacker.name;
        row.dataset = spec.assets->name;
        row.seed = seed;
        row.failed = true;
        row.error = e.what();
        point.rows.push_back(std::move(row));
      }
    }
    std::tie(point.aua_mean, point.aua_std) = mean_std(aua);
    std::tie(point.clean_mean, point.clean_std) = mean_std(clean);
    std::tie(point.suc_mean, point.suc_std) = mean_std(suc);
    report.points.push_back(std::move(point));
  }
  return report;
}

void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("bench", "cannot write " + path.string());
  const std::string param = to_string(report.param);
  out << "param,value,seed,metric,metric_value\n";
  for (const auto& p : report.points) {
    for (const auto& r : p.rows) {
      if (r.failed) continue;
      const std::string prefix = param + "," + csv_field(p.value) + "," + std::to_string(r.seed) + ",";
      out << prefix << "clean_pct," << fmt(r.clean_pct) << '\n';
      out << prefix << "clean_eval_pct," << fmt(r.clean_eval_pct) << '\n';
      out << prefix << "aua_pct," << fmt(r.aua_pct) << '\n';
      out << prefix << "suc_pct," << fmt(r.suc_pct) << '\n';
      out << prefix << "mean_queries," << fmt(r.mean_queries) << '\n';
    }
    for (const auto& [stat, aua, clean, suc] :
         {std::tuple{"mean", p.aua_mean, p.clean_mean, p.suc_mean}, std::tuple{"std", p.aua_std, p.clean_std, p.suc_std}}) {
      const std::string prefix = param + "," + csv_field(p.value) + "," + stat + ",";
      out << prefix << "clean_pct," << fmt(clean) << '\n';
      out << prefix << "aua_pct," << fmt(aua) << '\n';
      out << prefix << "suc_pct," << fmt(suc) << '\n';
    }
  }
}

double sign_test_p(std::size_t wins, std::size_t trials) {
  if (trials == 0) return 1.0;
  const std::size_t k = std::max(wins, trials - wins);
  // P(X >= k) for X ~ Binomial(trials, 1/2), doubled.
  double tail = 0.0;
  for (std::size_t i = k; i <= trials; ++i) {
    tail += std::exp(std::lgamma(trials + 1.0) - std::lgamma(i + 1.0) - std::lgamma(trials - i + 1.0) -
                     static_cast<double>(trials) * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

}  // namespace advtext::bench
