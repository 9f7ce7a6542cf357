#include "advtext/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <boost/property_tree/exceptions.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "advtext/digest.hpp"

namespace advtext::config {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw UsageError(key, "expected a number, got '" + value + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw UsageError(key, "expected a non-negative integer, got '" + value + "'");
  }
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw UsageError(key, "integer out of range: " + value);
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw UsageError(key, "expected true or false, got '" + value + "'");
}

template <typename F>
auto converted(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(key, e.what());
  }
}

std::string ordering_name(attack::Ordering o) {
  return o == attack::Ordering::deletion_importance ? "deletion-importance" : "saliency-weighted";
}

std::string queries_name(const attack::AttackConstraints& c) {
  return c.q_policy == attack::QueryPolicy::k_times_l ? "kxl" : "fixed:" + std::to_string(c.q_fixed);
}

std::string source_name(embed::IndexSource s) { return s == embed::IndexSource::attacker ? "attacker" : "defender"; }

}  // namespace

const std::vector<FieldInfo>& fields() {
  static const std::vector<FieldInfo> all = {
      {"run", "seed", "global seed (required)"},
      {"run", "num_seeds", "bench/sweep: number of consecutive seeds starting at --seed"},
      {"run", "out", "output directory (required)"},
      {"run", "jobs", "worker threads for attacks and index building"},
      {"run", "strict", "exit nonzero when any benchmark row failed", true},
      {"run", "eval_size", "documents sampled from the test split for attacks"},
      {"corpus", "dataset", "directory holding train.tsv, test.tsv and classes.txt"},
      {"corpus", "num_classes", "class count when classes.txt is absent"},
      {"embedspace", "attacker_vectors", "attacker's embedding table"},
      {"embedspace", "defender_vectors", "defender's embedding table"},
      {"embedspace", "index_k", "neighbors kept per word in the synonym indices"},
      {"embedspace", "min_cos", "cosine floor for synonym candidates"},
      {"embedspace", "cache_dir", "where synonym indices are cached (empty: no cache)"},
      {"victim", "hidden", "hidden layer width"},
      {"victim", "activation", "tanh or relu"},
      {"victim", "epochs", "training epochs"},
      {"victim", "learning_rate", "SGD learning rate"},
      {"victim", "batch_size", "mini-batch size"},
      {"victim", "embedding_lr_scale", "learning-rate factor for the embedding table (0 freezes it)"},
      {"victim", "ensemble", "smoothing ensemble strategy: logit or vote"},
      {"victim", "ensemble_size", "smoothing ensemble members"},
      {"victim", "checkpoint", "model checkpoint to attack or benchmark"},
      {"attack", "attack", "comma list of synonym-greedy, typo-greedy, mixed-greedy"},
      {"attack", "ordering", "deletion-importance or saliency-weighted"},
      {"attack", "epsilon_min", "minimum sentence similarity"},
      {"attack", "k_max", "candidates per word"},
      {"attack", "rho_max", "maximum share of modified words"},
      {"attack", "queries", "query budget: kxl or fixed:N"},
      {"defense", "defense", "comma list of none, ada, pgd_k, freelb, freelb_pp, smooth_mask, smooth_synonym"},
      {"defense", "steps", "ascent steps t (default 30 for freelb_pp, 10 otherwise)"},
      {"defense", "alpha", "ascent step size"},
      {"defense", "epsilon_norm", "Frobenius bound on the perturbation (none: no bound)"},
      {"defense", "no_projection", "drop the norm bound even when epsilon_norm is set", true},
      {"defense", "mask_rate", "masking probability for smooth_mask"},
      {"defense", "smoothing_index", "synonym index used by smooth_synonym: defender or attacker"},
      {"defense", "synonym_k", "neighbors per word eligible for smoothing substitution"},
      {"defense", "ada_rounds", "augmentation rounds"},
      {"defense", "ada_mix", "adversarial examples added per attacked example"},
      {"defense", "ada_sample", "training documents attacked per round"},
      {"bench", "param", "sweep parameter: k_max, rho_max, t, epsilon, strategy, synonym_source, alpha, mask_rate"},
      {"bench", "grid", "comma list of sweep values"},
      {"bench", "trace", "write per-cell attack traces", true},
  };
  return all;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

void set_field(RunConfig& c, const std::string& key, const std::string& v) {
  if (key == "seed") {
    c.seed = to_uint(key, v);
  } else if (key == "num_seeds") {
    c.num_seeds = to_uint(key, v);
  } else if (key == "out") {
    c.out = v;
  } else if (key == "jobs") {
    c.jobs = static_cast<unsigned>(to_uint(key, v));
  } else if (key == "strict") {
    c.strict = to_bool(key, v);
  } else if (key == "eval_size") {
    c.eval_size = to_uint(key, v);
  } else if (key == "dataset") {
    c.dataset = v;
  } else if (key == "num_classes") {
    c.num_classes = to_uint(key, v);
  } else if (key == "attacker_vectors") {
    c.attacker_vectors = v;
  } else if (key == "defender_vectors") {
    c.defender_vectors = v;
  } else if (key == "index_k") {
    c.index_k = to_uint(key, v);
  } else if (key == "min_cos") {
    c.min_cos = to_double(key, v);
  } else if (key == "cache_dir") {
    c.cache_dir = v;
  } else if (key == "hidden") {
    c.model.hidden = to_uint(key, v);
  } else if (key == "activation") {
    c.model.activation = converted(key, [&] { return victim::activation_from_string(v); });
  } else if (key == "epochs") {
    c.model.train.epochs = to_uint(key, v);
  } else if (key == "learning_rate") {
    c.model.train.learning_rate = to_double(key, v);
  } else if (key == "batch_size") {
    c.model.train.batch_size = to_uint(key, v);
  } else if (key == "embedding_lr_scale") {
    c.model.train.embedding_lr_scale = to_double(key, v);
  } else if (key == "ensemble") {
    c.ensemble = converted(key, [&] { return victim::strategy_from_string(v); });
  } else if (key == "ensemble_size") {
    c.ensemble_size = to_uint(key, v);
  } else if (key == "checkpoint") {
    c.checkpoint = v;
  } else if (key == "attack") {
    c.attacks.clear();
    for (const auto& name : split_list(v)) c.attacks.push_back(converted(key, [&] { return attack::recipe_from_string(name); }));
  } else if (key == "ordering") {
    if (v == "deletion-importance") {
      c.ordering = attack::Ordering::deletion_importance;
    } else if (v == "saliency-weighted") {
      c.ordering = attack::Ordering::saliency_weighted;
    } else {
      throw UsageError(key, "expected deletion-importance or saliency-weighted, got '" + v + "'");
    }
  } else if (key == "epsilon_min") {
    c.constraints.epsilon_min = to_double(key, v);
  } else if (key == "k_max") {
    c.constraints.k_max = to_uint(key, v);
  } else if (key == "rho_max") {
    c.constraints.rho_max = to_double(key, v);
  } else if (key == "queries") {
    if (v == "kxl") {
      c.constraints.q_policy = attack::QueryPolicy::k_times_l;
    } else if (v.rfind("fixed:", 0) == 0) {
      c.constraints.q_policy = attack::QueryPolicy::fixed;
      c.constraints.q_fixed = to_uint(key, v.substr(6));
    } else {
      throw UsageError(key, "expected kxl or fixed:N, got '" + v + "'");
    }
  } else if (key == "defense") {
    c.defenses.clear();
    for (const auto& name : split_list(v)) c.defenses.push_back(converted(key, [&] { return defense::method_from_string(name); }));
  } else if (key == "steps") {
    if (v == "none" || v == "default") {
      c.steps.reset();
    } else {
      c.steps = to_uint(key, v);
    }
  } else if (key == "alpha") {
    c.alpha = to_double(key, v);
  } else if (key == "epsilon_norm") {
    if (v == "none") {
      c.epsilon_norm.reset();
    } else {
      c.epsilon_norm = to_double(key, v);
    }
  } else if (key == "no_projection") {
    c.no_projection = to_bool(key, v);
  } else if (key == "mask_rate") {
    c.mask_rate = to_double(key, v);
  } else if (key == "smoothing_index") {
    if (v == "defender") {
      c.smoothing_index = embed::IndexSource::defender;
    } else if (v == "attacker") {
      c.smoothing_index = embed::IndexSource::attacker;
    } else {
      throw UsageError(key, "expected defender or attacker, got '" + v + "'");
    }
  } else if (key == "synonym_k") {
    c.synonym_k = to_uint(key, v);
  } else if (key == "ada_rounds") {
    c.ada_rounds = to_uint(key, v);
  } else if (key == "ada_mix") {
    c.ada_mix = to_double(key, v);
  } else if (key == "ada_sample") {
    c.ada_sample = to_uint(key, v);
  } else if (key == "param") {
    c.param = v;
  } else if (key == "grid") {
    c.grid = split_list(v);
  } else if (key == "trace") {
    c.trace = to_bool(key, v);
  } else {
    throw UsageError(key, "unknown setting");
  }
}

void apply_file(RunConfig& config, const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config", "no such file: " + path.string());
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      std::ifstream in(path);
      j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      throw UsageError("config", path.string() + ": " + e.what());
    }
    for (const auto& [section, body] : j.items()) {
      if (!body.is_object()) continue;  // subcommand, fingerprint
      for (const auto& [key, value] : body.items()) {
        std::string text;
        if (value.is_null()) {
          text = "none";
        } else if (value.is_boolean()) {
          text = value.get<bool>() ? "true" : "false";
        } else if (value.is_number_float()) {
          text = num(value.get<double>());
        } else if (value.is_number()) {
          text = std::to_string(value.get<std::uint64_t>());
        } else if (value.is_array()) {
          std::vector<std::string> items;
          for (const auto& item : value) items.push_back(item.get<std::string>());
          text = join(items);
        } else {
          text = value.get<std::string>();
        }
        set_field(config, key, text);
      }
    }
    return;
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError("config", e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      set_field(config, section, body.data());  // key outside any section
      continue;
    }
    for (const auto& [key, value] : body) set_field(config, key, value.data());
  }
}

void validate(const RunConfig& c) {
  if (!c.seed) throw UsageError("seed", "a seed is required");
  if (c.out.empty()) throw UsageError("out", "an output directory is required");
  if (c.jobs < 1) throw UsageError("jobs", "must be >= 1");
  if (c.num_seeds < 1) throw UsageError("num_seeds", "must be >= 1");
  if (c.eval_size < 1) throw UsageError("eval_size", "must be >= 1");
  if (!(c.constraints.epsilon_min >= 0.0 && c.constraints.epsilon_min <= 1.0)) {
    throw UsageError("epsilon_min", "must lie in [0, 1]");
  }
  if (!(c.constraints.rho_max > 0.0 && c.constraints.rho_max <= 1.0)) throw UsageError("rho_max", "must lie in (0, 1]");
  if (c.constraints.k_max < 1) throw UsageError("k_max", "must be >= 1");
  if (c.constraints.q_policy == attack::QueryPolicy::fixed && c.constraints.q_fixed < 1) {
    throw UsageError("queries", "fixed budget must be >= 1");
  }
  if (c.index_k < 1) throw UsageError("index_k", "must be >= 1");
  if (c.model.hidden < 1) throw UsageError("hidden", "must be >= 1");
  if (c.model.train.batch_size < 1) throw UsageError("batch_size", "must be >= 1");
  if (!(c.model.train.learning_rate > 0.0)) throw UsageError("learning_rate", "must be > 0");
  if (c.model.train.embedding_lr_scale < 0.0) throw UsageError("embedding_lr_scale", "must be >= 0");
  if (c.ensemble_size < 1) throw UsageError("ensemble_size", "must be >= 1");
  if (c.steps && *c.steps < 1) throw UsageError("steps", "must be >= 1");
  if (c.alpha < 0.0) throw UsageError("alpha", "must be >= 0");
  if (c.epsilon_norm && *c.epsilon_norm < 0.0) throw UsageError("epsilon_norm", "must be >= 0");
  if (!(c.mask_rate >= 0.0 && c.mask_rate <= 1.0)) throw UsageError("mask_rate", "must lie in [0, 1]");
  if (c.ada_mix < 0.0) throw UsageError("ada_mix", "must be >= 0");
  if (c.attacks.empty()) throw UsageError("attack", "at least one attack recipe is required");
  if (c.defenses.empty()) throw UsageError("defense", "at least one defense is required");

  if (c.subcommand == "make-toy") return;
  const auto need = [](const std::string& field, const fs::path& p) {
    if (p.empty()) throw UsageError(field, "path is required");
    if (!fs::exists(p)) throw UsageError(field, "no such path: " + p.string());
  };
  need("dataset", c.dataset);
  need("dataset", c.dataset / "train.tsv");
  need("dataset", c.dataset / "test.tsv");
  if (c.num_classes == 0 && !fs::exists(c.dataset / "classes.txt")) {
    throw UsageError("num_classes", "needed when the dataset has no classes.txt");
  }
  need("attacker_vectors", c.attacker_vectors);
  need("defender_vectors", c.defender_vectors);
  if (c.subcommand == "attack") need("checkpoint", c.checkpoint);
  if ((c.subcommand == "train" || c.subcommand == "defend" || c.subcommand == "attack") && c.defenses.size() != 1) {
    throw UsageError("defense", c.subcommand + " takes a single defense");
  }
  if (c.subcommand == "train" && c.defenses.front() != defense::Method::none) {
    throw UsageError("defense", "train fits an undefended model; use defend");
  }
  if (c.subcommand == "sweep") {
    if (c.param.empty()) throw UsageError("param", "sweep needs a parameter");
    converted("param", [&] { return bench::sweep_param_from_string(c.param); });
    if (c.grid.empty()) throw UsageError("grid", "sweep needs a non-empty grid");
    if (c.attacks.size() != 1) throw UsageError("attack", "sweep takes a single attack recipe");
    if (c.defenses.size() != 1) throw UsageError("defense", "sweep takes a single defense");
  }
}

nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  std::vector<std::string> attacks, defenses;
  for (auto a : c.attacks) attacks.push_back(attack::to_string(a));
  for (auto d : c.defenses) defenses.push_back(defense::to_string(d));
  return {
      {"subcommand", c.subcommand},
      {"run",
       {{"seed", c.seed ? json(*c.seed) : json(nullptr)},
        {"num_seeds", c.num_seeds},
        {"out", c.out.string()},
        {"jobs", c.jobs},
        {"strict", c.strict},
        {"eval_size", c.eval_size}}},
      {"corpus", {{"dataset", c.dataset.string()}, {"num_classes", c.num_classes}}},
      {"embedspace",
       {{"attacker_vectors", c.attacker_vectors.string()},
        {"defender_vectors", c.defender_vectors.string()},
        {"index_k", c.index_k},
        {"min_cos", c.min_cos},
        {"cache_dir", c.cache_dir.string()}}},
      {"victim",
       {{"hidden", c.model.hidden},
        {"activation", victim::to_string(c.model.activation)},
        {"epochs", c.model.train.epochs},
        {"learning_rate", c.model.train.learning_rate},
        {"batch_size", c.model.train.batch_size},
        {"embedding_lr_scale", c.model.train.embedding_lr_scale},
        {"ensemble", victim::to_string(c.ensemble)},
        {"ensemble_size", c.ensemble_size},
        {"checkpoint", c.checkpoint.string()}}},
      {"attack",
       {{"attack", attacks},
        {"ordering", ordering_name(c.ordering)},
        {"epsilon_min", c.constraints.epsilon_min},
        {"k_max", c.constraints.k_max},
        {"rho_max", c.constraints.rho_max},
        {"queries", queries_name(c.constraints)}}},
      {"defense",
       {{"defense", defenses},
        {"steps", c.steps ? json(*c.steps) : json(nullptr)},
        {"alpha", c.alpha},
        {"epsilon_norm", c.epsilon_norm ? json(*c.epsilon_norm) : json(nullptr)},
        {"no_projection", c.no_projection},
        {"mask_rate", c.mask_rate},
        {"smoothing_index", source_name(c.smoothing_index)},
        {"synonym_k", c.synonym_k},
        {"ada_rounds", c.ada_rounds},
        {"ada_mix", c.ada_mix},
        {"ada_sample", c.ada_sample}}},
      {"bench", {{"param", c.param}, {"grid", c.grid}, {"trace", c.trace}}},
  };
}

std::string fingerprint(const RunConfig& config) { return sha256_hex(to_json(config).dump()).substr(0, 16); }

std::vector<std::uint64_t> seeds(const RunConfig& config) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < config.num_seeds; ++i) out.push_back(config.seed.value_or(0) + i);
  return out;
}

bench::DefenseEntry defense_entry(const RunConfig& c, defense::Method method, const bench::Assets& assets) {
  bench::DefenseEntry d;
  d.name = defense::to_string(method);
  d.config.method = method;
  d.config.steps = c.steps.value_or(method == defense::Method::freelb_pp ? 30 : 10);
  d.config.alpha = c.alpha;
  if (!c.no_projection) d.config.epsilon = c.epsilon_norm;
  d.config.mask_rate = c.mask_rate;
  d.config.smoothing_index =
      c.smoothing_index == embed::IndexSource::attacker ? assets.attacker_index : assets.defender_index;
  d.config.synonym_k = c.synonym_k;
  d.config.ada_rounds = c.ada_rounds;
  d.config.ada_mix = c.ada_mix;
  d.config.ada_sample = c.ada_sample;
  d.predictor = {c.ensemble, c.ensemble_size};
  if (!c.checkpoint.empty()) d.checkpoint = c.checkpoint;
  return d;
}

bench::AttackerEntry attacker_entry(const RunConfig& c, attack::RecipeName recipe, const bench::Assets& assets) {
  return {attack::to_string(recipe), {recipe, c.ordering, assets.attacker_index}, c.constraints};
}

}  // namespace advtext::config
