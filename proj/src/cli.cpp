#include "advtext/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "advtext/digest.hpp"
#include "advtext/toy.hpp"

namespace advtext::cli {
namespace {

namespace fs = std::filesystem;

const char* const kSubcommands[][2] = {
    {"make-toy", "write the synthetic toy benchmark assets"},
    {"train", "train an undefended victim"},
    {"defend", "train a victim under one defense"},
    {"attack", "attack a checkpoint on an evaluation sample"},
    {"bench", "evaluate defenses x attackers x seeds"},
    {"sweep", "vary one parameter over a grid"},
};

struct Cli {
  CLI::App app{"Adversarial attack and defense benchmark for text classifiers", "advtext"};
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::App*> subs;

  Cli() {
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    for (const auto& [name, help] : kSubcommands) {
      CLI::App* sub = app.add_subcommand(name, help);
      sub->add_option("--config", config_file, "INI config file or a resolved_config.json");
      for (const auto& f : config::fields()) {
        if (f.is_switch) {
          sub->add_flag(config::flag_name(f.key), switches[f.key], f.help)->group(f.section);
        } else {
          sub->add_option(config::flag_name(f.key), values[f.key], f.help)->group(f.section);
        }
      }
      subs[name] = sub;
    }
  }

  config::RunConfig resolve() const {
    config::RunConfig c;
    for (const auto& [name, sub] : subs) {
      if (sub->parsed()) c.subcommand = name;
    }
    if (!config_file.empty()) config::apply_file(c, config_file);
    const CLI::App* sub = subs.at(c.subcommand);
    for (const auto& f : config::fields()) {
      if (sub->count(config::flag_name(f.key)) == 0) continue;
      config::set_field(c, f.key, f.is_switch ? "true" : values.at(f.key));
    }
    config::validate(c);
    return c;
  }
};

void log_line(const std::string& line) { std::clog << "advtext: " << line << '\n'; }

std::size_t class_count(const config::RunConfig& c) {
  if (c.num_classes > 0) return c.num_classes;
  return corpus::load_class_names(c.dataset / "classes.txt").size();
}

std::shared_ptr<const embed::SynonymIndex> index_for(const config::RunConfig& c, const fs::path& vectors,
                                                     const embed::EmbeddingTable& table, embed::IndexSource source) {
  if (!c.cache_dir.empty()) {
    return std::make_shared<const embed::SynonymIndex>(
        embed::cached_synonym_index(vectors, table, c.index_k, c.min_cos, source, c.cache_dir));
  }
  return std::make_shared<const embed::SynonymIndex>(
      embed::build_synonym_index(table, c.index_k, c.min_cos, source, c.jobs));
}

bench::Assets load_assets(const config::RunConfig& c) {
  const std::size_t classes = class_count(c);
  bench::Assets a;
  a.name = fs::absolute(c.dataset).lexically_normal().filename().string();
  if (a.name.empty()) a.name = fs::absolute(c.dataset).lexically_normal().parent_path().filename().string();
  a.train = corpus::load_dataset(c.dataset / "train.tsv", classes, corpus::Split::train);
  a.test = corpus::load_dataset(c.dataset / "test.tsv", classes, corpus::Split::test);
  auto attacker = embed::load_embeddings(c.attacker_vectors);
  auto defender = embed::load_embeddings(c.defender_vectors);
  for (const auto& [loaded, path] : {std::pair{&attacker, c.attacker_vectors}, std::pair{&defender, c.defender_vectors}}) {
    if (loaded->duplicates > 0) {
      log_line(path.string() + ": " + std::to_string(loaded->duplicates) + " duplicate words, later lines kept");
    }
  }
  a.attacker_table = std::make_shared<const embed::EmbeddingTable>(std::move(attacker.table));
  a.defender_table = std::make_shared<const embed::EmbeddingTable>(std::move(defender.table));
  a.attacker_index = index_for(c, c.attacker_vectors, *a.attacker_table, embed::IndexSource::attacker);
  a.defender_index = index_for(c, c.defender_vectors, *a.defender_table, embed::IndexSource::defender);
  return a;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cli", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int run_make_toy(const config::RunConfig& c, std::vector<fs::path>& produced) {
  toy::ToyConfig tc;
  tc.seed = *c.seed;
  toy::write_toy(toy::make_toy(tc), c.out);
  for (const char* f : {"train.tsv", "test.tsv", "attacker.vec", "defender.vec", "classes.txt"}) produced.push_back(c.out / f);
  log_line("toy benchmark written to " + c.out.string());
  return 0;
}

int run_train(const config::RunConfig& c, std::vector<fs::path>& produced) {
  const auto assets = load_assets(c);
  auto entry = config::defense_entry(c, c.defenses.front(), assets);
  entry.checkpoint.reset();
  const auto attacker = config::attacker_entry(c, c.attacks.front(), assets);
  bench::ModelCache cache;
  const auto& trained = cache.get(assets, entry, c.model, *c.seed, &attacker);
  victim::save_checkpoint(trained.model, c.out / "model.ckpt");
  victim::TrainConfig train = c.model.train;
  train.seed = *c.seed;
  auto defense = entry.config;
  defense.seed = *c.seed;
  write_json(defense::run_manifest(defense, train, trained.hash), c.out / "run_manifest.json");
  produced.push_back(c.out / "model.ckpt");
  produced.push_back(c.out / "run_manifest.json");
  log_line(entry.name + " model " + trained.hash);
  return 0;
}

void write_rows(const std::vector<bench::Row>& rows, const config::RunConfig& c, std::vector<fs::path>& produced) {
  bench::EvalReport report{rows};
  bench::write_report(report, c.out / "report.csv", c.out / "report.json");
  produced.push_back(c.out / "report.csv");
  produced.push_back(c.out / "report.json");
  for (const auto& r : report.rows) {
    if (r.failed) {
      log_line(r.defense + " / " + r.attacker + " seed " + std::to_string(r.seed) + " failed: " + r.error);
    } else {
      log_line(r.defense + " / " + r.attacker + " seed " + std::to_string(r.seed) + ": clean " +
               std::to_string(r.clean_pct) + " aua " + std::to_string(r.aua_pct) + " suc " + std::to_string(r.suc_pct));
    }
  }
}

int run_attack(const config::RunConfig& c, std::vector<fs::path>& produced) {
  const auto assets = load_assets(c);
  const auto entry = config::defense_entry(c, c.defenses.front(), assets);
  bench::ModelCache cache;
  std::vector<bench::Row> rows;
  for (auto recipe : c.attacks) {
    const auto attacker = config::attacker_entry(c, recipe, assets);
    const fs::path trace = c.out / ("trace_" + attacker.name + ".jsonl");
    rows.push_back(bench::run_cell(assets, entry, attacker, c.model, c.eval_size, *c.seed, c.jobs, cache, trace));
    produced.push_back(trace);
  }
  const auto eval = corpus::sample_eval(assets.test, std::min(c.eval_size, assets.test.size()), *c.seed);
  corpus::write_manifest(eval, c.out / "eval_manifest.txt");
  produced.push_back(c.out / "eval_manifest.txt");
  write_rows(rows, c, produced);
  return 0;
}

int run_bench(const config::RunConfig& c, std::vector<fs::path>& produced) {
  const auto assets = load_assets(c);
  bench::BenchmarkSpec spec;
  for (auto m : c.defenses) spec.defenses.push_back(config::defense_entry(c, m, assets));
  for (auto r : c.attacks) spec.attackers.push_back(config::attacker_entry(c, r, assets));
  spec.datasets = {&assets};
  spec.seeds = config::seeds(c);
  spec.model = c.model;
  spec.eval_size = c.eval_size;
  spec.jobs = c.jobs;
  if (c.trace) {
    spec.trace_dir = c.out / "traces";
    fs::create_directories(*spec.trace_dir);
  }
  const auto report = bench::run_benchmark(spec);
  write_rows(report.rows, c, produced);
  if (spec.trace_dir) {
    for (const auto& entry : fs::directory_iterator(*spec.trace_dir)) produced.push_back(entry.path());
  }
  return c.strict && !report.all_ok() ? 1 : 0;
}

int run_sweep(const config::RunConfig& c, std::vector<fs::path>& produced) {
  const auto assets = load_assets(c);
  bench::SweepSpec spec;
  spec.param = bench::sweep_param_from_string(c.param);
  spec.grid = c.grid;
  spec.assets = &assets;
  spec.defense = config::defense_entry(c, c.defenses.front(), assets);
  spec.attacker = config::attacker_entry(c, c.attacks.front(), assets);
  spec.model = c.model;
  spec.eval_size = c.eval_size;
  spec.seeds = config::seeds(c);
  spec.jobs = c.jobs;
  const auto report = bench::sweep(spec);
  const fs::path path = c.out / ("sweep_" + bench::to_string(spec.param) + ".csv");
  bench::write_sweep_csv(report, path);
  produced.push_back(path);
  bool ok = true;
  for (const auto& p : report.points) {
    log_line(c.param + "=" + p.value + ": aua " + std::to_string(p.aua_mean) + " +- " + std::to_string(p.aua_std));
    for (const auto& r : p.rows) ok = ok && !r.failed;
  }
  return c.strict && !ok ? 1 : 0;
}

}  // namespace

config::RunConfig parse_and_validate(std::span<const std::string> args) {
  Cli cli;
  std::vector<const char*> argv{"advtext"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    cli.app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    throw config::UsageError("argv", e.what());
  }
  return cli.resolve();
}

int execute(const config::RunConfig& c) {
  const std::string fp = config::fingerprint(c);
  try {
    fs::create_directories(c.out);
    write_json(config::to_json(c), c.out / "resolved_config.json");
    std::vector<fs::path> produced{c.out / "resolved_config.json"};
    int status = 0;
    if (c.subcommand == "make-toy") {
      status = run_make_toy(c, produced);
    } else if (c.subcommand == "train" || c.subcommand == "defend") {
      status = run_train(c, produced);
    } else if (c.subcommand == "attack") {
      status = run_attack(c, produced);
    } else if (c.subcommand == "bench") {
      status = run_bench(c, produced);
    } else if (c.subcommand == "sweep") {
      status = run_sweep(c, produced);
    } else {
      throw Error("cli", "unknown subcommand " + c.subcommand);
    }
    nlohmann::json files = nlohmann::json::array();
    for (const auto& p : produced) {
      files.push_back({{"path", fs::relative(p, c.out).string()}, {"sha256", sha256_file(p)}});
    }
    write_json({{"config_fingerprint", fp}, {"files", files}}, c.out / "manifest.json");
    return status;
  } catch (const Error& e) {
    std::cerr << "advtext: error in " << e.module() << " (config " << fp << "): " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "advtext: internal error (config " << fp << "): " << e.what() << '\n';
  }
  return 1;
}

int run(int argc, const char* const* argv) {
  Cli cli;
  try {
    cli.app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.app.exit(e);
  }
  config::RunConfig config;
  try {
    config = cli.resolve();
  } catch (const config::UsageError& e) {
    std::cerr << "advtext: usage error: " << e.what() << '\n';
    return 2;
  }
  return execute(config);
}

}  // namespace advtext::cli
