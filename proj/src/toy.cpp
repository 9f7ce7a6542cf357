#include "advtext/toy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <numeric>
#include <optional>
#include <set>

#include "advtext/common.hpp"
#include "advtext/rng.hpp"

namespace advtext::toy {

namespace {

double gaussian(Rng& rng) {
  // Box-Muller on the fixed uniform conversion
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * rng.uniform());
}

std::string make_word(Rng& rng) {
  static constexpr std::string_view kOnset = "bdfgklmnprstvz";
  static constexpr std::string_view kVowel = "aeiou";
  const std::size_t syllables = 2 + rng.below(2);
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kOnset[rng.below(kOnset.size())];
    w += kVowel[rng.below(kVowel.size())];
  }
  if (rng.uniform() < 0.5) w += kOnset[rng.below(kOnset.size())];
  return w;
}

/// Zipf sampler over ranks 0..n-1.
class Zipf {
 public:
  Zipf(std::size_t n, double s) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += 1.0 / std::pow(static_cast<double>(i + 1), s);
      cdf_[i] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }
  std::size_t draw(Rng& rng) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), rng.uniform());
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

ToyAssets make_toy(const ToyConfig& c) {
  if (c.num_classes < 2) throw Error("toy", "need at least 2 classes");
  const bool lean = c.lean_strength > 0.0 || c.lean_bias > 0.0;
  if ((lean ? 2 : 1) * c.num_classes > c.dim) throw Error("toy", "dimension too small for the class directions");
  const std::size_t topic_total = c.num_classes * c.topic_words_per_class;
  if (topic_total >= c.vocab_size) throw Error("toy", "vocabulary too small for the topic words");
  if (c.cluster_size == 0 || c.min_length == 0 || c.min_length > c.max_length) {
    throw Error("toy", "invalid cluster size or document lengths");
  }

  Rng rng(mix_seed(c.seed, 0x70f));
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < c.vocab_size) {
    auto w = make_word(rng);
    if (seen.insert(w).second) words.push_back(std::move(w));
  }

  // words [0, topic_total) are topic words grouped by class; the rest are neutral
  std::vector<std::vector<double>> latent(c.vocab_size, std::vector<double>(c.dim));
  std::vector<double> centroid(c.dim);
  auto new_centroid = [&](std::optional<std::size_t> cls) {
    for (std::size_t j = 0; j < c.dim; ++j) centroid[j] = c.cluster_spread * gaussian(rng);
    if (cls) centroid[*cls] += c.class_strength;
  };
  for (std::size_t w = 0; w < c.vocab_size; ++w) {
    const bool topic = w < topic_total;
    const std::size_t local = topic ? w % c.topic_words_per_class : w - topic_total;
    if (local % c.cluster_size == 0) {
      new_centroid(topic ? std::optional<std::size_t>(w / c.topic_words_per_class) : std::nullopt);
    }
    for (std::size_t j = 0; j < c.dim; ++j) latent[w][j] = centroid[j] + c.word_spread * gaussian(rng);
    if (lean && !topic) latent[w][c.num_classes + local % c.num_classes] += c.lean_strength;
  }

  ToyAssets out;
  out.attacker = embed::EmbeddingTable(c.dim);
  out.defender = embed::EmbeddingTable(c.dim);
  std::vector<double> v(c.dim);
  for (auto* table : {&out.attacker, &out.defender}) {
    for (std::size_t w = 0; w < c.vocab_size; ++w) {
      for (std::size_t j = 0; j < c.dim; ++j) v[j] = latent[w][j] + c.table_noise * gaussian(rng);
      table->set(words[w], v);
    }
  }

  const Zipf topic_zipf(c.topic_words_per_class, c.zipf);
  const Zipf neutral_zipf(c.vocab_size - topic_total, c.zipf);
  // word frequency rank is decoupled from cluster order
  std::vector<std::size_t> neutral_rank(c.vocab_size - topic_total);
  std::iota(neutral_rank.begin(), neutral_rank.end(), topic_total);
  rng.shuffle(neutral_rank);
  std::vector<std::vector<std::size_t>> lean_rank(c.num_classes);
  for (std::size_t w : neutral_rank) lean_rank[(w - topic_total) % c.num_classes].push_back(w);
  std::vector<Zipf> lean_zipf;
  for (const auto& r : lean_rank) lean_zipf.emplace_back(r.size(), c.zipf);
  std::vector<std::vector<std::size_t>> topic_rank(c.num_classes);
  for (std::size_t k = 0; k < c.num_classes; ++k) {
    for (std::size_t i = 0; i < c.topic_words_per_class; ++i) topic_rank[k].push_back(k * c.topic_words_per_class + i);
    rng.shuffle(topic_rank[k]);
  }

  auto make_split = [&](std::size_t n, corpus::Split split) {
    corpus::Dataset ds;
    ds.num_classes = c.num_classes;
    ds.split = split;
    for (std::size_t i = 0; i < n; ++i) {
      corpus::Document doc;
      doc.id = i;
      doc.label = i % c.num_classes;
      const std::size_t len = c.min_length + rng.below(c.max_length - c.min_length + 1);
      for (std::size_t t = 0; t < len; ++t) {
        const double u = rng.uniform();
        std::size_t w;
        if (u < c.topic_share) {
          w = topic_rank[doc.label][topic_zipf.draw(rng)];
        } else if (u < c.topic_share + c.cross_share) {
          const std::size_t other = (doc.label + 1 + rng.below(c.num_classes - 1)) % c.num_classes;
          w = topic_rank[other][topic_zipf.draw(rng)];
        } else if (rng.uniform() < c.lean_bias) {
          w = lean_rank[doc.label][lean_zipf[doc.label].draw(rng)];
        } else {
          w = neutral_rank[neutral_zipf.draw(rng)];
        }
        doc.tokens.push_back(words[w]);
        doc.raw += (t ? " " : "") + words[w];
      }
      ds.documents.push_back(std::move(doc));
    }
    return ds;
  };
  out.train = make_split(c.train_docs, corpus::Split::train);
  out.test = make_split(c.test_docs, corpus::Split::test);
  for (std::size_t k = 0; k < c.num_classes; ++k) out.class_names.push_back("topic" + std::to_string(k));
  return out;
}

void write_toy(const ToyAssets& assets, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus::save_dataset(assets.train, dir / "train.tsv");
  corpus::save_dataset(assets.test, dir / "test.tsv");
  embed::save_embeddings(assets.attacker, dir / "attacker.vec");
  embed::save_embeddings(assets.defender, dir / "defender.vec");
  std::ofstream names(dir / "classes.txt");
  for (const auto& n : assets.class_names) names << n << '\n';
}

}  // namespace advtext::toy
