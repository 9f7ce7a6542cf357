#pragma once

#include <cstdint>
#include <filesystem>

#include "advtext/corpus.hpp"
#include "advtext/embedding.hpp"

namespace advtext::toy {

/// Synthetic topic-classification world. Words live in clusters around
/// latent centroids; topic clusters lean towards one class direction and
/// neutral clusters towards none. The attacker and defender tables are two
/// independent noisy views of the same latent vectors. Each neutral word also
/// leans weakly towards one class along a separate direction, and documents
/// over-sample neutral words leaning their way.
struct ToyConfig {
  std::size_t num_classes = 4;
  std::size_t train_docs = 2000;
  std::size_t test_docs = 1000;
  std::size_t vocab_size = 1000;
  std::size_t dim = 16;
  std::size_t cluster_size = 5;
  std::size_t topic_words_per_class = 40;
  double class_strength = 2.0;   // norm of the class component of topic centroids
  double cluster_spread = 0.4;   // std-dev of centroid offsets per dimension
  double word_spread = 0.25;     // std-dev of word offsets around their centroid
  double table_noise = 0.15;     // std-dev of each table's view noise
  double topic_share = 0.3;      // share of tokens drawn from the document's class
  double cross_share = 0.05;     // share drawn from another class's topic words
  double lean_strength = 0.1;    // norm of the weak class component of neutral words
  double lean_bias = 0.6;        // share of neutral tokens drawn from words leaning to the document's class
  std::size_t min_length = 20;
  std::size_t max_length = 40;
  double zipf = 1.0;
  std::uint64_t seed = 1;
};

struct ToyAssets {
  corpus::Dataset train;
  corpus::Dataset test;
  embed::EmbeddingTable attacker;
  embed::EmbeddingTable defender;
  std::vector<std::string> class_names;
};

ToyAssets make_toy(const ToyConfig& config);

/// Writes train.tsv, test.tsv, attacker.vec, defender.vec and classes.txt.
void write_toy(const ToyAssets& assets, const std::filesystem::path& dir);

}  // namespace advtext::toy
