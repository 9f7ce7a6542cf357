#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace advtext::embed {

/// Dense word vectors with cached L2 norms.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  /// Inserts or overwrites; returns true when the word already existed.
  bool set(const std::string& word, std::span<const double> vec);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// Row index of `word`, if present.
  std::optional<std::size_t> find(std::string_view word) const;
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  double norm(std::size_t i) const { return norms_[i]; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

struct LoadedEmbeddings {
  EmbeddingTable table;
  std::size_t duplicates = 0;  // later lines win
};

/// Reads the `word v1 ... vd` text layout.
LoadedEmbeddings load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

enum class IndexSource { attacker, defender };

struct Neighbor {
  std::string word;
  double cosine = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Per-word candidate lists, each sorted by descending cosine.
class SynonymIndex {
 public:
  SynonymIndex() = default;
  SynonymIndex(std::size_t k_max, IndexSource source) : k_max_(k_max), source_(source) {}

  std::size_t k_max() const { return k_max_; }
  IndexSource source() const { return source_; }

  /// Empty span for unknown words.
  std::span<const Neighbor> neighbors(std::string_view word) const;
  bool contains(std::string_view word) const { return lists_.find(word) != lists_.end(); }
  std::size_t size() const { return lists_.size(); }

  void set(std::string word, std::vector<Neighbor> list);

  /// Words with an entry, sorted.
  std::vector<std::string> words() const;

  bool operator==(const SynonymIndex& other) const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::size_t k_max_ = 0;
  IndexSource source_ = IndexSource::attacker;
  std::unordered_map<std::string, std::vector<Neighbor>, Hash, std::equal_to<>> lists_;
};

/// For each word, its `k_max` nearest other words by cosine with cosine >=
/// `min_cos`. Equal cosines are ordered by word.
SynonymIndex build_synonym_index(const EmbeddingTable& table, std::size_t k_max, double min_cos,
                                 IndexSource source = IndexSource::attacker, unsigned jobs = 1);

/// Loads the index from `cache_dir` when a cache for (vector file hash,
/// k_max, min_cos) exists, otherwise builds it and writes the cache.
SynonymIndex cached_synonym_index(const std::filesystem::path& vectors_path, const EmbeddingTable& table,
                                  std::size_t k_max, double min_cos, IndexSource source,
                                  const std::filesystem::path& cache_dir);

void save_index(const SynonymIndex& index, const std::filesystem::path& path);
SynonymIndex load_index(const std::filesystem::path& path);

struct SimilarityScore {
  double value = 0.0;       // in [0, 1]
  bool degenerate = false;  // a mean vector was zero
};

/// Cosine between mean word vectors, clamped to [0, 1]. Words missing from
/// the table contribute zero vectors.
SimilarityScore sentence_similarity(std::span<const std::string> a, std::span<const std::string> b,
                                    const EmbeddingTable& table);

/// Sum of the word vectors of `tokens` (zero for unknown words).
std::vector<double> sum_vector(std::span<const std::string> tokens, const EmbeddingTable& table);

/// Cosine of two sum/mean vectors clamped to [0, 1]; 0 and degenerate when
/// either is zero.
SimilarityScore clamped_cosine(std::span<const double> a, std::span<const double> b);

struct IndexOverlap {
  double vocabulary = 0.0;  // share of `defender` words that `attacker` also indexes
  double synonyms = 0.0;    // share of defender (word, synonym) pairs found in the attacker's list
};

IndexOverlap index_overlap(const SynonymIndex& attacker, const SynonymIndex& defender);

}  // namespace advtext::embed
