#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "advtext/common.hpp"

namespace advtext::corpus {

struct Document {
  std::uint64_t id = 0;
  ClassIndex label = 0;
  std::vector<std::string> tokens;
  std::string raw;

  bool operator==(const Document&) const = default;
};

enum class Split { train, test, eval_sample };

struct Dataset {
  std::vector<Document> documents;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return documents.size(); }
  bool empty() const { return documents.empty(); }
};

/// Lowercases, splits on whitespace and strips punctuation at word
/// boundaries. Inner punctuation ("don't") is kept.
std::vector<std::string> tokenize(std::string_view raw);

/// Reads `label<TAB>text` lines. Document ids are 0-based line indices.
Dataset load_dataset(const std::filesystem::path& path, std::size_t num_classes,
                     Split split = Split::train);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Draws `n` documents without replacement; the result depends only on
/// (dataset, n, seed).
Dataset sample_eval(const Dataset& dataset, std::size_t n, std::uint64_t seed);

/// Newline-separated id list of an evaluation sample.
std::string manifest(const Dataset& sample);
void write_manifest(const Dataset& sample, const std::filesystem::path& path);

/// Optional `classes.txt`, one class name per line.
std::vector<std::string> load_class_names(const std::filesystem::path& path);

/// Word <-> id map with two reserved entries.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  /// Builds from a word list; duplicates are ignored and the remaining words
  /// are sorted so ids do not depend on input order.
  static Vocabulary from_words(std::vector<std::string> words);

  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(id); }
  bool contains(std::string_view word) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId, Hash, std::equal_to<>> index_;
};

}  // namespace advtext::corpus
