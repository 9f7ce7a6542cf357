#include "advtext/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "advtext/rng.hpp"

namespace advtext::corpus {

namespace {

Error corpus_error(const std::string& message) { return Error("corpus", message); }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && is_space(raw[i])) ++i;
    std::size_t j = i;
    while (j < raw.size() && !is_space(raw[j])) ++j;
    std::size_t b = i;
    std::size_t e = j;
    while (b < e && is_punct(raw[b])) ++b;
    while (e > b && is_punct(raw[e - 1])) --e;
    if (b < e) {
      std::string tok(raw.substr(b, e - b));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return tokens;
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t num_classes, Split split) {
  std::ifstream in(path);
  if (!in) throw corpus_error("cannot open dataset " + path.string());
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw corpus_error("malformed line " + std::to_string(line_no) + ": missing tab");
    }
    const std::string label_text = line.substr(0, tab);
    std::size_t consumed = 0;
    long long label = 0;
    try {
      label = std::stoll(label_text, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed == 0 || consumed != label_text.size() || label < 0) {
      throw corpus_error("malformed label at line " + std::to_string(line_no));
    }
    if (static_cast<std::size_t>(label) >= num_classes) {
      throw corpus_error("label out of range at line " + std::to_string(line_no));
    }
    Document doc;
    doc.id = line_no - 1;
    doc.label = static_cast<ClassIndex>(label);
    doc.raw = line.substr(tab + 1);
    doc.tokens = tokenize(doc.raw);
    if (doc.tokens.empty()) {
      throw corpus_error("empty text at line " + std::to_string(line_no));
    }
    ds.documents.push_back(std::move(doc));
  }
  if (ds.documents.empty()) throw corpus_error("no documents in " + path.string());
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw corpus_error("cannot write " + path.string());
  for (const auto& doc : dataset.documents) out << doc.label << '\t' << doc.raw << '\n';
}

Dataset sample_eval(const Dataset& dataset, std::size_t n, std::uint64_t seed) {
  if (n > dataset.size()) {
    throw corpus_error("sample size " + std::to_string(n) + " exceeds dataset size " +
                       std::to_string(dataset.size()));
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5a3b1e));
  // partial Fisher-Yates: the first n slots are the sample
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }
  order.resize(n);
  std::sort(order.begin(), order.end());
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.split = Split::eval_sample;
  out.documents.reserve(n);
  for (auto i : order) out.documents.push_back(dataset.documents[i]);
  return out;
}

std::string manifest(const Dataset& sample) {
  std::string out;
  for (const auto& doc : sample.documents) out += std::to_string(doc.id) + '\n';
  return out;
}

void write_manifest(const Dataset& sample, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw corpus_error("cannot write " + path.string());
  out << manifest(sample);
}

std::vector<std::string> load_class_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw corpus_error("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

Vocabulary::Vocabulary() {
  words_ = {std::string(kPadToken), std::string(kUnkToken)};
  index_.emplace(kPadToken, kPad);
  index_.emplace(kUnkToken, kUnk);
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  Vocabulary v;
  for (auto& w : words) {
    if (w == kPadToken || w == kUnkToken || w.empty()) continue;
    v.index_.emplace(w, static_cast<TokenId>(v.words_.size()));
    v.words_.push_back(std::move(w));
  }
  return v;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

}  // namespace advtext::corpus
