#include "advtext/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "advtext/common.hpp"
#include "advtext/digest.hpp"

namespace advtext::embed {

namespace {

Error embed_error(const std::string& message) { return Error("embedspace", message); }

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw embed_error("truncated index file");
  return value;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw embed_error("truncated index file");
  return s;
}

constexpr char kIndexMagic[8] = {'A', 'D', 'V', 'I', 'D', 'X', '0', '1'};

}  // namespace

bool EmbeddingTable::set(const std::string& word, std::span<const double> vec) {
  if (vec.size() != dim_) throw embed_error("vector for '" + word + "' has wrong dimension");
  if (auto it = index_.find(word); it != index_.end()) {
    std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
    norms_[it->second] = l2(vec);
    return true;
  }
  index_.emplace(word, words_.size());
  words_.push_back(word);
  data_.insert(data_.end(), vec.begin(), vec.end());
  norms_.push_back(l2(vec));
  return false;
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

LoadedEmbeddings load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw embed_error("cannot open embeddings " + path.string());
  LoadedEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> vec;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    vec.clear();
    std::string tok;
    while (fields >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw embed_error("bad number at line " + std::to_string(line_no));
      }
      vec.push_back(v);
    }
    if (vec.empty()) throw embed_error("no vector at line " + std::to_string(line_no));
    if (!have_dim) {
      out.table = EmbeddingTable(vec.size());
      have_dim = true;
    } else if (vec.size() != out.table.dim()) {
      throw embed_error("dimension " + std::to_string(vec.size()) + " != " + std::to_string(out.table.dim()) +
                        " at line " + std::to_string(line_no));
    }
    if (out.table.set(word, vec)) ++out.duplicates;
  }
  if (!have_dim) throw embed_error("no vectors in " + path.string());
  return out;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw embed_error("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.words()[i];
    for (double v : table.row(i)) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

std::span<const Neighbor> SynonymIndex::neighbors(std::string_view word) const {
  auto it = lists_.find(word);
  if (it == lists_.end()) return {};
  return it->second;
}

void SynonymIndex::set(std::string word, std::vector<Neighbor> list) {
  if (list.size() > k_max_) list.resize(k_max_);
  lists_.insert_or_assign(std::move(word), std::move(list));
}

std::vector<std::string> SynonymIndex::words() const {
  std::vector<std::string> out;
  out.reserve(lists_.size());
  for (const auto& [w, _] : lists_) out.push_back(w);
  std::sort(out.begin(), out.end());
  return out;
}

bool SynonymIndex::operator==(const SynonymIndex& other) const {
  return k_max_ == other.k_max_ && source_ == other.source_ && lists_ == other.lists_;
}

SynonymIndex build_synonym_index(const EmbeddingTable& table, std::size_t k_max, double min_cos,
                                 IndexSource source, unsigned jobs) {
  if (k_max == 0) throw embed_error("k_max must be >= 1");
  const std::size_t n = table.size();
  const std::size_t d = table.dim();
  std::vector<std::vector<Neighbor>> lists(n);

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = begin; i < end; ++i) {
      scored.clear();
      const auto a = table.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double denom = table.norm(i) * table.norm(j);
        if (denom == 0.0) continue;
        const auto b = table.row(j);
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += a[t] * b[t];
        const double cos = std::clamp(dot / denom, -1.0, 1.0);
        if (cos >= min_cos) scored.emplace_back(cos, j);
      }
      const auto by_rank = [&](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return table.words()[x.second] < table.words()[y.second];
      };
      const std::size_t keep = std::min(k_max, scored.size());
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), by_rank);
      auto& list = lists[i];
      list.reserve(keep);
      for (std::size_t r = 0; r < keep; ++r) list.push_back({table.words()[scored[r].second], scored[r].first});
    }
  };

  jobs = std::max(1u, jobs);
  if (jobs == 1 || n < 64) {
    work(0, n);
  } else {
    std::vector<std::jthread> threads;
    const std::size_t chunk = (n + jobs - 1) / jobs;
    for (std::size_t b = 0; b < n; b += chunk) threads.emplace_back(work, b, std::min(n, b + chunk));
  }

  SynonymIndex index(k_max, source);
  for (std::size_t i = 0; i < n; ++i) index.set(table.words()[i], std::move(lists[i]));
  return index;
}

void save_index(const SynonymIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw embed_error("cannot write " + path.string());
  out.write(kIndexMagic, sizeof kIndexMagic);
  put<std::uint64_t>(out, index.k_max());
  put<std::uint8_t>(out, index.source() == IndexSource::attacker ? 0 : 1);
  const auto words = index.words();
  put<std::uint64_t>(out, words.size());
  for (const auto& w : words) {
    put_string(out, w);
    const auto list = index.neighbors(w);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
    for (const auto& nb : list) {
      put_string(out, nb.word);
      put<double>(out, nb.cosine);
    }
  }
}

SynonymIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw embed_error("cannot open " + path.string());
  char magic[sizeof kIndexMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kIndexMagic)) {
    throw embed_error("not an index file: " + path.string());
  }
  const auto k = get<std::uint64_t>(in);
  const auto source = get<std::uint8_t>(in) == 0 ? IndexSource::attacker : IndexSource::defender;
  SynonymIndex index(k, source);
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto word = get_string(in);
    const auto m = get<std::uint32_t>(in);
    std::vector<Neighbor> list(m);
    for (auto& nb : list) {
      nb.word = get_string(in);
      nb.cosine = get<double>(in);
    }
    index.set(std::move(word), std::move(list));
  }
  return index;
}

SynonymIndex cached_synonym_index(const std::filesystem::path& vectors_path, const EmbeddingTable& table,
                                  std::size_t k_max, double min_cos, IndexSource source,
                                  const std::filesystem::path& cache_dir) {
  char key[96];
  std::snprintf(key, sizeof key, "|%zu|%a|%d", k_max, min_cos, source == IndexSource::attacker ? 0 : 1);
  const auto name = sha256_hex(sha256_file(vectors_path) + key).substr(0, 32) + ".idx";
  const auto path = cache_dir / name;
  if (std::filesystem::exists(path)) return load_index(path);
  auto index = build_synonym_index(table, k_max, min_cos, source);
  std::filesystem::create_directories(cache_dir);
  save_index(index, path);
  return index;
}

std::vector<double> sum_vector(std::span<const std::string> tokens, const EmbeddingTable& table) {
  std::vector<double> sum(table.dim(), 0.0);
  for (const auto& t : tokens) {
    if (auto i = table.find(t)) {
      const auto row = table.row(*i);
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += row[k];
    }
  }
  return sum;
}

SimilarityScore clamped_cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  return {std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0), false};
}

SimilarityScore sentence_similarity(std::span<const std::string> a, std::span<const std::string> b,
                                    const EmbeddingTable& table) {
  if (a.empty() || b.empty()) throw embed_error("similarity of an empty sentence");
  // cosine is scale invariant, so sums stand in for means
  const auto va = sum_vector(a, table);
  const auto vb = sum_vector(b, table);
  return clamped_cosine(va, vb);
}

IndexOverlap index_overlap(const SynonymIndex& attacker, const SynonymIndex& defender) {
  IndexOverlap out;
  std::size_t words = 0, shared = 0, pairs = 0, covered = 0;
  for (const auto& w : defender.words()) {
    ++words;
    const auto nbs = defender.neighbors(w);
    pairs += nbs.size();
    if (!attacker.contains(w)) continue;
    ++shared;
    const auto att = attacker.neighbors(w);
    for (const auto& nb : nbs) {
      if (std::any_of(att.begin(), att.end(), [&](const Neighbor& a) { return a.word == nb.word; })) ++covered;
    }
  }
  out.vocabulary = words ? static_cast<double>(shared) / static_cast<double>(words) : 0.0;
  out.synonyms = pairs ? static_cast<double>(covered) / static_cast<double>(pairs) : 0.0;
  return out;
}

}  // namespace advtext::embed
