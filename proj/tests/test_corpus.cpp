#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "advtext/corpus.hpp"

using namespace advtext;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
  const fs::path dir = fs::temp_directory_path() / "advtext_corpus_tests";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << body;
  return p;
}

corpus::Dataset numbered(std::size_t n) {
  corpus::Dataset d;
  d.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) d.documents.push_back({i, i % 2, {"w" + std::to_string(i)}, "w" + std::to_string(i)});
  return d;
}

std::string error_of(const fs::path& p, std::size_t classes) {
  try {
    corpus::load_dataset(p, classes);
  } catch (const Error& e) {
    CHECK(e.module() == "corpus");
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("load_dataset parses label and text per line") {
  const auto ds = corpus::load_dataset(write_temp("two.tsv", "0\tgood movie\n1\tbad movie\n"), 2);
  REQUIRE(ds.size() == 2);
  CHECK(ds.documents[0].label == 0);
  CHECK(ds.documents[1].label == 1);
  CHECK(ds.documents[0].raw == "good movie");
  CHECK(ds.documents[1].tokens == std::vector<std::string>{"bad", "movie"});
  CHECK(ds.documents[1].id == 1);
}

TEST_CASE("load_dataset errors") {
  CHECK(error_of(write_temp("empty.tsv", ""), 2).find("no documents") != std::string::npos);
  CHECK(error_of(write_temp("range.tsv", "5\tx\n"), 4).find("label out of range at line 1") != std::string::npos);
  CHECK(error_of(write_temp("notab.tsv", "0\tfine\n1 no tab\n"), 2).find("line 2") != std::string::npos);
  CHECK(error_of(write_temp("badlabel.tsv", "x\ttext\n"), 2).find("line 1") != std::string::npos);
}

TEST_CASE("save and load round-trip") {
  const auto ds = corpus::load_dataset(write_temp("rt.tsv", "0\tThe Movie, was GREAT!\n1\tdon't stop\n"), 2);
  const fs::path out = fs::temp_directory_path() / "advtext_corpus_tests" / "rt_out.tsv";
  corpus::save_dataset(ds, out);
  const auto back = corpus::load_dataset(out, 2);
  CHECK(back.documents == ds.documents);
}

TEST_CASE("tokenize") {
  using V = std::vector<std::string>;
  CHECK(corpus::tokenize("The Movie, was GREAT!") == V{"the", "movie", "was", "great"});
  CHECK(corpus::tokenize("").empty());
  CHECK(corpus::tokenize("a  b") == V{"a", "b"});
  CHECK(corpus::tokenize("don't") == V{"don't"});

  for (const char* raw : {"Hello, World!!", "  (nested) 'quotes' ...", "x-y z.", "MiXeD\tcase\nlines"}) {
    const auto once = corpus::tokenize(raw);
    std::string joined;
    for (const auto& t : once) joined += (joined.empty() ? "" : " ") + t;
    CHECK(corpus::tokenize(joined) == once);
  }
}

TEST_CASE("sample_eval") {
  const auto small = numbered(10);
  const auto all = corpus::sample_eval(small, 10, 3);
  std::set<std::uint64_t> ids;
  for (const auto& d : all.documents) ids.insert(d.id);
  CHECK(ids.size() == 10);
  CHECK(all.split == corpus::Split::eval_sample);

  const auto big = numbered(1000);
  const auto a = corpus::sample_eval(big, 100, 7);
  const auto b = corpus::sample_eval(big, 100, 7);
  const auto c = corpus::sample_eval(big, 100, 8);
  CHECK(corpus::manifest(a) == corpus::manifest(b));
  CHECK(corpus::manifest(a) != corpus::manifest(c));
  std::set<std::uint64_t> unique;
  for (const auto& d : a.documents) unique.insert(d.id);
  CHECK(unique.size() == 100);
  CHECK_THROWS_AS(corpus::sample_eval(small, 11, 1), Error);
}

TEST_CASE("vocabulary reserves PAD and UNK") {
  const auto v = corpus::Vocabulary::from_words({"b", "a", "b"});
  CHECK(v.size() == 4);
  CHECK(v.id("<pad>") == corpus::Vocabulary::kPad);
  CHECK(v.id("<unk>") == corpus::Vocabulary::kUnk);
  CHECK(v.id("zzz") == corpus::Vocabulary::kUnk);
  CHECK(v.word(v.id("a")) == "a");
  CHECK(v.id("a") < v.id("b"));
}
