#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <map>

#include "todlab/encode.hpp"
#include "todlab/vocab.hpp"

using namespace todlab;

namespace {

std::vector<Dialogue> tiny_corpus() {
  Dialogue d1{"d1",
              {{Role::user, "book a table please"},
               {Role::system, "what area do you want"},
               {Role::user, "north area please"},
               {Role::system, "your table is booked"}}};
  Dialogue d2{"d2",
              {{Role::user, "find a cheap hotel"},
               {Role::system, "the north hotel is cheap"}}};
  return {canonicalize(d1), canonicalize(d2)};
}

}  // namespace

TEST_CASE("tokenizer: word and punctuation rules", "[tokenizer]") {
  REQUIRE(tokenize_words("Hello there") == std::vector<std::string>{"hello", "there"});
  REQUIRE(tokenize_words("it's 5pm!") ==
          std::vector<std::string>{"it's", "5pm", "!"});
  REQUIRE(tokenize_words("a,b ,c") == std::vector<std::string>{"a", ",", "b", ",", "c"});
  REQUIRE(tokenize_words("  spaced\tout \n") ==
          std::vector<std::string>{"spaced", "out"});
  REQUIRE(tokenize_words("") == std::vector<std::string>{});
  REQUIRE(tokenize_words("...") == std::vector<std::string>{".", ".", "."});
  REQUIRE(tokenize_words("WiFi-ready") ==
          std::vector<std::string>{"wifi", "-", "ready"});
}

TEST_CASE("vocab: specials, frequency order and lookups", "[vocab]") {
  Vocab v = Vocab::build(tiny_corpus(), 1);
  for (int i = 0; i < Vocab::kNumSpecial; ++i)
    REQUIRE(v.word(i) == Vocab::special_names()[std::size_t(i)]);

  // Most frequent content words come first; ties break lexicographically.
  std::map<std::string, int> freq;
  for (const auto& d : tiny_corpus())
    for (const auto& u : d.turns)
      for (auto& w : tokenize_words(u.text)) ++freq[w];
  int prev_freq = 1 << 30;
  std::string prev_word;
  for (int id = Vocab::kNumSpecial; id < v.size(); ++id) {
    const int f = freq.at(v.word(id));
    REQUIRE(f <= prev_freq);
    if (f == prev_freq) REQUIRE(prev_word < v.word(id));
    prev_freq = f;
    prev_word = v.word(id);
  }

  REQUIRE(v.id("table") >= Vocab::kNumSpecial);
  REQUIRE(v.word(v.id("cheap")) == "cheap");
  REQUIRE(v.id("zebra") == Vocab::kUnk);
  REQUIRE(v.content_words() == v.size() - Vocab::kNumSpecial);
}

TEST_CASE("vocab: min_freq filters rare words", "[vocab]") {
  Vocab v1 = Vocab::build(tiny_corpus(), 1);
  Vocab v2 = Vocab::build(tiny_corpus(), 2);
  REQUIRE(v2.size() < v1.size());
  REQUIRE(v2.id("table") != Vocab::kUnk);   // appears twice
  REQUIRE(v2.id("booked") == Vocab::kUnk);  // appears once
  REQUIRE_THROWS(Vocab::build(tiny_corpus(), 0));
}

TEST_CASE("vocab: save/load round-trip and validation", "[vocab]") {
  const auto path =
      (std::filesystem::temp_directory_path() / "todlab_vocab_test.json").string();
  Vocab v = Vocab::build(tiny_corpus(), 1);
  v.save(path);
  Vocab w = Vocab::load(path);
  REQUIRE(w.size() == v.size());
  for (int i = 0; i < v.size(); ++i) REQUIRE(w.word(i) == v.word(i));

  {
    std::ofstream out(path);
    out << "{\"not\":\"array\"}";
  }
  REQUIRE_THROWS(Vocab::load(path));
  {
    std::ofstream out(path);
    out << R"(["[PAD]","[UNK]","[CLS]","[SEP]","[MASK]","[USR]","oops"])";
  }
  REQUIRE_THROWS(Vocab::load(path));
  {
    std::ofstream out(path);
    out << R"(["[PAD]","[UNK]","[CLS]","[SEP]","[MASK]","[USR]","[SYS]","a","a"])";
  }
  REQUIRE_THROWS(Vocab::load(path));
  std::filesystem::remove(path);
}

TEST_CASE("encode: sequence structure and padding", "[encode]") {
  Vocab v = Vocab::build(tiny_corpus(), 1);
  std::vector<Utterance> utts{{Role::user, "book a table"},
                              {Role::system, "what area"}};
  TokenSequence s = encode(v, utts, 16);
  // [CLS] [USR] book a table [SYS] what area [SEP]
  REQUIRE(s.active_len == 9);
  REQUIRE(int(s.ids.size()) == 16);
  REQUIRE(s.ids[0] == Vocab::kCls);
  REQUIRE(s.ids[1] == Vocab::kUsr);
  REQUIRE(s.ids[2] == v.id("book"));
  REQUIRE(s.ids[5] == Vocab::kSys);
  REQUIRE(s.ids[8] == Vocab::kSep);
  for (int i = 0; i < 16; ++i) {
    REQUIRE(int(s.attention[std::size_t(i)]) == (i < 9 ? 1 : 0));
    REQUIRE(s.mlm_labels[std::size_t(i)] == -1);
    if (i >= 9) REQUIRE(s.ids[std::size_t(i)] == Vocab::kPad);
  }
  REQUIRE(decode(v, s) == "book a table what area");
}

TEST_CASE("encode: truncation drops oldest words first", "[encode]") {
  Vocab v = Vocab::build(tiny_corpus(), 1);
  std::vector<Utterance> utts{{Role::user, "book a table please"},
                              {Role::system, "what area do you want"},
                              {Role::user, "north area please"}};
  // Untruncated: 1 + (1+4) + (1+5) + (1+3) + 1 = 17 tokens.
  TokenSequence full = encode(v, utts, 32);
  REQUIRE(full.active_len == 17);

  // Budget 12: the first utterance loses words from its front first.
  TokenSequence cut = encode(v, utts, 14);
  REQUIRE(cut.active_len == 14);
  REQUIRE(cut.ids[0] == Vocab::kCls);
  REQUIRE(cut.ids[1] == Vocab::kUsr);  // survivor keeps its role marker
  REQUIRE(cut.ids[2] == v.id("please"));
  REQUIRE(decode(v, cut) == "please what area do you want north area please");

  // Budget small enough that the whole first utterance disappears, marker
  // included.
  TokenSequence cut2 = encode(v, utts, 12);
  REQUIRE(cut2.active_len == 12);
  REQUIRE(cut2.ids[1] == Vocab::kSys);
  REQUIRE(decode(v, cut2) == "what area do you want north area please");
}

TEST_CASE("encode: protected tail survives truncation", "[encode]") {
  Vocab v = Vocab::build(tiny_corpus(), 1);
  std::vector<Utterance> utts{{Role::user, "book a table please"},
                              {Role::system, "what area do you want"},
                              {Role::user, "north area please"},
                              {Role::system, "your table is booked"}};
  // Protect the last two utterances; the context before them shrinks.
  TokenSequence s = encode(v, utts, 14, 2);
  REQUIRE(s.active_len <= 14);
  const std::string text = decode(v, s);
  REQUIRE(text.find("north area please") != std::string::npos);
  REQUIRE(text.find("your table is booked") != std::string::npos);

  // Even when the protected block alone exceeds the budget, its newest
  // tokens survive.
  TokenSequence s2 = encode(v, utts, 8, 4);
  REQUIRE(s2.active_len <= 8);
  const std::string tail = decode(v, s2);
  REQUIRE(tail.find("booked") != std::string::npos);

  REQUIRE_THROWS(encode(v, utts, 3));
  REQUIRE_THROWS(encode(v, utts, 16, 5));
  REQUIRE_THROWS(encode(v, {}, 16));
}

TEST_CASE("encode: mlm masking", "[encode]") {
  Vocab v = Vocab::build(tiny_corpus(), 1);
  std::vector<Utterance> utts{{Role::user, "book a table please"},
                              {Role::system, "what area do you want"}};

  SECTION("ratio 0 masks nothing") {
    TokenSequence s = encode(v, utts, 32);
    Rng rng = Rng::seeded(1).stream("mask");
    REQUIRE(apply_mlm_mask(s, v, 0.0, rng) == 0);
    REQUIRE(count_masked(s) == 0);
  }

  SECTION("ratio 1 masks every content token and preserves originals") {
    TokenSequence s = encode(v, utts, 32);
    const TokenSequence before = s;
    Rng rng = Rng::seeded(1).stream("mask");
    const int masked = apply_mlm_mask(s, v, 1.0, rng);
    REQUIRE(masked == 9);  // every word token; specials stay
    REQUIRE(count_masked(s) == 9);
    int mask_tokens = 0;
    for (int i = 0; i < s.active_len; ++i) {
      const int orig = before.ids[std::size_t(i)];
      if (Vocab::is_special(orig)) {
        REQUIRE(s.ids[std::size_t(i)] == orig);  // specials untouched
        REQUIRE(s.mlm_labels[std::size_t(i)] == -1);
      } else {
        REQUIRE(s.mlm_labels[std::size_t(i)] == orig);
        REQUIRE(s.ids[std::size_t(i)] >= 0);
        if (s.ids[std::size_t(i)] == Vocab::kMask) ++mask_tokens;
        else REQUIRE(s.ids[std::size_t(i)] >= Vocab::kNumSpecial);
      }
    }
    REQUIRE(mask_tokens >= 4);  // 80% of 9 in expectation
  }

  SECTION("masking is deterministic in the rng") {
    TokenSequence a = encode(v, utts, 32);
    TokenSequence b = encode(v, utts, 32);
    Rng r1 = Rng::seeded(7).stream("mask").fork(3, 11);
    Rng r2 = Rng::seeded(7).stream("mask").fork(3, 11);
    apply_mlm_mask(a, v, 0.4, r1);
    apply_mlm_mask(b, v, 0.4, r2);
    REQUIRE(a.ids == b.ids);
    REQUIRE(a.mlm_labels == b.mlm_labels);
  }

  SECTION("masked fraction tracks the ratio") {
    long total = 0, masked = 0;
    Rng rng = Rng::seeded(5).stream("mask");
    for (int rep = 0; rep < 300; ++rep) {
      TokenSequence s = encode(v, utts, 32);
      masked += apply_mlm_mask(s, v, 0.15, rng);
      total += 9;
    }
    const double rate = double(masked) / double(total);
    REQUIRE(rate > 0.12);
    REQUIRE(rate < 0.18);
  }

  SECTION("zero-mask outcomes are possible and reported") {
    // With a tiny ratio most sequences mask nothing; the caller decides how
    // to treat them.
    Rng rng = Rng::seeded(6).stream("mask");
    int zero = 0;
    for (int rep = 0; rep < 50; ++rep) {
      TokenSequence s = encode(v, utts, 32);
      if (apply_mlm_mask(s, v, 0.01, rng) == 0) ++zero;
    }
    REQUIRE(zero > 0);
  }
}
