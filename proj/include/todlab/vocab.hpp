#pragma once

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/corpus.hpp"

namespace todlab {

// Word-level tokenizer. Lowercases ASCII letters; runs of [a-z0-9'] (plus
// any byte >= 0x80) form one token, every other printable character stands
// alone. Whitespace only separates.
inline std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char ch : text) {
    const char c = (ch >= 'A' && ch <= 'Z') ? char(ch - 'A' + 'a') : char(ch);
    const bool wordish = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
                         c == '\'' || ch >= 0x80;
    if (wordish) {
      cur += c;
    } else {
      flush();
      if (!std::isspace(ch)) out.push_back(std::string(1, c));
    }
  }
  flush();
  return out;
}

// Id-indexed vocabulary. Ids 0..6 are reserved specials in a fixed order;
// content words follow, most frequent first.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kUsr = 5;
  static constexpr int kSys = 6;
  static constexpr int kNumSpecial = 7;

  static const std::vector<std::string>& special_names() {
    static const std::vector<std::string> names{"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                "[MASK]", "[USR]", "[SYS]"};
    return names;
  }

  // Frequency-sorted vocabulary over every utterance in the corpus. Ties
  // break lexicographically so the result is independent of input order.
  static Vocab build(const std::vector<Dialogue>& corpus, int min_freq = 1) {
    check(min_freq >= 1, "Vocab::build: min_freq must be >= 1");
    std::unordered_map<std::string, long> freq;
    for (const auto& d : corpus)
      for (const auto& u : d.turns)
        for (auto& w : tokenize_words(u.text)) ++freq[w];
    std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    v.words_ = special_names();
    for (const auto& [w, f] : items)
      if (f >= min_freq) v.words_.push_back(w);
    v.reindex();
    return v;
  }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& word(int id) const {
    check(id >= 0 && id < int(words_.size()), "Vocab::word: id out of range");
    return words_[id];
  }

  int size() const { return int(words_.size()); }
  int content_words() const { return size() - kNumSpecial; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  // Persisted as a flat JSON array where the index is the id.
  void save(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "cannot write vocab file: " + path);
    out << nlohmann::json(words_).dump() << "\n";
    check(out.good(), "write failed: " + path);
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open vocab file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw std::runtime_error("vocab file " + path + ": " + e.what());
    }
    check(j.is_array(), "vocab file must be a JSON array: " + path);
    Vocab v;
    v.words_ = j.get<std::vector<std::string>>();
    check(v.words_.size() >= std::size_t(kNumSpecial),
          "vocab file too small: " + path);
    for (int i = 0; i < kNumSpecial; ++i)
      check(v.words_[i] == special_names()[i],
            "vocab file " + path + ": special token " + std::to_string(i) +
                " must be " + special_names()[i]);
    v.reindex();
    check(v.index_.size() == v.words_.size(),
          "vocab file " + path + ": duplicate entries");
    return v;
  }

 private:
  void reindex() {
    index_.clear();
    for (int i = 0; i < int(words_.size()); ++i) index_[words_[i]] = i;
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

inline CorpusStats compute_stats(const std::vector<Dialogue>& corpus) {
  CorpusStats s;
  s.dialogues = long(corpus.size());
  std::unordered_map<std::string, long> words;
  long total_words = 0;
  bool first = true;
  double pair_sum = 0;
  for (const auto& d : corpus) {
    const int pairs = pair_count(d);
    pair_sum += pairs;
    s.exchanges += pairs;
    if (first || pairs < s.pairs_min) s.pairs_min = pairs;
    if (first || pairs > s.pairs_max) s.pairs_max = pairs;
    first = false;
    for (const auto& u : d.turns) {
      ++s.utterances;
      for (auto& w : tokenize_words(u.text)) {
        ++words[w];
        ++total_words;
      }
    }
  }
  s.pairs_mean = s.dialogues ? pair_sum / double(s.dialogues) : 0.0;
  s.words_per_utterance = s.utterances ? double(total_words) / double(s.utterances) : 0.0;
  s.distinct_words = long(words.size());
  return s;
}

}  // namespace todlab
