#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/corpus.hpp"
#include "todlab/rng.hpp"
#include "todlab/vocab.hpp"

namespace todlab {

// Fixed-length model input. Padding is always a suffix: ids[0..active_len)
// are real tokens, the rest is [PAD] with attention 0. mlm_labels holds the
// original id at masked positions and -1 everywhere else.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::int8_t> attention;
  std::vector<int> mlm_labels;
  int active_len = 0;
};

namespace detail {

// Token ids of one utterance: role marker followed by its words.
inline std::vector<int> utterance_ids(const Vocab& v, const Utterance& u) {
  std::vector<int> ids{u.role == Role::user ? Vocab::kUsr : Vocab::kSys};
  for (const auto& w : tokenize_words(u.text)) ids.push_back(v.id(w));
  return ids;
}

}  // namespace detail

// Encodes utterances as [CLS] u_1 ... u_k [SEP] padded to max_len, where
// each u_i is its role marker plus word tokens. When the total is too long,
// word tokens are dropped oldest-first; an utterance that loses all words
// loses its role marker too. The last protect_tail utterances are kept whole
// if possible; if they alone exceed the budget the same oldest-first rule is
// applied inside the protected block, so the sequence tail always survives.
inline TokenSequence encode(const Vocab& v, const std::vector<Utterance>& utts,
                            int max_len, int protect_tail = 0) {
  check(max_len >= 4, "encode: max_len must be at least 4");
  check(!utts.empty(), "encode: no utterances");
  check(protect_tail >= 0 && protect_tail <= int(utts.size()),
        "encode: protect_tail out of range");

  std::vector<std::vector<int>> parts;
  parts.reserve(utts.size());
  for (const auto& u : utts) parts.push_back(detail::utterance_ids(v, u));

  const int budget = max_len - 2;  // [CLS] and [SEP]
  auto total = [&] {
    int n = 0;
    for (const auto& p : parts)
      if (!p.empty()) n += int(p.size());
    return n;
  };

  // Two passes: first shrink unprotected utterances, then, only if the
  // protected tail still does not fit, shrink it as well.
  for (int pass = 0; pass < 2 && total() > budget; ++pass) {
    const int limit = pass == 0 ? int(parts.size()) - protect_tail : int(parts.size());
    for (int i = 0; i < limit && total() > budget; ++i) {
      auto& p = parts[i];
      if (p.empty()) continue;
      while (p.size() > 1 && total() > budget) p.erase(p.begin() + 1);
      if (p.size() == 1) p.clear();  // no surviving words, so no marker either
    }
  }
  check(total() <= budget, "encode: sequence does not fit max_len");

  TokenSequence seq;
  seq.ids.assign(std::size_t(max_len), Vocab::kPad);
  seq.attention.assign(std::size_t(max_len), 0);
  seq.mlm_labels.assign(std::size_t(max_len), -1);
  int pos = 0;
  seq.ids[std::size_t(pos++)] = Vocab::kCls;
  for (const auto& p : parts)
    for (int id : p) seq.ids[std::size_t(pos++)] = id;
  seq.ids[std::size_t(pos++)] = Vocab::kSep;
  seq.active_len = pos;
  for (int i = 0; i < pos; ++i) seq.attention[std::size_t(i)] = 1;
  return seq;
}

// Space-joined content words of a sequence; specials (including role
// markers) are dropped. encode followed by decode reproduces the tokenized
// text when nothing was truncated or masked.
inline std::string decode(const Vocab& v, const TokenSequence& seq) {
  std::string out;
  for (int i = 0; i < seq.active_len; ++i) {
    const int id = seq.ids[std::size_t(i)];
    if (Vocab::is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += v.word(id);
  }
  return out;
}

// Masks content tokens in place and records the originals in mlm_labels.
// Each maskable position is chosen independently with probability ratio; a
// chosen token becomes [MASK] with probability 0.8, a uniformly random
// content token with probability 0.1, and stays unchanged otherwise.
// Specials and padding are never masked. Returns the number of masked
// positions, which can be zero.
inline int apply_mlm_mask(TokenSequence& seq, const Vocab& v, double ratio, Rng& rng) {
  check(ratio >= 0.0 && ratio <= 1.0, "apply_mlm_mask: ratio out of range");
  check(v.content_words() > 0, "apply_mlm_mask: vocabulary has no content words");
  int masked = 0;
  for (int i = 0; i < seq.active_len; ++i) {
    const int id = seq.ids[std::size_t(i)];
    if (Vocab::is_special(id)) continue;
    if (!rng.bernoulli(ratio)) continue;
    seq.mlm_labels[std::size_t(i)] = id;
    ++masked;
    const double u = rng.real();
    if (u < 0.8) {
      seq.ids[std::size_t(i)] = Vocab::kMask;
    } else if (u < 0.9) {
      seq.ids[std::size_t(i)] =
          Vocab::kNumSpecial + int(rng.below(std::uint64_t(v.content_words())));
    }
  }
  return masked;
}

inline int count_masked(const TokenSequence& seq) {
  int n = 0;
  for (int i = 0; i < seq.active_len; ++i)
    if (seq.mlm_labels[std::size_t(i)] >= 0) ++n;
  return n;
}

}  // namespace todlab
