#pragma once

#include <fstream>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/rng.hpp"

namespace todlab {

enum class Role { user, system };

struct Utterance {
  Role role;
  std::string text;
};

// A dialogue after canonicalisation: roles strictly alternate starting with
// user; a trailing user utterance without a reply is allowed.
struct Dialogue {
  std::string id;
  std::vector<Utterance> turns;
};

inline const char* role_name(Role r) { return r == Role::user ? "user" : "system"; }

inline Role parse_role(const std::string& s) {
  if (s == "user") return Role::user;
  if (s == "system") return Role::system;
  throw std::runtime_error("unknown role: " + s);
}

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Trims utterances, drops empty ones and leading system turns, and merges
// consecutive same-role utterances with a single space. After this the role
// sequence is u, s, u, s, ...
inline Dialogue canonicalize(const Dialogue& in) {
  Dialogue out;
  out.id = in.id;
  for (const auto& t : in.turns) {
    std::string text = trim(t.text);
    if (text.empty()) continue;
    if (out.turns.empty() && t.role == Role::system) continue;
    if (!out.turns.empty() && out.turns.back().role == t.role) {
      out.turns.back().text += " ";
      out.turns.back().text += text;
    } else {
      out.turns.push_back({t.role, std::move(text)});
    }
  }
  return out;
}

// Number of complete (user, system) exchanges.
inline int pair_count(const Dialogue& d) { return int(d.turns.size()) / 2; }

// Splits at exchange t (1-based): the context ends with the t-th user
// utterance, the future starts with the t-th system reply. Concatenating the
// two halves restores the dialogue exactly.
inline std::pair<std::vector<Utterance>, std::vector<Utterance>> split_at_turn(
    const Dialogue& d, int t) {
  const int n = pair_count(d);
  check(n >= 1, "split_at_turn: dialogue '" + d.id + "' has no complete exchange");
  check(t >= 1 && t <= n, "split_at_turn: t out of range for dialogue '" + d.id + "'");
  std::vector<Utterance> context(d.turns.begin(), d.turns.begin() + (2 * t - 1));
  std::vector<Utterance> future(d.turns.begin() + (2 * t - 1), d.turns.end());
  return {std::move(context), std::move(future)};
}

inline int sample_split(const Dialogue& d, Rng& rng) {
  const int n = pair_count(d);
  check(n >= 1, "sample_split: dialogue '" + d.id + "' has no complete exchange");
  return 1 + int(rng.below(std::uint64_t(n)));
}

// How much of the future the teacher may see. Numeric policies cap the
// sampled window length; all samples any length; fix always takes the whole
// future.
enum class FuturePolicy { one = 1, three = 3, five = 5, all = -1, fix = -2 };

inline FuturePolicy parse_future_policy(const std::string& s) {
  if (s == "1") return FuturePolicy::one;
  if (s == "3") return FuturePolicy::three;
  if (s == "5") return FuturePolicy::five;
  if (s == "All" || s == "all") return FuturePolicy::all;
  if (s == "Fix" || s == "fix") return FuturePolicy::fix;
  throw std::runtime_error("unknown future policy: " + s +
                           " (expected 1, 3, 5, All or Fix)");
}

inline std::string future_policy_name(FuturePolicy p) {
  switch (p) {
    case FuturePolicy::one: return "1";
    case FuturePolicy::three: return "3";
    case FuturePolicy::five: return "5";
    case FuturePolicy::all: return "All";
    case FuturePolicy::fix: return "Fix";
  }
  throw std::runtime_error("bad future policy value");
}

// Prefix of the future visible to the teacher. The sampled length never
// exceeds what is available.
inline std::vector<Utterance> sample_future_window(const std::vector<Utterance>& future,
                                                   FuturePolicy p, Rng& rng) {
  check(!future.empty(), "sample_future_window: empty future");
  const int avail = int(future.size());
  int len = avail;
  if (p == FuturePolicy::fix) {
    len = avail;
  } else {
    const int cap = p == FuturePolicy::all ? avail : std::min(int(p), avail);
    len = 1 + int(rng.below(std::uint64_t(cap)));
  }
  return std::vector<Utterance>(future.begin(), future.begin() + len);
}

inline Dialogue dialogue_from_json(const nlohmann::json& j) {
  check(j.is_object(), "dialogue: expected a JSON object");
  check(j.contains("id") && j["id"].is_string(), "dialogue: missing string 'id'");
  check(j.contains("turns") && j["turns"].is_array(), "dialogue: missing array 'turns'");
  Dialogue d;
  d.id = j["id"].get<std::string>();
  for (const auto& t : j["turns"]) {
    check(t.is_object() && t.contains("role") && t.contains("text") &&
              t["role"].is_string() && t["text"].is_string(),
          "dialogue '" + d.id + "': each turn needs string 'role' and 'text'");
    d.turns.push_back({parse_role(t["role"].get<std::string>()),
                       t["text"].get<std::string>()});
  }
  return d;
}

inline nlohmann::json dialogue_to_json(const Dialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns)
    turns.push_back({{"role", role_name(t.role)}, {"text", t.text}});
  return {{"id", d.id}, {"turns", turns}};
}

// JSONL loader; canonicalises every dialogue. Blank lines are ignored,
// anything else that fails to parse is an error with its line number.
inline std::vector<Dialogue> load_dialogues(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open corpus file: " + path);
  std::vector<Dialogue> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(canonicalize(dialogue_from_json(nlohmann::json::parse(line))));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void save_dialogues(const std::string& path, const std::vector<Dialogue>& ds) {
  std::ofstream out(path);
  check(out.good(), "cannot write corpus file: " + path);
  for (const auto& d : ds) out << dialogue_to_json(d).dump() << "\n";
  check(out.good(), "write failed: " + path);
}

struct CorpusStats {
  long dialogues = 0;
  long utterances = 0;
  long exchanges = 0;  // complete (user, system) pairs
  int pairs_min = 0, pairs_max = 0;
  double pairs_mean = 0;
  double words_per_utterance = 0;
  long distinct_words = 0;
};

inline nlohmann::json stats_to_json(const CorpusStats& s) {
  return {{"dialogues", s.dialogues},
          {"utterances", s.utterances},
          {"exchanges", s.exchanges},
          {"pairs_min", s.pairs_min},
          {"pairs_max", s.pairs_max},
          {"pairs_mean", s.pairs_mean},
          {"words_per_utterance", s.words_per_utterance},
          {"distinct_words", s.distinct_words}};
}

}  // namespace todlab
