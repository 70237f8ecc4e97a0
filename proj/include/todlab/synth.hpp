#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/corpus.hpp"
#include "todlab/rng.hpp"

namespace todlab {

// Synthetic task-oriented dialogues over a small fixed world: six booking
// domains plus a chitchat family. Every dialogue is scripted (request, slot
// questions, an offer, a booking) so the future is predictable from the
// context, which is the property the pre-training objective feeds on. The
// generator keeps the latent labels (intent, per-turn system acts,
// cumulative slot states) and derives the downstream task files from them.

struct SynthSpec {
  int dialogues = 2000;
  int min_pairs = 3;
  int max_pairs = 6;
  double train_frac = 0.8;
  double dev_frac = 0.1;  // test = remainder
  int intent_train_per_class = 8;
  int intent_dev_per_class = 4;
  int act_train = 400, act_dev = 80, act_test = 200;
  int dst_train = 400, dst_dev = 80, dst_test = 200;
  int rs_train = 400, rs_dev = 80, rs_test = 200;

  void validate() const {
    check(dialogues >= 1, "synth: dialogues must be >= 1");
    check(min_pairs >= 2 && min_pairs <= max_pairs,
          "synth: need 2 <= min_pairs <= max_pairs");
    check(train_frac > 0 && dev_frac > 0 && train_frac + dev_frac < 1.0,
          "synth: train/dev fractions must be positive and leave a test share");
    check(intent_train_per_class >= 1 && intent_dev_per_class >= 1,
          "synth: intent per-class counts must be >= 1");
    check(act_train >= 1 && dst_train >= 1 && rs_train >= 1,
          "synth: task train sizes must be >= 1");
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    check(j.is_object(), "synth spec: expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "dialogues") s.dialogues = it.value().get<int>();
      else if (k == "min_pairs") s.min_pairs = it.value().get<int>();
      else if (k == "max_pairs") s.max_pairs = it.value().get<int>();
      else if (k == "train_frac") s.train_frac = it.value().get<double>();
      else if (k == "dev_frac") s.dev_frac = it.value().get<double>();
      else if (k == "intent_train_per_class") s.intent_train_per_class = it.value().get<int>();
      else if (k == "intent_dev_per_class") s.intent_dev_per_class = it.value().get<int>();
      else if (k == "act_train") s.act_train = it.value().get<int>();
      else if (k == "act_dev") s.act_dev = it.value().get<int>();
      else if (k == "act_test") s.act_test = it.value().get<int>();
      else if (k == "dst_train") s.dst_train = it.value().get<int>();
      else if (k == "dst_dev") s.dst_dev = it.value().get<int>();
      else if (k == "dst_test") s.dst_test = it.value().get<int>();
      else if (k == "rs_train") s.rs_train = it.value().get<int>();
      else if (k == "rs_dev") s.rs_dev = it.value().get<int>();
      else if (k == "rs_test") s.rs_test = it.value().get<int>();
      else throw std::runtime_error("synth spec: unknown key '" + k + "'");
    }
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    return {{"dialogues", dialogues},
            {"min_pairs", min_pairs},
            {"max_pairs", max_pairs},
            {"train_frac", train_frac},
            {"dev_frac", dev_frac},
            {"intent_train_per_class", intent_train_per_class},
            {"intent_dev_per_class", intent_dev_per_class},
            {"act_train", act_train},
            {"act_dev", act_dev},
            {"act_test", act_test},
            {"dst_train", dst_train},
            {"dst_dev", dst_dev},
            {"dst_test", dst_test},
            {"rs_train", rs_train},
            {"rs_dev", rs_dev},
            {"rs_test", rs_test}};
  }
};

// How an inline constraint reads in the opening request.
enum class SlotStyle { pre, in_the, to, for_x };

struct SlotDef {
  std::string name;
  SlotStyle style;
  std::vector<std::string> values;
};

struct DomainDef {
  std::string name;
  std::vector<std::string> objects;   // synonymous noun phrases for the thing requested
  std::vector<std::string> entities;  // named things the system can offer
  std::vector<SlotDef> slots;
};

struct World {
  std::vector<DomainDef> domains;
  std::vector<std::pair<std::string, std::string>> chitchat;  // question, answer
  std::vector<std::string> act_names;                         // sorted
  std::vector<std::pair<std::string, std::vector<std::string>>> details;

  int act_id(const std::string& name) const {
    for (std::size_t i = 0; i < act_names.size(); ++i)
      if (act_names[i] == name) return int(i);
    throw std::runtime_error("unknown act: " + name);
  }
  // Intent classes: one per domain, chitchat last as the out-of-domain class.
  int num_intents() const { return int(domains.size()) + 1; }
  int ood_intent() const { return int(domains.size()); }
};

inline const World& synth_world() {
  static const World w = [] {
    World w;
    const std::vector<std::string> areas = {"north", "south", "centre", "east"};
    const std::vector<std::string> prices = {"cheap", "moderate", "expensive"};
    const std::vector<std::string> days = {"monday", "wednesday", "friday", "sunday"};
    const std::vector<std::string> cities = {"london", "paris", "berlin", "madrid"};
    w.domains = {
        {"restaurant",
         {"restaurant", "place to eat", "dining spot", "eatery"},
         {"roma house", "lemon grass", "spice garden", "golden fork", "city bistro",
          "river kitchen"},
         {{"food", SlotStyle::pre, {"italian", "thai", "indian", "chinese", "mexican"}},
          {"area", SlotStyle::in_the, areas},
          {"price", SlotStyle::pre, prices}}},
        {"hotel",
         {"hotel", "guest house", "place to stay", "lodge"},
         {"alpha lodge", "crown rest", "harbour inn", "garden court", "stone gate",
          "palm view"},
         {{"area", SlotStyle::in_the, areas},
          {"price", SlotStyle::pre, prices},
          {"rating", SlotStyle::pre, {"two star", "three star", "four star"}}}},
        {"taxi",
         {"taxi", "cab", "ride", "car"},
         {"swift cars", "metro cab", "star ride", "rapid wheels"},
         {{"destination", SlotStyle::to, {"the station", "the airport", "the harbour",
                                          "the stadium"}},
          {"time", SlotStyle::for_x, {"noon", "five pm", "nine am", "midnight"}},
          {"color", SlotStyle::pre, {"grey", "black", "white", "blue"}}}},
        {"train",
         {"train", "rail ticket", "train ticket", "railway seat"},
         {"coast line", "valley express", "night arrow", "summit rail"},
         {{"destination", SlotStyle::to, cities},
          {"day", SlotStyle::for_x, days},
          {"class", SlotStyle::pre, {"first class", "second class"}}}},
        {"attraction",
         {"museum", "gallery", "attraction", "exhibit"},
         {"city museum", "glass hall", "old mill", "wonder dome"},
         {{"type", SlotStyle::pre, {"art", "history", "science", "nature"}},
          {"area", SlotStyle::in_the, areas},
          {"fee", SlotStyle::pre, {"free", "paid"}}}},
        {"flight",
         {"flight", "plane ticket", "air ticket", "airfare"},
         {"blue wing", "cloud hopper", "sun jet", "polar bird"},
         {{"destination", SlotStyle::to, cities},
          {"day", SlotStyle::for_x, days},
          {"seat", SlotStyle::pre, {"window", "aisle"}}}},
    };
    w.chitchat = {
        {"how are you doing today", "i am doing just fine"},
        {"what time is it right now", "it is almost noon"},
        {"tell me something funny", "a clock was hungry so it went back four seconds"},
        {"do you like music", "i enjoy quiet piano tunes"},
        {"what is your name", "people call me the desk helper"},
        {"is it going to rain later", "the sky looks clear to me"},
        {"how old are you", "i stopped counting long ago"},
        {"where do you live", "i live inside a small grey box"},
        {"can you sing a song", "my singing would scare the cat"},
        {"what did you eat today", "helpers run on warm electricity"},
        {"do you have any hobbies", "i collect odd questions like yours"},
        {"say something nice to me", "your patience is truly remarkable"},
    };
    w.act_names = {"confirm_booking", "goodbye", "inform_detail", "offer_entity",
                   "propose_booking", "request_slot"};
    w.details = {
        {"address", {"main street", "station road", "harbour lane", "market square"}},
        {"phone", {"five five five one two", "five five five nine eight"}},
        {"hours", {"nine to five", "ten to six"}},
    };
    return w;
  }();
  return w;
}

// One generated dialogue plus its latent labels. system_acts and states are
// indexed by pair: entry k describes the k-th (user, system) exchange, the
// state being the cumulative slot map after that pair's user turn.
struct LabeledDialogue {
  Dialogue dialogue;
  int intent = 0;
  std::vector<std::vector<int>> system_acts;
  std::vector<std::map<std::string, std::string>> states;
};

namespace detail {

inline const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
  check(!v.empty(), "synth: empty word bank");
  return v[rng.index(v.size())];
}

inline std::string request_phrase(const std::string& obj, Rng& rng) {
  switch (rng.index(8)) {
    case 0: return "i want to book a " + obj;
    case 1: return "can you find me a " + obj;
    case 2: return "please get me a " + obj;
    case 3: return "i am looking for a " + obj;
    case 4: return "i need a " + obj;
    case 5: return "could you arrange a " + obj;
    case 6: return "help me reserve a " + obj;
    default: return "i would like a " + obj;
  }
}

inline std::string styled_object(const std::string& obj, const SlotDef& slot,
                                 const std::string& value) {
  switch (slot.style) {
    case SlotStyle::pre: return value + " " + obj;
    case SlotStyle::in_the: return obj + " in the " + value;
    case SlotStyle::to: return obj + " to " + value;
    case SlotStyle::for_x: return obj + " for " + value;
  }
  throw std::runtime_error("synth: bad slot style");
}

inline std::string ask_phrase(const std::string& slot_name, Rng& rng) {
  switch (rng.index(3)) {
    case 0: return "what " + slot_name + " do you want";
    case 1: return "which " + slot_name + " would you like";
    default: return "do you have a " + slot_name + " preference";
  }
}

inline std::string inform_phrase(const std::string& value, Rng& rng) {
  switch (rng.index(5)) {
    case 0: return value + " please";
    case 1: return "i want " + value;
    case 2: return "make it " + value;
    case 3: return value + " would be perfect";
    default: return "lets go with " + value;
  }
}

inline std::string offer_phrase(const std::string& entity, const std::string& value,
                                bool propose, Rng& rng) {
  if (propose) {
    if (rng.index(2) == 0)
      return "how about the " + entity + " it matches " + value + " shall i book it";
    return "i recommend the " + entity + " it should suit you shall i book it";
  }
  if (rng.index(2) == 0) return "i found the " + entity + " a lovely " + value + " option";
  return "the " + entity + " looks right for " + value;
}

inline std::string book_phrase(Rng& rng) {
  const std::vector<std::string> nums = {"two", "three", "four", "five"};
  switch (rng.index(3)) {
    case 0: return "yes book it for " + pick(nums, rng) + " people";
    case 1: return "please book for " + pick(nums, rng);
    default: return "go ahead and book it for " + pick(nums, rng) + " people";
  }
}

inline std::string confirm_phrase(const std::string& entity, Rng& rng) {
  switch (rng.index(3)) {
    case 0: return "done your booking at the " + entity + " is confirmed goodbye";
    case 1: return "all set i booked the " + entity + " for you have a great day";
    default: return "your booking is complete enjoy the " + entity + " goodbye";
  }
}

}  // namespace detail

// Scripted domain dialogue: request, slot questions and answers, an offer,
// optional detail questions, then the booking. Pair count is respected
// exactly; the offer always fires on the last inform pair.
inline LabeledDialogue synth_domain_dialogue(const World& w, int domain_idx, int pairs,
                                             const std::string& id, Rng& rng) {
  check(pairs >= 2, "synth: domain dialogue needs at least 2 pairs");
  const DomainDef& dom = w.domains[std::size_t(domain_idx)];
  LabeledDialogue out;
  out.intent = domain_idx;
  out.dialogue.id = id;
  auto& turns = out.dialogue.turns;

  std::map<std::string, std::string> state;
  std::vector<int> pending;
  for (int s = 0; s < int(dom.slots.size()); ++s) pending.push_back(s);

  const std::string& obj = detail::pick(dom.objects, rng);
  std::string request = detail::request_phrase(obj, rng);
  if (rng.bernoulli(0.5)) {
    // Constraint folded into the opening request.
    const int s = int(rng.index(dom.slots.size()));
    const SlotDef& slot = dom.slots[std::size_t(s)];
    const std::string& val = detail::pick(slot.values, rng);
    request = detail::request_phrase(detail::styled_object(obj, slot, val), rng);
    state[dom.name + "." + slot.name] = val;
    pending.erase(pending.begin() + s);
  }
  const std::vector<std::string> greetings = {"hello", "hi there", "good day"};
  if (rng.bernoulli(0.5)) request = detail::pick(greetings, rng) + " " + request;

  const int middle = pairs - 2;
  const int informs = std::min(int(pending.size()), middle);
  const int details_n = middle - informs;
  const std::string& entity = detail::pick(dom.entities, rng);

  auto offer_turn = [&](const std::string& mention) {
    const bool propose = rng.bernoulli(0.6);
    turns.push_back({Role::system, detail::offer_phrase(entity, mention, propose, rng)});
    std::vector<int> acts = {w.act_id("offer_entity")};
    if (propose) acts.push_back(w.act_id("propose_booking"));
    std::sort(acts.begin(), acts.end());
    out.system_acts.push_back(acts);
  };

  // Pair 1: the request, answered with the first slot question. With no
  // middle pairs to ask in, the system offers right away instead.
  turns.push_back({Role::user, request});
  if (informs == 0) {
    offer_turn(state.empty() ? obj : state.rbegin()->second);
  } else {
    turns.push_back({Role::system, detail::ask_phrase(
                                       dom.slots[std::size_t(pending.front())].name, rng)});
    out.system_acts.push_back({w.act_id("request_slot")});
  }
  out.states.push_back(state);

  // Inform pairs; the last one is answered with the offer.
  for (int j = 0; j < informs; ++j) {
    const SlotDef& slot = dom.slots[std::size_t(pending[std::size_t(j)])];
    const std::string& val = detail::pick(slot.values, rng);
    state[dom.name + "." + slot.name] = val;
    turns.push_back({Role::user, detail::inform_phrase(val, rng)});
    if (j + 1 < informs) {
      const SlotDef& next = dom.slots[std::size_t(pending[std::size_t(j + 1)])];
      turns.push_back({Role::system, detail::ask_phrase(next.name, rng)});
      out.system_acts.push_back({w.act_id("request_slot")});
    } else {
      check(!state.empty(), "synth: offer with no filled slot");
      offer_turn(state.rbegin()->second);
    }
    out.states.push_back(state);
  }

  // Optional detail questions about the offered entity.
  for (int j = 0; j < details_n; ++j) {
    const auto& d = w.details[rng.index(w.details.size())];
    const std::string q = rng.index(2) == 0
                              ? "what is the " + d.first + " of it"
                              : "can you tell me the " + d.first;
    turns.push_back({Role::user, q});
    turns.push_back({Role::system,
                     "the " + d.first + " is " + detail::pick(d.second, rng)});
    out.states.push_back(state);
    out.system_acts.push_back({w.act_id("inform_detail")});
  }

  // Final pair: booking and confirmation.
  turns.push_back({Role::user, detail::book_phrase(rng)});
  turns.push_back({Role::system, detail::confirm_phrase(entity, rng)});
  out.states.push_back(state);
  out.system_acts.push_back({w.act_id("confirm_booking"), w.act_id("goodbye")});

  check(pair_count(out.dialogue) == pairs, "synth: pair count drifted");
  return out;
}

// Chitchat dialogue: a run of unrelated question-answer pairs, sampled
// without replacement. Serves as the out-of-domain intent family.
inline LabeledDialogue synth_chitchat_dialogue(const World& w, int pairs,
                                               const std::string& id, Rng& rng) {
  check(pairs <= int(w.chitchat.size()), "synth: not enough chitchat pairs");
  std::vector<std::size_t> order(w.chitchat.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.index(i + 1)]);

  LabeledDialogue out;
  out.intent = w.ood_intent();
  out.dialogue.id = id;
  for (int k = 0; k < pairs; ++k) {
    const auto& qa = w.chitchat[order[std::size_t(k)]];
    out.dialogue.turns.push_back({Role::user, qa.first});
    out.dialogue.turns.push_back({Role::system, qa.second});
  }
  // No act or state labels: chitchat is outside the booking world.
  return out;
}

// Intent classes rotate round-robin over dialogues, so label marginals are
// uniform in the whole corpus and within every contiguous split of it.
inline std::vector<LabeledDialogue> synth_corpus(const SynthSpec& spec, Rng root) {
  spec.validate();
  const World& w = synth_world();
  check(spec.max_pairs <= int(w.chitchat.size()),
        "synth: max_pairs exceeds the chitchat bank");
  std::vector<LabeledDialogue> out;
  out.reserve(std::size_t(spec.dialogues));
  const Rng gen = root.stream("dialogue");
  for (int i = 0; i < spec.dialogues; ++i) {
    Rng rng = gen.fork(std::uint64_t(i));
    const int intent = i % w.num_intents();
    const int pairs = spec.min_pairs + int(rng.index(std::size_t(
                                          spec.max_pairs - spec.min_pairs + 1)));
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%05d", i);
    out.push_back(intent == w.ood_intent()
                      ? synth_chitchat_dialogue(w, pairs, id, rng)
                      : synth_domain_dialogue(w, intent, pairs, id, rng));
  }
  return out;
}

// Ontology over every (domain, slot) pair; "none" is always value 0.
inline nlohmann::json synth_ontology(const World& w) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& dom : w.domains)
    for (const auto& slot : dom.slots) {
      nlohmann::json vals = nlohmann::json::array();
      vals.push_back("none");
      for (const auto& v : slot.values) vals.push_back(v);
      j[dom.name + "." + slot.name] = vals;
    }
  return j;
}

namespace detail {

inline nlohmann::json history_json(const std::vector<Utterance>& h) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& u : h)
    a.push_back({{"role", role_name(u.role)}, {"text", u.text}});
  return a;
}

// History of the k-th pair: everything up to and including user turn k.
inline std::vector<Utterance> history_upto(const Dialogue& d, int k) {
  return std::vector<Utterance>(d.turns.begin(), d.turns.begin() + (2 * k - 1));
}

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.index(i)]);
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "synth: cannot write " + path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace detail

// Generates the corpus, splits it train/dev/test by contiguous index
// ranges (round-robin intents keep every split balanced), and writes the
// corpus files, the four task files per split, the ontology, the act
// inventory, and a manifest with content hashes. Returns the manifest.
inline nlohmann::json write_synth_dataset(const SynthSpec& spec,
                                          const std::string& out_dir,
                                          std::uint64_t seed) {
  const World& w = synth_world();
  Rng root = Rng::seeded(seed);
  std::vector<LabeledDialogue> all = synth_corpus(spec, root);

  std::filesystem::create_directories(out_dir);
  const int n = int(all.size());
  const int n_train = int(double(n) * spec.train_frac);
  const int n_dev = int(double(n) * spec.dev_frac);
  check(n_train >= 1 && n_dev >= 1 && n_train + n_dev < n,
        "synth: split fractions leave an empty split");
  struct Split {
    std::string name;
    int lo, hi;
  };
  const std::vector<Split> splits = {{"train", 0, n_train},
                                     {"dev", n_train, n_train + n_dev},
                                     {"test", n_train + n_dev, n}};

  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::vector<std::string>& lines) {
    detail::write_lines(out_dir + "/" + name, lines);
    files.push_back(name);
  };

  for (const auto& sp : splits) {
    std::vector<Dialogue> ds;
    for (int i = sp.lo; i < sp.hi; ++i) ds.push_back(all[std::size_t(i)].dialogue);
    save_dialogues(out_dir + "/corpus_" + sp.name + ".jsonl", ds);
    files.push_back("corpus_" + sp.name + ".jsonl");
  }

  // Intent: the opening user turn labels the whole dialogue. Train and dev
  // are few-shot per class; test keeps every example of its split.
  {
    const Rng r = root.stream("intent");
    for (const auto& sp : splits) {
      std::vector<std::vector<std::size_t>> by_class(std::size_t(w.num_intents()));
      for (int i = sp.lo; i < sp.hi; ++i)
        by_class[std::size_t(all[std::size_t(i)].intent)].push_back(std::size_t(i));
      int cap = sp.name == "train" ? spec.intent_train_per_class
                : sp.name == "dev" ? spec.intent_dev_per_class
                                   : -1;
      std::vector<std::size_t> chosen;
      for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        check(cap < 0 || int(idx.size()) >= cap,
              "synth: split '" + sp.name + "' too small for intent class cap");
        Rng cr = r.fork(fnv1a64(sp.name), c);
        detail::shuffle_indices(idx, cr);
        const std::size_t take = cap < 0 ? idx.size() : std::size_t(cap);
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + take);
      }
      std::sort(chosen.begin(), chosen.end());
      std::vector<std::string> lines;
      for (std::size_t i : chosen) {
        nlohmann::json j = {{"text", all[i].dialogue.turns.front().text},
                            {"label", all[i].intent}};
        lines.push_back(j.dump());
      }
      emit("intent_" + sp.name + ".jsonl", lines);
    }
  }

  // Act, DST and response selection enumerate (history up to user turn k,
  // pair k labels) over the booking dialogues of each split, then sample
  // down to the configured sizes. Response selection also includes
  // chitchat, since any system turn is a valid retrieval target.
  auto sample_pairs = [&](const Split& sp, bool include_chitchat, const Rng& r,
                          int cap) {
    std::vector<std::pair<std::size_t, int>> pool;  // dialogue index, pair k
    for (int i = sp.lo; i < sp.hi; ++i) {
      const LabeledDialogue& ld = all[std::size_t(i)];
      if (!include_chitchat && ld.system_acts.empty()) continue;
      for (int k = 1; k <= pair_count(ld.dialogue); ++k)
        pool.emplace_back(std::size_t(i), k);
    }
    check(!pool.empty(), "synth: no labeled pairs in split '" + sp.name + "'");
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng cr = r.fork(fnv1a64(sp.name));
    detail::shuffle_indices(idx, cr);
    const std::size_t take = std::min(std::size_t(cap), pool.size());
    std::vector<std::pair<std::size_t, int>> out;
    for (std::size_t i = 0; i < take; ++i) out.push_back(pool[idx[i]]);
    return out;
  };
  auto cap_of = [](const Split& sp, int tr, int de, int te) {
    return sp.name == "train" ? tr : sp.name == "dev" ? de : te;
  };

  const nlohmann::json ontology = synth_ontology(w);
  {
    const Rng r = root.stream("act");
    for (const auto& sp : splits) {
      std::vector<std::string> lines;
      for (auto [i, k] : sample_pairs(sp, false, r,
                                      cap_of(sp, spec.act_train, spec.act_dev,
                                             spec.act_test))) {
        const LabeledDialogue& ld = all[i];
        std::vector<int> bits(w.act_names.size(), 0);
        for (int a : ld.system_acts[std::size_t(k - 1)]) bits[std::size_t(a)] = 1;
        nlohmann::json j = {{"history", detail::history_json(
                                detail::history_upto(ld.dialogue, k))},
                            {"acts", bits}};
        lines.push_back(j.dump());
      }
      emit("act_" + sp.name + ".jsonl", lines);
    }
  }
  {
    const Rng r = root.stream("dst");
    for (const auto& sp : splits) {
      std::vector<std::string> lines;
      for (auto [i, k] : sample_pairs(sp, false, r,
                                      cap_of(sp, spec.dst_train, spec.dst_dev,
                                             spec.dst_test))) {
        const LabeledDialogue& ld = all[i];
        const auto& state = ld.states[std::size_t(k - 1)];
        nlohmann::json slots = nlohmann::json::object();
        for (auto it = ontology.begin(); it != ontology.end(); ++it) {
          auto f = state.find(it.key());
          slots[it.key()] = f == state.end() ? "none" : f->second;
        }
        nlohmann::json j = {{"history", detail::history_json(
                                detail::history_upto(ld.dialogue, k))},
                            {"slots", slots}};
        lines.push_back(j.dump());
      }
      emit("dst_" + sp.name + ".jsonl", lines);
    }
  }
  {
    const Rng r = root.stream("rs");
    for (const auto& sp : splits) {
      std::vector<std::string> lines;
      for (auto [i, k] : sample_pairs(sp, true, r,
                                      cap_of(sp, spec.rs_train, spec.rs_dev,
                                             spec.rs_test))) {
        const LabeledDialogue& ld = all[i];
        nlohmann::json j = {{"history", detail::history_json(
                                detail::history_upto(ld.dialogue, k))},
                            {"response", ld.dialogue.turns[std::size_t(2 * k - 1)].text}};
        lines.push_back(j.dump());
      }
      emit("rs_" + sp.name + ".jsonl", lines);
    }
  }

  {
    std::vector<std::string> one = {ontology.dump(2)};
    emit("ontology.json", one);
    nlohmann::json acts = w.act_names;
    emit("acts.json", {acts.dump(2)});
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& d : w.domains) labels.push_back(d.name);
    labels.push_back("ood");
    emit("intent_labels.json", {labels.dump(2)});
  }

  nlohmann::json manifest;
  manifest["format"] = "todlab-synth-manifest-v1";
  manifest["seed"] = seed;
  manifest["spec"] = spec.to_json();
  nlohmann::json fj = nlohmann::json::object();
  for (const auto& f : files) fj[f] = hex64(file_fnv64(out_dir + "/" + f));
  manifest["files"] = fj;
  {
    std::ofstream out(out_dir + "/manifest.json", std::ios::binary);
    check(out.good(), "synth: cannot write manifest");
    out << manifest.dump(2) << "\n";
  }
  return manifest;
}

}  // namespace todlab
