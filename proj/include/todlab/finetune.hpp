#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "todlab/checkpoint.hpp"
#include "todlab/common.hpp"
#include "todlab/corpus.hpp"
#include "todlab/encode.hpp"
#include "todlab/encoder.hpp"
#include "todlab/graph.hpp"
#include "todlab/mat.hpp"
#include "todlab/metrics.hpp"
#include "todlab/optim.hpp"
#include "todlab/rng.hpp"
#include "todlab/vocab.hpp"

namespace todlab {

// ---------------------------------------------------------------------------
// Task data

struct IntentExample {
  std::string text;
  int label = 0;
};

struct ActExample {
  std::vector<Utterance> history;
  std::vector<int> acts;  // one 0/1 bit per act type
};

struct DstExample {
  std::vector<Utterance> history;
  std::vector<int> labels;  // value index per ontology pair, in pair order
};

struct RsExample {
  std::vector<Utterance> history;
  std::string response;
};

// Fixed (domain.slot -> value list) catalogue. Pairs are kept sorted by name
// so the concatenated head layout is reproducible; value 0 is always "none".
struct Ontology {
  std::vector<std::string> pair_names;
  std::vector<std::vector<std::string>> values;

  int pairs() const { return int(pair_names.size()); }

  int pair_index(const std::string& name) const {
    const auto it = std::lower_bound(pair_names.begin(), pair_names.end(), name);
    check(it != pair_names.end() && *it == name, "ontology: unknown pair " + name);
    return int(it - pair_names.begin());
  }

  int value_index(int pair, const std::string& v) const {
    const auto& vals = values[std::size_t(pair)];
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (vals[i] == v) return int(i);
    throw std::runtime_error("ontology: unknown value '" + v + "' for pair " +
                             pair_names[std::size_t(pair)]);
  }

  int value_count(int pair) const { return int(values[std::size_t(pair)].size()); }

  int head_width() const {
    int n = 0;
    for (const auto& v : values) n += int(v.size());
    return n;
  }

  int offset(int pair) const {
    int n = 0;
    for (int p = 0; p < pair; ++p) n += value_count(p);
    return n;
  }

  static Ontology from_json(const nlohmann::json& j) {
    check(j.is_object(), "ontology: expected an object");
    Ontology o;
    for (auto it = j.begin(); it != j.end(); ++it) {  // nlohmann iterates sorted
      o.pair_names.push_back(it.key());
      std::vector<std::string> vals = it.value().get<std::vector<std::string>>();
      check(!vals.empty() && vals.front() == "none",
            "ontology: pair " + it.key() + " must list \"none\" first");
      o.values.push_back(std::move(vals));
    }
    check(!o.pair_names.empty(), "ontology: no pairs");
    return o;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < pair_names.size(); ++i) j[pair_names[i]] = values[i];
    return j;
  }

  static Ontology load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": " + e.what());
    }
    return from_json(j);
  }
};

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  long ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(ln) + ": " + e.what());
    }
  }
  check(!rows.empty(), path + ": no examples");
  return rows;
}

inline std::vector<Utterance> history_from_json(const nlohmann::json& j,
                                                const std::string& where) {
  check(j.is_array() && !j.empty(), where + ": history must be a non-empty array");
  std::vector<Utterance> h;
  for (const auto& t : j)
    h.push_back({parse_role(t.at("role").get<std::string>()),
                 t.at("text").get<std::string>()});
  return h;
}

}  // namespace detail

inline std::vector<IntentExample> load_intent_examples(const std::string& path,
                                                       int num_classes) {
  check(num_classes >= 2, "intent: need at least 2 classes");
  std::vector<IntentExample> out;
  for (const auto& j : detail::read_jsonl(path)) {
    IntentExample e;
    e.text = j.at("text").get<std::string>();
    e.label = j.at("label").get<int>();
    check(e.label >= 0 && e.label < num_classes,
          path + ": intent label " + std::to_string(e.label) + " out of range");
    check(!e.text.empty(), path + ": empty utterance");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ActExample> load_act_examples(const std::string& path, int num_acts) {
  check(num_acts >= 1, "act: need at least 1 act type");
  std::vector<ActExample> out;
  for (const auto& j : detail::read_jsonl(path)) {
    ActExample e;
    e.history = detail::history_from_json(j.at("history"), path);
    e.acts = j.at("acts").get<std::vector<int>>();
    check(int(e.acts.size()) == num_acts, path + ": acts arity mismatch");
    for (int b : e.acts) check(b == 0 || b == 1, path + ": acts entries must be 0/1");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<DstExample> load_dst_examples(const std::string& path,
                                                 const Ontology& ont) {
  std::vector<DstExample> out;
  for (const auto& j : detail::read_jsonl(path)) {
    DstExample e;
    e.history = detail::history_from_json(j.at("history"), path);
    const auto& slots = j.at("slots");
    check(slots.is_object() && int(slots.size()) == ont.pairs(),
          path + ": slots must cover every ontology pair");
    e.labels.resize(std::size_t(ont.pairs()));
    for (auto it = slots.begin(); it != slots.end(); ++it) {
      const int p = ont.pair_index(it.key());
      e.labels[std::size_t(p)] = ont.value_index(p, it.value().get<std::string>());
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<RsExample> load_rs_examples(const std::string& path) {
  std::vector<RsExample> out;
  for (const auto& j : detail::read_jsonl(path)) {
    RsExample e;
    e.history = detail::history_from_json(j.at("history"), path);
    e.response = j.at("response").get<std::string>();
    check(!e.response.empty(), path + ": empty response");
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classification head

template <class S>
struct LinearHead {
  Mat<S> w, b;    // out x in, 1 x out
  Mat<S> gw, gb;

  static LinearHead init(int out, int in, Rng rng) {
    check(out >= 1 && in >= 1, "LinearHead: bad shape");
    LinearHead h;
    h.w = Mat<S>::gaussian(out, in, 0.02, rng);
    h.b = Mat<S>(1, out);
    h.gw = Mat<S>(out, in);
    h.gb = Mat<S>(1, out);
    return h;
  }

  int out_dim() const { return w.rows(); }
  int in_dim() const { return w.cols(); }

  void zero_grad() {
    gw.set_zero();
    gb.set_zero();
  }

  typename Graph<S>::Ref forward(Graph<S>& g, typename Graph<S>::Ref x, bool trainable) {
    return g.linear(x, g.param(w, trainable ? &gw : nullptr),
                    g.param(b, trainable ? &gb : nullptr));
  }

  Mat<S> apply(const Mat<S>& x) const {
    check(x.cols() == w.cols(), "LinearHead: input width mismatch");
    Mat<S> out(x.rows(), w.rows());
    out.map().noalias() = x.map() * w.map().transpose();
    out.map().rowwise() += b.map().row(0);
    return out;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const Mat<S>* m : {&w, &b})
      for (std::size_t i = 0; i < m->size(); ++i) {
        const float f = float(m->data()[i]);
        h = fnv1a64(&f, sizeof(f), h);
      }
    return h;
  }
};

// Saved in the shared checkpoint format under a head/ subdirectory of the
// fine-tuned encoder checkpoint; config carries the task and label space.
template <class S>
void save_head(const std::string& dir, const LinearHead<S>& h,
               const nlohmann::json& config, int epoch) {
  save_tensor_dir(dir, {{"head.w", h.w.template cast<float>()},
                        {"head.b", h.b.template cast<float>()}},
                  config, epoch);
}

template <class S>
LinearHead<S> load_head(const std::string& dir, nlohmann::json* config_out = nullptr) {
  LoadedTensors lt = load_tensor_dir(dir);
  check(lt.tensors.size() == 2 && lt.tensors[0].name == "head.w" &&
            lt.tensors[1].name == "head.b",
        dir + ": not a head checkpoint");
  LinearHead<S> h;
  h.w = lt.tensors[0].data.template cast<S>();
  h.b = lt.tensors[1].data.template cast<S>();
  check(h.b.rows() == 1 && h.b.cols() == h.w.rows(), dir + ": head shape mismatch");
  h.gw = Mat<S>(h.w.rows(), h.w.cols());
  h.gb = Mat<S>(1, h.b.cols());
  if (config_out) *config_out = lt.config;
  return h;
}

// ---------------------------------------------------------------------------
// Training

struct FinetuneConfig {
  int batch_size = 0;  // 0 picks the task default
  double learning_rate = 5e-5;
  int max_epochs = 50;
  int eval_every = 50;  // optimizer steps between dev evaluations
  int patience = 10;    // dev evaluations without improvement before stopping
  bool freeze_encoder = false;

  void validate() const {
    check(batch_size >= 0, "finetune: batch_size must be >= 0");
    check(learning_rate > 0 && std::isfinite(learning_rate),
          "finetune: learning_rate must be positive");
    check(max_epochs >= 1, "finetune: max_epochs must be >= 1");
    check(eval_every >= 1, "finetune: eval_every must be >= 1");
    check(patience >= 1, "finetune: patience must be >= 1");
  }
};

inline int default_batch_size(const std::string& task) {
  if (task == "intent") return 8;
  if (task == "act") return 16;
  if (task == "dst") return 25;
  if (task == "rs") return 25;
  throw std::runtime_error("unknown task " + task);
}

template <class S>
struct FinetuneResult {
  EncoderParams<S> encoder;
  LinearHead<S> head;  // untouched default for rs
  bool has_head = false;
  long steps = 0;
  long best_step = 0;
  double best_dev_loss = std::numeric_limits<double>::quiet_NaN();
  int epochs_run = 0;
  bool early_stopped = false;
  std::vector<std::string> log;
};

// Top-layer pooled representation of one sequence on the tape.
template <class S>
typename Graph<S>::Ref pooled_rep(Graph<S>& g, EncoderParams<S>& enc,
                                  const TokenSequence& seq, bool train,
                                  bool trainable, Rng* drop) {
  ForwardOptions<S> o;
  o.train = train;
  o.trainable = trainable;
  o.dropout_rng = drop;
  return encoder_forward(g, enc, seq, o).pooled.back();
}

// Shared optimisation loop. Batch builders return the summed loss over their
// index list; gradients are seeded with 1/B so the step follows the batch
// mean. The dev metric is mean loss per example; the best dev snapshot of
// encoder and head is restored into the result.
template <class S, class TrainFn, class DevFn>
FinetuneResult<S> finetune_loop(EncoderParams<S>& enc, LinearHead<S>* head,
                                const std::string& task, const FinetuneConfig& cfg,
                                long n_train, long n_dev, TrainFn&& train_fn,
                                DevFn&& dev_fn, const Rng& root) {
  cfg.validate();
  check(n_train >= 1, "finetune: empty training set");
  const bool rs = task == "rs";
  const int B = cfg.batch_size > 0 ? cfg.batch_size : default_batch_size(task);
  check(!rs || B >= 2, "finetune: response selection needs batch size >= 2");
  check(!rs || n_train >= 2, "finetune: response selection needs at least 2 examples");
  check(!cfg.freeze_encoder || head != nullptr,
        "finetune: freezing the encoder leaves nothing to train");

  Adam<S> opt(cfg.learning_rate);
  if (!cfg.freeze_encoder)
    for (std::size_t i = 0; i < enc.w.size(); ++i) opt.add(&enc.w[i], &enc.g[i]);
  if (head) {
    opt.add(&head->w, &head->gw);
    opt.add(&head->b, &head->gb);
  }

  FinetuneResult<S> res;
  res.has_head = head != nullptr;

  auto dev_loss = [&]() {
    double sum = 0;
    long scored = 0;
    for (long s = 0; s < n_dev; s += B) {
      std::vector<long> idxs;
      for (long i = s; i < std::min(s + B, n_dev); ++i) idxs.push_back(i);
      if (rs && idxs.size() < 2) continue;  // a singleton has no negatives
      Graph<S> g(false);
      sum += double(g.v(dev_fn(g, idxs, false, nullptr))(0, 0));
      scored += long(idxs.size());
    }
    check(scored > 0, "finetune: dev set yields no scorable batch");
    return sum / double(scored);
  };

  const bool use_dev = n_dev > 0;
  EncoderParams<S> best_enc = enc;
  LinearHead<S> best_head = head ? *head : LinearHead<S>();
  double best = std::numeric_limits<double>::infinity();
  if (use_dev) {
    best = dev_loss();
    res.log.push_back("dev loss at init: " + std::to_string(best));
  } else {
    res.log.push_back("no dev set: early stopping disabled");
  }

  const Rng shuffle_root = root.stream("shuffle");
  const Rng drop_root = root.stream("dropout");
  long step = 0;
  int bad_evals = 0;
  bool stop = false;

  auto maybe_eval = [&] {
    const double d = dev_loss();
    if (d < best) {
      best = d;
      best_enc.assign_from(enc);
      if (head) best_head = *head;
      res.best_step = step;
      bad_evals = 0;
    } else if (++bad_evals >= cfg.patience) {
      stop = true;
      res.early_stopped = true;
      res.log.push_back("early stop at step " + std::to_string(step) +
                        ", best dev loss " + std::to_string(best) + " at step " +
                        std::to_string(res.best_step));
    }
  };

  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    std::vector<long> order(static_cast<std::size_t>(n_train));
    for (long i = 0; i < n_train; ++i) order[std::size_t(i)] = i;
    Rng sh = shuffle_root.fork(std::uint64_t(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[sh.index(i)]);

    for (long s = 0; s < n_train && !stop; s += B) {
      std::vector<long> idxs(order.begin() + s,
                             order.begin() + std::min(s + B, n_train));
      if (rs && idxs.size() < 2) {
        res.log.push_back("skipped a trailing batch of one (no negatives)");
        continue;
      }
      ++step;
      enc.zero_grad();
      if (head) head->zero_grad();
      Graph<S> g(true);
      Rng drop = drop_root.fork(std::uint64_t(step));
      auto loss = train_fn(g, idxs, true, &drop);
      const double value = double(g.v(loss)(0, 0));
      check(std::isfinite(value),
            "finetune: non-finite training loss at step " + std::to_string(step));
      g.backward(loss, S(1.0 / double(idxs.size())));
      opt.step();
      if (use_dev && step % cfg.eval_every == 0) maybe_eval();
    }
    res.epochs_run = epoch;
  }

  if (use_dev && !stop && step % cfg.eval_every != 0) maybe_eval();

  res.steps = step;
  res.best_dev_loss = use_dev ? best : std::numeric_limits<double>::quiet_NaN();
  if (use_dev) {
    res.encoder = std::move(best_enc);
    if (head) res.head = std::move(best_head);
  } else {
    res.encoder = enc;
    if (head) res.head = *head;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Task wrappers

template <class S>
FinetuneResult<S> finetune_intent(const EncoderParams<S>& enc0, const Vocab& v,
                                  const std::vector<IntentExample>& train,
                                  const std::vector<IntentExample>& dev,
                                  int num_classes, const FinetuneConfig& cfg,
                                  std::uint64_t seed) {
  check(num_classes >= 2, "intent: need at least 2 classes");
  for (const auto& e : train)
    check(e.label >= 0 && e.label < num_classes, "intent: label out of range");
  EncoderParams<S> enc = enc0;
  const Rng root = Rng::seeded(seed);
  Rng hr = root.stream("head");
  LinearHead<S> head = LinearHead<S>::init(num_classes, enc.cfg.hidden_dim, hr);

  auto encode_all = [&](const std::vector<IntentExample>& ds) {
    std::vector<TokenSequence> seqs;
    for (const auto& e : ds)
      seqs.push_back(encode(v, {{Role::user, e.text}}, enc.cfg.max_len));
    return seqs;
  };
  const auto tr_seq = encode_all(train);
  const auto dv_seq = encode_all(dev);

  auto batch_fn = [&enc, &head, &cfg](const std::vector<TokenSequence>* seqs,
                                      const std::vector<IntentExample>* ds) {
    return [&enc, &head, &cfg, seqs, ds](Graph<S>& g, const std::vector<long>& idxs,
                                         bool tr, Rng* drop) {
      std::vector<typename Graph<S>::Ref> reps;
      std::vector<int> labels;
      for (long i : idxs) {
        reps.push_back(pooled_rep(g, enc, (*seqs)[std::size_t(i)], tr,
                                  tr && !cfg.freeze_encoder, drop));
        labels.push_back((*ds)[std::size_t(i)].label);
      }
      return g.ce_rows(head.forward(g, g.concat_rows(reps), tr), labels);
    };
  };
  return finetune_loop(enc, &head, "intent", cfg, long(train.size()),
                       long(dev.size()), batch_fn(&tr_seq, &train),
                       batch_fn(&dv_seq, &dev), root);
}

template <class S>
FinetuneResult<S> finetune_act(const EncoderParams<S>& enc0, const Vocab& v,
                               const std::vector<ActExample>& train,
                               const std::vector<ActExample>& dev, int num_acts,
                               const FinetuneConfig& cfg, std::uint64_t seed) {
  check(num_acts >= 1, "act: need at least 1 act type");
  for (const auto& e : train)
    check(int(e.acts.size()) == num_acts, "act: acts arity mismatch");
  EncoderParams<S> enc = enc0;
  const Rng root = Rng::seeded(seed);
  Rng hr = root.stream("head");
  LinearHead<S> head = LinearHead<S>::init(num_acts, enc.cfg.hidden_dim, hr);

  auto encode_all = [&](const std::vector<ActExample>& ds) {
    std::vector<TokenSequence> seqs;
    for (const auto& e : ds) seqs.push_back(encode(v, e.history, enc.cfg.max_len));
    return seqs;
  };
  const auto tr_seq = encode_all(train);
  const auto dv_seq = encode_all(dev);

  auto batch_fn = [&enc, &head, &cfg](const std::vector<TokenSequence>* seqs,
                                      const std::vector<ActExample>* ds) {
    return [&enc, &head, &cfg, seqs, ds](Graph<S>& g, const std::vector<long>& idxs,
                                         bool tr, Rng* drop) {
      std::vector<typename Graph<S>::Ref> reps;
      Mat<S> targets(int(idxs.size()), int(ds->front().acts.size()));
      for (std::size_t r = 0; r < idxs.size(); ++r) {
        const long i = idxs[r];
        reps.push_back(pooled_rep(g, enc, (*seqs)[std::size_t(i)], tr,
                                  tr && !cfg.freeze_encoder, drop));
        for (std::size_t a = 0; a < (*ds)[std::size_t(i)].acts.size(); ++a)
          targets(int(r), int(a)) = S((*ds)[std::size_t(i)].acts[a]);
      }
      return g.bce_logits(head.forward(g, g.concat_rows(reps), tr),
                          std::move(targets));
    };
  };
  return finetune_loop(enc, &head, "act", cfg, long(train.size()),
                       long(dev.size()), batch_fn(&tr_seq, &train),
                       batch_fn(&dv_seq, &dev), root);
}

template <class S>
FinetuneResult<S> finetune_dst(const EncoderParams<S>& enc0, const Vocab& v,
                               const std::vector<DstExample>& train,
                               const std::vector<DstExample>& dev,
                               const Ontology& ont, const FinetuneConfig& cfg,
                               std::uint64_t seed) {
  for (const auto& e : train)
    check(int(e.labels.size()) == ont.pairs(), "dst: label arity mismatch");
  EncoderParams<S> enc = enc0;
  const Rng root = Rng::seeded(seed);
  Rng hr = root.stream("head");
  // One softmax per (domain, slot) pair, all packed into a single linear map.
  LinearHead<S> head = LinearHead<S>::init(ont.head_width(), enc.cfg.hidden_dim, hr);

  auto encode_all = [&](const std::vector<DstExample>& ds) {
    std::vector<TokenSequence> seqs;
    for (const auto& e : ds) seqs.push_back(encode(v, e.history, enc.cfg.max_len));
    return seqs;
  };
  const auto tr_seq = encode_all(train);
  const auto dv_seq = encode_all(dev);

  auto batch_fn = [&enc, &head, &cfg, &ont](const std::vector<TokenSequence>* seqs,
                                            const std::vector<DstExample>* ds) {
    return [&enc, &head, &cfg, &ont, seqs, ds](Graph<S>& g,
                                               const std::vector<long>& idxs,
                                               bool tr, Rng* drop) {
      std::vector<typename Graph<S>::Ref> reps;
      for (long i : idxs)
        reps.push_back(pooled_rep(g, enc, (*seqs)[std::size_t(i)], tr,
                                  tr && !cfg.freeze_encoder, drop));
      auto logits = head.forward(g, g.concat_rows(reps), tr);
      std::vector<typename Graph<S>::Ref> pair_losses;
      for (int p = 0; p < ont.pairs(); ++p) {
        std::vector<int> labels;
        for (long i : idxs)
          labels.push_back((*ds)[std::size_t(i)].labels[std::size_t(p)]);
        pair_losses.push_back(g.ce_rows(
            g.col_block(logits, ont.offset(p), ont.value_count(p)), labels));
      }
      return g.sum_list(pair_losses);  // CE summed over pairs
    };
  };
  return finetune_loop(enc, &head, "dst", cfg, long(train.size()),
                       long(dev.size()), batch_fn(&tr_seq, &train),
                       batch_fn(&dv_seq, &dev), root);
}

template <class S>
FinetuneResult<S> finetune_rs(const EncoderParams<S>& enc0, const Vocab& v,
                              const std::vector<RsExample>& train,
                              const std::vector<RsExample>& dev,
                              const FinetuneConfig& cfg, std::uint64_t seed) {
  EncoderParams<S> enc = enc0;
  const Rng root = Rng::seeded(seed);

  auto encode_all = [&](const std::vector<RsExample>& ds) {
    std::vector<std::pair<TokenSequence, TokenSequence>> seqs;
    for (const auto& e : ds)
      seqs.push_back({encode(v, e.history, enc.cfg.max_len),
                      encode(v, {{Role::system, e.response}}, enc.cfg.max_len)});
    return seqs;
  };
  const auto tr_seq = encode_all(train);
  const auto dv_seq = encode_all(dev);

  std::vector<std::string> collisions;
  long collision_batches = 0;

  auto batch_fn = [&enc, &cfg, &collisions, &collision_batches](
                      const std::vector<std::pair<TokenSequence, TokenSequence>>* seqs,
                      const std::vector<RsExample>* ds, bool track) {
    return [&enc, &cfg, &collisions, &collision_batches, seqs, ds, track](
               Graph<S>& g, const std::vector<long>& idxs, bool tr, Rng* drop) {
      if (track) {
        std::vector<std::string> texts;
        for (long i : idxs) texts.push_back((*ds)[std::size_t(i)].response);
        std::sort(texts.begin(), texts.end());
        if (std::adjacent_find(texts.begin(), texts.end()) != texts.end()) {
          ++collision_batches;
          if (collisions.size() < 20)
            collisions.push_back(
                "false-negative collision: duplicate gold response in a batch");
        }
      }
      const bool etr = tr && !cfg.freeze_encoder;
      std::vector<typename Graph<S>::Ref> ctx, rsp;
      for (long i : idxs) {
        ctx.push_back(pooled_rep(g, enc, (*seqs)[std::size_t(i)].first, tr, etr, drop));
        rsp.push_back(pooled_rep(g, enc, (*seqs)[std::size_t(i)].second, tr, etr, drop));
      }
      // In-batch softmax over cosine similarities, gold on the diagonal.
      auto C = g.normalize_rows(g.concat_rows(ctx));
      auto R = g.normalize_rows(g.concat_rows(rsp));
      std::vector<int> diag(idxs.size());
      for (std::size_t r = 0; r < idxs.size(); ++r) diag[r] = int(r);
      return g.ce_rows(g.matmul_nt(C, R), diag);
    };
  };
  auto res = finetune_loop(enc, static_cast<LinearHead<S>*>(nullptr), "rs", cfg,
                           long(train.size()), long(dev.size()),
                           batch_fn(&tr_seq, &train, true),
                           batch_fn(&dv_seq, &dev, false), root);
  for (auto& c : collisions) res.log.push_back(std::move(c));
  if (collision_batches > long(collisions.size()))
    res.log.push_back(std::to_string(collision_batches) +
                      " training batches had gold response collisions in total");
  return res;
}

// ---------------------------------------------------------------------------
// Prediction

template <class S>
Mat<S> embed_history(EncoderParams<S>& enc, const Vocab& v,
                     const std::vector<Utterance>& history) {
  const auto e = encode_eval(enc, encode(v, history, enc.cfg.max_len));
  return e.pooled.back();
}

template <class S>
Mat<S> embed_text(EncoderParams<S>& enc, const Vocab& v, const std::string& text,
                  Role role) {
  return embed_history(enc, v, {{role, text}});
}

template <class S>
int predict_intent(EncoderParams<S>& enc, const LinearHead<S>& head, const Vocab& v,
                   const std::string& text) {
  const Mat<S> logits = head.apply(embed_text(enc, v, text, Role::user));
  int arg = 0;
  for (int c = 1; c < logits.cols(); ++c)
    if (double(logits(0, c)) > double(logits(0, arg))) arg = c;
  return arg;
}

// Threshold is inclusive: sigmoid exactly 0.5 (logit 0) predicts the act.
template <class S>
std::vector<int> acts_from_logits(const Mat<S>& logits) {
  std::vector<int> bits;
  for (int c = 0; c < logits.cols(); ++c)
    bits.push_back(double(logits(0, c)) >= 0.0 ? 1 : 0);
  return bits;
}

template <class S>
std::vector<int> predict_acts(EncoderParams<S>& enc, const LinearHead<S>& head,
                              const Vocab& v, const std::vector<Utterance>& history) {
  return acts_from_logits(head.apply(embed_history(enc, v, history)));
}

template <class S>
std::vector<int> dst_from_logits(const Mat<S>& logits, const Ontology& ont) {
  check(logits.cols() == ont.head_width(), "dst: logit width mismatch");
  std::vector<int> out;
  for (int p = 0; p < ont.pairs(); ++p) {
    const int off = ont.offset(p);
    int arg = 0;
    for (int c = 1; c < ont.value_count(p); ++c)
      if (double(logits(0, off + c)) > double(logits(0, off + arg))) arg = c;
    out.push_back(arg);
  }
  return out;
}

template <class S>
std::vector<int> predict_dst(EncoderParams<S>& enc, const LinearHead<S>& head,
                             const Vocab& v, const Ontology& ont,
                             const std::vector<Utterance>& history) {
  return dst_from_logits(head.apply(embed_history(enc, v, history)), ont);
}

inline std::map<std::string, std::string> dst_label_map(const Ontology& ont,
                                                        const std::vector<int>& labels) {
  check(int(labels.size()) == ont.pairs(), "dst_label_map: arity mismatch");
  std::map<std::string, std::string> m;
  for (int p = 0; p < ont.pairs(); ++p)
    m[ont.pair_names[std::size_t(p)]] =
        ont.values[std::size_t(p)][std::size_t(labels[std::size_t(p)])];
  return m;
}

// Candidate order by similarity, descending; equal scores keep pool order.
inline std::vector<int> rank_by_similarity(const std::vector<double>& sims) {
  std::vector<int> order(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sims[std::size_t(a)] > sims[std::size_t(b)]; });
  return order;
}

// The official metric expects a pool of exactly 100; other sizes are allowed
// for ad-hoc use and flagged in the log.
template <class S>
std::vector<int> rank_responses(EncoderParams<S>& enc, const Vocab& v,
                                const std::vector<Utterance>& history,
                                const std::vector<std::string>& pool,
                                std::vector<std::string>* log = nullptr) {
  check(pool.size() >= 2, "rank_responses: pool needs at least 2 candidates");
  if (pool.size() != 100 && log)
    log->push_back("response pool has " + std::to_string(pool.size()) +
                   " candidates; the official metric expects 100");
  const Mat<S> h = embed_history(enc, v, history);
  std::vector<double> sims;
  for (const auto& cand : pool)
    sims.push_back(cosine_similarity(h, embed_text(enc, v, cand, Role::system)));
  return rank_by_similarity(sims);
}

// ---------------------------------------------------------------------------
// Evaluation entry points shared by tests and the CLI

template <class S>
MetricReport evaluate_intent(EncoderParams<S>& enc, const LinearHead<S>& head,
                             const Vocab& v, const std::vector<IntentExample>& test,
                             int ood_class, const std::string& fingerprint = "") {
  std::vector<int> preds, golds;
  for (const auto& e : test) {
    preds.push_back(predict_intent(enc, head, v, e.text));
    golds.push_back(e.label);
  }
  return intent_metrics(preds, golds, ood_class, fingerprint);
}

template <class S>
MetricReport evaluate_act(EncoderParams<S>& enc, const LinearHead<S>& head,
                          const Vocab& v, const std::vector<ActExample>& test,
                          const std::vector<std::string>& act_names = {},
                          const std::string& fingerprint = "") {
  std::vector<std::vector<int>> preds, golds;
  for (const auto& e : test) {
    preds.push_back(predict_acts(enc, head, v, e.history));
    golds.push_back(e.acts);
  }
  return f1_metrics(preds, golds, act_names, fingerprint);
}

template <class S>
MetricReport evaluate_dst(EncoderParams<S>& enc, const LinearHead<S>& head,
                          const Vocab& v, const Ontology& ont,
                          const std::vector<DstExample>& test,
                          const std::string& fingerprint = "") {
  std::vector<std::map<std::string, std::string>> preds, golds;
  for (const auto& e : test) {
    preds.push_back(dst_label_map(ont, predict_dst(enc, head, v, ont, e.history)));
    golds.push_back(dst_label_map(ont, e.labels));
  }
  return dst_metrics(preds, golds, fingerprint);
}

// Builds each example's candidate pool from the other examples' responses,
// sampled without replacement, with the gold planted at a seeded position.
struct RsPool {
  std::vector<std::string> candidates;
  int gold = 0;
};

inline std::vector<RsPool> build_rs_pools(const std::vector<RsExample>& examples,
                                          int pool_size, const Rng& root) {
  check(pool_size >= 2, "build_rs_pools: pool_size must be >= 2");
  const long n = long(examples.size());
  check(n >= pool_size, "build_rs_pools: need at least pool_size examples");
  std::vector<RsPool> pools;
  const Rng stream = root.stream("pool");
  for (long i = 0; i < n; ++i) {
    Rng r = stream.fork(std::uint64_t(i));
    std::vector<long> others;
    others.reserve(std::size_t(n - 1));
    for (long j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    for (int k = 0; k < pool_size - 1; ++k)
      std::swap(others[std::size_t(k)],
                others[std::size_t(k) + r.index(others.size() - std::size_t(k))]);
    RsPool p;
    p.gold = int(r.below(std::uint64_t(pool_size)));
    for (int k = 0; k < pool_size - 1; ++k)
      p.candidates.push_back(examples[std::size_t(others[std::size_t(k)])].response);
    p.candidates.insert(p.candidates.begin() + p.gold, examples[std::size_t(i)].response);
    pools.push_back(std::move(p));
  }
  return pools;
}

template <class S>
MetricReport evaluate_rs(EncoderParams<S>& enc, const Vocab& v,
                         const std::vector<RsExample>& test, std::uint64_t pool_seed,
                         const std::string& fingerprint = "") {
  const auto pools = build_rs_pools(test, 100, Rng::seeded(pool_seed));
  std::vector<std::vector<int>> rankings;
  std::vector<int> golds;
  for (std::size_t i = 0; i < test.size(); ++i) {
    rankings.push_back(rank_responses(enc, v, test[i].history, pools[i].candidates));
    golds.push_back(pools[i].gold);
  }
  return rs_metrics(rankings, golds, fingerprint);
}

}  // namespace todlab
