#pragma once

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

#include "todlab/common.hpp"

namespace todlab {

// Evaluation results as a named bundle of rates in [0,1]. A metric that has
// an empty denominator (for example OOD recall with no OOD gold) is absent
// from the map and explained in notes instead of being reported as 0.
struct MetricReport {
  std::string task;
  std::map<std::string, double> metrics;
  long n = 0;
  std::string fingerprint;
  std::vector<std::string> notes;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["n"] = n;
    j["fingerprint"] = fingerprint;
    j["metrics"] = metrics;
    j["notes"] = notes;
    return j;
  }

  double at(const std::string& name) const {
    auto it = metrics.find(name);
    check(it != metrics.end(), "MetricReport: no metric '" + name + "'");
    return it->second;
  }
};

// Intent classification. ood_class < 0 means the label set has no OOD
// class; otherwise OOD is one ordinary class index, usually the last.
inline MetricReport intent_metrics(const std::vector<int>& preds,
                                   const std::vector<int>& golds, int ood_class,
                                   const std::string& fingerprint = "") {
  check(preds.size() == golds.size(), "intent_metrics: misaligned lists");
  check(!preds.empty(), "intent_metrics: empty input");
  long correct = 0, in_n = 0, in_correct = 0, out_n = 0, out_recalled = 0, bin_correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool gold_out = golds[i] == ood_class;
    const bool pred_out = preds[i] == ood_class;
    if (preds[i] == golds[i]) ++correct;
    if (gold_out) {
      ++out_n;
      if (pred_out) ++out_recalled;
    } else {
      ++in_n;
      if (preds[i] == golds[i]) ++in_correct;
    }
    if (gold_out == pred_out) ++bin_correct;
  }
  MetricReport r;
  r.task = "intent";
  r.n = long(preds.size());
  r.fingerprint = fingerprint;
  r.metrics["acc_all"] = double(correct) / double(preds.size());
  if (in_n > 0)
    r.metrics["acc_in"] = double(in_correct) / double(in_n);
  else
    r.notes.push_back("acc_in absent: no in-domain gold labels");
  if (ood_class >= 0) {
    if (out_n > 0)
      r.metrics["recall_out"] = double(out_recalled) / double(out_n);
    else
      r.notes.push_back("recall_out absent: no OOD gold labels");
    r.metrics["acc_out"] = double(bin_correct) / double(preds.size());
    r.notes.push_back("acc_out is binary in-vs-out decision accuracy");
  }
  return r;
}

// Dialogue state tracking. Every example is a full (domain.slot -> value)
// map over the same ontology; a turn counts for joint accuracy only when
// every pair matches, while slot accuracy pools the individual pairs.
inline MetricReport dst_metrics(const std::vector<std::map<std::string, std::string>>& preds,
                                const std::vector<std::map<std::string, std::string>>& golds,
                                const std::string& fingerprint = "") {
  check(preds.size() == golds.size(), "dst_metrics: misaligned lists");
  check(!preds.empty(), "dst_metrics: empty input");
  long joint = 0, pairs = 0, pair_correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& g = golds[i];
    check(p.size() == g.size(), "dst_metrics: ontology mismatch");
    bool all = true;
    for (const auto& [key, gv] : g) {
      auto it = p.find(key);
      check(it != p.end(), "dst_metrics: prediction missing pair " + key);
      ++pairs;
      if (it->second == gv)
        ++pair_correct;
      else
        all = false;
    }
    if (all) ++joint;
  }
  MetricReport r;
  r.task = "dst";
  r.n = long(preds.size());
  r.fingerprint = fingerprint;
  r.metrics["joint_acc"] = double(joint) / double(preds.size());
  r.metrics["slot_acc"] = double(pair_correct) / double(pairs);
  return r;
}

// Multi-label act prediction over n x A binary matrices. Macro-F1 averages
// across all A acts; an act with no gold and no predicted positives scores
// 0 by convention and is named in the notes.
inline MetricReport f1_metrics(const std::vector<std::vector<int>>& preds,
                               const std::vector<std::vector<int>>& golds,
                               const std::vector<std::string>& act_names = {},
                               const std::string& fingerprint = "") {
  check(preds.size() == golds.size(), "f1_metrics: misaligned lists");
  check(!preds.empty(), "f1_metrics: empty input");
  const std::size_t acts = golds.front().size();
  check(acts > 0, "f1_metrics: no act types");
  check(act_names.empty() || act_names.size() == acts,
        "f1_metrics: act name count mismatch");
  std::vector<long> tp(acts, 0), fp(acts, 0), fn(acts, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check(preds[i].size() == acts && golds[i].size() == acts,
          "f1_metrics: ragged matrix");
    for (std::size_t a = 0; a < acts; ++a) {
      const int p = preds[i][a], g = golds[i][a];
      check((p == 0 || p == 1) && (g == 0 || g == 1), "f1_metrics: non-binary entry");
      if (p == 1 && g == 1) ++tp[a];
      if (p == 1 && g == 0) ++fp[a];
      if (p == 0 && g == 1) ++fn[a];
    }
  }
  MetricReport r;
  r.task = "act";
  r.n = long(preds.size());
  r.fingerprint = fingerprint;
  long TP = 0, FP = 0, FN = 0;
  double macro = 0;
  for (std::size_t a = 0; a < acts; ++a) {
    TP += tp[a];
    FP += fp[a];
    FN += fn[a];
    const long denom = 2 * tp[a] + fp[a] + fn[a];
    if (denom == 0) {
      r.notes.push_back("zero support act " +
                        (act_names.empty() ? std::to_string(a) : act_names[a]) +
                        ": F1 counted as 0");
      continue;  // contributes 0 to the macro sum
    }
    macro += 2.0 * double(tp[a]) / double(denom);
  }
  const long micro_denom = 2 * TP + FP + FN;
  r.metrics["micro_f1"] = micro_denom == 0 ? 0.0 : 2.0 * double(TP) / double(micro_denom);
  r.metrics["macro_f1"] = macro / double(acts);
  return r;
}

// Fraction of examples whose gold candidate sits in the top k of its
// ranking. Rankings must be permutations of [0, pool).
inline double k_of_pool_accuracy(const std::vector<std::vector<int>>& rankings,
                                 const std::vector<int>& golds, int k, int pool) {
  check(rankings.size() == golds.size(), "k_of_pool: misaligned lists");
  check(!rankings.empty(), "k_of_pool: empty input");
  check(k >= 1 && k <= pool, "k_of_pool: k out of range");
  long hits = 0;
  std::vector<char> seen(static_cast<std::size_t>(pool));
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& rank = rankings[i];
    check(int(rank.size()) == pool, "k_of_pool: ranking size != pool");
    std::fill(seen.begin(), seen.end(), 0);
    for (int idx : rank) {
      check(idx >= 0 && idx < pool && !seen[std::size_t(idx)],
            "k_of_pool: ranking is not a permutation");
      seen[std::size_t(idx)] = 1;
    }
    const int gold = golds[i];
    check(gold >= 0 && gold < pool, "k_of_pool: gold index out of range");
    for (int j = 0; j < k; ++j)
      if (rank[std::size_t(j)] == gold) {
        ++hits;
        break;
      }
  }
  return double(hits) / double(rankings.size());
}

// The official response selection report over 100-candidate pools.
inline MetricReport rs_metrics(const std::vector<std::vector<int>>& rankings,
                               const std::vector<int>& golds,
                               const std::string& fingerprint = "") {
  MetricReport r;
  r.task = "rs";
  r.n = long(rankings.size());
  r.fingerprint = fingerprint;
  r.metrics["1_to_100"] = k_of_pool_accuracy(rankings, golds, 1, 100);
  r.metrics["3_to_100"] = k_of_pool_accuracy(rankings, golds, 3, 100);
  check(r.metrics["1_to_100"] <= r.metrics["3_to_100"] + 1e-12,
        "rs_metrics: top-1 rate exceeded top-3 rate");
  return r;
}

}  // namespace todlab
