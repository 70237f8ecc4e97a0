#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "todlab/finetune.hpp"

// Future-distance probes: does the encoder place a dialogue history closer to
// its true continuation than to random responses? Distances are MSE over the
// eval-mode pooled vectors (mean squared coordinate difference), not the
// unsquared norm the distillation loss uses.

namespace todlab {

struct ProbeResult {
  std::string example_id;
  double golden_distance = 0.0;
  double mean_random_distance = 0.0;
  bool golden_smaller = false;  // strict <; a tie counts against the gold
};

inline std::vector<Utterance> with_response(std::vector<Utterance> history,
                                            const std::string& response) {
  history.push_back({Role::system, response});
  return history;
}

template <class S>
ProbeResult future_distance_probe(EncoderParams<S>& enc, const Vocab& v,
                                  const std::vector<Utterance>& history,
                                  const std::string& gold,
                                  const std::vector<std::string>& distractors,
                                  std::string example_id = "") {
  check(!distractors.empty(), "future_distance_probe: empty distractor pool");
  ProbeResult r;
  r.example_id = std::move(example_id);
  const Mat<S> h = embed_history(enc, v, history);
  r.golden_distance = mse_distance(h, embed_history(enc, v, with_response(history, gold)));
  double sum = 0;
  for (const auto& d : distractors)
    sum += mse_distance(h, embed_history(enc, v, with_response(history, d)));
  r.mean_random_distance = sum / double(distractors.size());
  r.golden_smaller = r.golden_distance < r.mean_random_distance;
  return r;
}

// Probes every example against distractors drawn corpus-wide without
// replacement, gold excluded. Sampling depends only on probe_seed and the
// example index, never on the encoder.
template <class S>
std::vector<ProbeResult> run_future_probe(EncoderParams<S>& enc, const Vocab& v,
                                          const std::vector<RsExample>& examples,
                                          std::uint64_t probe_seed,
                                          int distractors = 99) {
  check(!examples.empty(), "probe: no examples");
  check(distractors >= 1, "probe: need at least one distractor");
  const long n = long(examples.size());
  check(n > long(distractors),
        "probe: need more than " + std::to_string(distractors) + " examples");
  const Rng stream = Rng::seeded(probe_seed).stream("probe");
  std::vector<ProbeResult> out;
  for (long i = 0; i < n; ++i) {
    Rng r = stream.fork(std::uint64_t(i));
    std::vector<long> others;
    others.reserve(std::size_t(n - 1));
    for (long j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::vector<std::string> pool;
    for (int k = 0; k < distractors; ++k) {
      std::swap(others[std::size_t(k)],
                others[std::size_t(k) + r.index(others.size() - std::size_t(k))]);
      pool.push_back(examples[std::size_t(others[std::size_t(k)])].response);
    }
    out.push_back(future_distance_probe(enc, v, examples[std::size_t(i)].history,
                                        examples[std::size_t(i)].response, pool,
                                        std::to_string(i)));
  }
  return out;
}

inline double golden_smaller_ratio(const std::vector<ProbeResult>& results) {
  check(!results.empty(), "golden_smaller_ratio: empty result list");
  std::size_t hits = 0;
  for (const auto& r : results)
    if (r.golden_smaller) ++hits;
  return double(hits) / double(results.size());
}

inline void write_probe_csv(const std::vector<ProbeResult>& results,
                            const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "probe: cannot write " + path);
  f << "example_id,golden_distance,mean_random_distance\n";
  char buf[96];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), ",%.10g,%.10g\n", r.golden_distance,
                  r.mean_random_distance);
    f << r.example_id << buf;
  }
  f.flush();
  check(f.good(), "probe: write failed for " + path);
}

// One row per utterance: id, label, then the d pooled coordinates. The id is
// the fnv1a hash of the text, so identical utterances export identical rows;
// row order follows input order. Dimension reduction happens elsewhere.
template <class S>
void export_embeddings(EncoderParams<S>& enc, const Vocab& v,
                       const std::vector<std::string>& utterances,
                       const std::vector<std::string>& labels,
                       const std::string& path) {
  check(!utterances.empty(), "export_embeddings: no utterances");
  check(utterances.size() == labels.size(),
        "export_embeddings: labels do not line up with utterances");
  for (const auto& l : labels)
    check(l.find(',') == std::string::npos && l.find('\n') == std::string::npos,
          "export_embeddings: label contains a comma or newline: " + l);
  std::ofstream f(path);
  check(f.good(), "export_embeddings: cannot write " + path);
  f << "id,label";
  for (int j = 0; j < enc.cfg.hidden_dim; ++j) f << ",e" << j;
  f << "\n";
  char buf[64];
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const Mat<S> e = embed_text(enc, v, utterances[i], Role::user);
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(utterances[i])));
    f << buf << ',' << labels[i];
    for (int j = 0; j < e.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), ",%.9g", double(e(0, j)));
      f << buf;
    }
    f << "\n";
  }
  f.flush();
  check(f.good(), "export_embeddings: write failed for " + path);
}

}  // namespace todlab
