#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "todlab/checkpoint.hpp"
#include "todlab/corpus.hpp"
#include "todlab/encode.hpp"
#include "todlab/encoder.hpp"
#include "todlab/losses.hpp"
#include "todlab/optim.hpp"
#include "todlab/vocab.hpp"

namespace todlab {

// What the teacher encodes: the student's context followed by the sampled
// future window, or the window alone.
enum class TeacherInput { context_plus_future, future_only };

inline TeacherInput parse_teacher_input(const std::string& s) {
  if (s == "context_plus_future") return TeacherInput::context_plus_future;
  if (s == "future_only") return TeacherInput::future_only;
  throw std::runtime_error("unknown teacher_input: " + s);
}

inline const char* teacher_input_name(TeacherInput t) {
  return t == TeacherInput::context_plus_future ? "context_plus_future" : "future_only";
}

struct PretrainConfig {
  int epochs = 30;
  int sync_interval = 10;  // assign student weights to the teacher every E epochs
  double mlm_ratio = 0.15;
  int distill_layers = 0;  // top-k layers in the distillation term; 0 = all
  FuturePolicy future_policy = FuturePolicy::all;
  TeacherInput teacher_input = TeacherInput::context_plus_future;
  int batch_size = 32;
  double learning_rate = 5e-5;
  int warmup_steps = 0;
  bool normalize_reps = false;
  int checkpoint_every = 1;  // epochs between checkpoints
  int min_freq = 1;          // vocabulary cutoff

  void validate() const {
    check(epochs >= 1, "pretrain: epochs must be >= 1");
    check(sync_interval >= 1 && sync_interval <= epochs,
          "pretrain: sync_interval must be in [1, epochs]");
    check(mlm_ratio >= 0.0 && mlm_ratio <= 1.0, "pretrain: mlm_ratio out of range");
    check(batch_size >= 1, "pretrain: batch_size must be >= 1");
    check(learning_rate > 0.0, "pretrain: learning_rate must be positive");
    check(warmup_steps >= 0, "pretrain: warmup_steps must be >= 0");
    check(checkpoint_every >= 1, "pretrain: checkpoint_every must be >= 1");
    check(min_freq >= 1, "pretrain: min_freq must be >= 1");
  }
};

struct LossRow {
  long step = 0;
  int epoch = 0;
  double l_dis = 0, l_mlm = 0, total = 0;
};

inline void write_loss_header(std::ostream& out) { out << "step,epoch,L_dis,L_mlm,L\n"; }

inline void write_loss_row(std::ostream& out, const LossRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%ld,%d,%.10g,%.10g,%.10g\n", r.step, r.epoch,
                r.l_dis, r.l_mlm, r.total);
  out << buf;
}

// Mean of the total loss over the rows of one epoch.
inline double epoch_mean_loss(const std::vector<LossRow>& rows, int epoch) {
  double sum = 0;
  long n = 0;
  for (const auto& r : rows)
    if (r.epoch == epoch) {
      sum += r.total;
      ++n;
    }
  check(n > 0, "epoch_mean_loss: no rows for epoch " + std::to_string(epoch));
  return sum / double(n);
}

// One training example: the student sees the masked context, the teacher
// sees unmasked text that extends into the dialogue's future.
struct PretrainExample {
  TokenSequence student;
  TokenSequence teacher;
  int masked = 0;
};

inline PretrainExample prepare_pretrain_example(const Dialogue& d, const Vocab& vocab,
                                                int max_len, double mlm_ratio,
                                                FuturePolicy policy, TeacherInput tinput,
                                                Rng split_rng, Rng future_rng,
                                                Rng mask_rng) {
  const int t = sample_split(d, split_rng);
  auto [context, future] = split_at_turn(d, t);
  auto window = sample_future_window(future, policy, future_rng);

  PretrainExample ex;
  ex.student = encode(vocab, context, max_len);
  ex.masked = apply_mlm_mask(ex.student, vocab, mlm_ratio, mask_rng);

  std::vector<Utterance> teacher_text;
  if (tinput == TeacherInput::context_plus_future) {
    teacher_text = context;
    teacher_text.insert(teacher_text.end(), window.begin(), window.end());
  } else {
    teacher_text = window;
  }
  // The future window is never truncated away; old context tokens go first.
  ex.teacher = encode(vocab, teacher_text, max_len, int(window.size()));
  return ex;
}

template <class S>
struct TrainState {
  EncoderParams<S> student;
  EncoderParams<S> teacher;
  long step = 0;              // completed optimizer steps
  int epoch = 0;              // completed epochs
  long skipped_examples = 0;  // examples with no masked position
  long skipped_batches = 0;   // batches where every example was skipped
  std::vector<LossRow> rows;
};

// Runs the self-distillation pre-training loop: for each epoch train the
// student against the frozen teacher with the summed distillation + MLM
// loss, then copy the student into the teacher every sync_interval epochs.
// The teacher is never touched by the optimizer.
template <class S>
class Pretrainer {
 public:
  using EpochHook = std::function<void(const TrainState<S>&)>;

  Pretrainer(std::vector<Dialogue> corpus, Vocab vocab, EncoderConfig ecfg,
             PretrainConfig pcfg, std::uint64_t seed, std::string out_dir = "")
      : vocab_(std::move(vocab)),
        ecfg_(ecfg),
        pcfg_(pcfg),
        out_dir_(std::move(out_dir)),
        root_(Rng::seeded(seed)),
        opt_(pcfg.learning_rate) {
    pcfg_.validate();
    ecfg_.vocab_size = vocab_.size();
    ecfg_.validate();
    for (auto& d : corpus)
      if (pair_count(d) >= 1) dialogues_.push_back(std::move(d));
    check(!dialogues_.empty(), "pretrain: corpus has no dialogue with a complete exchange");
    dropped_ = long(corpus.size()) - long(dialogues_.size());

    state_.student = EncoderParams<S>::init(ecfg_, root_.stream("init"));
    state_.teacher = EncoderParams<S>::init(ecfg_, root_.stream("init"));

    for (std::size_t i = 0; i < state_.student.w.size(); ++i)
      opt_.add(&state_.student.w[i], &state_.student.g[i]);

    const long n = long(dialogues_.size());
    steps_per_epoch_ = (n + pcfg_.batch_size - 1) / pcfg_.batch_size;
    total_steps_ = steps_per_epoch_ * pcfg_.epochs;
  }

  const TrainState<S>& state() const { return state_; }
  const Vocab& vocab() const { return vocab_; }
  const EncoderConfig& encoder_config() const { return ecfg_; }
  long dropped_dialogues() const { return dropped_; }
  long total_steps() const { return total_steps_; }

  void run(const EpochHook& hook = {}) {
    std::ofstream csv;
    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      vocab_.save(out_dir_ + "/vocab.json");
      csv.open(out_dir_ + "/loss.csv");
      check(csv.good(), "pretrain: cannot write " + out_dir_ + "/loss.csv");
      write_loss_header(csv);
    }
    for (int m = 1; m <= pcfg_.epochs; ++m) {
      run_epoch(m, csv.is_open() ? &csv : nullptr);
      state_.epoch = m;
      if (m % pcfg_.sync_interval == 0) state_.teacher.assign_from(state_.student);
      if (!out_dir_.empty() && (m % pcfg_.checkpoint_every == 0 || m == pcfg_.epochs))
        save_epoch_checkpoint(m);
      if (csv.is_open()) csv.flush();
      if (hook) hook(state_);
    }
  }

 private:
  void run_epoch(int m, std::ofstream* csv) {
    const long n = long(dialogues_.size());
    std::vector<long> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[std::size_t(i)] = i;
    Rng shuffle = root_.stream("shuffle").fork(std::uint64_t(m));
    for (long i = n - 1; i > 0; --i)
      std::swap(order[std::size_t(i)], order[std::size_t(shuffle.below(std::uint64_t(i + 1)))]);

    const Rng split = root_.stream("split");
    const Rng future = root_.stream("future");
    const Rng mask = root_.stream("mask");
    const Rng dropout = root_.stream("dropout");

    for (long b0 = 0; b0 < n; b0 += pcfg_.batch_size) {
      const long b1 = std::min(n, b0 + pcfg_.batch_size);
      std::vector<std::pair<long, PretrainExample>> batch;
      for (long i = b0; i < b1; ++i) {
        const long idx = order[std::size_t(i)];
        PretrainExample ex = prepare_pretrain_example(
            dialogues_[std::size_t(idx)], vocab_, ecfg_.max_len, pcfg_.mlm_ratio,
            pcfg_.future_policy, pcfg_.teacher_input,
            split.fork(std::uint64_t(m), std::uint64_t(idx)),
            future.fork(std::uint64_t(m), std::uint64_t(idx)),
            mask.fork(std::uint64_t(m), std::uint64_t(idx)));
        if (ex.masked == 0) {
          ++state_.skipped_examples;
          continue;
        }
        batch.emplace_back(idx, std::move(ex));
      }
      if (batch.empty()) {
        ++state_.skipped_batches;
        continue;
      }

      state_.student.zero_grad();
      double dis_sum = 0, mlm_sum = 0;
      const double seed = 1.0 / double(batch.size());
      for (auto& [idx, ex] : batch) {
        auto [dis, mlm] = example_losses(ex, dropout.fork(std::uint64_t(m), std::uint64_t(idx)), seed);
        dis_sum += dis;
        mlm_sum += mlm;
      }

      opt_.step(linear_lr_scale(state_.step, total_steps_, pcfg_.warmup_steps));
      ++state_.step;

      const double l_dis = dis_sum / double(batch.size());
      const double l_mlm = mlm_sum / double(batch.size());
      LossRow row{state_.step, m, l_dis, l_mlm, l_dis + l_mlm};
      state_.rows.push_back(row);
      if (csv) write_loss_row(*csv, row);
    }
  }

  // Builds the per-example loss graph, backpropagates it scaled by seed and
  // returns the two loss terms. The teacher runs on a non-recording graph in
  // eval mode: no dropout, no gradients.
  std::pair<double, double> example_losses(const PretrainExample& ex, Rng dropout_rng,
                                           double seed) {
    Encoded<S> t = encode_eval(state_.teacher, ex.teacher);

    Graph<S> g;
    ForwardOptions<S> opt;
    opt.train = true;
    opt.trainable = true;
    opt.want_logits = ex.masked > 0;
    opt.dropout_rng = &dropout_rng;
    auto nodes = encoder_forward(g, state_.student, ex.student, opt);

    std::vector<typename Graph<S>::Ref> dists;
    for (int l : top_k_layers(ecfg_.layers, pcfg_.distill_layers)) {
      auto hs = nodes.pooled[std::size_t(l)];
      Mat<S> ht = t.pooled[std::size_t(l)];
      if (pcfg_.normalize_reps) {
        hs = g.normalize_rows(hs);
        const double nrm = std::max(double(l2_norm(ht)), 1e-30);
        for (std::size_t i = 0; i < ht.size(); ++i)
          ht.data()[i] = S(double(ht.data()[i]) / nrm);
      }
      dists.push_back(g.l2_dist(hs, g.constant(std::move(ht))));
    }
    auto l_dis = g.sum_list(dists);

    typename Graph<S>::Ref loss = l_dis;
    double mlm_value = 0;
    if (ex.masked > 0) {
      auto l_mlm = g.ce_rows(
          nodes.logits,
          std::vector<int>(ex.student.mlm_labels.begin(),
                           ex.student.mlm_labels.begin() + ex.student.active_len),
          -1);
      mlm_value = double(g.v(l_mlm)(0, 0));
      loss = g.sum_list({l_dis, l_mlm});
    }
    g.backward(loss, S(seed));
    return {double(g.v(l_dis)(0, 0)), mlm_value};
  }

  void save_epoch_checkpoint(int m) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04d", m);
    const std::string base = out_dir_ + "/checkpoints/" + name;
    save_encoder(base + "/student", state_.student, m);
    save_encoder(base + "/teacher", state_.teacher, m);
    vocab_.save(base + "/student/vocab.json");
    vocab_.save(base + "/teacher/vocab.json");
  }

  std::vector<Dialogue> dialogues_;
  Vocab vocab_;
  EncoderConfig ecfg_;
  PretrainConfig pcfg_;
  std::string out_dir_;
  Rng root_;
  Adam<S> opt_;
  TrainState<S> state_;
  long steps_per_epoch_ = 0;
  long total_steps_ = 0;
  long dropped_ = 0;
};

}  // namespace todlab
