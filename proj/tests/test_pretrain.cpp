#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "todlab/pretrain.hpp"

using namespace todlab;
namespace fs = std::filesystem;

namespace {

Dialogue dlg(const std::string& id, std::initializer_list<const char*> lines) {
  Dialogue d;
  d.id = id;
  bool user = true;
  for (const char* s : lines) {
    d.turns.push_back({user ? Role::user : Role::system, s});
    user = !user;
  }
  return d;
}

std::vector<Dialogue> tiny_corpus() {
  return {
      dlg("a", {"book a table for two", "what area do you want", "the north part please",
                "done the table is booked"}),
      dlg("b", {"find a cheap hotel", "the alpha lodge is cheap", "book it for monday",
                "your room is reserved"}),
      dlg("c", {"i need a taxi to town", "when do you want to leave", "after five pm",
                "a grey car will come"}),
      dlg("d", {"is there an italian place", "yes the roma house", "book a table there",
                "all set for tonight"}),
      dlg("e", {"show me museums", "the city museum is free", "thanks that works",
                "enjoy your visit"}),
      dlg("f", {"i want thai food", "the lemon grass is good", "reserve for four people",
                "the booking went through"}),
  };
}

Vocab tiny_vocab() { return Vocab::build(tiny_corpus(), 1); }

EncoderConfig tiny_encoder(int vocab_size) {
  EncoderConfig e;
  e.layers = 2;
  e.hidden_dim = 16;
  e.heads = 2;
  e.ffn_dim = 32;
  e.max_len = 48;
  e.dropout = 0.1;
  e.vocab_size = vocab_size;
  return e;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("prepare_pretrain_example builds the two views", "[pretrain]") {
  Vocab v = tiny_vocab();
  Dialogue d = dlg("x", {"book a table", "what area", "the north", "done"});
  Rng root = Rng::seeded(7);

  SECTION("student sees masked context, teacher extends into the future") {
    auto ex = prepare_pretrain_example(d, v, 48, 1.0, FuturePolicy::fix,
                                       TeacherInput::context_plus_future,
                                       root.stream("s"), root.stream("f"), root.stream("m"));
    // With ratio 1 every content token in the student view is replaced or
    // relabelled, and the label list records the originals.
    REQUIRE(ex.masked == count_masked(ex.student));
    REQUIRE(ex.masked > 0);
    // Teacher view is unmasked.
    REQUIRE(count_masked(ex.teacher) == 0);
    // Teacher sequence is at least as long as the student's unpadded text:
    // it contains the same context plus a non-empty future window.
    REQUIRE(ex.teacher.active_len > 0);
    std::string st = decode(v, ex.teacher);
    // Fix policy keeps the whole future, so the last turn's words are there.
    REQUIRE(st.find("done") != std::string::npos);
  }

  SECTION("future_only drops the context from the teacher view") {
    // Split of this 2-pair dialogue is always t in {1, 2}; force t = 1 by
    // using a single-pair dialogue so the future is exactly the last reply.
    Dialogue one = dlg("y", {"book a table", "what area"});
    auto ex = prepare_pretrain_example(one, v, 48, 0.0, FuturePolicy::fix,
                                       TeacherInput::future_only, root.stream("s"),
                                       root.stream("f"), root.stream("m"));
    REQUIRE(decode(v, ex.teacher) == "what area");
    REQUIRE(decode(v, ex.student) == "book a table");
  }

  SECTION("identical rng inputs reproduce the example") {
    auto a = prepare_pretrain_example(d, v, 48, 0.3, FuturePolicy::all,
                                      TeacherInput::context_plus_future,
                                      root.stream("s"), root.stream("f"), root.stream("m"));
    auto b = prepare_pretrain_example(d, v, 48, 0.3, FuturePolicy::all,
                                      TeacherInput::context_plus_future,
                                      root.stream("s"), root.stream("f"), root.stream("m"));
    REQUIRE(a.student.ids == b.student.ids);
    REQUIRE(a.student.mlm_labels == b.student.mlm_labels);
    REQUIRE(a.teacher.ids == b.teacher.ids);
  }
}

TEST_CASE("teacher is frozen between syncs and copied on sync", "[pretrain]") {
  Vocab v = tiny_vocab();
  PretrainConfig p;
  p.epochs = 5;
  p.sync_interval = 2;
  p.mlm_ratio = 1.0;
  p.batch_size = 3;
  p.learning_rate = 1e-3;

  Pretrainer<float> tr(tiny_corpus(), v, tiny_encoder(v.size()), p, 11);
  const std::uint64_t init_hash = tr.state().teacher.content_hash();
  REQUIRE(tr.state().student.content_hash() == init_hash);

  struct Snap {
    int epoch;
    std::uint64_t student, teacher;
    bool teacher_grads_zero;
  };
  std::vector<Snap> snaps;
  tr.run([&](const TrainState<float>& st) {
    snaps.push_back({st.epoch, st.student.content_hash(), st.teacher.content_hash(),
                     st.teacher.grads_all_zero()});
  });

  REQUIRE(snaps.size() == 5);
  for (const auto& s : snaps) {
    REQUIRE(s.teacher_grads_zero);
    // The hook runs after the sync: on sync epochs the two match, in
    // between training has moved the student away from the frozen teacher.
    if (s.epoch % 2 == 0)
      REQUIRE(s.student == s.teacher);
    else
      REQUIRE(s.student != s.teacher);
  }
  // No sync after epoch 1: the teacher still holds the initial weights.
  REQUIRE(snaps[0].teacher == init_hash);
  // Sync after epochs 2 and 4 copies the student of that epoch.
  Pretrainer<float> probe(tiny_corpus(), v, tiny_encoder(v.size()), p, 11);
  std::vector<std::uint64_t> student_at;
  probe.run([&](const TrainState<float>& st) {
    student_at.push_back(st.student.content_hash());
  });
  REQUIRE(snaps[1].teacher == student_at[1]);
  REQUIRE(snaps[2].teacher == student_at[1]);  // held until the next sync
  REQUIRE(snaps[3].teacher == student_at[3]);
  REQUIRE(snaps[4].teacher == student_at[3]);
}

TEST_CASE("loss rows are consistent and finite", "[pretrain]") {
  Vocab v = tiny_vocab();
  PretrainConfig p;
  p.epochs = 3;
  p.sync_interval = 3;  // equal to epochs: exactly one sync, at the end
  p.mlm_ratio = 1.0;    // every example has masked positions, none skipped
  p.batch_size = 4;

  Pretrainer<float> tr(tiny_corpus(), v, tiny_encoder(v.size()), p, 3);
  tr.run();
  const auto& st = tr.state();

  // 6 dialogues, batch 4: 2 steps per epoch.
  REQUIRE(st.step == 6);
  REQUIRE(st.rows.size() == 6);
  REQUIRE(st.skipped_examples == 0);
  REQUIRE(st.skipped_batches == 0);
  // The single sync fired at the final epoch.
  REQUIRE(st.teacher.content_hash() == st.student.content_hash());

  long step = 0;
  for (const auto& r : st.rows) {
    REQUIRE(r.step == ++step);
    REQUIRE(r.epoch == (step + 1) / 2);
    REQUIRE(std::isfinite(r.total));
    REQUIRE(r.l_dis >= 0.0);
    REQUIRE(r.l_mlm > 0.0);
    REQUIRE(r.total == r.l_dis + r.l_mlm);  // exact: computed as this sum
  }
  REQUIRE(epoch_mean_loss(st.rows, 2) ==
          Catch::Approx((st.rows[2].total + st.rows[3].total) / 2.0));
  REQUIRE_THROWS(epoch_mean_loss(st.rows, 9));
}

TEST_CASE("zero mask ratio skips every example", "[pretrain]") {
  Vocab v = tiny_vocab();
  PretrainConfig p;
  p.epochs = 2;
  p.sync_interval = 1;
  p.mlm_ratio = 0.0;
  p.batch_size = 4;

  Pretrainer<float> tr(tiny_corpus(), v, tiny_encoder(v.size()), p, 3);
  const std::uint64_t before = tr.state().student.content_hash();
  tr.run();
  REQUIRE(tr.state().step == 0);
  REQUIRE(tr.state().rows.empty());
  REQUIRE(tr.state().skipped_examples == 12);  // 6 dialogues x 2 epochs
  REQUIRE(tr.state().skipped_batches == 4);    // 2 batches x 2 epochs
  // No optimizer step ran, so the student is untouched and still synced.
  REQUIRE(tr.state().student.content_hash() == before);
  REQUIRE(tr.state().teacher.content_hash() == before);
}

TEST_CASE("dialogues without a complete exchange are dropped", "[pretrain]") {
  Vocab v = tiny_vocab();
  auto corpus = tiny_corpus();
  corpus.push_back(dlg("stub", {"hello there"}));  // user turn only
  PretrainConfig p;
  p.epochs = 1;
  p.sync_interval = 1;
  p.mlm_ratio = 1.0;
  Pretrainer<float> tr(corpus, v, tiny_encoder(v.size()), p, 1);
  REQUIRE(tr.dropped_dialogues() == 1);

  std::vector<Dialogue> empty_corpus = {dlg("stub", {"hello there"})};
  REQUIRE_THROWS_WITH(Pretrainer<float>(empty_corpus, v, tiny_encoder(v.size()), p, 1),
                      Catch::Matchers::ContainsSubstring("complete exchange"));
}

TEST_CASE("pretraining writes checkpoints, vocab and loss csv", "[pretrain]") {
  TempDir tmp("todlab_pretrain_out");
  Vocab v = tiny_vocab();
  PretrainConfig p;
  p.epochs = 4;
  p.sync_interval = 2;
  p.mlm_ratio = 1.0;
  p.batch_size = 3;
  p.checkpoint_every = 2;

  Pretrainer<float> tr(tiny_corpus(), v, tiny_encoder(v.size()), p, 5,
                       (tmp.path / "run").string());
  tr.run();

  const fs::path run = tmp.path / "run";
  REQUIRE(fs::exists(run / "vocab.json"));
  REQUIRE(fs::exists(run / "loss.csv"));
  REQUIRE(fs::exists(run / "checkpoints/epoch_0002/student/params.bin"));
  REQUIRE(fs::exists(run / "checkpoints/epoch_0002/teacher/manifest.json"));
  REQUIRE(fs::exists(run / "checkpoints/epoch_0002/student/vocab.json"));
  REQUIRE(fs::exists(run / "checkpoints/epoch_0004/teacher/params.bin"));
  REQUIRE(!fs::exists(run / "checkpoints/epoch_0001"));
  REQUIRE(!fs::exists(run / "checkpoints/epoch_0003"));

  SECTION("csv matches the recorded rows") {
    std::istringstream csv(slurp((run / "loss.csv").string()));
    std::string line;
    REQUIRE(std::getline(csv, line));
    REQUIRE(line == "step,epoch,L_dis,L_mlm,L");
    std::size_t n = 0;
    while (std::getline(csv, line)) {
      std::ostringstream want;
      write_loss_row(want, tr.state().rows.at(n));
      REQUIRE(line + "\n" == want.str());
      ++n;
    }
    REQUIRE(n == tr.state().rows.size());
  }

  SECTION("epoch 2 checkpoint holds the synced pair") {
    int epoch = -1;
    auto student = load_encoder<float>((run / "checkpoints/epoch_0002/student").string(), &epoch);
    REQUIRE(epoch == 2);
    auto teacher = load_encoder<float>((run / "checkpoints/epoch_0002/teacher").string());
    // The sync at epoch 2 ran before the checkpoint was written.
    REQUIRE(student.content_hash() == teacher.content_hash());
    Vocab v2 = Vocab::load((run / "checkpoints/epoch_0002/student/vocab.json").string());
    REQUIRE(v2.size() == v.size());
  }
}

TEST_CASE("same seed gives byte-identical outputs, different seed does not", "[pretrain]") {
  TempDir tmp("todlab_pretrain_det");
  Vocab v = tiny_vocab();
  PretrainConfig p;
  p.epochs = 2;
  p.sync_interval = 1;
  p.mlm_ratio = 0.5;
  p.batch_size = 3;

  auto run_once = [&](std::uint64_t seed, const std::string& name) {
    Pretrainer<float> tr(tiny_corpus(), v, tiny_encoder(v.size()), p, seed,
                         (tmp.path / name).string());
    tr.run();
  };
  run_once(21, "a");
  run_once(21, "b");
  run_once(22, "c");

  auto file_hash = [&](const std::string& rel) {
    const std::string s = slurp((tmp.path / rel).string());
    return fnv1a64(s.data(), s.size());
  };
  const std::string tail = "/checkpoints/epoch_0002/student/params.bin";
  REQUIRE(slurp((tmp.path / "a/loss.csv").string()) ==
          slurp((tmp.path / "b/loss.csv").string()));
  REQUIRE(file_hash("a" + tail) == file_hash("b" + tail));
  REQUIRE(slurp((tmp.path / "a/loss.csv").string()) !=
          slurp((tmp.path / "c/loss.csv").string()));
  REQUIRE(file_hash("a" + tail) != file_hash("c" + tail));
}

TEST_CASE("training reduces the loss on a tiny corpus", "[pretrain][slow]") {
  // Single-pair dialogues pin the split point, so the per-epoch loss is not
  // dominated by resampled context lengths and the trend is visible.
  std::vector<Dialogue> corpus = {
      dlg("a", {"book a table for two", "what area do you want"}),
      dlg("b", {"find a cheap hotel", "the alpha lodge is cheap"}),
      dlg("c", {"i need a taxi to town", "when do you want to leave"}),
      dlg("d", {"is there an italian place", "yes the roma house"}),
      dlg("e", {"show me museums", "the city museum is free"}),
      dlg("f", {"i want thai food", "the lemon grass is good"}),
  };
  Vocab v = Vocab::build(corpus, 1);
  PretrainConfig p;
  p.epochs = 30;
  p.sync_interval = 30;  // single sync after the last step: stationary target
  p.mlm_ratio = 1.0;       // deterministic example count; heavy masking
  p.batch_size = 6;
  p.learning_rate = 3e-3;

  EncoderConfig e = tiny_encoder(v.size());
  e.dropout = 0.0;  // noise-free objective for a clean trend
  Pretrainer<float> tr(corpus, v, e, p, 17);
  tr.run();
  const auto& rows = tr.state().rows;
  REQUIRE(epoch_mean_loss(rows, 30) < 0.9 * epoch_mean_loss(rows, 1));
  for (const auto& r : rows) REQUIRE(std::isfinite(r.total));
}

TEST_CASE("config validation rejects bad values", "[pretrain]") {
  PretrainConfig p;
  p.epochs = 0;
  REQUIRE_THROWS(p.validate());
  p = {};
  p.sync_interval = 0;
  REQUIRE_THROWS(p.validate());
  p = {};
  p.sync_interval = p.epochs + 1;  // teacher would never sync
  REQUIRE_THROWS(p.validate());
  p = {};
  p.mlm_ratio = 1.5;
  REQUIRE_THROWS(p.validate());
  p = {};
  p.batch_size = 0;
  REQUIRE_THROWS(p.validate());
  p = {};
  p.learning_rate = 0;
  REQUIRE_THROWS(p.validate());
  p = {};
  REQUIRE_NOTHROW(p.validate());

  REQUIRE(parse_teacher_input("future_only") == TeacherInput::future_only);
  REQUIRE(std::string(teacher_input_name(TeacherInput::context_plus_future)) ==
          "context_plus_future");
  REQUIRE_THROWS(parse_teacher_input("both"));
}
