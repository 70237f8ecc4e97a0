#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "todlab/finetune.hpp"
#include "todlab/synth.hpp"

using namespace todlab;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_encoder(int vocab_size, Pooling pooling = Pooling::cls) {
  EncoderConfig e;
  e.layers = 1;
  e.hidden_dim = 16;
  e.heads = 2;
  e.ffn_dim = 32;
  e.max_len = 64;
  e.dropout = 0.1;
  e.vocab_size = vocab_size;
  e.pooling = pooling;
  return e;
}

// One synthetic dataset shared by every case in this file; built lazily and
// kept for the whole test run.
struct SharedData {
  fs::path dir;
  Vocab vocab;
  Ontology ontology;
  std::vector<std::string> act_names, intent_labels;
};

const SharedData& data() {
  static SharedData d = [] {
    SharedData x;
    x.dir = fs::temp_directory_path() / "todlab_finetune_data";
    fs::remove_all(x.dir);
    SynthSpec sp;
    sp.dialogues = 140;
    sp.min_pairs = 2;
    sp.max_pairs = 4;
    sp.train_frac = 0.7;
    sp.dev_frac = 0.15;
    sp.intent_train_per_class = 3;
    sp.intent_dev_per_class = 2;
    sp.act_train = 40, sp.act_dev = 10, sp.act_test = 20;
    sp.dst_train = 40, sp.dst_dev = 10, sp.dst_test = 20;
    sp.rs_train = 60, sp.rs_dev = 50, sp.rs_test = 30;
    write_synth_dataset(sp, x.dir.string(), 7);
    x.vocab = Vocab::build(load_dialogues((x.dir / "corpus_train.jsonl").string()), 1);
    x.ontology = Ontology::load((x.dir / "ontology.json").string());
    {
      std::ifstream in(x.dir / "acts.json");
      nlohmann::json j;
      in >> j;
      x.act_names = j.get<std::vector<std::string>>();
    }
    {
      std::ifstream in(x.dir / "intent_labels.json");
      nlohmann::json j;
      in >> j;
      x.intent_labels = j.get<std::vector<std::string>>();
    }
    return x;
  }();
  return d;
}

std::string path_of(const char* name) { return (data().dir / name).string(); }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

}  // namespace

TEST_CASE("ontology indexing and label maps", "[finetune]") {
  const nlohmann::json j = {{"b.slot", {"none", "z"}},
                            {"a.slot", {"none", "x", "y"}}};
  const Ontology o = Ontology::from_json(j);
  REQUIRE(o.pairs() == 2);
  REQUIRE(o.pair_names.front() == "a.slot");  // sorted by name
  REQUIRE(o.pair_index("b.slot") == 1);
  REQUIRE(o.value_index(0, "y") == 2);
  REQUIRE(o.value_count(0) == 3);
  REQUIRE(o.head_width() == 5);
  REQUIRE(o.offset(1) == 3);
  REQUIRE_THROWS_AS(o.pair_index("c.slot"), std::runtime_error);
  REQUIRE_THROWS_AS(o.value_index(1, "x"), std::runtime_error);

  const auto m = dst_label_map(o, {2, 0});
  REQUIRE(m.at("a.slot") == "y");
  REQUIRE(m.at("b.slot") == "none");

  REQUIRE(o.to_json() == j);
  REQUIRE_THROWS_WITH(Ontology::from_json({{"a.slot", {"x", "none"}}}),
                      Catch::Matchers::ContainsSubstring("none"));

  const Ontology full = data().ontology;
  REQUIRE(full.pairs() == 18);
  REQUIRE(std::is_sorted(full.pair_names.begin(), full.pair_names.end()));
}

TEST_CASE("task files load and validate", "[finetune]") {
  const int classes = int(data().intent_labels.size());
  const int acts = int(data().act_names.size());

  const auto intent = load_intent_examples(path_of("intent_train.jsonl"), classes);
  REQUIRE(intent.size() == std::size_t(3 * classes));
  for (const auto& e : intent) REQUIRE((e.label >= 0 && e.label < classes));

  const auto act = load_act_examples(path_of("act_train.jsonl"), acts);
  REQUIRE(act.size() == 40);
  for (const auto& e : act) {
    REQUIRE(int(e.acts.size()) == acts);
    REQUIRE(e.history.back().role == Role::user);
  }

  const auto dst = load_dst_examples(path_of("dst_train.jsonl"), data().ontology);
  REQUIRE(dst.size() == 40);
  for (const auto& e : dst) REQUIRE(int(e.labels.size()) == 18);

  const auto rs = load_rs_examples(path_of("rs_train.jsonl"));
  REQUIRE(rs.size() == 60);
  for (const auto& e : rs) REQUIRE(!e.response.empty());

  SECTION("malformed files are rejected with context") {
    TempDir tmp("todlab_finetune_bad");
    const auto p = [&](const char* n) { return (tmp.path / n).string(); };

    write_file(tmp.path / "bad1.jsonl", "{\"text\": \"hi\", \"label\": 99}\n");
    REQUIRE_THROWS_WITH(load_intent_examples(p("bad1.jsonl"), 7),
                        Catch::Matchers::ContainsSubstring("out of range"));

    write_file(tmp.path / "bad2.jsonl", "{\"text\": \"hi\", \"label\": 0}\nnot json\n");
    REQUIRE_THROWS_WITH(load_intent_examples(p("bad2.jsonl"), 7),
                        Catch::Matchers::ContainsSubstring("bad2.jsonl:2"));

    write_file(tmp.path / "bad3.jsonl", "");
    REQUIRE_THROWS_WITH(load_intent_examples(p("bad3.jsonl"), 7),
                        Catch::Matchers::ContainsSubstring("no examples"));

    const std::string hist =
        "[{\"role\": \"user\", \"text\": \"need a room\"}]";
    write_file(tmp.path / "bad4.jsonl",
               "{\"history\": " + hist + ", \"acts\": [1, 0]}\n");
    REQUIRE_THROWS_WITH(load_act_examples(p("bad4.jsonl"), 6),
                        Catch::Matchers::ContainsSubstring("arity"));

    write_file(tmp.path / "bad5.jsonl",
               "{\"history\": " + hist + ", \"acts\": [1, 0, 2, 0, 0, 0]}\n");
    REQUIRE_THROWS_WITH(load_act_examples(p("bad5.jsonl"), 6),
                        Catch::Matchers::ContainsSubstring("0/1"));

    write_file(tmp.path / "bad6.jsonl",
               "{\"history\": " + hist + ", \"slots\": {\"hotel.area\": \"north\"}}\n");
    REQUIRE_THROWS_WITH(load_dst_examples(p("bad6.jsonl"), data().ontology),
                        Catch::Matchers::ContainsSubstring("every ontology pair"));

    write_file(tmp.path / "bad7.jsonl",
               "{\"history\": " + hist + ", \"response\": \"\"}\n");
    REQUIRE_THROWS_WITH(load_rs_examples(p("bad7.jsonl")),
                        Catch::Matchers::ContainsSubstring("empty response"));
  }
}

TEST_CASE("linear head applies, saves and loads", "[finetune]") {
  Rng rng = Rng::seeded(11);
  auto head = LinearHead<float>::init(3, 5, rng.stream("head"));
  REQUIRE(head.out_dim() == 3);
  REQUIRE(head.in_dim() == 5);
  for (std::size_t i = 0; i < head.b.size(); ++i) REQUIRE(head.b.data()[i] == 0.0f);

  Mat<float> x(2, 5);
  Rng xr = rng.stream("x");
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = float(xr.normal());
  const Mat<float> y = head.apply(x);
  REQUIRE(y.rows() == 2);
  REQUIRE(y.cols() == 3);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double want = double(head.b(0, c));
      for (int k = 0; k < 5; ++k) want += double(x(r, k)) * double(head.w(c, k));
      REQUIRE(double(y(r, c)) == Catch::Approx(want).margin(1e-5));
    }

  // The tape path computes the same map.
  Graph<float> g(false);
  auto ref = head.forward(g, g.constant(x), false);
  for (std::size_t i = 0; i < y.size(); ++i)
    REQUIRE(g.v(ref).data()[i] == y.data()[i]);

  SECTION("checkpoint round trip under head/") {
    TempDir tmp("todlab_head_ckpt");
    const std::string dir = (tmp.path / "head").string();
    save_head(dir, head, {{"task", "intent"}, {"classes", 3}}, 4);
    nlohmann::json cfg;
    const auto back = load_head<float>(dir, &cfg);
    REQUIRE(cfg.at("task") == "intent");
    REQUIRE(back.content_hash() == head.content_hash());
    REQUIRE(back.w.rows() == 3);

    save_tensor_dir((tmp.path / "other").string(),
                    {{"weird", Mat<float>(2, 2)}}, {}, 0);
    REQUIRE_THROWS_WITH(load_head<float>((tmp.path / "other").string()),
                        Catch::Matchers::ContainsSubstring("not a head checkpoint"));
  }
}

TEST_CASE("act threshold is inclusive and monotone", "[finetune]") {
  // Logits at sigmoid 0.49 / 0.50 / 0.51: the boundary act is included.
  Mat<float> logits(1, 3);
  logits(0, 0) = -0.04001f;  // sigmoid just under 0.49... strictly below 0.5
  logits(0, 1) = 0.0f;       // sigmoid exactly 0.5
  logits(0, 2) = 0.04001f;
  REQUIRE(acts_from_logits(logits) == std::vector<int>{0, 1, 1});

  // Raising one logit never removes that act.
  Rng rng = Rng::seeded(3);
  for (int trial = 0; trial < 50; ++trial) {
    Mat<float> l(1, 4);
    for (int c = 0; c < 4; ++c) l(0, c) = float(rng.normal());
    const auto before = acts_from_logits(l);
    const int c = int(rng.below(4));
    l(0, c) += float(std::abs(rng.normal()));
    const auto after = acts_from_logits(l);
    if (before[std::size_t(c)] == 1) REQUIRE(after[std::size_t(c)] == 1);
    for (int o = 0; o < 4; ++o)
      if (o != c) REQUIRE(after[std::size_t(o)] == before[std::size_t(o)]);
  }
}

TEST_CASE("dst prediction slices the packed head by pair", "[finetune]") {
  const Ontology o = Ontology::from_json(
      {{"a.slot", {"none", "x", "y"}}, {"b.slot", {"none", "z"}}});
  const auto& d = data();
  EncoderParams<float> enc =
      EncoderParams<float>::init(small_encoder(d.vocab.size()), Rng::seeded(5));

  // Zero weights and a planted bias make the logits input-independent, so
  // the head acts as a hand-built oracle: argmax picks the bias pattern.
  LinearHead<float> head;
  head.w = Mat<float>(o.head_width(), enc.cfg.hidden_dim);
  head.b = Mat<float>(1, o.head_width());
  head.gw = Mat<float>(o.head_width(), enc.cfg.hidden_dim);
  head.gb = Mat<float>(1, o.head_width());
  head.b(0, 0) = 0.f, head.b(0, 1) = 5.f, head.b(0, 2) = 1.f;  // a.slot -> "x"
  head.b(0, 3) = 2.f, head.b(0, 4) = 1.f;                      // b.slot -> "none"

  const std::vector<Utterance> hist = {{Role::user, "i want a cheap hotel"}};
  const auto labels = predict_dst(enc, head, d.vocab, o, hist);
  REQUIRE(labels == std::vector<int>{1, 0});
  const auto m = dst_label_map(o, labels);
  REQUIRE(m.at("a.slot") == "x");
  REQUIRE(m.at("b.slot") == "none");

  Mat<float> bad(1, 3);
  REQUIRE_THROWS_AS(dst_from_logits(bad, o), std::runtime_error);
}

TEST_CASE("ranking orders by similarity with pool-order ties", "[finetune]") {
  REQUIRE(rank_by_similarity({0.5, 0.9, 0.5, -0.1}) == std::vector<int>{1, 0, 2, 3});
  REQUIRE(rank_by_similarity({0.2, 0.2, 0.2}) == std::vector<int>{0, 1, 2});

  const auto& d = data();
  EncoderParams<float> enc =
      EncoderParams<float>::init(small_encoder(d.vocab.size()), Rng::seeded(6));
  const std::vector<Utterance> hist = {{Role::user, "book a table for two"}};

  // Identical candidates embed identically: the tie rule returns pool order.
  std::vector<std::string> pool(10, "what area do you want");
  std::vector<std::string> log;
  const auto order = rank_responses(enc, d.vocab, hist, pool, &log);
  std::vector<int> want(10);
  for (int i = 0; i < 10; ++i) want[std::size_t(i)] = i;
  REQUIRE(order == want);
  REQUIRE(log.size() == 1);
  REQUIRE(log[0].find("expects 100") != std::string::npos);

  // Distinct candidates: still a permutation.
  std::vector<std::string> varied = {"what area do you want", "done the table is booked",
                                     "the alpha lodge is cheap", "a grey car will come",
                                     "enjoy your visit"};
  const auto perm = rank_responses(enc, d.vocab, hist, varied);
  std::set<int> seen(perm.begin(), perm.end());
  REQUIRE(seen.size() == 5);
  REQUIRE(*seen.begin() == 0);
  REQUIRE(*seen.rbegin() == 4);

  REQUIRE_THROWS_AS(rank_responses(enc, d.vocab, hist, {"one"}), std::runtime_error);
}

TEST_CASE("rs pools plant the gold among sampled distractors", "[finetune]") {
  const auto rs = load_rs_examples(path_of("rs_train.jsonl"));
  const auto pools = build_rs_pools(rs, 10, Rng::seeded(21));
  REQUIRE(pools.size() == rs.size());
  std::set<std::string> responses;
  for (const auto& e : rs) responses.insert(e.response);
  for (std::size_t i = 0; i < pools.size(); ++i) {
    REQUIRE(pools[i].candidates.size() == 10);
    REQUIRE(pools[i].gold >= 0);
    REQUIRE(pools[i].gold < 10);
    REQUIRE(pools[i].candidates[std::size_t(pools[i].gold)] == rs[i].response);
    for (const auto& c : pools[i].candidates) REQUIRE(responses.count(c) == 1);
  }
  const auto again = build_rs_pools(rs, 10, Rng::seeded(21));
  REQUIRE(again[3].candidates == pools[3].candidates);
  REQUIRE(again[3].gold == pools[3].gold);

  std::vector<RsExample> few(rs.begin(), rs.begin() + 5);
  REQUIRE_THROWS_WITH(build_rs_pools(few, 10, Rng::seeded(1)),
                      Catch::Matchers::ContainsSubstring("pool_size"));
}

TEST_CASE("head-only fit reaches full accuracy on separable data", "[finetune]") {
  const auto& d = data();
  // Mean pooling: a random encoder's mean-pooled features spread enough to
  // be linearly separable, while cls features of an untrained stack are
  // nearly collinear.
  EncoderParams<float> enc = EncoderParams<float>::init(
      small_encoder(d.vocab.size(), Pooling::mean), Rng::seeded(9));
  const std::uint64_t enc_hash = enc.content_hash();

  // Frozen encoder: distinct texts give fixed distinct features, and a
  // linear head must separate two of them perfectly.
  std::vector<IntentExample> train = {{"book a table for two", 0},
                                      {"find me a cheap hotel", 1},
                                      {"i want a table tonight", 0},
                                      {"need a hotel room", 1}};
  FinetuneConfig cfg;
  cfg.freeze_encoder = true;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 40;
  cfg.eval_every = 4;
  cfg.patience = 10;
  cfg.batch_size = 4;
  auto res = finetune_intent(enc, d.vocab, train, train, 2, cfg, 31);

  REQUIRE(res.encoder.content_hash() == enc_hash);  // frozen stays frozen
  REQUIRE(res.has_head);
  REQUIRE(res.steps > 0);

  auto report = evaluate_intent(res.encoder, res.head, d.vocab, train, -1);
  REQUIRE(report.at("acc_all") == 1.0);
}

TEST_CASE("intent finetuning trains, early stops and restores the best", "[finetune]") {
  const auto& d = data();
  const int classes = int(d.intent_labels.size());
  const auto train = load_intent_examples(path_of("intent_train.jsonl"), classes);
  const auto dev = load_intent_examples(path_of("intent_dev.jsonl"), classes);
  EncoderParams<float> enc =
      EncoderParams<float>::init(small_encoder(d.vocab.size()), Rng::seeded(12));

  FinetuneConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 8;
  cfg.eval_every = 3;
  cfg.patience = 2;
  cfg.batch_size = 8;
  const auto res = finetune_intent(enc, d.vocab, train, dev, classes, cfg, 77);

  REQUIRE(res.steps > 0);
  REQUIRE(std::isfinite(res.best_dev_loss));
  REQUIRE(!res.log.empty());
  REQUIRE(res.log.front().find("dev loss at init") != std::string::npos);

  // The returned artifacts are the best snapshot: training accuracy on the
  // train split should beat chance for a balanced few-shot fixture.
  auto enc_copy = res.encoder;
  auto report = evaluate_intent(enc_copy, res.head, d.vocab, train, classes - 1);
  REQUIRE(report.at("acc_all") >= 1.0 / double(classes));

  SECTION("same seed reproduces, different seed diverges") {
    const auto again = finetune_intent(enc, d.vocab, train, dev, classes, cfg, 77);
    REQUIRE(again.encoder.content_hash() == res.encoder.content_hash());
    REQUIRE(again.head.content_hash() == res.head.content_hash());
    REQUIRE(again.steps == res.steps);
    const auto other = finetune_intent(enc, d.vocab, train, dev, classes, cfg, 78);
    REQUIRE(other.encoder.content_hash() != res.encoder.content_hash());
  }

  SECTION("empty training set is rejected") {
    REQUIRE_THROWS_WITH(
        finetune_intent(enc, d.vocab, {}, dev, classes, cfg, 1),
        Catch::Matchers::ContainsSubstring("empty training set"));
  }
}

TEST_CASE("act and dst finetuning run end to end", "[finetune]") {
  const auto& d = data();
  const int acts = int(d.act_names.size());
  EncoderParams<float> enc =
      EncoderParams<float>::init(small_encoder(d.vocab.size()), Rng::seeded(13));

  FinetuneConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 2;
  cfg.eval_every = 3;
  cfg.patience = 3;

  SECTION("act") {
    auto train = load_act_examples(path_of("act_train.jsonl"), acts);
    auto dev = load_act_examples(path_of("act_dev.jsonl"), acts);
    auto res = finetune_act(enc, d.vocab, train, dev, acts, cfg, 40);
    REQUIRE(res.steps > 0);
    auto report =
        evaluate_act(res.encoder, res.head, d.vocab, dev, d.act_names);
    REQUIRE(report.at("micro_f1") >= 0.0);
    REQUIRE(report.at("micro_f1") <= 1.0);
    REQUIRE(report.n == long(dev.size()));
  }

  SECTION("dst") {
    auto train = load_dst_examples(path_of("dst_train.jsonl"), d.ontology);
    auto dev = load_dst_examples(path_of("dst_dev.jsonl"), d.ontology);
    auto res = finetune_dst(enc, d.vocab, train, dev, d.ontology, cfg, 41);
    REQUIRE(res.steps > 0);
    REQUIRE(res.head.out_dim() == d.ontology.head_width());
    auto report = evaluate_dst(res.encoder, res.head, d.vocab, d.ontology, dev);
    REQUIRE(report.at("joint_acc") <= report.at("slot_acc"));
  }
}

TEST_CASE("response selection loss starts near log batch size", "[finetune]") {
  const auto& d = data();
  const auto train = load_rs_examples(path_of("rs_train.jsonl"));
  const auto dev = load_rs_examples(path_of("rs_dev.jsonl"));
  EncoderParams<float> enc =
      EncoderParams<float>::init(small_encoder(d.vocab.size()), Rng::seeded(14));

  FinetuneConfig cfg;
  cfg.learning_rate = 1e-9;  // hold the parameters still
  cfg.max_epochs = 1;
  cfg.eval_every = 1000;
  cfg.batch_size = 25;
  const auto res = finetune_rs(enc, d.vocab, train, dev, cfg, 50);

  // Random-ish embeddings score near-uniform softmax over 25 candidates.
  REQUIRE(res.best_dev_loss == Catch::Approx(std::log(25.0)).margin(0.3));
  REQUIRE(!res.has_head);

  SECTION("the same bound holds under mean pooling") {
    EncoderParams<float> menc = EncoderParams<float>::init(
        small_encoder(d.vocab.size(), Pooling::mean), Rng::seeded(99));
    const auto mres = finetune_rs(menc, d.vocab, train, dev, cfg, 50);
    REQUIRE(mres.best_dev_loss == Catch::Approx(std::log(25.0)).margin(0.3));
  }

  SECTION("degenerate batches are rejected") {
    FinetuneConfig one = cfg;
    one.batch_size = 1;
    REQUIRE_THROWS_WITH(finetune_rs(enc, d.vocab, train, dev, one, 1),
                        Catch::Matchers::ContainsSubstring("batch size >= 2"));
    std::vector<RsExample> single(train.begin(), train.begin() + 1);
    REQUIRE_THROWS_WITH(finetune_rs(enc, d.vocab, single, dev, cfg, 1),
                        Catch::Matchers::ContainsSubstring("at least 2"));
    FinetuneConfig frozen = cfg;
    frozen.freeze_encoder = true;
    REQUIRE_THROWS_WITH(finetune_rs(enc, d.vocab, train, dev, frozen, 1),
                        Catch::Matchers::ContainsSubstring("nothing to train"));
  }

  SECTION("duplicate gold responses are flagged as collisions") {
    std::vector<RsExample> clones = train;
    for (auto& e : clones) e.response = "what area do you want";
    const auto r2 = finetune_rs(enc, d.vocab, clones, dev, cfg, 51);
    bool flagged = false;
    for (const auto& l : r2.log)
      if (l.find("collision") != std::string::npos) flagged = true;
    REQUIRE(flagged);
  }

  SECTION("a trailing batch of one is skipped, not trained") {
    std::vector<RsExample> odd(train.begin(), train.begin() + 26);
    const auto r3 = finetune_rs(enc, d.vocab, odd, dev, cfg, 52);
    REQUIRE(r3.steps == 1);  // 26 = 25 + a skipped singleton
    bool noted = false;
    for (const auto& l : r3.log)
      if (l.find("trailing batch of one") != std::string::npos) noted = true;
    REQUIRE(noted);
  }
}

TEST_CASE("rs training separates gold from in-batch negatives", "[finetune][slow]") {
  const auto& d = data();
  const auto train = load_rs_examples(path_of("rs_train.jsonl"));
  const auto dev = load_rs_examples(path_of("rs_dev.jsonl"));
  // Mean pooling: cls features of an untrained encoder are nearly collinear,
  // which flattens the cosine softmax and stalls this objective.
  EncoderParams<float> enc = EncoderParams<float>::init(
      small_encoder(d.vocab.size(), Pooling::mean), Rng::seeded(15));

  FinetuneConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 20;
  cfg.eval_every = 3;
  cfg.patience = 50;
  cfg.batch_size = 25;
  const auto res = finetune_rs(enc, d.vocab, train, dev, cfg, 60);

  // Initial dev loss sits near log 25; training must cut it meaningfully.
  REQUIRE(std::isfinite(res.best_dev_loss));
  REQUIRE(res.best_dev_loss < std::log(25.0) - 0.15);

  // Ranking beats chance on small pools after training.
  auto trained = res.encoder;
  const auto pools = build_rs_pools(dev, 10, Rng::seeded(99));
  std::vector<std::vector<int>> rankings;
  std::vector<int> golds;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    rankings.push_back(
        rank_responses(trained, d.vocab, dev[i].history, pools[i].candidates));
    golds.push_back(pools[i].gold);
  }
  const double hit1 = k_of_pool_accuracy(rankings, golds, 1, 10);
  REQUIRE(hit1 > 0.15);  // chance is 0.1 on a 10-pool
}

TEST_CASE("evaluate helpers agree with direct metric calls", "[finetune]") {
  const auto& d = data();
  EncoderParams<float> enc =
      EncoderParams<float>::init(small_encoder(d.vocab.size()), Rng::seeded(16));
  Rng hr = Rng::seeded(17);
  auto head = LinearHead<float>::init(int(d.act_names.size()), enc.cfg.hidden_dim,
                                      hr.stream("head"));

  const auto test = load_act_examples(path_of("act_test.jsonl"), int(d.act_names.size()));
  const auto via_helper = evaluate_act(enc, head, d.vocab, test, d.act_names, "fp");

  std::vector<std::vector<int>> preds, golds;
  for (const auto& e : test) {
    preds.push_back(predict_acts(enc, head, d.vocab, e.history));
    golds.push_back(e.acts);
  }
  const auto direct = f1_metrics(preds, golds, d.act_names, "fp");
  REQUIRE(via_helper.metrics == direct.metrics);
  REQUIRE(via_helper.n == direct.n);
}
