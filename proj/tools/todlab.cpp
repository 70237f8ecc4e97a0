// Command-line front end. Every mutating command writes a run_manifest.json
// beside its outputs; metrics always come from the library entry points so
// the CLI cannot drift from in-process results.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "todlab/config.hpp"
#include "todlab/manifest.hpp"
#include "todlab/metrics.hpp"
#include "todlab/pretrain.hpp"
#include "todlab/probe.hpp"
#include "todlab/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace todlab;

namespace {

// Falls back to a file shipped next to the data (ontology.json and friends).
std::string sibling_or(const std::string& explicit_path, const std::string& data_path,
                       const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  const fs::path candidate = fs::path(data_path).parent_path() / name;
  return fs::exists(candidate) ? candidate.string() : "";
}

std::vector<std::string> load_name_list(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path);
  json j;
  in >> j;
  check(j.is_array(), path + ": expected a JSON array of names");
  return j.get<std::vector<std::string>>();
}

std::string derive_dev_path(const std::string& train_path, const std::string& dev_flag) {
  if (!dev_flag.empty()) return dev_flag;
  const auto pos = train_path.rfind("train");
  check(pos != std::string::npos,
        "cannot derive a dev file from " + train_path + "; pass --dev");
  std::string dev = train_path;
  dev.replace(pos, 5, "dev");
  return dev;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path);
  check(f.good(), "cannot write " + path);
  f << j.dump(2) << "\n";
  f.flush();
  check(f.good(), "write failed for " + path);
}

struct CheckpointBundle {
  EncoderParams<float> encoder;
  Vocab vocab;
};

CheckpointBundle load_checkpoint(const std::string& dir) {
  CheckpointBundle b;
  b.encoder = load_encoder<float>(dir);
  b.vocab = Vocab::load(dir + "/vocab.json");
  check(b.vocab.size() == b.encoder.cfg.vocab_size,
        dir + ": vocabulary does not match the encoder config");
  return b;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string spec_path;
  std::string out_dir = "synth_out";
  std::uint64_t seed = 13;
};

int run_synth(const SynthArgs& a) {
  WallTimer timer;
  std::ifstream in(a.spec_path);
  check(in.good(), "cannot open " + a.spec_path);
  json j;
  in >> j;
  const SynthSpec spec = SynthSpec::from_json(j);
  const json manifest = write_synth_dataset(spec, a.out_dir, a.seed);

  RunManifest rm;
  rm.command = "synth";
  rm.config = spec.to_json();
  rm.seed = a.seed;
  rm.add_input(a.spec_path);
  rm.wall_seconds = timer.seconds();
  write_run_manifest(a.out_dir, rm);
  std::cout << manifest.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// stats

int run_stats(const std::string& corpus_path) {
  const auto stats = compute_stats(load_dialogues(corpus_path));
  std::cout << stats_to_json(stats).dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
  std::string config_path;
  std::vector<std::string> sets;
};

int run_pretrain(const PretrainArgs& a) {
  WallTimer timer;
  const json resolved = resolve_config_file(pretrain_defaults(), a.config_path, a.sets);
  const PretrainRun run = PretrainRun::from_json(resolved);
  check(!run.corpus.empty(), "config: corpus is required");
  check(!run.output_dir.empty(), "config: output_dir is required");

  auto corpus = load_dialogues(run.corpus);
  Vocab vocab = Vocab::build(corpus, run.pretrain.min_freq);
  Pretrainer<float> trainer(std::move(corpus), std::move(vocab), run.encoder,
                            run.pretrain, run.seed, run.output_dir);
  trainer.run();

  RunManifest rm;
  rm.command = "pretrain";
  rm.config = resolved;
  rm.seed = run.seed;
  if (!a.config_path.empty()) rm.add_input(a.config_path);
  rm.add_input(run.corpus);
  rm.wall_seconds = timer.seconds();
  write_run_manifest(run.output_dir, rm);

  const auto& rows = trainer.state().rows;
  json summary = {{"epochs", trainer.state().epoch},
                  {"steps", trainer.state().step},
                  {"final_loss", rows.empty() ? 0.0 : rows.back().total},
                  {"output_dir", run.output_dir}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct TaskArgs {
  std::string task;
  std::string data;
  std::string checkpoint;
  std::string dev;            // finetune only; derived from --data when empty
  std::string out;            // output directory (finetune/probe) or file
  std::string config_path;    // finetune only
  std::vector<std::string> sets;
  std::string labels_path;    // intent label names
  std::string acts_path;      // act names
  std::string ontology_path;  // dst ontology
  int classes = 0;            // 0 = derive
  int num_acts = 0;           // 0 = derive
  int ood_class = -2;         // -2 = derive from labels, -1 = none
  std::uint64_t pool_seed = 13;
  std::uint64_t probe_seed = 13;
  int distractors = 99;
};

int intent_class_count(const TaskArgs& a, const std::vector<std::string>& label_names,
                       const std::vector<IntentExample>& train,
                       const std::vector<IntentExample>& dev) {
  if (a.classes > 0) return a.classes;
  if (!label_names.empty()) return int(label_names.size());
  int top = -1;
  for (const auto& e : train) top = std::max(top, e.label);
  for (const auto& e : dev) top = std::max(top, e.label);
  check(top >= 1, "intent: cannot derive a class count; pass --classes");
  return top + 1;
}

int resolve_ood_class(const TaskArgs& a, const std::vector<std::string>& label_names) {
  if (a.ood_class >= -1) return a.ood_class;
  for (std::size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == "ood") return int(i);
  return -1;
}

// Peeks at the first row when neither a flag nor an act-name file fixed it.
int act_count(const TaskArgs& a, const std::vector<std::string>& act_names,
              const std::string& data_path) {
  if (a.num_acts > 0) return a.num_acts;
  if (!act_names.empty()) return int(act_names.size());
  std::ifstream in(data_path);
  check(in.good(), "cannot open " + data_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    check(!j.is_discarded() && j.is_object() && j.contains("acts"),
          data_path + ": cannot derive the act count; pass --num-acts");
    return int(j.at("acts").size());
  }
  throw std::runtime_error(data_path + ": no examples");
}

// Raw intent examples where the label may exceed any class count; used by
// loaders that only need (text, label-as-string) rows.
std::vector<std::pair<std::string, std::string>> load_text_label_rows(
    const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    check(!j.is_discarded() && j.is_object(),
          path + ":" + std::to_string(lineno) + ": not a JSON object");
    check(j.contains("text"), path + ":" + std::to_string(lineno) + ": missing text");
    check(j.contains("label"), path + ":" + std::to_string(lineno) + ": missing label");
    const json& l = j.at("label");
    rows.emplace_back(j.at("text").get<std::string>(),
                      l.is_string() ? l.get<std::string>() : l.dump());
  }
  check(!rows.empty(), path + ": no examples");
  return rows;
}

template <class S>
void save_finetuned(const std::string& out, const FinetuneResult<S>& res,
                    const Vocab& vocab, const json& head_config) {
  save_encoder(out, res.encoder, res.epochs_run);
  vocab.save(out + "/vocab.json");
  if (res.has_head) save_head(out + "/head", res.head, head_config, res.epochs_run);
  std::ofstream log(out + "/train_log.txt");
  check(log.good(), "cannot write " + out + "/train_log.txt");
  for (const auto& line : res.log) log << line << "\n";
  json summary = {{"steps", res.steps},
                  {"best_step", res.best_step},
                  {"best_dev_loss", res.best_dev_loss},
                  {"epochs_run", res.epochs_run},
                  {"early_stopped", res.early_stopped}};
  write_json_file(out + "/finetune_summary.json", summary);
  std::cout << summary.dump(2) << "\n";
}

int run_finetune(TaskArgs& a) {
  WallTimer timer;
  if (a.out.empty()) a.out = "finetune_" + a.task;
  const std::string dev_path = derive_dev_path(a.data, a.dev);
  const json resolved = resolve_config_file(finetune_defaults(), a.config_path, a.sets);
  const FinetuneRun run = FinetuneRun::from_json(resolved);
  CheckpointBundle ckpt = load_checkpoint(a.checkpoint);

  RunManifest rm;
  rm.command = "finetune";
  rm.config = resolved;
  rm.config["task"] = a.task;
  rm.seed = run.seed;
  rm.add_input(a.data);
  rm.add_input(dev_path);
  if (!a.config_path.empty()) rm.add_input(a.config_path);

  if (a.task == "intent") {
    std::vector<std::string> label_names;
    const std::string lp = sibling_or(a.labels_path, a.data, "intent_labels.json");
    if (!lp.empty()) label_names = load_name_list(lp);
    // load with a generous bound first, then validate against the real count
    auto train = load_intent_examples(a.data, std::numeric_limits<int>::max());
    auto dev = load_intent_examples(dev_path, std::numeric_limits<int>::max());
    const int classes = intent_class_count(a, label_names, train, dev);
    for (const auto& e : train)
      check(e.label < classes, "intent: label out of range for " +
                                   std::to_string(classes) + " classes");
    for (const auto& e : dev) check(e.label < classes, "intent: dev label out of range");
    const auto res = finetune_intent(ckpt.encoder, ckpt.vocab, train, dev, classes,
                                     run.cfg, run.seed);
    save_finetuned(a.out, res, ckpt.vocab,
                   {{"task", "intent"},
                    {"num_classes", classes},
                    {"ood_class", resolve_ood_class(a, label_names)}});
  } else if (a.task == "act") {
    std::vector<std::string> act_names;
    const std::string ap = sibling_or(a.acts_path, a.data, "acts.json");
    if (!ap.empty()) act_names = load_name_list(ap);
    const int acts = act_count(a, act_names, a.data);
    auto train = load_act_examples(a.data, acts);
    auto dev = load_act_examples(dev_path, acts);
    const auto res =
        finetune_act(ckpt.encoder, ckpt.vocab, train, dev, acts, run.cfg, run.seed);
    save_finetuned(a.out, res, ckpt.vocab, {{"task", "act"}, {"num_acts", acts}});
  } else if (a.task == "dst") {
    const std::string op = sibling_or(a.ontology_path, a.data, "ontology.json");
    check(!op.empty(), "dst: pass --ontology or put ontology.json next to the data");
    const Ontology ont = Ontology::load(op);
    auto train = load_dst_examples(a.data, ont);
    auto dev = load_dst_examples(dev_path, ont);
    const auto res =
        finetune_dst(ckpt.encoder, ckpt.vocab, train, dev, ont, run.cfg, run.seed);
    rm.add_input(op);
    save_finetuned(a.out, res, ckpt.vocab,
                   {{"task", "dst"}, {"head_width", ont.head_width()}});
  } else if (a.task == "rs") {
    auto train = load_rs_examples(a.data);
    auto dev = load_rs_examples(dev_path);
    const auto res = finetune_rs(ckpt.encoder, ckpt.vocab, train, dev, run.cfg, run.seed);
    save_finetuned(a.out, res, ckpt.vocab, json::object());
  } else {
    throw std::runtime_error("unknown task: " + a.task);
  }

  rm.wall_seconds = timer.seconds();
  write_run_manifest(a.out, rm);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int run_evaluate(TaskArgs& a) {
  WallTimer timer;
  CheckpointBundle ckpt = load_checkpoint(a.checkpoint);
  const std::string fingerprint = hex64(file_fnv64(a.data));
  MetricReport report;

  if (a.task == "rs") {
    const auto test = load_rs_examples(a.data);
    report = evaluate_rs(ckpt.encoder, ckpt.vocab, test, a.pool_seed, fingerprint);
  } else {
    json head_cfg;
    LinearHead<float> head = load_head<float>(a.checkpoint + "/head", &head_cfg);
    if (head_cfg.contains("task"))
      check(head_cfg["task"] == a.task,
            "checkpoint head was trained for task " +
                head_cfg["task"].get<std::string>() + ", not " + a.task);
    if (a.task == "intent") {
      const int classes = head.w.rows();
      const auto test = load_intent_examples(a.data, classes);
      std::vector<std::string> label_names;
      const std::string lp = sibling_or(a.labels_path, a.data, "intent_labels.json");
      if (!lp.empty()) label_names = load_name_list(lp);
      int ood = resolve_ood_class(a, label_names);
      if (a.ood_class == -2 && ood == -1 && head_cfg.contains("ood_class"))
        ood = head_cfg["ood_class"].get<int>();
      report = evaluate_intent(ckpt.encoder, head, ckpt.vocab, test, ood, fingerprint);
    } else if (a.task == "act") {
      std::vector<std::string> act_names;
      const std::string ap = sibling_or(a.acts_path, a.data, "acts.json");
      if (!ap.empty()) act_names = load_name_list(ap);
      const auto test = load_act_examples(a.data, head.w.rows());
      report = evaluate_act(ckpt.encoder, head, ckpt.vocab, test, act_names, fingerprint);
    } else if (a.task == "dst") {
      const std::string op = sibling_or(a.ontology_path, a.data, "ontology.json");
      check(!op.empty(), "dst: pass --ontology or put ontology.json next to the data");
      const Ontology ont = Ontology::load(op);
      check(ont.head_width() == head.w.rows(),
            "ontology width does not match the checkpoint head");
      const auto test = load_dst_examples(a.data, ont);
      report = evaluate_dst(ckpt.encoder, head, ckpt.vocab, ont, test, fingerprint);
    } else {
      throw std::runtime_error("unknown task: " + a.task);
    }
  }

  std::cout << report.to_json().dump(2) << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json_file(a.out + "/metrics.json", report.to_json());
    RunManifest rm;
    rm.command = "evaluate";
    rm.config = {{"task", a.task}, {"pool_seed", a.pool_seed}};
    rm.seed = a.pool_seed;
    rm.add_input(a.data);
    rm.wall_seconds = timer.seconds();
    write_run_manifest(a.out, rm);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// probe

int run_probe(TaskArgs& a) {
  WallTimer timer;
  if (a.out.empty()) a.out = "probe_out";
  CheckpointBundle ckpt = load_checkpoint(a.checkpoint);
  const auto examples = load_rs_examples(a.data);
  const auto results =
      run_future_probe(ckpt.encoder, ckpt.vocab, examples, a.probe_seed, a.distractors);

  double golden = 0, random = 0;
  for (const auto& r : results) {
    golden += r.golden_distance;
    random += r.mean_random_distance;
  }
  json summary = {{"examples", results.size()},
                  {"distractors", a.distractors},
                  {"golden_smaller_ratio", golden_smaller_ratio(results)},
                  {"mean_golden_distance", golden / double(results.size())},
                  {"mean_random_distance", random / double(results.size())}};

  fs::create_directories(a.out);
  write_probe_csv(results, a.out + "/probe.csv");
  write_json_file(a.out + "/probe_summary.json", summary);

  RunManifest rm;
  rm.command = "probe";
  rm.config = {{"distractors", a.distractors}};
  rm.seed = a.probe_seed;
  rm.add_input(a.data);
  rm.wall_seconds = timer.seconds();
  write_run_manifest(a.out, rm);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// export-embeddings

int run_export(TaskArgs& a) {
  WallTimer timer;
  if (a.out.empty()) a.out = "embeddings.csv";
  CheckpointBundle ckpt = load_checkpoint(a.checkpoint);
  const auto rows = load_text_label_rows(a.data);
  std::vector<std::string> texts, labels;
  for (const auto& [text, label] : rows) {
    texts.push_back(text);
    labels.push_back(label);
  }
  const fs::path out_path(a.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  export_embeddings(ckpt.encoder, ckpt.vocab, texts, labels, a.out);

  RunManifest rm;
  rm.command = "export-embeddings";
  rm.config = {{"rows", texts.size()}};
  rm.seed = 0;
  rm.add_input(a.data);
  rm.wall_seconds = timer.seconds();
  const std::string dir =
      out_path.has_parent_path() ? out_path.parent_path().string() : ".";
  write_run_manifest(dir, rm);
  std::cout << json({{"rows", texts.size()}, {"out", a.out}}).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue encoder lab: synthesize corpora, pre-train, fine-tune, "
               "evaluate and probe"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dialogue dataset");
  synth->add_option("--spec", synth_args.spec_path, "Generator spec (JSON)")->required();
  synth->add_option("--out", synth_args.out_dir, "Output directory");
  synth->add_option("--seed", synth_args.seed, "Generator seed");

  std::string stats_corpus;
  auto* stats = app.add_subcommand("stats", "Describe a dialogue corpus");
  stats->add_option("--corpus", stats_corpus, "Corpus (JSONL)")->required();

  PretrainArgs pre_args;
  auto* pre = app.add_subcommand("pretrain", "Pre-train the student/teacher encoder");
  pre->add_option("--config", pre_args.config_path, "Run config (JSON)")->required();
  pre->add_option("--set", pre_args.sets, "Override a config key (key=value)");

  auto add_task_flags = [](CLI::App* cmd, TaskArgs& t, bool training) {
    cmd->add_option("--task", t.task, "intent, act, dst or rs")
        ->required()
        ->check(CLI::IsMember({"intent", "act", "dst", "rs"}));
    cmd->add_option("--data", t.data, "Task data (JSONL)")->required();
    cmd->add_option("--checkpoint", t.checkpoint, "Encoder checkpoint directory")
        ->required();
    cmd->add_option("--out", t.out, "Output location");
    cmd->add_option("--labels", t.labels_path, "Intent label names (JSON array)");
    cmd->add_option("--acts", t.acts_path, "Act names (JSON array)");
    cmd->add_option("--ontology", t.ontology_path, "DST ontology (JSON)");
    cmd->add_option("--ood-class", t.ood_class, "Intent OOD class (-1 = none)");
    if (training) {
      cmd->add_option("--dev", t.dev, "Dev data; default swaps train->dev in --data");
      cmd->add_option("--config", t.config_path, "Fine-tune config (JSON)");
      cmd->add_option("--set", t.sets, "Override a config key (key=value)");
      cmd->add_option("--classes", t.classes, "Intent class count");
      cmd->add_option("--num-acts", t.num_acts, "Act count");
    }
  };

  TaskArgs ft_args;
  auto* ft = app.add_subcommand("finetune", "Fine-tune a pre-trained encoder on a task");
  add_task_flags(ft, ft_args, true);

  TaskArgs ev_args;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a fine-tuned checkpoint");
  add_task_flags(ev, ev_args, false);
  ev->add_option("--pool-seed", ev_args.pool_seed, "Response pool seed (rs)");

  TaskArgs pr_args;
  auto* pr = app.add_subcommand("probe", "Future-distance probe on (history, response) data");
  pr->add_option("--checkpoint", pr_args.checkpoint, "Encoder checkpoint directory")
      ->required();
  pr->add_option("--data", pr_args.data, "Probe data (rs-format JSONL)")->required();
  pr->add_option("--out", pr_args.out, "Output directory");
  pr->add_option("--distractors", pr_args.distractors, "Distractors per example");
  pr->add_option("--probe-seed", pr_args.probe_seed, "Distractor sampling seed");

  TaskArgs ex_args;
  auto* ex = app.add_subcommand("export-embeddings",
                                "Write labelled pooled embeddings as CSV");
  ex->add_option("--checkpoint", ex_args.checkpoint, "Encoder checkpoint directory")
      ->required();
  ex->add_option("--data", ex_args.data, "Utterances with labels (JSONL)")->required();
  ex->add_option("--out", ex_args.out, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return run_synth(synth_args);
    if (*stats) return run_stats(stats_corpus);
    if (*pre) return run_pretrain(pre_args);
    if (*ft) return run_finetune(ft_args);
    if (*ev) return run_evaluate(ev_args);
    if (*pr) return run_probe(pr_args);
    if (*ex) return run_export(ex_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
