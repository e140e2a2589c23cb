// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// vibrodiag command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/error.hpp"
#include "vibrodiag/evalkit.hpp"
#include "vibrodiag/gateway.hpp"
#include "vibrodiag/optim.hpp"
#include "vibrodiag/pipeline.hpp"
#include "vibrodiag/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vibrodiag;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("vibrodiag");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("VIBRODIAG_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only accept it when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

std::string dump(const json& j, int indent = -1) {
  return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

/// Resolved options of the whole invocation, reusable as --config input.
// Keeps only the active subcommand and drops options that have no value.
void write_snapshot(const CLI::App& app, const fs::path& path) {
  const auto subs = app.get_subcommands();
  const std::string prefix = subs.empty() ? std::string() : subs.front()->get_name() + ".";
  std::istringstream in(app.config_to_str(true, false));
  std::string text, line;
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) != 0 || line.ends_with("=\"\"")) continue;
    text += line + "\n";
  }
  write_text(path, text);
  spdlog::debug("resolved config written to {}", path.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

std::string label_set_for_classes(int classes) {
  switch (classes) {
    case 3: return "hit";
    case 4: return "toy";
    case 7: return "dirg";
    default: throw UsageError("--classes must be 3, 4 or 7");
  }
}

/// --labels, else the dataset's own label set, else the toy set.
std::string resolve_labels(const std::string& flag, const fs::path& data_dir) {
  if (!flag.empty()) return flag;
  const fs::path info = data_dir / "dataset.json";
  if (!data_dir.empty() && fs::exists(info)) {
    std::ifstream in(info);
    return json::parse(in).value("label_set", "toy");
  }
  return "toy";
}

std::string labels_from_checkpoint(const std::string& flag, const Checkpoint& ck) {
  if (!flag.empty()) return flag;
  return ck.meta.value("label_set", "toy");
}

WavClip read_clip(const fs::path& path) { return sigproc::read_wav(path); }

void print_diagnosis(const Diagnosis& d) {
  std::cout << "raw_text: " << d.raw_text << "\n"
            << "label: " << (d.parsed_label ? *d.parsed_label : "<unparseable>") << "\n"
            << "parse_status: " << to_string(d.status) << "\n";
  if (d.truncated) std::cout << "truncated: true\n";
}

// ---- synth -------------------------------------------------------------

struct SynthArgs {
  int classes = 4;
  int per_class = 250;
  double duration = 1.0;
  int fs = 16000;
  int train_ratio = 8;
  int test_ratio = 2;
  std::uint64_t seed = 1;
  std::optional<double> snr_db;
  std::string norm = "peak";
  fs::path out;
};

void run_synth(const SynthArgs& a, const CLI::App& app) {
  const std::string label_set = label_set_for_classes(a.classes);
  DatasetSpec spec;
  spec.classes = LabelSet::by_name(label_set).class_templates();
  spec.clips_per_class = a.per_class;
  spec.duration_s = a.duration;
  spec.fs_hz = a.fs;
  spec.split_ratio = {a.train_ratio, a.test_ratio};
  spec.seed = a.seed;
  auto ds = synthbench::make_dataset(spec);
  if (a.snr_db) {
    for (auto* part : {&ds.train, &ds.test}) {
      for (auto& clip : *part) {
        clip.signal = sigproc::add_noise_snr(clip.signal, *a.snr_db, Rng::derive(clip.seed, 2));
      }
    }
  }
  sigproc::PipelineOptions opts;
  opts.norm = a.norm == "stat" ? sigproc::NormMode::kStat : sigproc::NormMode::kPeak;
  fs::create_directories(a.out);
  const auto records = synthbench::write_dataset(ds, a.out, opts);
  write_text(a.out / "dataset.json",
             dump({{"label_set", label_set},
                   {"classes", a.classes},
                   {"clips_per_class", a.per_class},
                   {"train", ds.train.size()},
                   {"test", ds.test.size()}},
                  2) + "\n");
  write_snapshot(app, a.out / "synth.config.toml");
  std::cout << "wrote " << records.size() << " clips (" << ds.train.size() << " train, "
            << ds.test.size() << " test) to " << a.out.string() << "\n";
}

// ---- corpus ------------------------------------------------------------

struct CorpusArgs {
  fs::path data;
  std::string labels;
  int variants = 3;
  std::uint64_t seed = 1;
  fs::path out;
};

void run_corpus(const CorpusArgs& a, const CLI::App& app) {
  const auto labels = LabelSet::by_name(resolve_labels(a.labels, a.data));
  const auto manifest = synthbench::read_manifest(a.data / "manifest.jsonl");
  const auto corpus = corpusgen::build_corpus(manifest, labels, a.variants, a.seed);
  const fs::path out = a.out.empty() ? a.data / "corpus.jsonl" : a.out;
  corpusgen::write_corpus(corpus, out);
  write_snapshot(app, with_suffix(out, ".config.toml"));
  std::cout << "wrote " << corpus.size() << " pairs to " << out.string() << "\n";
}

// ---- train -------------------------------------------------------------

struct TrainArgs {
  std::string stage;
  fs::path data;
  fs::path ckpt;
  fs::path init;
  fs::path corpus;
  fs::path loss_csv;
  std::string labels;
  int epochs = 0;
  int updates = 0;
  double lr = 3e-3;
  double warmup_frac = 0.05;
  int batch = 32;
  int grad_accum = 16;
  std::uint64_t seed = 1;
  int variants = 2;
  std::uint64_t corpus_seed = 1;
  bool followups = false;
};

void run_train(const TrainArgs& a, const CLI::App& app) {
  TrainConfig cfg;
  cfg.stage = stage_from_string(a.stage);
  cfg.epochs = a.epochs > 0 ? a.epochs : (cfg.stage == Stage::kVsa ? 5 : 40);
  cfg.updates = a.updates;
  cfg.lr = a.lr;
  cfg.warmup_frac = a.warmup_frac;
  cfg.batch = a.batch;
  cfg.grad_accum = a.grad_accum;
  cfg.seed = a.seed;
  cfg.validate();

  ModelParams params;
  json meta = json::object();
  if (!a.init.empty()) {
    auto ck = load_checkpoint(a.init);
    params = std::move(ck.params);
    meta = ck.meta;
  } else {
    params = init_params(ModelConfig{});
  }
  const std::string label_name =
      !a.labels.empty() ? a.labels : meta.value("label_set", resolve_labels("", a.data));
  const auto labels = LabelSet::by_name(label_name);

  const auto clips = pipeline::load_dataset(a.data);
  const auto mels = pipeline::features(clips, params.cfg);
  std::vector<TrainExample> examples;
  if (cfg.stage == Stage::kVsa) {
    const auto corpus = a.corpus.empty()
                            ? corpusgen::build_corpus(pipeline::records(clips), labels,
                                                      a.variants, a.corpus_seed)
                            : corpusgen::read_corpus(a.corpus);
    examples = pipeline::vsa_examples(clips, mels, corpus, params.cfg);
  } else {
    examples = pipeline::gfc_examples(clips, mels, labels, params.cfg, a.followups);
  }
  spdlog::info("{} stage: {} examples, {} updates of {} examples", to_string(cfg.stage),
               examples.size(), cfg.total_updates(examples.size()), cfg.examples_per_update());
  const auto result = optim::train_stage(params, examples, cfg, [](const LossPoint& p, int total) {
    spdlog::info("update {}/{} lr {:.3e} loss {:.4f}", p.step + 1, total, p.lr, p.loss);
  });

  meta["label_set"] = label_name;
  if (!meta.contains("stages")) meta["stages"] = json::array();
  meta["stages"].push_back({{"train_config", cfg.to_json()},
                            {"examples", examples.size()},
                            {"final_loss", result.curve.back().loss}});
  save_checkpoint(params, meta, a.ckpt);
  optim::write_loss_csv(result.curve,
                        a.loss_csv.empty() ? with_suffix(a.ckpt, ".loss.csv") : a.loss_csv);
  write_snapshot(app, with_suffix(a.ckpt, ".config.toml"));
  std::cout << "saved " << a.ckpt.string() << " (final loss " << result.curve.back().loss
            << ")\n";
}

// ---- diagnose / ask ----------------------------------------------------

struct ModelArgs {
  fs::path ckpt;
  std::string labels;
  int max_len = kDefaultMaxLen;
};

Diagnoser load_model(const ModelArgs& a) {
  auto ck = load_checkpoint(a.ckpt);
  const auto labels = LabelSet::by_name(labels_from_checkpoint(a.labels, ck));
  return Diagnoser(std::move(ck.params), labels, a.max_len);
}

void run_diagnose(const ModelArgs& m, const fs::path& wav) {
  const auto model = load_model(m);
  print_diagnosis(model.diagnose(read_clip(wav)));
}

void run_ask(const ModelArgs& m, const fs::path& wav) {
  const auto model = load_model(m);
  DialogueSession session;
  print_diagnosis(model.diagnose(read_clip(wav), session));
  std::cout.flush();
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    const auto answer = model.follow_up(session, line);
    std::cout << "answer[" << session.history.size() << "]: " << answer << "\n";
    std::cout.flush();
  }
}

// ---- eval --------------------------------------------------------------

struct EvalArgs {
  fs::path data;
  std::string split = "test";
  std::string format = "json";
  bool strict = false;
  fs::path out;
};

void run_eval(const ModelArgs& m, const EvalArgs& a, const CLI::App& app) {
  const auto model = load_model(m);
  const auto clips = pipeline::load_dataset(a.data);
  auto result = pipeline::evaluate_split(model, clips, a.split);
  if (a.strict) {
    result.report = evalkit::evaluate(result.diagnoses, result.truths, model.labels(), true);
  }
  const auto text = evalkit::report_render(
      result.report, a.format == "text" ? ReportFormat::kText : ReportFormat::kJson);
  std::cout << text;
  if (!a.out.empty()) {
    write_text(a.out, text);
    write_snapshot(app, with_suffix(a.out, ".config.toml"));
  }
}

// ---- gradcheck ---------------------------------------------------------

struct GradArgs {
  fs::path ckpt;
  fs::path data;
  int per_matrix = 1;
  int clips = 2;
  double perturb = -1.0;
  double tol = 1e-3;
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradArgs& a) {
  ModelParams params = a.ckpt.empty() ? init_params(ModelConfig{}) : load_checkpoint(a.ckpt).params;
  // Fresh adapters have B = 0, which zeroes every dA; perturb so they are exercised.
  const double perturb = a.perturb >= 0.0 ? a.perturb : (a.ckpt.empty() ? 0.02 : 0.0);
  if (perturb > 0.0) perturb_adapters(params, perturb, Rng::derive(a.seed, 1));

  std::vector<LabeledClip> clips;
  if (!a.data.empty()) {
    clips = pipeline::load_dataset(a.data);
  } else {
    DatasetSpec spec;
    spec.classes = synthbench::toy_classes();
    spec.clips_per_class = 5;
    spec.seed = a.seed;
    clips = pipeline::from_dataset(synthbench::make_dataset(spec));
  }
  if (a.clips < 1) throw UsageError("--clips must be >= 1");
  if (clips.size() > static_cast<std::size_t>(a.clips)) clips.resize(static_cast<std::size_t>(a.clips));
  for (auto& c : clips) c.record.split = "train";
  const auto mels = pipeline::features(clips, params.cfg);
  const auto batch = pipeline::gfc_examples(clips, mels, LabelSet::toy(), params.cfg);
  const auto r = optim::grad_check(params, batch, a.per_matrix, a.seed);
  std::cout << dump({{"max_rel_error", r.max_rel_error},
                     {"coordinates", r.coordinates},
                     {"worst", r.worst},
                     {"tolerance", a.tol},
                     {"pass", r.max_rel_error < a.tol}},
                    2)
            << "\n";
  return r.max_rel_error < a.tol ? 0 : kRuntime;
}

// ---- serve -------------------------------------------------------------

struct ServeArgs {
  fs::path ckpt;
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string labels;
  int ttl_min = 30;
  double max_clip_seconds = 60.0;
  fs::path static_dir;
};

int run_serve(const ServeArgs& a) {
  GatewayConfig cfg;
  cfg.host = a.host;
  cfg.port = a.port;
  cfg.ckpt = a.ckpt;
  cfg.session_ttl = std::chrono::minutes(a.ttl_min);
  cfg.max_clip_seconds = a.max_clip_seconds;
  cfg.static_dir = a.static_dir;
  cfg.label_set = a.labels;
  Gateway gw(cfg);
  if (!gw.model_loaded()) spdlog::warn("model not loaded ({}); serving 503", gw.load_error());
  const int port = gw.bind();
  if (port < 0) fail(ErrorCode::kIoFailure, "cannot bind " + a.host + ":" + std::to_string(a.port));
  spdlog::info("listening on {}:{}", a.host, port);
  std::cout << "listening on " << a.host << ":" << port << std::endl;
  return gw.listen() ? 0 : kRuntime;
}

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--ckpt", m.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--labels", m.labels, "Label set (default: from checkpoint)")
      ->check(CLI::IsMember({"toy", "dirg", "hit"}));
  cmd->add_option("--max-len", m.max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"vibrodiag: vibration-as-audio generative fault diagnosis"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML run spec; command-line flags override it");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic bearing dataset");
  c_synth->add_option("--classes", synth.classes, "3 (hit), 4 (toy) or 7 (dirg)")
      ->check(CLI::IsMember({3, 4, 7}));
  c_synth->add_option("--per-class", synth.per_class, "Clips per class")->check(CLI::PositiveNumber);
  c_synth->add_option("--duration", synth.duration, "Clip length in seconds")->check(CLI::PositiveNumber);
  c_synth->add_option("--fs", synth.fs, "Sample rate of the raw signals")->check(CLI::Range(8000, 192000));
  c_synth->add_option("--train-ratio", synth.train_ratio, "Train part of the split ratio");
  c_synth->add_option("--test-ratio", synth.test_ratio, "Test part of the split ratio");
  c_synth->add_option("--seed", synth.seed, "Generator seed");
  c_synth->add_option("--snr-db", synth.snr_db, "Add Gaussian white noise at this SNR");
  c_synth->add_option("--norm", synth.norm, "Amplitude normalization")
      ->check(CLI::IsMember({"peak", "stat"}));
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  CorpusArgs corpus;
  auto* c_corpus = app.add_subcommand("corpus", "Render vibration-text pairs for a dataset");
  c_corpus->add_option("--data", corpus.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_corpus->add_option("--labels", corpus.labels, "Label set (default: from dataset)")
      ->check(CLI::IsMember({"toy", "dirg", "hit"}));
  c_corpus->add_option("--variants", corpus.variants, "Descriptions per clip")->check(CLI::Range(1, 6));
  c_corpus->add_option("--seed", corpus.seed, "Phrase-variant seed");
  c_corpus->add_option("--out", corpus.out, "Output JSONL (default: <data>/corpus.jsonl)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train the adapters for one stage");
  c_train->add_option("--stage", train.stage, "vsa or gfc")->required()->check(CLI::IsMember({"vsa", "gfc"}));
  c_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--ckpt", train.ckpt, "Output checkpoint")->required();
  c_train->add_option("--init", train.init, "Start from this checkpoint")->check(CLI::ExistingFile);
  c_train->add_option("--corpus", train.corpus, "VSA corpus JSONL (default: rendered from the manifest)")
      ->check(CLI::ExistingFile);
  c_train->add_option("--loss-csv", train.loss_csv, "Loss curve (default: <ckpt>.loss.csv)");
  c_train->add_option("--labels", train.labels, "Label set (default: checkpoint, then dataset)")
      ->check(CLI::IsMember({"toy", "dirg", "hit"}));
  c_train->add_option("--epochs", train.epochs, "Epochs (default: 5 for vsa, 40 for gfc)");
  c_train->add_option("--updates", train.updates, "Optimizer updates; overrides --epochs");
  c_train->add_option("--lr", train.lr, "Peak learning rate");
  c_train->add_option("--warmup-frac", train.warmup_frac, "Fraction of updates spent warming up");
  c_train->add_option("--batch", train.batch, "Micro-batch size")->check(CLI::PositiveNumber);
  c_train->add_option("--grad-accum", train.grad_accum, "Micro-batches per update")->check(CLI::PositiveNumber);
  c_train->add_option("--seed", train.seed, "Shuffling seed");
  c_train->add_option("--variants", train.variants, "Descriptions per clip when rendering the corpus")
      ->check(CLI::Range(1, 6));
  c_train->add_option("--corpus-seed", train.corpus_seed, "Phrase-variant seed when rendering the corpus");
  c_train->add_flag("--followups", train.followups, "gfc: also train one follow-up exchange per clip");

  ModelArgs diag_model;
  fs::path diag_wav;
  auto* c_diag = app.add_subcommand("diagnose", "Generate a fault label for one clip");
  add_model_flags(c_diag, diag_model);
  c_diag->add_option("--wav", diag_wav, "PCM16 mono WAV")->required()->check(CLI::ExistingFile);

  ModelArgs ask_model;
  fs::path ask_wav;
  auto* c_ask = app.add_subcommand("ask", "Diagnose a clip, then answer questions read from stdin");
  add_model_flags(c_ask, ask_model);
  c_ask->add_option("--wav", ask_wav, "PCM16 mono WAV")->required()->check(CLI::ExistingFile);

  ModelArgs eval_model;
  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score generated labels on a dataset split");
  add_model_flags(c_eval, eval_model);
  c_eval->add_option("--data", eval.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--split", eval.split, "Split to evaluate")->check(CLI::IsMember({"train", "test"}));
  c_eval->add_option("--format", eval.format, "Report format")->check(CLI::IsMember({"json", "text"}));
  c_eval->add_flag("--strict", eval.strict, "Count substring matches as unparseable");
  c_eval->add_option("--out", eval.out, "Also write the report here");

  GradArgs grad;
  auto* c_grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  c_grad->add_option("--ckpt", grad.ckpt, "Checkpoint (default: fresh model)")->check(CLI::ExistingFile);
  c_grad->add_option("--data", grad.data, "Dataset directory (default: synthetic clips)")
      ->check(CLI::ExistingDirectory);
  c_grad->add_option("--per-matrix", grad.per_matrix, "Coordinates per A and B matrix")
      ->check(CLI::PositiveNumber);
  c_grad->add_option("--clips", grad.clips, "Clips in the batch");
  c_grad->add_option("--perturb", grad.perturb, "Std of noise added to B (default 0.02 for a fresh model)");
  c_grad->add_option("--tol", grad.tol, "Pass threshold on the max relative error");
  c_grad->add_option("--seed", grad.seed, "Sampling seed");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP gateway");
  c_serve->add_option("--ckpt", serve.ckpt, "Checkpoint file");
  c_serve->add_option("--host", serve.host, "Bind address");
  c_serve->add_option("--port", serve.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  c_serve->add_option("--labels", serve.labels, "Label set (default: from checkpoint)")
      ->check(CLI::IsMember({"toy", "dirg", "hit"}));
  c_serve->add_option("--ttl-min", serve.ttl_min, "Idle session lifetime in minutes")->check(CLI::PositiveNumber);
  c_serve->add_option("--max-clip-seconds", serve.max_clip_seconds, "Longest accepted upload");
  c_serve->add_option("--static", serve.static_dir, "Directory served at /")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*c_synth) run_synth(synth, app);
    if (*c_corpus) run_corpus(corpus, app);
    if (*c_train) run_train(train, app);
    if (*c_diag) run_diagnose(diag_model, diag_wav);
    if (*c_ask) run_ask(ask_model, ask_wav);
    if (*c_eval) run_eval(eval_model, eval, app);
    if (*c_grad) return run_gradcheck(grad);
    if (*c_serve) return run_serve(serve);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return 0;
}
