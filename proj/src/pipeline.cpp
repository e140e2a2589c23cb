// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/pipeline.hpp"

#include <exception>
#include <map>

#include "vibrodiag/error.hpp"

namespace vibrodiag::pipeline {

namespace {

// Prompt plus target; the target and EOS are the scored tokens.
TrainSequence teacher_forced(std::string_view question, int n_audio, std::string_view target) {
  const auto prompt = textcodec::build_prompt(question, n_audio);
  return {textcodec::build_prompt(question, n_audio, target), static_cast<int>(prompt.size())};
}

int audio_tokens(const MelSpec& mel, const ModelConfig& cfg) {
  return net::audio_token_count(static_cast<int>(mel.rows()), cfg);
}

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<LabeledClip> from_dataset(const Dataset& ds, const sigproc::PipelineOptions& opts) {
  std::vector<LabeledClip> out;
  const auto add = [&](const std::vector<DatasetClip>& clips, const std::string& split) {
    const std::size_t base = out.size();
    out.resize(base + clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
      const auto& c = clips[i];
      out[base + i] = {{synthbench::clip_path(c, split), *c.signal.meta, split},
                       sigproc::prepare_clip(c.signal, opts)};
    });
  };
  add(ds.train, "train");
  add(ds.test, "test");
  return out;
}

std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir) {
  const auto recs = synthbench::read_manifest(dir / "manifest.jsonl");
  std::vector<LabeledClip> out(recs.size());
  parallel_for(recs.size(), [&](std::size_t i) {
    out[i] = {recs[i], sigproc::read_wav(dir / recs[i].path)};
  });
  return out;
}

std::vector<ManifestRecord> records(const std::vector<LabeledClip>& clips) {
  std::vector<ManifestRecord> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(c.record);
  return out;
}

std::vector<MelSpec> features(const std::vector<LabeledClip>& clips, const ModelConfig& cfg) {
  std::vector<MelSpec> out(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) { out[i] = net::mel_frontend(clips[i].clip, cfg); });
  return out;
}

std::vector<TrainExample> vsa_examples(const std::vector<LabeledClip>& clips,
                                       const std::vector<MelSpec>& mels,
                                       const std::vector<VibrationTextPair>& corpus,
                                       const ModelConfig& cfg) {
  if (mels.size() != clips.size()) fail(ErrorCode::kLengthMismatch, "one feature matrix per clip");
  std::map<std::string, std::vector<const VibrationTextPair*>> by_clip;
  for (const auto& p : corpus) by_clip[p.clip_path].push_back(&p);
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].record.split != "train") continue;
    const auto it = by_clip.find(clips[i].record.path);
    if (it == by_clip.end()) continue;
    TrainExample ex;
    ex.mel = mels[i];
    const int n_audio = audio_tokens(mels[i], cfg);
    for (const auto* p : it->second) {
      ex.sequences.push_back(teacher_forced(kDescribeQuestion, n_audio, p->description));
    }
    out.push_back(std::move(ex));
  }
  if (out.empty()) fail(ErrorCode::kEmptyBatch, "no training clip has a description");
  return out;
}

std::vector<TrainExample> gfc_examples(const std::vector<LabeledClip>& clips,
                                       const std::vector<MelSpec>& mels, const LabelSet& labels,
                                       const ModelConfig& cfg, bool followups) {
  if (mels.size() != clips.size()) fail(ErrorCode::kLengthMismatch, "one feature matrix per clip");
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].record.split != "train") continue;
    const auto& cond = clips[i].record.condition;
    const std::string label = corpusgen::canonical_label(cond, labels);
    const int n_audio = audio_tokens(mels[i], cfg);
    TrainExample ex;
    ex.mel = mels[i];
    ex.sequences.push_back(teacher_forced(kDiagnosisQuestion, n_audio, label));
    if (!followups) {
      out.push_back(std::move(ex));
      continue;
    }

    const auto kind = static_cast<corpusgen::FollowUpKind>(out.size() % corpusgen::kFollowUpKinds);
    const auto question = corpusgen::followup_question(kind);
    const std::string answer = corpusgen::followup_answer(kind, cond);
    const auto prompt =
        textcodec::build_followup_prompt(kDiagnosisQuestion, n_audio, label, {}, question);
    ex.sequences.push_back({textcodec::build_followup_prompt(kDiagnosisQuestion, n_audio, label,
                                                             {}, question, answer),
                            static_cast<int>(prompt.size())});
    out.push_back(std::move(ex));
  }
  if (out.empty()) fail(ErrorCode::kEmptyBatch, "no training clips");
  return out;
}

SplitEval evaluate_split(const Diagnoser& model, const std::vector<LabeledClip>& clips,
                         const std::string& split) {
  SplitEval out;
  std::vector<const LabeledClip*> chosen;
  for (const auto& c : clips) {
    if (c.record.split == split) chosen.push_back(&c);
  }
  if (chosen.empty()) fail(ErrorCode::kEmptyBatch, "no clips in split '" + split + "'");
  out.diagnoses.resize(chosen.size());
  parallel_for(chosen.size(), [&](std::size_t i) { out.diagnoses[i] = model.diagnose(chosen[i]->clip); });
  for (const auto* c : chosen) {
    out.paths.push_back(c->record.path);
    out.truths.push_back(corpusgen::canonical_label(c->record.condition, model.labels()));
  }
  out.report = evalkit::evaluate(out.diagnoses, out.truths, model.labels());
  return out;
}

ExperimentConfig ExperimentConfig::toy() {
  ExperimentConfig c;
  c.vsa.stage = Stage::kVsa;
  c.vsa.epochs = 5;
  c.vsa.seed = 11;
  c.gfc.stage = Stage::kGfc;
  c.gfc.epochs = 40;
  c.gfc.seed = 12;
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"model", model.to_json()},
          {"vsa", vsa.to_json()},
          {"gfc", gfc.to_json()},
          {"run_vsa", run_vsa},
          {"gfc_followups", gfc_followups},
          {"vsa_variants", vsa_variants},
          {"corpus_seed", corpus_seed},
          {"label_set", label_set}};
}

ExperimentResult run_experiment(const std::vector<LabeledClip>& clips, const ExperimentConfig& cfg,
                                const StageCallback& on_step) {
  const LabelSet labels = LabelSet::by_name(cfg.label_set);
  const auto mels = features(clips, cfg.model);
  ExperimentResult r;
  r.params = init_params(cfg.model);
  const auto callback = [&](Stage stage) -> StepCallback {
    if (!on_step) return {};
    return [&on_step, stage](const LossPoint& p, int total) { on_step(stage, p, total); };
  };
  if (cfg.run_vsa) {
    const auto corpus =
        corpusgen::build_corpus(records(clips), labels, cfg.vsa_variants, cfg.corpus_seed);
    const auto ex = vsa_examples(clips, mels, corpus, cfg.model);
    r.vsa = optim::train_stage(r.params, ex, cfg.vsa, callback(Stage::kVsa));
  }
  const auto ex = gfc_examples(clips, mels, labels, cfg.model, cfg.gfc_followups);
  r.gfc = optim::train_stage(r.params, ex, cfg.gfc, callback(Stage::kGfc));
  const Diagnoser model(r.params, labels);
  r.test = evaluate_split(model, clips, "test");
  return r;
}

}  // namespace vibrodiag::pipeline
