// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>

#include "test_util.hpp"
#include "vibrodiag/corpusgen.hpp"
#include "vibrodiag/rng.hpp"

using namespace vibrodiag;
using namespace vibrodiag::testing;

namespace {

std::vector<ManifestRecord> manifest_of(const std::vector<FaultCondition>& classes, int per_class,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ManifestRecord> out;
  for (int c = 0; c < static_cast<int>(classes.size()); ++c) {
    for (int i = 0; i < per_class; ++i) {
      FaultCondition cond = classes[static_cast<std::size_t>(c)];
      cond.speed_rpm = rng.uniform(1000.0, 30000.0);
      cond.load_n = rng.uniform(0.0, 1800.0);
      out.push_back({"train/c" + std::to_string(c) + "_" + std::to_string(i) + ".wav", cond,
                     i % 5 == 0 ? "test" : "train"});
    }
  }
  return out;
}

bool contains(const std::string& s, std::string_view needle) { return s.find(needle) != std::string::npos; }

// Keyword classifier written independently of parse_fields.
FaultType oracle_type(const std::string& text) {
  const bool inner = contains(text, "inner");
  const bool outer = contains(text, "outer");
  const bool roll = contains(text, "roll");
  const int hits = inner + outer + roll;
  if (hits == 0) return FaultType::kHealthy;
  REQUIRE(hits == 1);
  return inner ? FaultType::kInnerRace : outer ? FaultType::kOuterRace : FaultType::kRoller;
}

int oracle_severity(const std::string& text) {
  int found = 0;
  const std::pair<std::string_view, int> words[] = {{"150", 150}, {"mild", 150},     {"250", 250},
                                                     {"moderate", 250}, {"450", 450}, {"severe", 450}};
  for (const auto& [w, um] : words) {
    // Digits also appear in speeds and loads; only count them before the unit.
    const bool numeric = w[0] >= '0' && w[0] <= '9';
    const bool hit = numeric ? contains(text, std::string(w) + " µm") : contains(text, w);
    if (hit) {
      REQUIRE((found == 0 || found == um));
      found = um;
    }
  }
  return found;
}

}  // namespace

TEST_CASE("label sets and canonical labels") {
  const auto toy = LabelSet::toy();
  CHECK(toy.labels() == std::vector<std::string>{"healthy", "inner race fault", "outer race fault", "roller fault"});
  CHECK(toy.index_of("roller fault") == 3);
  CHECK(toy.index_of("Roller fault") == -1);
  CHECK(toy.is_healthy(0));
  CHECK_FALSE(toy.is_healthy(1));
  CHECK(LabelSet::dirg().entries.size() == 7);
  CHECK(LabelSet::hit().entries.size() == 3);
  CHECK(error_code_of([] { LabelSet::by_name("cwru"); }) == code(ErrorCode::kInvalidSpec));

  CHECK(corpusgen::canonical_label({FaultType::kInnerRace, 450, 6000, 0}, toy) == "inner race fault");
  CHECK(corpusgen::canonical_label({FaultType::kRoller, 250, 6000, 0}, LabelSet::dirg()) ==
        "roller indentation 250 um");
  CHECK(error_code_of([] { corpusgen::canonical_label({FaultType::kOuterRace, 250, 6000, 0}, LabelSet::dirg()); }) ==
        code(ErrorCode::kUnknownClass));

  for (const auto& name : {"toy", "dirg", "hit"}) {
    const auto set = LabelSet::by_name(name);
    const auto templates = set.class_templates();
    REQUIRE(templates.size() == set.entries.size());
    for (std::size_t i = 0; i < templates.size(); ++i) {
      CHECK(corpusgen::canonical_label(templates[i], set) == set.entries[i].label);
    }
  }
}

TEST_CASE("base-variant rendering is the literal template") {
  const FaultCondition cond{FaultType::kInnerRace, 150, 6000.0, 900.4};
  const auto f = corpusgen::fields_for(cond);
  CHECK(f.location == "inner race");
  CHECK(f.severity == "150 µm");
  CHECK(corpusgen::render_description(f, 0, corpusgen::kBaseVariants) ==
        "A bearing running at 6000 rpm under 900 N shows periodic high-frequency impact pulses, "
        "indicating a 150 µm inner race fault.");
  const auto h = corpusgen::fields_for({FaultType::kHealthy, 0, 1234.5, 0.0});
  CHECK(corpusgen::render_description(h, 3, corpusgen::kBaseVariants) ==
        "The signal contains stationary background noise. Operating point: 1235 rpm, 0 N. "
        "Diagnosis: healthy.");
  CHECK(error_code_of([&] { corpusgen::render_description(f, 6, 1); }) == code(ErrorCode::kUnknownTemplate));
}

TEST_CASE("every generated pair round-trips to its fault type and severity") {
  std::vector<FaultCondition> classes = synthbench::dirg_classes();
  classes.push_back({FaultType::kOuterRace, 150, 6000.0, 0.0});
  classes.push_back({FaultType::kOuterRace, 450, 6000.0, 0.0});
  LabelSet all{"all", {}};
  for (const auto& c : classes) {
    all.entries.push_back({std::string(to_string(c.fault_type)) + std::to_string(c.severity_um), c.fault_type,
                           c.severity_um});
  }
  const auto manifest = manifest_of(classes, 100, 3);
  const auto corpus = corpusgen::build_corpus(manifest, all, 3, 17);
  REQUIRE(corpus.size() == manifest.size() * 3);
  std::set<std::string> texts;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    const auto& truth = manifest[i / 3].condition;
    CAPTURE(p.description);
    const auto parsed = corpusgen::parse_fields(p.description);
    CHECK(parsed.fault_type == truth.fault_type);
    CHECK(parsed.severity_um == truth.severity_um);
    REQUIRE(parsed.speed_rpm);
    CHECK(*parsed.speed_rpm == std::round(truth.speed_rpm));
    REQUIRE(parsed.load_n);
    CHECK(*parsed.load_n == std::round(truth.load_n));
    CHECK(oracle_type(p.description) == truth.fault_type);
    CHECK(oracle_severity(p.description) == truth.severity_um);
    CHECK(p.clip_path == manifest[i / 3].path);
    CHECK(p.split == manifest[i / 3].split);
    texts.insert(p.description);
  }
  // Variants spread over templates and phrases.
  CHECK(texts.size() > corpus.size() / 2);
}

TEST_CASE("each clip gets distinct templates") {
  const auto manifest = manifest_of(synthbench::toy_classes(), 10, 1);
  const auto corpus = corpusgen::build_corpus(manifest, LabelSet::toy(), 6, 2);
  for (std::size_t j = 0; j < manifest.size(); ++j) {
    std::set<int> ids;
    for (int v = 0; v < 6; ++v) ids.insert(corpus[j * 6 + static_cast<std::size_t>(v)].template_id);
    CHECK(ids.size() == 6);
  }
  CHECK(error_code_of([&] { corpusgen::build_corpus(manifest, LabelSet::toy(), 7, 2); }) ==
        code(ErrorCode::kInvalidSpec));
  CHECK(error_code_of([&] { corpusgen::build_corpus({}, LabelSet::toy(), 1, 2); }) ==
        code(ErrorCode::kEmptyManifest));
}

TEST_CASE("corpus bytes are a function of the seed") {
  const auto manifest = manifest_of(synthbench::toy_classes(), 25, 8);
  const auto a = corpusgen::to_jsonl(corpusgen::build_corpus(manifest, LabelSet::toy(), 2, 5));
  const auto b = corpusgen::to_jsonl(corpusgen::build_corpus(manifest, LabelSet::toy(), 2, 5));
  const auto c = corpusgen::to_jsonl(corpusgen::build_corpus(manifest, LabelSet::toy(), 2, 6));
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.back() == '\n');
  CHECK(a.find('\r') == std::string::npos);
}

TEST_CASE("descriptions regenerate from fields, template and seed") {
  const auto manifest = manifest_of(synthbench::toy_classes(), 5, 4);
  for (const auto& p : corpusgen::build_corpus(manifest, LabelSet::toy(), 2, 9)) {
    CHECK(corpusgen::render_description(p.fields, p.template_id, p.seed) == p.description);
  }
}

TEST_CASE("corpus files round trip") {
  const auto dir = scratch_dir("corpus_io");
  const auto corpus = corpusgen::build_corpus(manifest_of(synthbench::toy_classes(), 4, 2), LabelSet::toy(), 2, 3);
  corpusgen::write_corpus(corpus, dir / "c.jsonl");
  const auto back = corpusgen::read_corpus(dir / "c.jsonl");
  CHECK(corpusgen::to_jsonl(back) == corpusgen::to_jsonl(corpus));
}

TEST_CASE("parse_fields rejects ambiguous and empty descriptions") {
  CHECK(error_code_of([] { corpusgen::parse_fields("inner race and outer race damage, mild"); }) ==
        code(ErrorCode::kUnparseable));
  CHECK(error_code_of([] { corpusgen::parse_fields("a mild and severe inner race fault"); }) ==
        code(ErrorCode::kUnparseable));
  CHECK(error_code_of([] { corpusgen::parse_fields("nothing to see here"); }) == code(ErrorCode::kUnparseable));
  CHECK(error_code_of([] { corpusgen::parse_fields("roller fault"); }) == code(ErrorCode::kUnparseable));
  const auto p = corpusgen::parse_fields("a 450 um defect on the rolling element");
  CHECK(p.fault_type == FaultType::kRoller);
  CHECK(p.severity_um == 450);
  CHECK(p.location == "rolling element");
  CHECK_FALSE(p.speed_rpm);
}

TEST_CASE("follow-up answers") {
  using corpusgen::FollowUpKind;
  const FaultCondition inner{FaultType::kInnerRace, 250, 6000, 0};
  const FaultCondition healthy{FaultType::kHealthy, 0, 6000, 0};
  CHECK(corpusgen::followup_answer(FollowUpKind::kSeverity, inner) == "250 um indentation");
  CHECK(corpusgen::followup_answer(FollowUpKind::kLocation, inner) == "inner race");
  CHECK(corpusgen::followup_answer(FollowUpKind::kSeverity, healthy) == "no damage");
  std::set<std::string_view> qs;
  for (int k = 0; k < corpusgen::kFollowUpKinds; ++k) qs.insert(corpusgen::followup_question(static_cast<FollowUpKind>(k)));
  CHECK(qs.size() == 3);
}
