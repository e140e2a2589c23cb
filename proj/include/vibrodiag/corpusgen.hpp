// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Template-based vibration-text corpus. Sentence templates are filled with
// fields taken from clip metadata; a per-pair seed picks phrase variants so
// every description can be regenerated from (fields, template_id, seed).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibrodiag/condition.hpp"
#include "vibrodiag/synthbench.hpp"

namespace vibrodiag {

struct DescriptionFields {
  FaultType fault_type = FaultType::kHealthy;
  std::string location;         // "inner race", empty for healthy
  std::string severity;         // "150 µm", "mild", empty for healthy
  double speed_rpm = 0.0;
  double load_n = 0.0;
  std::string characteristics;  // signal-pattern phrase
};

/// Result of parse_fields; numeric fields are set when present in the text.
struct ParsedFields {
  FaultType fault_type = FaultType::kHealthy;
  std::string location;
  std::string severity;
  int severity_um = 0;
  std::optional<double> speed_rpm;
  std::optional<double> load_n;
};

struct VibrationTextPair {
  std::string clip_path;
  std::string description;
  std::string label;
  DescriptionFields fields;
  std::string split;
  int template_id = 0;
  std::uint64_t seed = 0;
};

struct LabelEntry {
  std::string label;
  FaultType fault_type = FaultType::kHealthy;
  std::optional<int> severity_um;  // unset: any severity of that fault type
};

/// Ordered canonical labels; lowercase ASCII.
struct LabelSet {
  std::string name;
  std::vector<LabelEntry> entries;

  std::vector<std::string> labels() const;
  /// Index of `label`, or -1.
  int index_of(std::string_view label) const;
  bool is_healthy(int index) const;

  static LabelSet toy();
  static LabelSet dirg();
  static LabelSet hit();
  /// "toy" | "dirg" | "hit"
  static LabelSet by_name(std::string_view name);
  /// Class templates matching the label order.
  std::vector<FaultCondition> class_templates() const;
};

namespace corpusgen {

inline constexpr int kTemplateCount = 6;
/// Variant seed that keeps every slot at its base phrase.
inline constexpr std::uint64_t kBaseVariants = 0;

/// Base phrases for a condition.
DescriptionFields fields_for(const FaultCondition& cond);

std::string render_description(const DescriptionFields& fields, int template_id,
                               std::uint64_t seed);

/// Recovers fault type, location and severity; throws kUnparseable when no
/// or conflicting keywords are found.
ParsedFields parse_fields(std::string_view description);

int severity_um_from_text(std::string_view severity);

std::string canonical_label(const FaultCondition& cond, const LabelSet& labels);

/// n_variants pairs per clip with distinct template ids.
std::vector<VibrationTextPair> build_corpus(const std::vector<ManifestRecord>& manifest,
                                            const LabelSet& labels, int n_variants,
                                            std::uint64_t seed);

nlohmann::json to_json(const VibrationTextPair& pair);
VibrationTextPair pair_from_json(const nlohmann::json& j);
/// One object per line, LF endings.
std::string to_jsonl(const std::vector<VibrationTextPair>& corpus);
void write_corpus(const std::vector<VibrationTextPair>& corpus, const std::filesystem::path& path);
std::vector<VibrationTextPair> read_corpus(const std::filesystem::path& path);

/// Follow-up questions used for training and in the interactive session.
enum class FollowUpKind { kSeverity, kLocation, kRecommendation };
inline constexpr int kFollowUpKinds = 3;
std::string_view followup_question(FollowUpKind kind);
std::string followup_answer(FollowUpKind kind, const FaultCondition& cond);

}  // namespace corpusgen
}  // namespace vibrodiag
