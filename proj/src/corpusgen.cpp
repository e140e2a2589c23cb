// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/corpusgen.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>

#include "vibrodiag/error.hpp"
#include "vibrodiag/rng.hpp"

namespace vibrodiag {

std::vector<std::string> LabelSet::labels() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

int LabelSet::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].label == label) return static_cast<int>(i);
  }
  return -1;
}

bool LabelSet::is_healthy(int index) const {
  return entries.at(static_cast<std::size_t>(index)).fault_type == FaultType::kHealthy;
}

LabelSet LabelSet::toy() {
  return {"toy",
          {{"healthy", FaultType::kHealthy, std::nullopt},
           {"inner race fault", FaultType::kInnerRace, std::nullopt},
           {"outer race fault", FaultType::kOuterRace, std::nullopt},
           {"roller fault", FaultType::kRoller, std::nullopt}}};
}

LabelSet LabelSet::dirg() {
  return {"dirg",
          {{"healthy 0A", FaultType::kHealthy, 0},
           {"inner ring indentation 450 um", FaultType::kInnerRace, 450},
           {"inner ring indentation 250 um", FaultType::kInnerRace, 250},
           {"inner ring indentation 150 um", FaultType::kInnerRace, 150},
           {"roller indentation 450 um", FaultType::kRoller, 450},
           {"roller indentation 250 um", FaultType::kRoller, 250},
           {"roller indentation 150 um", FaultType::kRoller, 150}}};
}

LabelSet LabelSet::hit() {
  return {"hit",
          {{"healthy", FaultType::kHealthy, std::nullopt},
           {"inner ring defect", FaultType::kInnerRace, std::nullopt},
           {"outer ring defect", FaultType::kOuterRace, std::nullopt}}};
}

LabelSet LabelSet::by_name(std::string_view name) {
  if (name == "toy") return toy();
  if (name == "dirg") return dirg();
  if (name == "hit") return hit();
  fail(ErrorCode::kInvalidSpec, "unknown label set '" + std::string(name) + "'");
}

std::vector<FaultCondition> LabelSet::class_templates() const {
  if (name == "toy") return synthbench::toy_classes();
  if (name == "dirg") return synthbench::dirg_classes();
  if (name == "hit") return synthbench::hit_classes();
  fail(ErrorCode::kInvalidSpec, "label set '" + name + "' has no class templates");
}

namespace corpusgen {
namespace {

// {speed} {load} {characteristics} {severity} {location}
constexpr std::array<std::string_view, kTemplateCount> kFaultTemplates = {
    "A bearing running at {speed} rpm under {load} N shows {characteristics}, indicating a "
    "{severity} {location} fault.",
    "Vibration recorded at {speed} rpm with a {load} N radial load exhibits {characteristics}; "
    "the signature points to {severity} damage on the {location}.",
    "Under {load} N and {speed} rpm, the accelerometer captures {characteristics}, consistent "
    "with a {location} defect of {severity} size.",
    "The signal contains {characteristics}. Operating point: {speed} rpm, {load} N. Diagnosis: "
    "{location} fault, {severity} damage.",
    "At a shaft speed of {speed} rpm and a load of {load} N, {characteristics} reveal a "
    "{severity} fault on the {location}.",
    "This {speed} rpm, {load} N recording displays {characteristics}, typical of a {location} "
    "fault with {severity} damage.",
};

constexpr std::array<std::string_view, kTemplateCount> kHealthyTemplates = {
    "A bearing running at {speed} rpm under {load} N shows {characteristics}, indicating a "
    "healthy bearing with no damage.",
    "Vibration recorded at {speed} rpm with a {load} N radial load exhibits {characteristics}; "
    "no defect signature is present.",
    "Under {load} N and {speed} rpm, the accelerometer captures {characteristics}, consistent "
    "with a healthy bearing.",
    "The signal contains {characteristics}. Operating point: {speed} rpm, {load} N. Diagnosis: "
    "healthy.",
    "At a shaft speed of {speed} rpm and a load of {load} N, {characteristics} reveal no fault.",
    "This {speed} rpm, {load} N recording displays {characteristics}, typical of a healthy "
    "bearing.",
};

// Each group lists the base phrase first.
using Variants = std::vector<std::string_view>;

const std::vector<Variants>& location_variants() {
  static const std::vector<Variants> table = {
      {"inner race", "inner ring"},
      {"outer race", "outer ring"},
      {"rolling element", "roller"},
  };
  return table;
}

const std::vector<Variants>& severity_variants() {
  static const std::vector<Variants> table = {
      {"150 µm", "mild"},
      {"250 µm", "moderate"},
      {"450 µm", "severe"},
  };
  return table;
}

const std::vector<Variants>& characteristic_variants() {
  static const std::vector<Variants> table = {
      {"periodic high-frequency impact pulses", "periodic high-frequency impulsive bursts"},
      {"regularly spaced impact pulses", "regularly spaced impulsive bursts"},
      {"intermittent impact pulses", "intermittent impulsive bursts"},
      {"stationary background noise", "stationary broadband noise"},
  };
  return table;
}

std::string pick_variant(const std::string& base, const std::vector<Variants>& table, Rng* rng) {
  for (const auto& group : table) {
    if (group.front() == base) {
      const std::size_t k = rng ? rng->below(group.size()) : 0;
      return std::string(group[k]);
    }
  }
  return base;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.0f", std::round(v));
  return buf;
}

void replace_all(std::string& text, std::string_view key, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
}

// Longest phrases first so "roller" never shadows "rolling element".
struct Keyword {
  std::string_view phrase;
  FaultType type;
};
constexpr std::array<Keyword, 6> kLocationKeywords = {{
    {"rolling element", FaultType::kRoller},
    {"inner race", FaultType::kInnerRace},
    {"inner ring", FaultType::kInnerRace},
    {"outer race", FaultType::kOuterRace},
    {"outer ring", FaultType::kOuterRace},
    {"roller", FaultType::kRoller},
}};

struct SeverityKeyword {
  std::string_view phrase;
  int um;
};
constexpr std::array<SeverityKeyword, 9> kSeverityKeywords = {{
    {"150 µm", 150}, {"250 µm", 250}, {"450 µm", 450},
    {"150 um", 150}, {"250 um", 250}, {"450 um", 450},
    {"mild", 150},   {"moderate", 250}, {"severe", 450},
}};

std::string_view base_location(FaultType t) {
  switch (t) {
    case FaultType::kInnerRace: return "inner race";
    case FaultType::kOuterRace: return "outer race";
    case FaultType::kRoller: return "rolling element";
    case FaultType::kHealthy: return "";
  }
  return "";
}

}  // namespace

DescriptionFields fields_for(const FaultCondition& cond) {
  DescriptionFields f;
  f.fault_type = cond.fault_type;
  f.speed_rpm = cond.speed_rpm;
  f.load_n = cond.load_n;
  f.location = std::string(base_location(cond.fault_type));
  if (cond.fault_type != FaultType::kHealthy) f.severity = std::to_string(cond.severity_um) + " µm";
  const auto& chars = characteristic_variants();
  switch (cond.fault_type) {
    case FaultType::kInnerRace: f.characteristics = std::string(chars[0].front()); break;
    case FaultType::kOuterRace: f.characteristics = std::string(chars[1].front()); break;
    case FaultType::kRoller: f.characteristics = std::string(chars[2].front()); break;
    case FaultType::kHealthy: f.characteristics = std::string(chars[3].front()); break;
  }
  return f;
}

std::string render_description(const DescriptionFields& fields, int template_id,
                               std::uint64_t seed) {
  if (template_id < 0 || template_id >= kTemplateCount) {
    fail(ErrorCode::kUnknownTemplate, "template id " + std::to_string(template_id));
  }
  const bool healthy = fields.fault_type == FaultType::kHealthy;
  std::string text(healthy ? kHealthyTemplates[static_cast<std::size_t>(template_id)]
                           : kFaultTemplates[static_cast<std::size_t>(template_id)]);

  std::optional<Rng> rng;
  if (seed != kBaseVariants) rng.emplace(seed);
  Rng* r = rng ? &*rng : nullptr;
  // Draw order: location, severity, characteristics.
  const std::string location = pick_variant(fields.location, location_variants(), r);
  const std::string severity = pick_variant(fields.severity, severity_variants(), r);
  const std::string characteristics =
      pick_variant(fields.characteristics, characteristic_variants(), r);

  replace_all(text, "{speed}", format_number(fields.speed_rpm));
  replace_all(text, "{load}", format_number(fields.load_n));
  replace_all(text, "{characteristics}", characteristics);
  replace_all(text, "{severity}", severity);
  replace_all(text, "{location}", location);
  return text;
}

int severity_um_from_text(std::string_view severity) {
  for (const auto& k : kSeverityKeywords) {
    if (severity.find(k.phrase) != std::string_view::npos) return k.um;
  }
  fail(ErrorCode::kUnparseable, "unknown severity '" + std::string(severity) + "'");
}

ParsedFields parse_fields(std::string_view description) {
  const std::string text(description);
  ParsedFields out;

  std::set<FaultType> types;
  std::string remaining = text;
  for (const auto& k : kLocationKeywords) {
    std::size_t pos = remaining.find(k.phrase);
    if (pos == std::string::npos) continue;
    types.insert(k.type);
    if (out.location.empty()) out.location = std::string(base_location(k.type));
    // Blank out the match so shorter keywords cannot re-match inside it.
    while (pos != std::string::npos) {
      remaining.replace(pos, k.phrase.size(), std::string(k.phrase.size(), '#'));
      pos = remaining.find(k.phrase);
    }
  }
  if (types.size() > 1) fail(ErrorCode::kUnparseable, "conflicting fault locations");

  std::set<int> severities;
  for (const auto& k : kSeverityKeywords) {
    if (text.find(k.phrase) != std::string::npos) {
      if (severities.empty()) out.severity = std::string(k.phrase);
      severities.insert(k.um);
    }
  }
  if (severities.size() > 1) fail(ErrorCode::kUnparseable, "conflicting severities");

  const bool stationary = text.find("stationary") != std::string::npos ||
                          text.find("healthy") != std::string::npos;
  if (types.empty()) {
    if (!stationary || !severities.empty()) {
      fail(ErrorCode::kUnparseable, "no fault keywords in '" + text + "'");
    }
    out.fault_type = FaultType::kHealthy;
  } else {
    if (severities.empty()) fail(ErrorCode::kUnparseable, "fault without severity");
    out.fault_type = *types.begin();
    out.severity_um = *severities.begin();
  }

  static const std::regex speed_re(R"((\d+(?:\.\d+)?) rpm)");
  static const std::regex load_re(R"((\d+(?:\.\d+)?) N\b)");
  std::smatch m;
  if (std::regex_search(text, m, speed_re)) out.speed_rpm = std::stod(m[1]);
  if (std::regex_search(text, m, load_re)) out.load_n = std::stod(m[1]);
  return out;
}

std::string canonical_label(const FaultCondition& cond, const LabelSet& labels) {
  for (const auto& e : labels.entries) {
    if (e.fault_type != cond.fault_type) continue;
    if (e.severity_um && *e.severity_um != cond.severity_um) continue;
    return e.label;
  }
  fail(ErrorCode::kUnknownClass, std::string(to_string(cond.fault_type)) + " " +
                                     std::to_string(cond.severity_um) + " um is not in label set " +
                                     labels.name);
}

std::vector<VibrationTextPair> build_corpus(const std::vector<ManifestRecord>& manifest,
                                            const LabelSet& labels, int n_variants,
                                            std::uint64_t seed) {
  if (manifest.empty()) fail(ErrorCode::kEmptyManifest, "manifest has no clips");
  if (n_variants < 1 || n_variants > kTemplateCount) {
    fail(ErrorCode::kInvalidSpec, "n_variants must be in [1, 6]");
  }
  std::vector<VibrationTextPair> corpus;
  corpus.reserve(manifest.size() * static_cast<std::size_t>(n_variants));
  for (std::size_t j = 0; j < manifest.size(); ++j) {
    const auto& rec = manifest[j];
    const DescriptionFields fields = fields_for(rec.condition);
    const std::string label = canonical_label(rec.condition, labels);
    const std::uint64_t clip_seed = Rng::derive(seed, j);
    const int first_template = static_cast<int>(Rng(clip_seed).below(kTemplateCount));
    for (int v = 0; v < n_variants; ++v) {
      VibrationTextPair pair;
      pair.clip_path = rec.path;
      pair.fields = fields;
      pair.label = label;
      pair.split = rec.split;
      pair.template_id = (first_template + v) % kTemplateCount;
      pair.seed = Rng::derive(clip_seed, static_cast<std::uint64_t>(v) + 1);
      pair.description = render_description(fields, pair.template_id, pair.seed);
      corpus.push_back(std::move(pair));
    }
  }
  return corpus;
}

nlohmann::json to_json(const VibrationTextPair& pair) {
  nlohmann::json fields;
  fields["fault_type"] = std::string(to_string(pair.fields.fault_type));
  fields["location"] = pair.fields.location;
  fields["severity"] = pair.fields.severity;
  fields["speed_rpm"] = pair.fields.speed_rpm;
  fields["load_n"] = pair.fields.load_n;
  fields["characteristics"] = pair.fields.characteristics;
  nlohmann::json j;
  j["clip"] = pair.clip_path;
  j["text"] = pair.description;
  j["label"] = pair.label;
  j["fields"] = std::move(fields);
  j["split"] = pair.split;
  j["template_id"] = pair.template_id;
  j["seed"] = pair.seed;
  return j;
}

VibrationTextPair pair_from_json(const nlohmann::json& j) {
  VibrationTextPair p;
  p.clip_path = j.at("clip").get<std::string>();
  p.description = j.at("text").get<std::string>();
  p.label = j.at("label").get<std::string>();
  p.split = j.at("split").get<std::string>();
  p.template_id = j.at("template_id").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  const auto& f = j.at("fields");
  p.fields.fault_type = fault_type_from_string(f.at("fault_type").get<std::string>());
  p.fields.location = f.at("location").get<std::string>();
  p.fields.severity = f.at("severity").get<std::string>();
  p.fields.speed_rpm = f.at("speed_rpm").get<double>();
  p.fields.load_n = f.at("load_n").get<double>();
  p.fields.characteristics = f.at("characteristics").get<std::string>();
  return p;
}

std::string to_jsonl(const std::vector<VibrationTextPair>& corpus) {
  std::string out;
  for (const auto& p : corpus) {
    out += to_json(p).dump();
    out += '\n';
  }
  return out;
}

void write_corpus(const std::vector<VibrationTextPair>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << to_jsonl(corpus);
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

std::vector<VibrationTextPair> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<VibrationTextPair> corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      corpus.push_back(pair_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kInvalidSpec, path.string() + ": " + e.what());
    }
  }
  return corpus;
}

std::string_view followup_question(FollowUpKind kind) {
  switch (kind) {
    case FollowUpKind::kSeverity: return "how severe is the damage?";
    case FollowUpKind::kLocation: return "where is the fault located?";
    case FollowUpKind::kRecommendation: return "what should maintenance do?";
  }
  return "";
}

std::string followup_answer(FollowUpKind kind, const FaultCondition& cond) {
  const bool healthy = cond.fault_type == FaultType::kHealthy;
  switch (kind) {
    case FollowUpKind::kSeverity:
      return healthy ? "no damage" : std::to_string(cond.severity_um) + " um indentation";
    case FollowUpKind::kLocation:
      return healthy ? "no fault present" : std::string(base_location(cond.fault_type));
    case FollowUpKind::kRecommendation:
      return healthy ? "continue routine monitoring" : "schedule bearing replacement";
  }
  return "";
}

}  // namespace corpusgen
}  // namespace vibrodiag
