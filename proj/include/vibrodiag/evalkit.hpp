// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibrodiag/corpusgen.hpp"
#include "vibrodiag/diagnose.hpp"

namespace vibrodiag {

inline constexpr int kReportVersion = 1;

struct ClassMetrics {
  std::string label;
  long support = 0;     // samples with this true class
  long predicted = 0;   // samples predicted as this class
  long correct = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const ClassMetrics&) const = default;
};

/// Metrics restricted to samples whose true class is in the group.
struct GroupMetrics {
  long n = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_f1 = 0.0;

  bool operator==(const GroupMetrics&) const = default;
};

struct MetricsReport {
  int version = kReportVersion;
  long n = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  long n_unparseable = 0;
  std::vector<ClassMetrics> per_class;
  GroupMetrics non_defective;
  GroupMetrics defective;
  /// Rows are true classes; columns are predicted classes followed by one
  /// "unparseable" column.
  std::vector<std::vector<long>> confusion;

  bool operator==(const MetricsReport&) const = default;
};

enum class ReportFormat { kJson, kText };

namespace evalkit {

/// Predicted labels (nullopt = unparseable) against true labels. Macro
/// averages run over classes that occur in `truths`.
MetricsReport evaluate(const std::vector<std::optional<std::string>>& predictions,
                       const std::vector<std::string>& truths, const LabelSet& labels);

/// Uses parsed_label, or only exact matches when `strict`.
MetricsReport evaluate(const std::vector<Diagnosis>& predictions,
                       const std::vector<std::string>& truths, const LabelSet& labels,
                       bool strict = false);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

std::string report_render(const MetricsReport& report, ReportFormat format);

}  // namespace evalkit
}  // namespace vibrodiag
