// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/evalkit.hpp"

#include <cstdio>

#include "vibrodiag/error.hpp"

namespace vibrodiag::evalkit {

namespace {

double ratio(long num, long den) { return den > 0 ? static_cast<double>(num) / den : 0.0; }

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Macro precision and F1 over the classes of `members` that have support,
// accuracy over their samples.
GroupMetrics group(const MetricsReport& r, const std::vector<bool>& members) {
  GroupMetrics g;
  long correct = 0;
  int present = 0;
  double p_sum = 0.0;
  double f_sum = 0.0;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    if (!members[c] || m.support == 0) continue;
    g.n += m.support;
    correct += m.correct;
    ++present;
    p_sum += m.precision;
    f_sum += m.f1;
  }
  g.accuracy = ratio(correct, g.n);
  g.macro_precision = present > 0 ? p_sum / present : 0.0;
  g.macro_f1 = present > 0 ? f_sum / present : 0.0;
  return g;
}

}  // namespace

MetricsReport evaluate(const std::vector<std::optional<std::string>>& predictions,
                       const std::vector<std::string>& truths, const LabelSet& labels) {
  if (predictions.size() != truths.size()) {
    fail(ErrorCode::kLengthMismatch, "predictions and truths differ in length");
  }
  if (truths.empty()) fail(ErrorCode::kLengthMismatch, "nothing to evaluate");
  const std::size_t C = labels.entries.size();
  MetricsReport r;
  r.n = static_cast<long>(truths.size());
  r.confusion.assign(C, std::vector<long>(C + 1, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = labels.index_of(truths[i]);
    if (t < 0) fail(ErrorCode::kUnknownClass, "true label '" + truths[i] + "' not in label set");
    int p = predictions[i] ? labels.index_of(*predictions[i]) : -1;
    if (p < 0) {
      p = static_cast<int>(C);
      ++r.n_unparseable;
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }

  long correct = 0;
  int present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    ClassMetrics m;
    m.label = labels.entries[c].label;
    for (std::size_t j = 0; j <= C; ++j) m.support += r.confusion[c][j];
    for (std::size_t i = 0; i < C; ++i) m.predicted += r.confusion[i][c];
    m.correct = r.confusion[c][c];
    m.precision = ratio(m.correct, m.predicted);
    m.recall = ratio(m.correct, m.support);
    m.f1 = f1_of(m.precision, m.recall);
    correct += m.correct;
    if (m.support > 0) {
      ++present;
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
    r.per_class.push_back(m);
  }
  r.accuracy = ratio(correct, r.n);
  r.macro_precision /= present;
  r.macro_recall /= present;
  r.macro_f1 /= present;

  std::vector<bool> healthy(C), faulty(C);
  for (std::size_t c = 0; c < C; ++c) {
    healthy[c] = labels.is_healthy(static_cast<int>(c));
    faulty[c] = !healthy[c];
  }
  r.non_defective = group(r, healthy);
  r.defective = group(r, faulty);
  return r;
}

MetricsReport evaluate(const std::vector<Diagnosis>& predictions,
                       const std::vector<std::string>& truths, const LabelSet& labels,
                       bool strict) {
  std::vector<std::optional<std::string>> preds;
  preds.reserve(predictions.size());
  for (const auto& d : predictions) {
    const bool keep = d.parsed_label && (!strict || d.status == ParseStatus::kExact);
    preds.push_back(keep ? d.parsed_label : std::nullopt);
  }
  return evaluate(preds, truths, labels);
}

namespace {

nlohmann::json group_json(const GroupMetrics& g) {
  return {{"n", g.n},
          {"accuracy", g.accuracy},
          {"macro_precision", g.macro_precision},
          {"macro_f1", g.macro_f1}};
}

GroupMetrics group_from(const nlohmann::json& j) {
  return {j.at("n").get<long>(), j.at("accuracy").get<double>(),
          j.at("macro_precision").get<double>(), j.at("macro_f1").get<double>()};
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_class) {
    per.push_back({{"label", m.label},
                   {"support", m.support},
                   {"predicted", m.predicted},
                   {"correct", m.correct},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1}});
  }
  return {{"version", r.version},
          {"n", r.n},
          {"accuracy", r.accuracy},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1},
          {"n_unparseable", r.n_unparseable},
          {"per_class", per},
          {"groups", {{"non_defective", group_json(r.non_defective)},
                      {"defective", group_json(r.defective)}}},
          {"confusion", r.confusion}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.version = j.at("version").get<int>();
  if (r.version != kReportVersion) {
    fail(ErrorCode::kVersionMismatch, "report version " + std::to_string(r.version));
  }
  r.n = j.at("n").get<long>();
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_precision = j.at("macro_precision").get<double>();
  r.macro_recall = j.at("macro_recall").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.n_unparseable = j.at("n_unparseable").get<long>();
  for (const auto& m : j.at("per_class")) {
    r.per_class.push_back({m.at("label").get<std::string>(), m.at("support").get<long>(),
                           m.at("predicted").get<long>(), m.at("correct").get<long>(),
                           m.at("precision").get<double>(), m.at("recall").get<double>(),
                           m.at("f1").get<double>()});
  }
  r.non_defective = group_from(j.at("groups").at("non_defective"));
  r.defective = group_from(j.at("groups").at("defective"));
  r.confusion = j.at("confusion").get<std::vector<std::vector<long>>>();
  return r;
}

std::string report_render(const MetricsReport& r, ReportFormat format) {
  if (format == ReportFormat::kJson) return to_json(r).dump(2) + "\n";
  std::string out;
  char line[160];
  const auto pct = [](double v) { return v * 100.0; };
  std::snprintf(line, sizeof line, "%-32s %8s %10s %8s %8s\n", "class", "support", "precision",
                "recall", "f1");
  out += line;
  for (const auto& m : r.per_class) {
    std::snprintf(line, sizeof line, "%-32s %8ld %9.2f%% %7.2f%% %7.2f%%\n", m.label.c_str(),
                  m.support, pct(m.precision), pct(m.recall), pct(m.f1));
    out += line;
  }
  out += "\n";
  std::snprintf(line, sizeof line, "%-32s %8s %10s %8s %8s\n", "group", "n", "accuracy",
                "precision", "f1");
  out += line;
  const auto row = [&](const char* name, long n, double acc, double p, double f) {
    std::snprintf(line, sizeof line, "%-32s %8ld %9.2f%% %7.2f%% %7.2f%%\n", name, n, pct(acc),
                  pct(p), pct(f));
    out += line;
  };
  row("non-defective", r.non_defective.n, r.non_defective.accuracy,
      r.non_defective.macro_precision, r.non_defective.macro_f1);
  row("defective", r.defective.n, r.defective.accuracy, r.defective.macro_precision,
      r.defective.macro_f1);
  row("total", r.n, r.accuracy, r.macro_precision, r.macro_f1);
  std::snprintf(line, sizeof line, "\nunparseable: %ld\n", r.n_unparseable);
  out += line;
  return out;
}

}  // namespace vibrodiag::evalkit
