#pragma once

// Per-epoch training logs: parsing, trend checks against expected endpoints,
// and a plot-ready series document.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/error.hpp"

namespace pod_sentry {

struct EpochRecord {
  int epoch = 0;
  double box_loss = 0.0;
  double objectness_loss = 0.0;
  double classification_loss = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map5095 = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

enum class Series {
  kBoxLoss,
  kObjectnessLoss,
  kClassificationLoss,
  kPrecision,
  kRecall,
  kMap50,
  kMap5095,
};

inline constexpr std::array<Series, 7> kAllSeries = {
    Series::kBoxLoss,   Series::kObjectnessLoss, Series::kClassificationLoss,
    Series::kPrecision, Series::kRecall,         Series::kMap50,
    Series::kMap5095};

inline std::string_view series_name(Series s) {
  switch (s) {
    case Series::kBoxLoss: return "box_loss";
    case Series::kObjectnessLoss: return "objectness_loss";
    case Series::kClassificationLoss: return "classification_loss";
    case Series::kPrecision: return "precision";
    case Series::kRecall: return "recall";
    case Series::kMap50: return "map50";
    case Series::kMap5095: return "map5095";
  }
  return "";
}

inline bool is_loss(Series s) {
  return s == Series::kBoxLoss || s == Series::kObjectnessLoss ||
         s == Series::kClassificationLoss;
}

template <typename Record>
auto& series_value(Record& r, Series s) {
  switch (s) {
    case Series::kBoxLoss: return r.box_loss;
    case Series::kObjectnessLoss: return r.objectness_loss;
    case Series::kClassificationLoss: return r.classification_loss;
    case Series::kPrecision: return r.precision;
    case Series::kRecall: return r.recall;
    case Series::kMap50: return r.map50;
    case Series::kMap5095: return r.map5095;
  }
  return r.box_loss;
}

struct ParsedTrainingLog {
  std::vector<EpochRecord> records;
  std::vector<std::string> warnings;
};

// Comma-separated, first line is the header. Columns may appear in any
// order; unknown columns are ignored with a warning.
inline ParsedTrainingLog parse_training_log(std::string_view text) {
  const auto lines = detail::lines_of(text);
  std::size_t header_line = 0;
  while (header_line < lines.size() &&
         detail::split_ws(lines[header_line]).empty()) {
    ++header_line;
  }
  if (header_line == lines.size()) throw ParseError("line 1", "missing header");

  auto split_csv = [](std::string_view line) {
    std::vector<std::string> cells;
    std::size_t b = 0;
    while (true) {
      std::size_t e = line.find(',', b);
      std::string_view cell =
          line.substr(b, e == std::string_view::npos ? line.size() - b : e - b);
      while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front())))
        cell.remove_prefix(1);
      while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back())))
        cell.remove_suffix(1);
      cells.emplace_back(cell);
      if (e == std::string_view::npos) break;
      b = e + 1;
    }
    return cells;
  };

  ParsedTrainingLog out;
  const auto header = split_csv(lines[header_line]);
  const std::string header_where = "line " + std::to_string(header_line + 1);
  std::optional<std::size_t> epoch_col;
  std::map<Series, std::size_t> cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    bool known = false;
    if (header[c] == "epoch") {
      epoch_col = c;
      known = true;
    }
    for (Series s : kAllSeries) {
      if (header[c] == series_name(s)) {
        cols[s] = c;
        known = true;
      }
    }
    if (!known) {
      out.warnings.push_back("ignoring unknown column '" + header[c] + "'");
    }
  }
  if (!epoch_col) throw ParseError(header_where, "missing column 'epoch'");
  for (Series s : kAllSeries) {
    if (!cols.count(s)) {
      throw ParseError(header_where,
                       "missing column '" + std::string(series_name(s)) + "'");
    }
  }

  for (std::size_t n = header_line + 1; n < lines.size(); ++n) {
    if (detail::split_ws(lines[n]).empty()) continue;
    const std::string where = "line " + std::to_string(n + 1);
    const auto cells = split_csv(lines[n]);
    if (cells.size() != header.size()) {
      throw ParseError(where, "expected " + std::to_string(header.size()) +
                                  " columns, found " +
                                  std::to_string(cells.size()));
    }
    EpochRecord r;
    const auto ep = detail::to_int(cells[*epoch_col]);
    if (!ep || *ep < 1) {
      throw ParseError(where, "epoch '" + cells[*epoch_col] +
                                  "' is not a positive integer");
    }
    r.epoch = static_cast<int>(*ep);
    for (const auto& [s, c] : cols) {
      const auto v = detail::to_double(cells[c]);
      if (!v) {
        throw ParseError(where, std::string(series_name(s)) + " value '" +
                                    cells[c] + "' is not a number");
      }
      if (*v < 0.0 || (!is_loss(s) && *v > 1.0)) {
        throw ParseError(where, std::string(series_name(s)) + " value " +
                                    cells[c] + " out of range");
      }
      series_value(r, s) = *v;
    }
    if (!out.records.empty() && r.epoch <= out.records.back().epoch) {
      throw ParseError(where, "epoch " + std::to_string(r.epoch) +
                                  " does not increase");
    }
    out.records.push_back(r);
  }
  return out;
}

// Values are written with 6 significant digits.
inline std::string emit_training_log(const std::vector<EpochRecord>& records) {
  std::string out = "epoch";
  for (Series s : kAllSeries) {
    out += ",";
    out += series_name(s);
  }
  out += "\n";
  char buf[32];
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    for (Series s : kAllSeries) {
      std::snprintf(buf, sizeof(buf), ",%.6g", series_value(r, s));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class Direction { kDecreasing, kIncreasing };

struct TrendExpectation {
  Series series;
  Direction direction;
  std::optional<double> start;
  double end = 0.0;
  double tolerance = 0.0;
};

inline constexpr int kTrendWindow = 5;
inline constexpr double kLossTolerance = 0.01;
inline constexpr double kMetricTolerance = 0.05;

// Approximate endpoints of a healthy run. Loose tolerances, since the values
// were read off plotted curves.
inline std::vector<TrendExpectation> default_trend_expectations() {
  const auto dec = Direction::kDecreasing;
  const auto inc = Direction::kIncreasing;
  return {
      {Series::kBoxLoss, dec, 0.05, 0.02, kLossTolerance},
      {Series::kObjectnessLoss, dec, 0.012, 0.002, kLossTolerance},
      {Series::kClassificationLoss, dec, 0.016, 0.004, kLossTolerance},
      {Series::kPrecision, inc, 0.2, 0.6, kMetricTolerance},
      {Series::kRecall, inc, 0.1, 0.45, kMetricTolerance},
      {Series::kMap50, inc, 0.1, 0.3, kMetricTolerance},
      {Series::kMap5095, inc, 0.0, 0.23, kMetricTolerance},
  };
}

enum class Verdict { kPass, kFail, kInsufficientData };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kFail: return "fail";
    case Verdict::kInsufficientData: return "insufficient_data";
  }
  return "";
}

struct TrendResult {
  TrendExpectation expectation;
  Verdict verdict = Verdict::kInsufficientData;
  int window = 0;
  double start_mean = 0.0;
  double end_mean = 0.0;
  std::vector<std::string> failures;
};

// Window means over the first and last `kTrendWindow` epochs (shrunk to half
// the log when shorter) compared to each expectation.
inline std::vector<TrendResult> check_trends(
    const std::vector<EpochRecord>& records,
    const std::vector<TrendExpectation>& expectations =
        default_trend_expectations()) {
  std::vector<TrendResult> out;
  const int n = static_cast<int>(records.size());
  const int window = std::min(kTrendWindow, n / 2);
  for (const auto& ex : expectations) {
    TrendResult t;
    t.expectation = ex;
    t.window = window;
    if (window < 1) {
      out.push_back(std::move(t));
      continue;
    }
    for (int i = 0; i < window; ++i) {
      t.start_mean += series_value(records[static_cast<std::size_t>(i)], ex.series);
      t.end_mean +=
          series_value(records[static_cast<std::size_t>(n - 1 - i)], ex.series);
    }
    t.start_mean /= window;
    t.end_mean /= window;
    char buf[160];
    const bool moved = ex.direction == Direction::kDecreasing
                           ? t.end_mean < t.start_mean
                           : t.end_mean > t.start_mean;
    if (!moved) {
      std::snprintf(buf, sizeof(buf), "expected %s trend, start %.6g end %.6g",
                    ex.direction == Direction::kDecreasing ? "decreasing"
                                                           : "increasing",
                    t.start_mean, t.end_mean);
      t.failures.emplace_back(buf);
    }
    if (ex.start && std::abs(t.start_mean - *ex.start) > ex.tolerance) {
      std::snprintf(buf, sizeof(buf), "start %.6g not within %.6g of %.6g",
                    t.start_mean, ex.tolerance, *ex.start);
      t.failures.emplace_back(buf);
    }
    if (std::abs(t.end_mean - ex.end) > ex.tolerance) {
      std::snprintf(buf, sizeof(buf), "end %.6g not within %.6g of %.6g",
                    t.end_mean, ex.tolerance, ex.end);
      t.failures.emplace_back(buf);
    }
    t.verdict = t.failures.empty() ? Verdict::kPass : Verdict::kFail;
    out.push_back(std::move(t));
  }
  return out;
}

inline bool all_pass(const std::vector<TrendResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const TrendResult& t) {
    return t.verdict == Verdict::kPass;
  });
}

inline constexpr const char* kTrainlogSchema = "pod-sentry/trainlog@1";

struct TrainingReport {
  nlohmann::json document;
  std::string summary;
  std::vector<TrendResult> trends;
};

inline TrainingReport emit_training_report(
    const std::vector<EpochRecord>& records,
    const std::vector<TrendExpectation>& expectations =
        default_trend_expectations()) {
  using nlohmann::json;
  if (records.empty()) throw ValidationError("training log has no records");
  TrainingReport rep;
  rep.trends = check_trends(records, expectations);

  json epochs = json::array();
  for (const auto& r : records) epochs.push_back(r.epoch);
  json series = json::object();
  for (Series s : kAllSeries) {
    json vals = json::array();
    for (const auto& r : records) vals.push_back(series_value(r, s));
    series[std::string(series_name(s))] = std::move(vals);
  }
  json verdicts = json::array();
  for (const auto& t : rep.trends) {
    const auto& ex = t.expectation;
    json v{{"series", std::string(series_name(ex.series))},
           {"direction", ex.direction == Direction::kDecreasing ? "decreasing"
                                                                : "increasing"},
           {"expected_start", ex.start ? json(*ex.start) : json(nullptr)},
           {"expected_end", ex.end},
           {"tolerance", ex.tolerance},
           {"window", t.window},
           {"verdict", std::string(to_string(t.verdict))},
           {"failures", t.failures}};
    if (t.verdict != Verdict::kInsufficientData) {
      v["start_mean"] = t.start_mean;
      v["end_mean"] = t.end_mean;
    }
    verdicts.push_back(std::move(v));
  }
  rep.document = {{"schema", kTrainlogSchema},
                  {"epochs", std::move(epochs)},
                  {"series", std::move(series)},
                  {"verdicts", std::move(verdicts)},
                  {"tolerances",
                   {{"loss", kLossTolerance},
                    {"metric", kMetricTolerance},
                    {"window", kTrendWindow}}},
                  {"expectations_source", "approximate defaults"}};

  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "training log: %zu epochs (%d..%d); window %d; tolerances "
                "loss +/-%.3g, metrics +/-%.3g (approximate defaults)\n",
                records.size(), records.front().epoch, records.back().epoch,
                std::min(kTrendWindow, static_cast<int>(records.size()) / 2),
                kLossTolerance, kMetricTolerance);
  s += buf;
  for (const auto& t : rep.trends) {
    if (t.verdict == Verdict::kInsufficientData) {
      std::snprintf(buf, sizeof(buf), "  %-20s insufficient data\n",
                    std::string(series_name(t.expectation.series)).c_str());
    } else {
      std::snprintf(buf, sizeof(buf), "  %-20s %-5s start %.4g end %.4g\n",
                    std::string(series_name(t.expectation.series)).c_str(),
                    std::string(to_string(t.verdict)).c_str(), t.start_mean,
                    t.end_mean);
    }
    s += buf;
    for (const auto& f : t.failures) s += "      " + f + "\n";
  }
  rep.summary = std::move(s);
  return rep;
}

// Wide CSV with one row per epoch, for plotting tools.
inline std::string series_csv(const std::vector<EpochRecord>& records) {
  return emit_training_log(records);
}

}  // namespace pod_sentry
