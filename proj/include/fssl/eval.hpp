#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fssl {

struct ScoredExample {
  double score = 0.0;
  int label = 0;  // 0 or 1
  std::string partition;
  std::string dsn;
  std::int64_t timestamp = 0;
};

struct PrPoint {
  double threshold;
  double precision;
  double recall;
};

// One operating point per distinct score, thresholds strictly decreasing
// (recall non-decreasing) down the list.
struct PrCurve {
  std::vector<PrPoint> points;
  int positives = 0;
  int negatives = 0;
};

PrCurve pr_curve(const std::vector<ScoredExample>& examples);

// Average precision: sum of (R_i - R_{i-1}) * P_i stepping through the
// curve in increasing-recall order.
double pr_auc(const PrCurve& curve);

// Max precision among points with recall >= r (interpolated convention).
double precision_at_recall(const PrCurve& curve, double r);

// Rank-based (Mann-Whitney) with average ranks on ties.
double roc_auc(const std::vector<ScoredExample>& examples);

struct MetricRow {
  double pr_auc = 0.0;
  double roc_auc = 0.0;
  std::map<double, double> precision_at;  // keyed by recall level
};

struct EvalReport {
  std::string system;
  std::map<std::string, MetricRow> partitions;  // "I", "U", "T"
  std::string score_file;
};

// Builds the metric row for one partition's scored examples.
MetricRow metric_row(const std::vector<ScoredExample>& examples,
                     const std::vector<double>& recall_levels);

struct RelativeCell {
  std::string system;
  std::string partition;
  std::string metric;
  double baseline_value = 0.0;
  double value = 0.0;
  double delta_pct = 0.0;  // 100 * (value - baseline) / baseline
};

std::vector<RelativeCell> relative_report(
    const EvalReport& baseline, const std::vector<EvalReport>& others);

// Header stamp embedded as a comment row in every emitted file.
struct RunStamp {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string build_id;
};

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoredExample>& rows,
                      const RunStamp& stamp);

// Inverse of write_scores_csv; comment rows are skipped.
std::vector<ScoredExample> read_scores_csv(const std::filesystem::path& path);

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<EvalReport>& reports,
                      const std::vector<RelativeCell>& relative,
                      const RunStamp& stamp);

void write_report_json(const std::filesystem::path& path,
                       const std::vector<EvalReport>& reports,
                       const std::vector<RelativeCell>& relative,
                       const RunStamp& stamp);

// Standalone SVG with the named curves overlaid.
void write_pr_svg(const std::filesystem::path& path, const std::string& title,
                  const std::vector<std::pair<std::string, PrCurve>>& curves);

}  // namespace fssl
