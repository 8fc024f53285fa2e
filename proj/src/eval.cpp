#include "fssl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

std::string metric_name(double recall_level) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p@%.2g", recall_level);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot open for write: " + path.string());
  return out;
}

void write_stamp(std::ofstream& out, const RunStamp& stamp) {
  out << "# config_hash=" << stamp.config_hash << " seed=" << stamp.seed
      << " build=" << stamp.build_id << "\n";
}

}  // namespace

PrCurve pr_curve(const std::vector<ScoredExample>& examples) {
  int positives = 0, negatives = 0;
  for (const auto& e : examples) {
    if (e.label == 1) {
      ++positives;
    } else if (e.label == 0) {
      ++negatives;
    } else {
      throw ContractError("labels must be 0 or 1");
    }
  }
  if (positives == 0 || negatives == 0) {
    throw DegenerateLabelsError("need at least one positive and one negative");
  }
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(examples.size());
  for (const auto& e : examples) sorted.emplace_back(e.score, e.label);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  PrCurve curve;
  curve.positives = positives;
  curve.negatives = negatives;
  int tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double threshold = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == threshold) {
      if (sorted[i].second == 1) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    PrPoint pt;
    pt.threshold = threshold;
    pt.precision = static_cast<double>(tp) / (tp + fp);
    pt.recall = static_cast<double>(tp) / positives;
    curve.points.push_back(pt);
  }
  return curve;
}

double pr_auc(const PrCurve& curve) {
  double auc = 0.0;
  double prev_recall = 0.0;
  for (const PrPoint& pt : curve.points) {
    auc += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
  }
  return auc;
}

double precision_at_recall(const PrCurve& curve, double r) {
  if (!(r > 0.0 && r <= 1.0)) {
    throw ContractError("recall level must lie in (0,1]");
  }
  double best = 0.0;
  for (const PrPoint& pt : curve.points) {
    if (pt.recall >= r) best = std::max(best, pt.precision);
  }
  return best;
}

double roc_auc(const std::vector<ScoredExample>& examples) {
  int positives = 0, negatives = 0;
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(examples.size());
  for (const auto& e : examples) {
    sorted.emplace_back(e.score, e.label);
    if (e.label == 1) {
      ++positives;
    } else {
      ++negatives;
    }
  }
  if (positives == 0 || negatives == 0) {
    throw DegenerateLabelsError("need at least one positive and one negative");
  }
  std::sort(sorted.begin(), sorted.end());
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) ++j;
    // ranks are 1-based; tied scores share the mean rank of the run
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (sorted[k].second == 1) pos_rank_sum += mean_rank;
    }
    i = j;
  }
  const double p = positives, n = negatives;
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

MetricRow metric_row(const std::vector<ScoredExample>& examples,
                     const std::vector<double>& recall_levels) {
  const PrCurve curve = pr_curve(examples);
  MetricRow row;
  row.pr_auc = pr_auc(curve);
  row.roc_auc = roc_auc(examples);
  for (double r : recall_levels) {
    row.precision_at[r] = precision_at_recall(curve, r);
  }
  return row;
}

std::vector<RelativeCell> relative_report(
    const EvalReport& baseline, const std::vector<EvalReport>& others) {
  std::vector<RelativeCell> cells;
  for (const EvalReport& other : others) {
    if (other.partitions.size() != baseline.partitions.size()) {
      throw ContractError("relative_report: partition sets differ");
    }
    for (const auto& [part, base_row] : baseline.partitions) {
      auto it = other.partitions.find(part);
      if (it == other.partitions.end()) {
        throw ContractError("relative_report: missing partition " + part);
      }
      const MetricRow& row = it->second;
      if (row.precision_at.size() != base_row.precision_at.size()) {
        throw ContractError("relative_report: recall grids differ");
      }
      std::vector<std::tuple<std::string, double, double>> metrics;
      metrics.emplace_back("pr_auc", base_row.pr_auc, row.pr_auc);
      metrics.emplace_back("roc_auc", base_row.roc_auc, row.roc_auc);
      for (const auto& [level, base_p] : base_row.precision_at) {
        auto pit = row.precision_at.find(level);
        if (pit == row.precision_at.end()) {
          throw ContractError("relative_report: recall grids differ");
        }
        metrics.emplace_back(metric_name(level), base_p, pit->second);
      }
      for (const auto& [name, base_v, v] : metrics) {
        if (base_v == 0.0) {
          throw ReportError("relative_report: zero baseline for " + part +
                            "/" + name);
        }
        RelativeCell cell;
        cell.system = other.system;
        cell.partition = part;
        cell.metric = name;
        cell.baseline_value = base_v;
        cell.value = v;
        cell.delta_pct = 100.0 * (v - base_v) / base_v;
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoredExample>& rows,
                      const RunStamp& stamp) {
  std::ofstream out = open_out(path);
  write_stamp(out, stamp);
  out << "partition,dsn,timestamp,score,label\n";
  for (const auto& r : rows) {
    out << r.partition << ',' << r.dsn << ',' << r.timestamp << ','
        << fmt(r.score) << ',' << r.label << '\n';
  }
  if (!out) throw ReportError("write failed: " + path.string());
}

std::vector<ScoredExample> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot open for read: " + path.string());
  std::vector<ScoredExample> rows;
  std::string line;
  bool saw_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "partition,dsn,timestamp,score,label") {
        throw ReportError("unexpected score header in " + path.string());
      }
      saw_header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 5) {
      throw ReportError("score row " + std::to_string(line_no) + " in " +
                        path.string() + " has " +
                        std::to_string(fields.size()) + " fields, want 5");
    }
    ScoredExample ex;
    ex.partition = fields[0];
    ex.dsn = fields[1];
    try {
      ex.timestamp = std::stoll(fields[2]);
      ex.score = std::stod(fields[3]);
      ex.label = std::stoi(fields[4]);
    } catch (const std::exception&) {
      throw ReportError("score row " + std::to_string(line_no) + " in " +
                        path.string() + " is not numeric");
    }
    rows.push_back(std::move(ex));
  }
  if (!saw_header) {
    throw ReportError("no score header found in " + path.string());
  }
  return rows;
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<EvalReport>& reports,
                      const std::vector<RelativeCell>& relative,
                      const RunStamp& stamp) {
  std::ofstream out = open_out(path);
  write_stamp(out, stamp);
  out << "# absolute metrics\n";
  out << "system,partition,metric,value\n";
  for (const auto& rep : reports) {
    for (const auto& [part, row] : rep.partitions) {
      out << rep.system << ',' << part << ",pr_auc," << fmt(row.pr_auc) << '\n';
      out << rep.system << ',' << part << ",roc_auc," << fmt(row.roc_auc)
          << '\n';
      for (const auto& [level, p] : row.precision_at) {
        out << rep.system << ',' << part << ',' << metric_name(level) << ','
            << fmt(p) << '\n';
      }
    }
  }
  out << "# relative to " << (reports.empty() ? "" : reports.front().system)
      << " (100% = baseline)\n";
  out << "system,partition,metric,baseline,value,delta_pct\n";
  for (const auto& c : relative) {
    out << c.system << ',' << c.partition << ',' << c.metric << ','
        << fmt(c.baseline_value) << ',' << fmt(c.value) << ','
        << fmt(c.delta_pct) << '\n';
  }
  if (!out) throw ReportError("write failed: " + path.string());
}

void write_report_json(const std::filesystem::path& path,
                       const std::vector<EvalReport>& reports,
                       const std::vector<RelativeCell>& relative,
                       const RunStamp& stamp) {
  nlohmann::json doc;
  doc["config_hash"] = stamp.config_hash;
  doc["seed"] = stamp.seed;
  doc["build"] = stamp.build_id;
  for (const auto& rep : reports) {
    nlohmann::json sys;
    sys["score_file"] = rep.score_file;
    for (const auto& [part, row] : rep.partitions) {
      nlohmann::json pj;
      pj["pr_auc"] = row.pr_auc;
      pj["roc_auc"] = row.roc_auc;
      for (const auto& [level, p] : row.precision_at) {
        pj[metric_name(level)] = p;
      }
      sys["partitions"][part] = pj;
    }
    doc["systems"][rep.system] = sys;
  }
  for (const auto& c : relative) {
    doc["relative"][c.system][c.partition][c.metric] = c.delta_pct;
  }
  std::ofstream out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw ReportError("write failed: " + path.string());
}

void write_pr_svg(const std::filesystem::path& path, const std::string& title,
                  const std::vector<std::pair<std::string, PrCurve>>& curves) {
  const int w = 640, h = 480;
  const double left = 60, right = 20, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  const auto x_of = [&](double recall) { return left + recall * pw; };
  const auto y_of = [&](double precision) {
    return top + (1.0 - precision) * ph;
  };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#8c564b", "#e377c2"};
  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h
      << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";
  // axes with 0.2 gridlines
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    out << "<line x1=\"" << x_of(v) << "\" y1=\"" << top << "\" x2=\""
        << x_of(v) << "\" y2=\"" << top + ph
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << y_of(v) << "\" x2=\""
        << left + pw << "\" y2=\"" << y_of(v)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    char label[8];
    std::snprintf(label, sizeof(label), "%.1f", v);
    out << "<text x=\"" << x_of(v) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << label << "</text>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y_of(v) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << label << "</text>\n";
  }
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw
      << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">recall</text>\n";
  out << "<text x=\"16\" y=\"" << top + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 16 "
      << top + ph / 2 << ")\">precision</text>\n";
  int color = 0;
  for (const auto& [name, curve] : curves) {
    const char* stroke = kColors[color % 6];
    out << "<polyline fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"2\" points=\"";
    double prev_precision =
        curve.points.empty() ? 1.0 : curve.points.front().precision;
    out << x_of(0.0) << ',' << y_of(prev_precision) << ' ';
    for (const PrPoint& pt : curve.points) {
      // staircase: move horizontally at the previous precision first
      out << x_of(pt.recall) << ',' << y_of(prev_precision) << ' ';
      out << x_of(pt.recall) << ',' << y_of(pt.precision) << ' ';
      prev_precision = pt.precision;
    }
    out << "\"/>\n";
    out << "<text x=\"" << left + pw - 8 << "\" y=\""
        << top + 16 + 16 * color << "\" text-anchor=\"end\" "
        << "font-family=\"sans-serif\" font-size=\"12\" fill=\"" << stroke
        << "\">" << name << "</text>\n";
    ++color;
  }
  out << "</svg>\n";
  if (!out) throw ReportError("write failed: " + path.string());
}

}  // namespace fssl
