// Command-line front end: generate corpora, run the three-system benchmark,
// sweep client-data sizes, rebuild reports from score dumps, and check the
// gradient machinery against finite differences.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fssl/config.hpp"
#include "fssl/data.hpp"
#include "fssl/errors.hpp"
#include "fssl/eval.hpp"
#include "fssl/gradcheck.hpp"
#include "fssl/pipeline.hpp"
#include "fssl/rng.hpp"

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "Experiment config file (JSON); defaults apply if omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Override the config's seed list");
  cmd->add_option("--out", args.out_dir, "Output directory override");
}

// Loads the config, applies flag overrides and the FSSL_THREADS cap, and
// validates. ConfigError propagates with the offending key path.
fssl::ExperimentConfig effective_config(const CommonArgs& args) {
  fssl::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = fssl::load_config(args.config_path);
  if (args.seed) cfg.seeds = {*args.seed};
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (const char* env = std::getenv("FSSL_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) {
      throw fssl::ConfigError("FSSL_THREADS must be a positive integer");
    }
    cfg.plan.federation.threads =
        std::min(cfg.plan.federation.threads, static_cast<int>(cap));
  }
  cfg.plan.validate();
  return cfg;
}

fssl::RunStamp stamp_for(const fssl::ExperimentConfig& cfg,
                         std::uint64_t seed) {
  return {fssl::config_hash(cfg), seed, fssl::build_id()};
}

int cmd_synth(const CommonArgs& args) {
  const fssl::ExperimentConfig cfg = effective_config(args);
  for (const std::uint64_t seed : cfg.seeds) {
    const fssl::CorpusSplit corpus =
        fssl::synth_corpus(cfg.plan.gen, fssl::substream(seed, "corpus"));
    const fs::path dir =
        fs::path(cfg.out_dir) / ("corpus_seed" + std::to_string(seed));
    const fs::path manifest = fssl::export_corpus(corpus, dir);
    std::size_t client_clips = 0;
    for (const auto& [dsn, stream] : corpus.client_clips) {
      client_clips += stream.size();
    }
    std::printf("seed %llu: %zu server, %zu client, %zu test clips -> %s\n",
                static_cast<unsigned long long>(seed),
                corpus.server_clips.size(), client_clips,
                corpus.test_clips.size(), manifest.string().c_str());
  }
  return 0;
}

void print_report(const fssl::EvalReport& report) {
  for (const auto& [part, row] : report.partitions) {
    std::printf("  %-20s %s  pr_auc=%.4f roc_auc=%.4f", report.system.c_str(),
                part.c_str(), row.pr_auc, row.roc_auc);
    for (const auto& [level, value] : row.precision_at) {
      std::printf(" p@%.2g=%.4f", level, value);
    }
    std::printf("\n");
  }
}

int cmd_run(const CommonArgs& args) {
  const fssl::ExperimentConfig cfg = effective_config(args);
  const fs::path out(cfg.out_dir);
  for (const std::uint64_t seed : cfg.seeds) {
    std::printf("== seed %llu ==\n", static_cast<unsigned long long>(seed));
    const fssl::BenchmarkResult result =
        fssl::run_benchmark(cfg.plan, seed, out, stamp_for(cfg, seed));
    print_report(result.ssl_without_client.report);
    print_report(result.fssl.report);
    print_report(result.ssl_with_client.report);
  }
  std::printf("outputs in %s\n", out.string().c_str());
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const fssl::ExperimentConfig cfg = effective_config(args);
  const fs::path out(cfg.out_dir);
  for (const std::uint64_t seed : cfg.seeds) {
    std::printf("== seed %llu ==\n", static_cast<unsigned long long>(seed));
    const std::vector<fssl::AblationRow> rows = fssl::run_ablation(
        cfg.plan, seed, cfg.plan.ablation_multipliers, out,
        stamp_for(cfg, seed));
    const fs::path summary =
        out / ("ablation_seed" + std::to_string(seed) + ".csv");
    std::ofstream csv(summary);
    if (!csv) {
      throw fssl::ReportError("cannot open for write: " + summary.string());
    }
    const fssl::RunStamp stamp = stamp_for(cfg, seed);
    csv << "# config_hash=" << stamp.config_hash << " seed=" << stamp.seed
        << " build=" << stamp.build_id << "\n";
    csv << "multiplier,partition,metric,value\n";
    char buf[32];
    for (const fssl::AblationRow& row : rows) {
      for (const auto& [part, metrics] : row.report.partitions) {
        const auto emit = [&](const std::string& name, double v) {
          std::snprintf(buf, sizeof(buf), "%.9f", v);
          csv << row.multiplier << ',' << part << ',' << name << ',' << buf
              << '\n';
        };
        emit("pr_auc", metrics.pr_auc);
        emit("roc_auc", metrics.roc_auc);
        for (const auto& [level, value] : metrics.precision_at) {
          std::snprintf(buf, sizeof(buf), "p@%.2g", level);
          emit(buf, value);
        }
      }
      const auto t = row.report.partitions.find("T");
      std::printf("  x%d: pr_auc(T)=%.4f\n", row.multiplier,
                  t == row.report.partitions.end() ? 0.0 : t->second.pr_auc);
    }
    if (!csv) throw fssl::ReportError("write failed: " + summary.string());
  }
  std::printf("outputs in %s\n", out.string().c_str());
  return 0;
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& paths) {
  const fssl::ExperimentConfig cfg = effective_config(args);
  const std::vector<double>& levels = cfg.plan.eval.recall_levels;

  std::vector<fssl::EvalReport> reports;
  std::map<std::string, std::vector<std::pair<std::string, fssl::PrCurve>>>
      curves_by_partition;
  for (const std::string& path : paths) {
    const std::vector<fssl::ScoredExample> rows = fssl::read_scores_csv(path);
    std::map<std::string, std::vector<fssl::ScoredExample>> by_partition;
    for (const fssl::ScoredExample& row : rows) {
      by_partition[row.partition].push_back(row);
    }
    fssl::EvalReport report;
    report.system = fs::path(path).stem().string();
    report.score_file = path;
    for (const auto& [part, examples] : by_partition) {
      report.partitions[part] = fssl::metric_row(examples, levels);
      curves_by_partition[part].emplace_back(report.system,
                                             fssl::pr_curve(examples));
    }
    reports.push_back(std::move(report));
  }

  const std::vector<fssl::RelativeCell> relative = fssl::relative_report(
      reports.front(), {reports.begin() + 1, reports.end()});
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const fssl::RunStamp stamp =
      stamp_for(cfg, cfg.seeds.empty() ? 0 : cfg.seeds.front());
  fssl::write_report_csv(out / "report.csv", reports, relative, stamp);
  fssl::write_report_json(out / "report.json", reports, relative, stamp);
  for (const auto& [part, curves] : curves_by_partition) {
    fssl::write_pr_svg(out / ("pr_" + part + ".svg"),
                       "partition " + part, curves);
  }
  for (const fssl::EvalReport& report : reports) print_report(report);
  std::printf("report in %s\n", out.string().c_str());
  return 0;
}

int cmd_gradcheck(const CommonArgs& args, std::size_t coords) {
  const std::uint64_t seed = args.seed.value_or(1);
  const double tolerance = 1e-4;
  const std::vector<fssl::GradSuiteCase> cases =
      fssl::model_gradient_checks(seed, coords);
  bool ok = true;
  for (const fssl::GradSuiteCase& c : cases) {
    const bool pass = c.result.max_rel_error < tolerance;
    ok = ok && pass;
    std::printf("%-26s %4zu coords  max_rel=%.3e  %5.2fs  %s\n",
                c.name.c_str(), c.result.checked, c.result.max_rel_error,
                c.seconds, pass ? "ok" : "FAIL");
    if (!pass) {
      std::printf("  worst: %s[%zu]\n", c.result.worst_param.c_str(),
                  c.result.worst_index);
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated self-supervised audio-event simulator"};
  app.require_subcommand(1);

  CommonArgs synth_args, run_args, ablate_args, report_args, grad_args;
  std::vector<std::string> score_paths;
  std::size_t grad_coords = 200;

  add_common(app.add_subcommand("synth", "Generate a corpus (WAV + manifest)"),
             synth_args);
  add_common(app.add_subcommand("run", "Train and evaluate all three systems"),
             run_args);
  add_common(app.add_subcommand(
                 "ablate", "Re-run the federated system at several client "
                           "data sizes"),
             ablate_args);
  CLI::App* report = app.add_subcommand(
      "report", "Rebuild tables and curves from score CSVs; the first file "
                "is the baseline system");
  add_common(report, report_args);
  report->add_option("scores", score_paths, "Score CSV files")
      ->required()
      ->check(CLI::ExistingFile);
  CLI::App* grad = app.add_subcommand(
      "gradcheck", "Compare every layer's gradients against finite "
                   "differences");
  add_common(grad, grad_args);
  grad->add_option("--coords", grad_coords,
                   "Sampled coordinates per composed objective");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synth")) return cmd_synth(synth_args);
    if (app.got_subcommand("run")) return cmd_run(run_args);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args);
    if (app.got_subcommand("report")) return cmd_report(report_args, score_paths);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(grad_args, grad_coords);
  } catch (const fssl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
