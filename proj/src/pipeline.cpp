#include "fssl/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

constexpr const char* kSystemWithout = "ssl_without_client";
constexpr const char* kSystemFssl = "fssl";
constexpr const char* kSystemWith = "ssl_with_client";

std::string partition_of(const PartitionSpec& spec, const std::string& dsn) {
  const auto contains = [&dsn](const std::vector<std::string>& v) {
    return std::find(v.begin(), v.end(), dsn) != v.end();
  };
  if (contains(spec.internal)) return "I";
  if (contains(spec.unseen)) return "U";
  if (contains(spec.transferred)) return "T";
  return "";
}

// Mean per-clip loss over one epoch, batch sizes taken into account.
struct EpochLossTally {
  double sum = 0.0;
  std::size_t count = 0;
  void add(double batch_mean, std::size_t batch_size) {
    sum += batch_mean * static_cast<double>(batch_size);
    count += batch_size;
  }
  double mean() const {
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
  }
};

nlohmann::json read_run_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json::object();
  }
}

void record_artifact(const std::filesystem::path& out_dir,
                     const RunStamp& stamp, const std::string& name,
                     const std::string& checksum) {
  const std::filesystem::path path = out_dir / "manifest.json";
  nlohmann::json doc = read_run_manifest(path);
  doc["config_hash"] = stamp.config_hash;
  doc["build"] = stamp.build_id;
  doc["artifacts"][name] = checksum;
  std::ofstream out(path);
  if (!out) throw ReportError("cannot open for write: " + path.string());
  out << doc.dump(2) << '\n';
}

bool resumable(const std::optional<std::filesystem::path>& out_dir,
               const RunStamp& stamp, const std::filesystem::path& file) {
  if (!out_dir) return false;
  const nlohmann::json doc = read_run_manifest(*out_dir / "manifest.json");
  if (!doc.contains("config_hash") ||
      doc["config_hash"] != stamp.config_hash) {
    return false;
  }
  return std::filesystem::exists(file);
}

}  // namespace

void PretrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("pretrain epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("pretrain batch_size must be positive");
  if (eta < 0.0) throw ConfigError("pretrain eta must be non-negative");
}

void ClassifierTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("classifier epochs must be non-negative");
  if (batch_size < 1) {
    throw ConfigError("classifier batch_size must be positive");
  }
  if (eta < 0.0) throw ConfigError("classifier eta must be non-negative");
}

void EvalConfig::validate() const {
  if (recall_levels.empty()) throw ConfigError("recall_levels must be non-empty");
  for (double r : recall_levels) {
    if (!(r > 0.0 && r <= 1.0)) {
      throw ConfigError("recall levels must lie in (0,1]");
    }
  }
  if (max_clips_per_partition < 0) {
    throw ConfigError("max_clips_per_partition must be non-negative");
  }
}

void ExperimentPlan::validate() const {
  gen.validate();
  features.validate();
  apc.validate();
  classifier.validate();
  pretrain.validate();
  federation.validate();
  classifier_train.validate();
  eval.validate();
  static const std::set<int> kAllowed = {1, 2, 4, 8};
  if (kAllowed.count(gen.client_data_multiplier) == 0) {
    throw ConfigError("client_data_multiplier must be one of 1,2,4,8");
  }
  for (int m : ablation_multipliers) {
    if (kAllowed.count(m) == 0) {
      throw ConfigError("ablation multipliers must be among 1,2,4,8");
    }
  }
  if (apc.input_mels != features.n_mels) {
    throw ConfigError("model input_mels must equal feature n_mels");
  }
}

FeatureStore::FeatureStore(const CorpusSplit& corpus, FeatureConfig cfg)
    : corpus_(corpus), cfg_(cfg) {
  cfg_.validate();
  if (corpus_.server_clips.empty()) {
    throw EmptyCorpusError("normalization needs a non-empty server split");
  }
  CmvnAccumulator acc;
  for (const ClipRecord& rec : corpus_.server_clips) {
    acc.add(lfbe(clip_audio(corpus_, rec), cfg_));
  }
  stats_ = acc.finish();
}

const Tensor& FeatureStore::features(const ClipRecord& rec) const {
  auto it = cache_.find(rec.uid);
  if (it != cache_.end()) return it->second;
  LfbeMatrix normed = apply_cmvn(lfbe(clip_audio(corpus_, rec), cfg_), stats_,
                                 cfg_.cmvn_epsilon);
  return cache_.emplace(rec.uid, std::move(normed.values)).first->second;
}

PretrainResult pretrain(const FeatureStore& store, const ApcConfig& apc,
                        const PretrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& clips = store.corpus().server_clips;
  if (clips.empty()) throw ContractError("stage one needs server clips");

  Rng init_rng(substream(seed, "init_apc"));
  PretrainResult result{init_apc(apc, init_rng), {}};
  const std::set<ParamTag> trainable = {ParamTag::encoder, ParamTag::decoder};

  Rng order_rng(substream(seed, "pretrain"));
  std::vector<std::size_t> order(clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochLossTally tally;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Graph g;
      const BoundParams bound = bind_params(g, result.params, trainable);
      std::vector<VarId> losses;
      losses.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        losses.push_back(build_apc_clip_loss(g, bound, apc,
                                             store.features(clips[order[i]])));
      }
      const VarId batch_loss =
          g.scale(g.add_n(losses), 1.0 / static_cast<double>(end - start));
      g.backward(batch_loss);
      apply_sgd(result.params, g, bound, trainable, cfg.eta);
      tally.add(g.value(batch_loss).at(0), end - start);
    }
    result.epoch_losses.push_back(tally.mean());
  }
  return result;
}

FederatedResult federated_ssl(const FeatureStore& store, const ApcConfig& apc,
                              const ParamSet& pretrained,
                              FederationConfig cfg) {
  FederationEngine engine(
      store.corpus(), apc, cfg, pretrained,
      [&store](const ClipRecord& rec) { return store.features(rec); });
  engine.run_all();
  return FederatedResult{engine.global(), engine.audit()};
}

LabeledLatents encode_labeled(const FeatureStore& store,
                              const std::vector<ClipRecord>& records,
                              const ParamSet& apc_params,
                              const ApcConfig& apc) {
  LabeledLatents out;
  for (const ClipRecord& rec : records) {
    if (rec.label < 0) continue;
    out.latents.push_back(encode(apc_params, apc, store.features(rec)));
    out.labels.push_back(rec.label);
  }
  return out;
}

ClassifierTrainResult train_classifier(const LabeledLatents& data,
                                       const ClassifierConfig& cls,
                                       const ClassifierTrainConfig& cfg,
                                       const ParamSet& init,
                                       std::uint64_t seed) {
  cls.validate();
  cfg.validate();
  if (data.latents.empty()) {
    throw ContractError("classifier training needs labeled examples");
  }
  if (data.latents.size() != data.labels.size()) {
    throw ContractError("latents and labels disagree in length");
  }
  for (int z : data.labels) {
    if (z != 0 && z != 1) throw ContractError("labels must be 0 or 1");
  }

  ClassifierTrainResult result{init, {}};
  const std::set<ParamTag> trainable = {ParamTag::classifier};
  Rng order_rng(substream(seed, "train_cls"));
  std::vector<std::size_t> order(data.latents.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochLossTally tally;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Graph g;
      const BoundParams bound = bind_params(g, result.params, trainable);
      std::vector<VarId> losses;
      losses.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const VarId score = build_classifier_score(
            g, bound, cls, g.constant(data.latents[order[i]]));
        losses.push_back(g.scaled_bce(score, data.labels[order[i]],
                                      cls.scale_c, cls.clamp_eps));
      }
      const VarId batch_loss =
          g.scale(g.add_n(losses), 1.0 / static_cast<double>(end - start));
      g.backward(batch_loss);
      apply_sgd(result.params, g, bound, trainable, cfg.eta);
      tally.add(g.value(batch_loss).at(0), end - start);
    }
    result.epoch_losses.push_back(tally.mean());
  }
  return result;
}

SystemScores score_system(const FeatureStore& store,
                          const PartitionSpec& partitions,
                          const ParamSet& apc_params, const ApcConfig& apc,
                          const ParamSet& cls_params,
                          const ClassifierConfig& cls, const EvalConfig& eval,
                          const std::string& system_name) {
  eval.validate();
  SystemScores out;
  out.report.system = system_name;

  for (const std::string& part : {std::string("I"), std::string("U"),
                                  std::string("T")}) {
    // Round-robin over devices so a cap keeps the device mix balanced.
    std::map<std::string, std::vector<const ClipRecord*>> by_dsn;
    for (const ClipRecord& rec : store.corpus().test_clips) {
      if (partition_of(partitions, rec.dsn) == part) {
        by_dsn[rec.dsn].push_back(&rec);
      }
    }
    std::vector<const ClipRecord*> chosen;
    const std::size_t cap = eval.max_clips_per_partition == 0
                                ? static_cast<std::size_t>(-1)
                                : static_cast<std::size_t>(
                                      eval.max_clips_per_partition);
    for (std::size_t offset = 0; chosen.size() < cap; ++offset) {
      bool any = false;
      for (const auto& [dsn, recs] : by_dsn) {
        if (offset < recs.size()) {
          chosen.push_back(recs[offset]);
          any = true;
          if (chosen.size() >= cap) break;
        }
      }
      if (!any) break;
    }
    if (chosen.empty()) continue;

    std::vector<ScoredExample> examples;
    examples.reserve(chosen.size());
    for (const ClipRecord* rec : chosen) {
      if (rec->label < 0) {
        throw ContractError("evaluation clip without a label: " + rec->dsn);
      }
      const Tensor latents = encode(apc_params, apc, store.features(*rec));
      ScoredExample ex;
      ex.score = classify_prob(cls_params, cls, latents);
      ex.label = rec->label;
      ex.partition = part;
      ex.dsn = rec->dsn;
      ex.timestamp = rec->timestamp;
      examples.push_back(std::move(ex));
    }
    out.report.partitions[part] = metric_row(examples, eval.recall_levels);
    out.curves[part] = pr_curve(examples);
    out.scores.insert(out.scores.end(), examples.begin(), examples.end());
  }
  if (out.report.partitions.empty()) {
    throw ContractError("no scoreable partitions in the test split");
  }
  return out;
}

namespace {

std::string seed_tag(std::uint64_t seed) {
  return "seed" + std::to_string(seed);
}

// Loads a stage output when the run manifest proves it came from the same
// config; otherwise computes and persists it.
ParamSet stage_params(const std::optional<std::filesystem::path>& out_dir,
                      const RunStamp& stamp, const std::string& name,
                      const std::function<ParamSet()>& compute) {
  std::filesystem::path file;
  if (out_dir) {
    file = *out_dir / "params" / (name + ".bin");
    if (resumable(out_dir, stamp, file)) {
      ParamSet loaded = load_params(file);
      record_artifact(*out_dir, stamp, name, param_checksum(loaded));
      return loaded;
    }
  }
  ParamSet fresh = compute();
  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "params");
    save_params(file, fresh);
    record_artifact(*out_dir, stamp, name, param_checksum(fresh));
  }
  return fresh;
}

}  // namespace

BenchmarkResult run_benchmark(const ExperimentPlan& plan, std::uint64_t seed,
                              const std::optional<std::filesystem::path>& out_dir,
                              const RunStamp& stamp) {
  plan.validate();
  if (out_dir) std::filesystem::create_directories(*out_dir);

  const CorpusSplit corpus = synth_corpus(plan.gen, substream(seed, "corpus"));
  const FeatureStore store(corpus, plan.features);

  BenchmarkResult result;
  result.partitions = derive_partitions(corpus);

  result.m0 = stage_params(out_dir, stamp, "m0_" + seed_tag(seed), [&] {
    return pretrain(store, plan.apc, plan.pretrain, seed).params;
  });

  FederationConfig fed = plan.federation;
  fed.seed = substream(seed, "federation");
  const std::string fssl_name =
      "m_fssl_" + seed_tag(seed) + "_x" +
      std::to_string(plan.gen.client_data_multiplier);
  bool fed_computed = false;
  result.m_fssl = stage_params(out_dir, stamp, fssl_name, [&] {
    FederatedResult fr = federated_ssl(store, plan.apc, result.m0, fed);
    result.audit = std::move(fr.audit);
    fed_computed = true;
    return fr.params;
  });
  if (fed_computed && out_dir) {
    write_round_audit_csv(*out_dir / ("audit_" + seed_tag(seed) + ".csv"),
                          result.audit, stamp);
  }

  Rng cls_rng(substream(seed, "init_cls"));
  const ParamSet cls_init =
      init_classifier(plan.classifier, plan.apc.lstm_units, cls_rng);

  const std::string enc_checksum_m0 = param_checksum(result.m0);
  const std::string enc_checksum_fssl = param_checksum(result.m_fssl);

  const LabeledLatents server_m0 =
      encode_labeled(store, corpus.server_clips, result.m0, plan.apc);
  const LabeledLatents server_fssl =
      encode_labeled(store, corpus.server_clips, result.m_fssl, plan.apc);

  // The labeled-client baseline is a hypothetical topline: the same base
  // client stream, assuming its labels had been collectable. Ground truth is
  // revealed on copies here only; the stream the federation saw stays
  // unlabeled. The ablation multiplier only ever widens what stage two sees.
  std::vector<ClipRecord> with_client_records = corpus.server_clips;
  for (const auto& [dsn, recs] : corpus.client_clips) {
    for (const ClipRecord& rec : recs) {
      if (rec.slot < plan.gen.clips_per_device_per_day) {
        ClipRecord revealed = rec;
        revealed.label = rec.has_event ? 1 : 0;
        with_client_records.push_back(revealed);
      }
    }
  }
  const LabeledLatents server_and_client =
      encode_labeled(store, with_client_records, result.m0, plan.apc);

  const ParamSet cls_wo =
      train_classifier(server_m0, plan.classifier, plan.classifier_train,
                       cls_init, substream(seed, "cls_wo"))
          .params;
  const ParamSet cls_fssl =
      train_classifier(server_fssl, plan.classifier, plan.classifier_train,
                       cls_init, substream(seed, "cls_fssl"))
          .params;
  const ParamSet cls_with =
      train_classifier(server_and_client, plan.classifier,
                       plan.classifier_train, cls_init,
                       substream(seed, "cls_with"))
          .params;

  if (param_checksum(result.m0) != enc_checksum_m0 ||
      param_checksum(result.m_fssl) != enc_checksum_fssl) {
    throw ContractError("encoder weights moved during classifier training");
  }

  result.ssl_without_client =
      score_system(store, result.partitions, result.m0, plan.apc, cls_wo,
                   plan.classifier, plan.eval, kSystemWithout);
  result.fssl = score_system(store, result.partitions, result.m_fssl,
                             plan.apc, cls_fssl, plan.classifier, plan.eval,
                             kSystemFssl);
  result.ssl_with_client =
      score_system(store, result.partitions, result.m0, plan.apc, cls_with,
                   plan.classifier, plan.eval, kSystemWith);

  if (out_dir) {
    const std::filesystem::path dir = *out_dir;
    for (SystemScores* sys : {&result.ssl_without_client, &result.fssl,
                              &result.ssl_with_client}) {
      const std::string file =
          "scores_" + sys->report.system + "_" + seed_tag(seed) + ".csv";
      write_scores_csv(dir / file, sys->scores, stamp);
      sys->report.score_file = file;
    }
    const std::vector<EvalReport> reports = {
        result.ssl_without_client.report, result.fssl.report,
        result.ssl_with_client.report};
    const std::vector<RelativeCell> relative = relative_report(
        reports.front(), {reports[1], reports[2]});
    write_report_csv(dir / ("report_" + seed_tag(seed) + ".csv"), reports,
                     relative, stamp);
    write_report_json(dir / ("report_" + seed_tag(seed) + ".json"), reports,
                      relative, stamp);
    for (const std::string& part : {std::string("I"), std::string("U"),
                                    std::string("T")}) {
      std::vector<std::pair<std::string, PrCurve>> curves;
      for (const SystemScores* sys : {&result.ssl_without_client,
                                      &result.fssl,
                                      &result.ssl_with_client}) {
        auto it = sys->curves.find(part);
        if (it != sys->curves.end()) {
          curves.emplace_back(sys->report.system, it->second);
        }
      }
      if (!curves.empty()) {
        write_pr_svg(dir / ("pr_" + part + "_" + seed_tag(seed) + ".svg"),
                     "partition " + part, curves);
      }
    }
  }
  return result;
}

std::vector<AblationRow> run_ablation(const ExperimentPlan& plan,
                                      std::uint64_t seed,
                                      const std::vector<int>& multipliers,
                                      const std::optional<std::filesystem::path>& out_dir,
                                      const RunStamp& stamp) {
  plan.validate();
  if (out_dir) std::filesystem::create_directories(*out_dir);

  // The server period is identical at every multiplier, so the pretrained
  // weights are shared across sizes.
  const CorpusSplit base_corpus =
      synth_corpus(plan.gen, substream(seed, "corpus"));
  const FeatureStore base_store(base_corpus, plan.features);
  const ParamSet m0 =
      stage_params(out_dir, stamp, "m0_" + seed_tag(seed), [&] {
        return pretrain(base_store, plan.apc, plan.pretrain, seed).params;
      });

  Rng cls_rng(substream(seed, "init_cls"));
  const ParamSet cls_init =
      init_classifier(plan.classifier, plan.apc.lstm_units, cls_rng);

  std::vector<AblationRow> rows;
  for (int multiplier : multipliers) {
    GenConfig gen = plan.gen;
    gen.client_data_multiplier = multiplier;
    const CorpusSplit corpus = synth_corpus(gen, substream(seed, "corpus"));
    const FeatureStore store(corpus, plan.features);
    const PartitionSpec partitions = derive_partitions(corpus);

    FederationConfig fed = plan.federation;
    fed.seed = substream(seed, "federation");
    const std::string name = "m_fssl_" + seed_tag(seed) + "_x" +
                             std::to_string(multiplier);
    const ParamSet m_fssl = stage_params(out_dir, stamp, name, [&] {
      return federated_ssl(store, plan.apc, m0, fed).params;
    });

    const LabeledLatents server_latents =
        encode_labeled(store, corpus.server_clips, m_fssl, plan.apc);
    const ParamSet cls = train_classifier(server_latents, plan.classifier,
                                          plan.classifier_train, cls_init,
                                          substream(seed, "cls_fssl"))
                             .params;
    SystemScores scores =
        score_system(store, partitions, m_fssl, plan.apc, cls,
                     plan.classifier, plan.eval, kSystemFssl);
    if (out_dir) {
      const std::string file = "scores_ablate_x" + std::to_string(multiplier) +
                               "_" + seed_tag(seed) + ".csv";
      write_scores_csv(*out_dir / file, scores.scores, stamp);
      scores.report.score_file = file;
    }
    AblationRow row;
    row.multiplier = multiplier;
    row.report = std::move(scores.report);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fssl
