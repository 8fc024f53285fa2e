#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fssl/data.hpp"
#include "fssl/eval.hpp"
#include "fssl/features.hpp"
#include "fssl/federation.hpp"
#include "fssl/model.hpp"
#include "fssl/params.hpp"

namespace fssl {

struct PretrainConfig {
  int epochs = 4;
  int batch_size = 16;
  double eta = 0.01;
  void validate() const;
};

struct ClassifierTrainConfig {
  int epochs = 12;
  int batch_size = 16;
  double eta = 0.05;
  void validate() const;
};

struct EvalConfig {
  std::vector<double> recall_levels{0.6, 0.7, 0.8, 0.9};
  // Per-partition cap on scored clips, spread round-robin over devices;
  // 0 means no cap.
  int max_clips_per_partition = 400;
  void validate() const;
};

struct ExperimentPlan {
  GenConfig gen;
  FeatureConfig features;
  ApcConfig apc = desk_apc();
  ClassifierConfig classifier = desk_classifier();
  PretrainConfig pretrain;
  FederationConfig federation;
  ClassifierTrainConfig classifier_train;
  EvalConfig eval;
  std::vector<int> ablation_multipliers{1, 2, 4, 8};
  void validate() const;
};

// Normalized features for any clip in one corpus. Normalization statistics
// come from the server split alone; client and test clips reuse them.
// Single-threaded use: the cache is not locked.
class FeatureStore {
 public:
  FeatureStore(const CorpusSplit& corpus, FeatureConfig cfg);

  const CmvnStats& cmvn() const { return stats_; }
  const Tensor& features(const ClipRecord& rec) const;
  const CorpusSplit& corpus() const { return corpus_; }

 private:
  const CorpusSplit& corpus_;
  FeatureConfig cfg_;
  CmvnStats stats_;
  mutable std::unordered_map<int, Tensor> cache_;
};

struct PretrainResult {
  ParamSet params;
  std::vector<double> epoch_losses;
};

// Stage one: epoch-based minibatch SGD on the self-supervised objective over
// the server split. Labels are never read.
PretrainResult pretrain(const FeatureStore& store, const ApcConfig& apc,
                        const PretrainConfig& cfg, std::uint64_t seed);

struct FederatedResult {
  ParamSet params;
  std::vector<RoundRecord> audit;
};

// Stage two: the full round schedule starting from the pretrained weights.
FederatedResult federated_ssl(const FeatureStore& store, const ApcConfig& apc,
                              const ParamSet& pretrained,
                              FederationConfig cfg);

struct LabeledLatents {
  std::vector<Tensor> latents;
  std::vector<int> labels;
};

// Encodes every labeled record under the given (frozen) model.
LabeledLatents encode_labeled(const FeatureStore& store,
                              const std::vector<ClipRecord>& records,
                              const ParamSet& apc_params, const ApcConfig& apc);

struct ClassifierTrainResult {
  ParamSet params;
  std::vector<double> epoch_losses;
};

// Stage three: trains the classification head on precomputed latents. The
// encoder cannot move here; the training set never contains its weights.
ClassifierTrainResult train_classifier(const LabeledLatents& data,
                                       const ClassifierConfig& cls,
                                       const ClassifierTrainConfig& cfg,
                                       const ParamSet& init,
                                       std::uint64_t seed);

struct SystemScores {
  EvalReport report;
  std::vector<ScoredExample> scores;
  std::map<std::string, PrCurve> curves;  // per partition
};

SystemScores score_system(const FeatureStore& store,
                          const PartitionSpec& partitions,
                          const ParamSet& apc_params, const ApcConfig& apc,
                          const ParamSet& cls_params,
                          const ClassifierConfig& cls, const EvalConfig& eval,
                          const std::string& system_name);

struct BenchmarkResult {
  PartitionSpec partitions;
  ParamSet m0;
  ParamSet m_fssl;
  std::vector<RoundRecord> audit;
  SystemScores ssl_without_client;
  SystemScores fssl;
  SystemScores ssl_with_client;
};

// Builds the three systems and their reports for one seed. When out_dir is
// set, artifacts (weights, audit log, score dumps, report tables, curves)
// are written beneath it; existing stage outputs with a matching stamp are
// reloaded instead of recomputed.
BenchmarkResult run_benchmark(const ExperimentPlan& plan, std::uint64_t seed,
                              const std::optional<std::filesystem::path>& out_dir,
                              const RunStamp& stamp);

struct AblationRow {
  int multiplier = 1;
  EvalReport report;  // the federated system only
};

std::vector<AblationRow> run_ablation(const ExperimentPlan& plan,
                                      std::uint64_t seed,
                                      const std::vector<int>& multipliers,
                                      const std::optional<std::filesystem::path>& out_dir,
                                      const RunStamp& stamp);

}  // namespace fssl
