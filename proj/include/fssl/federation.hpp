#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fssl/data.hpp"
#include "fssl/eval.hpp"
#include "fssl/model.hpp"
#include "fssl/params.hpp"
#include "fssl/rng.hpp"
#include "fssl/tensor.hpp"

namespace fssl {

struct FederationConfig {
  int rounds = 20;            // 24-hour ticks
  int clients_per_round = 10; // k
  int local_epochs = 1;       // E
  int batch_size = 16;        // B
  double eta = 0.01;
  std::uint64_t seed = 0;
  bool clear_all_buffers = false;  // default clears participants only
  int threads = 1;

  void validate() const;
};

// On-device state. The buffer holds feature matrices only; no label field
// exists anywhere on the client side of the engine.
struct ClientState {
  std::string dsn;
  std::vector<Tensor> buffer;
  std::uint64_t rng_seed = 0;
};

// The complete client-to-server payload: updated weights, example count,
// and a scalar monitoring loss.
struct ClientUpdateResult {
  ParamSet params;
  int n_k = 0;
  double mean_local_loss = 0.0;
};

struct RoundRecord {
  int round = 0;
  bool empty = false;
  std::vector<std::string> dsns;
  std::vector<int> n_k;
  int total_examples = 0;
  double weight_sum = 0.0;  // sum of n_k/n exactly as used in aggregation
  double mean_local_loss = 0.0;
  std::string param_checksum;
};

// Uniform sample of k names without replacement; pass the candidates sorted
// for reproducibility. Returns the selection sorted by name.
std::vector<std::string> select_clients(std::vector<std::string> candidates,
                                        int k, Rng& rng);

// E epochs of minibatch SGD on the buffered features, starting from a copy
// of the global weights. Encoder and decoder update; nothing else moves.
ClientUpdateResult client_update(const ParamSet& global, const ApcConfig& apc,
                                 const ClientState& client, int epochs,
                                 int batch_size, double eta,
                                 std::uint64_t round_token);

// Example-weighted mean of the updates, weights n_k / sum(n_k).
ParamSet aggregate(const std::vector<ClientUpdateResult>& updates);

void write_round_audit_csv(const std::filesystem::path& path,
                           const std::vector<RoundRecord>& records,
                           const RunStamp& stamp);

class FederationEngine {
 public:
  using Featurizer = std::function<Tensor(const ClipRecord&)>;

  FederationEngine(const CorpusSplit& corpus, ApcConfig apc,
                   FederationConfig cfg, ParamSet initial, Featurizer feat);

  // Delivers the day's clips, samples clients, runs local updates in
  // parallel, aggregates, installs the new global model, and clears the
  // participants' buffers.
  RoundRecord run_round(int t);
  std::vector<RoundRecord> run_all();

  const ParamSet& global() const { return global_; }
  const std::vector<RoundRecord>& audit() const { return audit_; }
  const ClientState& client(const std::string& dsn) const;

  void write_audit_csv(const std::filesystem::path& path,
                       const RunStamp& stamp) const;

 private:
  void deliver_day(int day);

  const CorpusSplit& corpus_;
  ApcConfig apc_;
  FederationConfig cfg_;
  ParamSet global_;
  Featurizer featurize_;
  std::map<std::string, ClientState> clients_;   // keyed by dsn, sorted
  std::map<std::string, std::size_t> cursors_;   // next undelivered record
  std::vector<RoundRecord> audit_;
};

}  // namespace fssl
