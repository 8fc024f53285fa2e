#include "fssl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "fssl/errors.hpp"

namespace fssl {

void FederationConfig::validate() const {
  if (rounds < 0) throw ConfigError("rounds must be non-negative");
  if (clients_per_round < 1) {
    throw ConfigError("clients_per_round must be positive");
  }
  if (local_epochs < 1) throw ConfigError("local_epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (eta < 0.0) throw ConfigError("eta must be non-negative");
  if (threads < 1) throw ConfigError("threads must be positive");
}

std::vector<std::string> select_clients(std::vector<std::string> candidates,
                                        int k, Rng& rng) {
  rng.shuffle(candidates);
  if (static_cast<std::size_t>(k) < candidates.size()) {
    candidates.resize(static_cast<std::size_t>(k));
  }
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

ClientUpdateResult client_update(const ParamSet& global, const ApcConfig& apc,
                                 const ClientState& client, int epochs,
                                 int batch_size, double eta,
                                 std::uint64_t round_token) {
  if (client.buffer.empty()) {
    throw ContractError("client_update on empty buffer: " + client.dsn);
  }
  const std::set<ParamTag> trainable = {ParamTag::encoder, ParamTag::decoder};
  ClientUpdateResult result;
  result.params = global;
  result.n_k = static_cast<int>(client.buffer.size());

  Rng rng(substream(client.rng_seed, "update", round_token));
  std::vector<std::size_t> order(client.buffer.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      Graph g;
      const BoundParams bound = bind_params(g, result.params, trainable);
      std::vector<VarId> losses;
      losses.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        losses.push_back(
            build_apc_clip_loss(g, bound, apc, client.buffer[order[i]]));
      }
      const VarId batch_loss =
          g.scale(g.add_n(losses), 1.0 / static_cast<double>(end - start));
      g.backward(batch_loss);
      apply_sgd(result.params, g, bound, trainable, eta);
      if (epoch == 0) {
        loss_sum += g.value(batch_loss).at(0) * static_cast<double>(end - start);
        loss_count += end - start;
      }
    }
  }
  result.mean_local_loss =
      loss_count == 0 ? 0.0 : loss_sum / static_cast<double>(loss_count);
  return result;
}

ParamSet aggregate(const std::vector<ClientUpdateResult>& updates) {
  if (updates.empty()) throw ContractError("aggregate of zero updates");
  long long total = 0;
  for (const auto& u : updates) {
    if (u.n_k < 1) throw ContractError("aggregate: n_k must be positive");
    total += u.n_k;
  }
  ParamSet out = zeros_like(updates.front().params);
  for (const auto& u : updates) {
    const double weight =
        static_cast<double>(u.n_k) / static_cast<double>(total);
    axpy_params(out, u.params, weight);
  }
  return out;
}

FederationEngine::FederationEngine(const CorpusSplit& corpus, ApcConfig apc,
                                   FederationConfig cfg, ParamSet initial,
                                   Featurizer feat)
    : corpus_(corpus),
      apc_(apc),
      cfg_(cfg),
      global_(std::move(initial)),
      featurize_(std::move(feat)) {
  cfg_.validate();
  apc_.validate();
  for (const auto& [dsn, records] : corpus_.client_clips) {
    if (records.empty()) continue;
    ClientState state;
    state.dsn = dsn;
    state.rng_seed = substream(cfg_.seed, "client", fnv1a64(dsn));
    clients_.emplace(dsn, std::move(state));
    cursors_.emplace(dsn, 0);
  }
}

const ClientState& FederationEngine::client(const std::string& dsn) const {
  auto it = clients_.find(dsn);
  if (it == clients_.end()) throw ContractError("unknown client: " + dsn);
  return it->second;
}

void FederationEngine::deliver_day(int day) {
  for (auto& [dsn, state] : clients_) {
    const auto& records = corpus_.client_clips.at(dsn);
    std::size_t& cursor = cursors_.at(dsn);
    while (cursor < records.size() && records[cursor].day <= day) {
      if (records[cursor].day == day) {
        state.buffer.push_back(featurize_(records[cursor]));
      }
      ++cursor;
    }
  }
}

RoundRecord FederationEngine::run_round(int t) {
  deliver_day(corpus_.gen.server_days + t);

  RoundRecord record;
  record.round = t;

  std::vector<std::string> candidates;
  for (const auto& [dsn, state] : clients_) {
    if (!state.buffer.empty()) candidates.push_back(dsn);
  }
  if (candidates.empty()) {
    record.empty = true;
    record.param_checksum = param_checksum(global_);
    audit_.push_back(record);
    return record;
  }

  Rng round_rng(substream(cfg_.seed, "select", t));
  record.dsns = select_clients(std::move(candidates), cfg_.clients_per_round,
                               round_rng);

  std::vector<ClientUpdateResult> updates(record.dsns.size());
  const auto run_one = [&](std::size_t i) {
    updates[i] = client_update(global_, apc_, clients_.at(record.dsns[i]),
                               cfg_.local_epochs, cfg_.batch_size, cfg_.eta,
                               static_cast<std::uint64_t>(t));
  };
  const int threads = std::min<int>(cfg_.threads,
                                    static_cast<int>(record.dsns.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < record.dsns.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w);
             i < record.dsns.size();
             i += static_cast<std::size_t>(threads)) {
          run_one(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  long long total = 0;
  for (const auto& u : updates) total += u.n_k;
  record.total_examples = static_cast<int>(total);
  double loss_sum = 0.0;
  for (const auto& u : updates) {
    record.n_k.push_back(u.n_k);
    record.weight_sum +=
        static_cast<double>(u.n_k) / static_cast<double>(total);
    loss_sum += u.mean_local_loss;
  }
  record.mean_local_loss = loss_sum / static_cast<double>(updates.size());

  global_ = aggregate(updates);
  record.param_checksum = param_checksum(global_);

  if (cfg_.clear_all_buffers) {
    for (auto& [dsn, state] : clients_) state.buffer.clear();
  } else {
    for (const std::string& dsn : record.dsns) {
      clients_.at(dsn).buffer.clear();
    }
  }
  audit_.push_back(record);
  return record;
}

std::vector<RoundRecord> FederationEngine::run_all() {
  for (int t = 0; t < cfg_.rounds; ++t) run_round(t);
  return audit_;
}

void FederationEngine::write_audit_csv(const std::filesystem::path& path,
                                       const RunStamp& stamp) const {
  write_round_audit_csv(path, audit_, stamp);
}

void write_round_audit_csv(const std::filesystem::path& path,
                           const std::vector<RoundRecord>& records,
                           const RunStamp& stamp) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot open for write: " + path.string());
  out << "# config_hash=" << stamp.config_hash << " seed=" << stamp.seed
      << " build=" << stamp.build_id << "\n";
  out << "round,dsn_count,total_examples,mean_local_loss,param_checksum\n";
  char loss[32];
  for (const auto& r : records) {
    std::snprintf(loss, sizeof(loss), "%.9f", r.mean_local_loss);
    out << r.round << ',' << r.dsns.size() << ',' << r.total_examples << ','
        << loss << ',' << r.param_checksum << '\n';
  }
  if (!out) throw ReportError("write failed: " + path.string());
}

}  // namespace fssl
