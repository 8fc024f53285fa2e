#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fssl/data.hpp"
#include "fssl/errors.hpp"
#include "fssl/federation.hpp"
#include "fssl/model.hpp"
#include "fssl/params.hpp"
#include "fssl/rng.hpp"

using namespace fssl;

// The client-side surface carries features and weights, never labels.
template <typename T>
concept ExposesLabels = requires(T t) { t.label; } || requires(T t) { t.labels; };
static_assert(!ExposesLabels<ClientState>);
static_assert(!ExposesLabels<ClientUpdateResult>);
static_assert(std::is_same_v<decltype(ClientState::buffer), std::vector<Tensor>>);

namespace {

ApcConfig tiny_apc() {
  ApcConfig cfg;
  cfg.conv_channels = {2, 2, 2, 2, 2};
  cfg.lstm_units = 3;
  cfg.input_mels = 8;
  return cfg;
}

Tensor fake_features(std::uint64_t seed, int uid) {
  Rng rng(substream(seed, "fake-feat", static_cast<std::uint64_t>(uid)));
  Tensor t = Tensor::zeros({66, 8});
  for (double& v : t.data) v = 0.5 * rng.normal();
  return t;
}

ClientState make_client(const std::string& dsn, std::uint64_t seed,
                        int n_clips, int uid_base) {
  ClientState c;
  c.dsn = dsn;
  c.rng_seed = substream(seed, "client", fnv1a64(dsn));
  for (int i = 0; i < n_clips; ++i) {
    c.buffer.push_back(fake_features(seed, uid_base + i));
  }
  return c;
}

ParamSet scalar_set(double v) {
  ParamSet ps;
  ps.add("w", ParamTag::encoder, Tensor::scalar(v));
  return ps;
}

// One gradient step on the pooled mean loss, built directly. This is the
// centralized side of the averaging equivalence.
ParamSet centralized_step(const ParamSet& start, const ApcConfig& apc,
                          const std::vector<const ClientState*>& clients,
                          double eta) {
  ParamSet out = start;
  const std::set<ParamTag> trainable = {ParamTag::encoder, ParamTag::decoder};
  Graph g;
  const BoundParams bound = bind_params(g, out, trainable);
  std::vector<VarId> losses;
  for (const ClientState* c : clients) {
    for (const Tensor& x : c->buffer) {
      losses.push_back(build_apc_clip_loss(g, bound, apc, x));
    }
  }
  const VarId mean_loss =
      g.scale(g.add_n(losses), 1.0 / static_cast<double>(losses.size()));
  g.backward(mean_loss);
  apply_sgd(out, g, bound, trainable, eta);
  return out;
}

}  // namespace

TEST_CASE("selection takes everyone when k covers the population") {
  Rng rng(1);
  const auto all = select_clients({"c", "a", "b"}, 3, rng);
  CHECK(all == std::vector<std::string>{"a", "b", "c"});
  Rng rng2(1);
  const auto more = select_clients({"c", "a", "b"}, 9, rng2);
  CHECK(more == std::vector<std::string>{"a", "b", "c"});
  Rng rng3(2);
  const auto single = select_clients({"only"}, 1, rng3);
  CHECK(single == std::vector<std::string>{"only"});
}

TEST_CASE("selection is a reproducible subset") {
  const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f"};
  Rng r1(7), r2(7), r3(8);
  const auto s1 = select_clients(pool, 3, r1);
  const auto s2 = select_clients(pool, 3, r2);
  const auto s3 = select_clients(pool, 3, r3);
  CHECK(s1 == s2);
  REQUIRE(s1.size() == 3);
  CHECK(std::is_sorted(s1.begin(), s1.end()));
  for (const auto& dsn : s1) {
    CHECK(std::find(pool.begin(), pool.end(), dsn) != pool.end());
  }
  CHECK(s1 != s3);  // a different stream picks a different subset here
}

TEST_CASE("a full-batch update is exactly one gradient step") {
  const ApcConfig apc = tiny_apc();
  Rng rng(3);
  const ParamSet w0 = init_apc(apc, rng);
  const ClientState client = make_client("dev-a", 11, 3, 0);

  const ClientUpdateResult got =
      client_update(w0, apc, client, 1, 16, 0.05, 0);
  CHECK(got.n_k == 3);

  const ParamSet want = centralized_step(w0, apc, {&client}, 0.05);
  CHECK(max_abs_diff(got.params, want) < 1e-12);
  CHECK(got.mean_local_loss > 0.0);
}

TEST_CASE("zero learning rate reports without moving") {
  const ApcConfig apc = tiny_apc();
  Rng rng(4);
  const ParamSet w0 = init_apc(apc, rng);
  const ClientState client = make_client("dev-b", 12, 2, 50);
  const ClientUpdateResult got = client_update(w0, apc, client, 2, 1, 0.0, 0);
  CHECK(got.n_k == 2);
  CHECK(max_abs_diff(got.params, w0) == 0.0);
  CHECK(got.mean_local_loss > 0.0);
}

TEST_CASE("a small step descends the local objective") {
  const ApcConfig apc = tiny_apc();
  Rng rng(5);
  const ParamSet w0 = init_apc(apc, rng);
  const ClientState client = make_client("dev-c", 13, 4, 100);

  auto mean_loss = [&](const ParamSet& ps) {
    double acc = 0.0;
    for (const Tensor& x : client.buffer) acc += apc_clip_loss(ps, apc, x);
    return acc / static_cast<double>(client.buffer.size());
  };
  const double before = mean_loss(w0);
  const ClientUpdateResult got =
      client_update(w0, apc, client, 1, 16, 1e-4, 0);
  CHECK(mean_loss(got.params) < before);
}

TEST_CASE("updates never touch classifier entries") {
  const ApcConfig apc = tiny_apc();
  Rng rng(6);
  ParamSet w0 = init_apc(apc, rng);
  ClassifierConfig ccfg;
  ccfg.lstm_units = 4;
  Rng rng2(7);
  const ParamSet cls = init_classifier(ccfg, apc.lstm_units, rng2);
  for (const auto& e : cls.entries()) {
    w0.add(e.name, e.tag, e.value);
  }
  const ClientState client = make_client("dev-d", 14, 2, 150);
  const ClientUpdateResult got =
      client_update(w0, apc, client, 1, 16, 0.1, 0);
  CHECK(max_abs_diff(got.params, w0) > 0.0);
  for (const auto& e : got.params.entries()) {
    if (e.tag != ParamTag::classifier) continue;
    const Tensor& was = w0.at(e.name);
    for (std::size_t i = 0; i < was.data.size(); ++i) {
      CHECK(e.value.data[i] == was.data[i]);
    }
  }
}

TEST_CASE("an empty buffer is a caller error") {
  const ApcConfig apc = tiny_apc();
  Rng rng(8);
  const ParamSet w0 = init_apc(apc, rng);
  ClientState empty;
  empty.dsn = "hollow";
  CHECK_THROWS_AS(client_update(w0, apc, empty, 1, 8, 0.1, 0), ContractError);
}

TEST_CASE("aggregation is the example-weighted mean") {
  ClientUpdateResult a, b;
  a.params = scalar_set(2.0);
  a.n_k = 1;
  b.params = scalar_set(6.0);
  b.n_k = 3;
  const ParamSet mixed = aggregate({a, b});
  CHECK(mixed.at("w").at(0) == doctest::Approx(5.0).epsilon(1e-15));

  const ParamSet alone = aggregate({a});
  CHECK(alone.at("w").at(0) == doctest::Approx(2.0).epsilon(1e-15));

  b.n_k = 1;
  const ParamSet even = aggregate({a, b});
  CHECK(even.at("w").at(0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("aggregation rejects bad inputs") {
  CHECK_THROWS_AS(aggregate({}), ContractError);
  ClientUpdateResult a, b;
  a.params = scalar_set(1.0);
  a.n_k = 1;
  b.params.add("other", ParamTag::encoder, Tensor::scalar(1.0));
  b.n_k = 1;
  CHECK_THROWS_AS(aggregate({a, b}), ContractError);
  b = a;
  b.n_k = 0;
  CHECK_THROWS_AS(aggregate({a, b}), ContractError);
}

TEST_CASE("averaging full-participation updates equals a pooled step") {
  const ApcConfig apc = tiny_apc();
  Rng rng(9);
  const ParamSet w0 = init_apc(apc, rng);
  const std::vector<ClientState> clients{make_client("dev-p", 21, 2, 200),
                                         make_client("dev-q", 21, 3, 210),
                                         make_client("dev-r", 21, 4, 220)};
  const double eta = 0.02;
  std::vector<ClientUpdateResult> updates;
  for (const auto& c : clients) {
    updates.push_back(client_update(w0, apc, c, 1, 16, eta, 5));
  }
  const ParamSet averaged = aggregate(updates);

  // Each client takes w0 - eta * mean-grad over its buffer; the n_k-weighted
  // mean of those is w0 - eta * mean-grad over the pooled buffer.
  const ParamSet pooled =
      centralized_step(w0, apc, {&clients[0], &clients[1], &clients[2]}, eta);
  CHECK(max_abs_diff(averaged, pooled) < 1e-10);
}

TEST_CASE("the engine clears exactly the participants") {
  GenConfig gen;
  gen.device_count = 6;
  gen.days = 4;
  gen.server_days = 1;
  gen.eval_tail_days = 1;
  gen.clips_per_device_per_day = 2;
  const CorpusSplit corpus = synth_corpus(gen, 31);

  const ApcConfig apc = tiny_apc();
  FederationConfig fed;
  fed.rounds = 2;
  fed.clients_per_round = 1;
  fed.batch_size = 4;
  fed.eta = 1e-3;
  fed.seed = 9;
  Rng rng(10);
  FederationEngine engine(corpus, apc, fed, init_apc(apc, rng),
                          [&](const ClipRecord& rec) {
                            return fake_features(corpus.seed, rec.uid);
                          });

  const RoundRecord r0 = engine.run_round(0);
  REQUIRE_FALSE(r0.empty);
  REQUIRE(r0.dsns.size() == 1);
  CHECK(engine.client(r0.dsns[0]).buffer.empty());
  // Four devices stream during the client period; the three spectators
  // keep the day's two clips buffered.
  int holding = 0;
  for (const auto& [dsn, recs] : corpus.client_clips) {
    if (dsn == r0.dsns[0]) continue;
    CHECK(engine.client(dsn).buffer.size() == 2);
    ++holding;
  }
  CHECK(holding == 3);

  const RoundRecord r1 = engine.run_round(1);
  REQUIRE_FALSE(r1.empty);
  // A spectator from round zero that stays unselected now holds four clips.
  for (const auto& [dsn, recs] : corpus.client_clips) {
    if (dsn == r0.dsns[0] || dsn == r1.dsns[0]) continue;
    CHECK(engine.client(dsn).buffer.size() == 4);
  }
}

TEST_CASE("round bookkeeping satisfies the audit invariants") {
  GenConfig gen;
  gen.device_count = 5;
  gen.days = 4;
  gen.server_days = 1;
  gen.eval_tail_days = 1;
  gen.clips_per_device_per_day = 3;
  const CorpusSplit corpus = synth_corpus(gen, 32);

  const ApcConfig apc = tiny_apc();
  FederationConfig fed;
  fed.rounds = 3;
  fed.clients_per_round = 2;
  fed.batch_size = 4;
  fed.eta = 1e-3;
  fed.seed = 11;
  fed.clear_all_buffers = true;
  Rng rng(12);
  FederationEngine engine(corpus, apc, fed, init_apc(apc, rng),
                          [&](const ClipRecord& rec) {
                            return fake_features(corpus.seed, rec.uid);
                          });
  const auto audit = engine.run_all();
  REQUIRE(audit.size() == 3);
  for (const auto& r : {audit[0], audit[1]}) {
    REQUIRE_FALSE(r.empty);
    CHECK(r.dsns.size() == 2);
    CHECK(std::abs(r.weight_sum - 1.0) < 1e-12);
    int total = 0;
    for (int n : r.n_k) total += n;
    CHECK(total == r.total_examples);
    CHECK(r.mean_local_loss > 0.0);
  }
  // Day 3 belongs to the evaluation tail and everything was cleared, so the
  // final round is empty and the model is carried forward unchanged.
  CHECK(audit[2].empty);
  CHECK(audit[2].param_checksum == audit[1].param_checksum);
  CHECK(audit[2].param_checksum == param_checksum(engine.global()));
  for (const auto& [dsn, recs] : corpus.client_clips) {
    CHECK(engine.client(dsn).buffer.empty());
  }
}

TEST_CASE("reruns and worker counts do not change the outcome") {
  GenConfig gen;
  gen.device_count = 5;
  gen.days = 4;
  gen.server_days = 1;
  gen.eval_tail_days = 1;
  gen.clips_per_device_per_day = 2;
  const CorpusSplit corpus = synth_corpus(gen, 33);
  const ApcConfig apc = tiny_apc();

  auto run = [&](int threads) {
    FederationConfig fed;
    fed.rounds = 2;
    fed.clients_per_round = 3;
    fed.batch_size = 2;
    fed.eta = 1e-3;
    fed.seed = 13;
    fed.threads = threads;
    Rng rng(14);
    FederationEngine engine(corpus, apc, fed, init_apc(apc, rng),
                            [&](const ClipRecord& rec) {
                              return fake_features(corpus.seed, rec.uid);
                            });
    engine.run_all();
    return param_checksum(engine.global());
  };
  const std::string once = run(1);
  CHECK(run(1) == once);
  CHECK(run(3) == once);
}

TEST_CASE("the audit file carries the stamp and one row per round") {
  RoundRecord a;
  a.round = 0;
  a.dsns = {"x", "y"};
  a.total_examples = 7;
  a.mean_local_loss = 1.25;
  a.param_checksum = "00aa00aa00aa00aa";
  RoundRecord b;
  b.round = 1;
  b.empty = true;
  b.param_checksum = "00aa00aa00aa00aa";

  RunStamp stamp;
  stamp.config_hash = "deadbeef00000000";
  stamp.seed = 5;
  stamp.build_id = "test";
  const auto path =
      std::filesystem::temp_directory_path() / "fssl_audit_test.csv";
  write_round_audit_csv(path, {a, b}, stamp);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "# config_hash=deadbeef00000000 seed=5 build=test");
  REQUIRE(std::getline(in, line));
  CHECK(line == "round,dsn_count,total_examples,mean_local_loss,param_checksum");
  REQUIRE(std::getline(in, line));
  CHECK(line == "0,2,7,1.250000000,00aa00aa00aa00aa");
  REQUIRE(std::getline(in, line));
  CHECK(line == "1,0,0,0.000000000,00aa00aa00aa00aa");
  CHECK_FALSE(std::getline(in, line));
  std::filesystem::remove(path);
}

TEST_CASE("degenerate federation configs are rejected") {
  FederationConfig fed;
  fed.clients_per_round = 0;
  CHECK_THROWS_AS(fed.validate(), ConfigError);
  fed = FederationConfig{};
  fed.batch_size = 0;
  CHECK_THROWS_AS(fed.validate(), ConfigError);
  fed = FederationConfig{};
  fed.eta = -0.1;
  CHECK_THROWS_AS(fed.validate(), ConfigError);
  fed = FederationConfig{};
  fed.threads = 0;
  CHECK_THROWS_AS(fed.validate(), ConfigError);
}
