#include "fssl/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "fssl/errors.hpp"
#include "fssl/rng.hpp"

#ifndef FSSL_BUILD_ID
#define FSSL_BUILD_ID "unknown"
#endif

namespace fssl {

namespace {

using nlohmann::json;

void require_object(const json& value, const std::string& path) {
  if (!value.is_object()) {
    throw ConfigError(path + ": expected an object");
  }
}

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& path) {
  for (const auto& [key, value] : obj.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError(path + "." + key + ": unknown key");
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out,
                const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

void read_pairs(const json& obj, const char* key,
                std::array<std::pair<int, int>, 5>& out,
                const std::string& path) {
  if (!obj.contains(key)) return;
  const json& arr = obj.at(key);
  if (!arr.is_array() || arr.size() != 5) {
    throw ConfigError(path + "." + key + ": expected 5 [time,mel] pairs");
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const json& pair = arr[i];
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
        !pair[1].is_number_integer()) {
      throw ConfigError(path + "." + key + "[" + std::to_string(i) +
                        "]: expected [time,mel]");
    }
    out[i] = {pair[0].get<int>(), pair[1].get<int>()};
  }
}

void read_ints5(const json& obj, const char* key, std::array<int, 5>& out,
                const std::string& path) {
  if (!obj.contains(key)) return;
  const json& arr = obj.at(key);
  if (!arr.is_array() || arr.size() != 5) {
    throw ConfigError(path + "." + key + ": expected 5 integers");
  }
  for (std::size_t i = 0; i < 5; ++i) {
    if (!arr[i].is_number_integer()) {
      throw ConfigError(path + "." + key + "[" + std::to_string(i) +
                        "]: expected an integer");
    }
    out[i] = arr[i].get<int>();
  }
}

void parse_data(const json& obj, GenConfig& gen) {
  const std::string path = "data";
  require_object(obj, path);
  check_keys(obj,
             {"device_count", "days", "server_days", "eval_tail_days",
              "clips_per_device_per_day", "client_data_multiplier",
              "clip_seconds", "sample_rate", "overlap_fraction",
              "test_fraction", "event_rate", "distractor_rate",
              "event_min_seconds", "event_max_seconds", "server_pitch_lo_hz",
              "server_pitch_hi_hz", "client_pitch_lo_hz",
              "client_pitch_hi_hz", "server_noise_db_lo",
              "server_noise_db_hi", "client_noise_db_lo",
              "client_noise_db_hi"},
             path);
  read_field(obj, "device_count", gen.device_count, path);
  read_field(obj, "days", gen.days, path);
  read_field(obj, "server_days", gen.server_days, path);
  read_field(obj, "eval_tail_days", gen.eval_tail_days, path);
  read_field(obj, "clips_per_device_per_day", gen.clips_per_device_per_day,
             path);
  read_field(obj, "client_data_multiplier", gen.client_data_multiplier, path);
  read_field(obj, "clip_seconds", gen.clip_seconds, path);
  read_field(obj, "sample_rate", gen.sample_rate, path);
  read_field(obj, "overlap_fraction", gen.overlap_fraction, path);
  read_field(obj, "test_fraction", gen.test_fraction, path);
  read_field(obj, "event_rate", gen.event_rate, path);
  read_field(obj, "distractor_rate", gen.distractor_rate, path);
  read_field(obj, "event_min_seconds", gen.event_min_seconds, path);
  read_field(obj, "event_max_seconds", gen.event_max_seconds, path);
  read_field(obj, "server_pitch_lo_hz", gen.server_pitch_lo_hz, path);
  read_field(obj, "server_pitch_hi_hz", gen.server_pitch_hi_hz, path);
  read_field(obj, "client_pitch_lo_hz", gen.client_pitch_lo_hz, path);
  read_field(obj, "client_pitch_hi_hz", gen.client_pitch_hi_hz, path);
  read_field(obj, "server_noise_db_lo", gen.server_noise_db_lo, path);
  read_field(obj, "server_noise_db_hi", gen.server_noise_db_hi, path);
  read_field(obj, "client_noise_db_lo", gen.client_noise_db_lo, path);
  read_field(obj, "client_noise_db_hi", gen.client_noise_db_hi, path);
}

void parse_features(const json& obj, FeatureConfig& f) {
  const std::string path = "features";
  require_object(obj, path);
  check_keys(obj,
             {"frame_ms", "hop_ms", "n_mels", "fft_size", "mel_low_hz",
              "mel_high_hz", "log_floor", "cmvn_epsilon"},
             path);
  read_field(obj, "frame_ms", f.frame_ms, path);
  read_field(obj, "hop_ms", f.hop_ms, path);
  read_field(obj, "n_mels", f.n_mels, path);
  read_field(obj, "fft_size", f.fft_size, path);
  read_field(obj, "mel_low_hz", f.mel_low_hz, path);
  read_field(obj, "mel_high_hz", f.mel_high_hz, path);
  read_field(obj, "log_floor", f.log_floor, path);
  read_field(obj, "cmvn_epsilon", f.cmvn_epsilon, path);
}

void parse_model(const json& obj, ApcConfig& m) {
  const std::string path = "model";
  require_object(obj, path);
  check_keys(obj,
             {"conv_kernels", "conv_strides", "conv_channels", "lstm_units",
              "n_shift", "decoder_kernel"},
             path);
  read_pairs(obj, "conv_kernels", m.conv_kernels, path);
  read_pairs(obj, "conv_strides", m.conv_strides, path);
  read_ints5(obj, "conv_channels", m.conv_channels, path);
  read_field(obj, "lstm_units", m.lstm_units, path);
  read_field(obj, "n_shift", m.n_shift, path);
  read_field(obj, "decoder_kernel", m.decoder_kernel, path);
}

void parse_classifier(const json& obj, ClassifierConfig& c) {
  const std::string path = "classifier";
  require_object(obj, path);
  check_keys(obj, {"lstm_units", "scale_c", "clamp_eps"}, path);
  read_field(obj, "lstm_units", c.lstm_units, path);
  read_field(obj, "scale_c", c.scale_c, path);
  read_field(obj, "clamp_eps", c.clamp_eps, path);
}

void parse_pretrain(const json& obj, PretrainConfig& p) {
  const std::string path = "pretrain";
  require_object(obj, path);
  check_keys(obj, {"epochs", "batch_size", "eta"}, path);
  read_field(obj, "epochs", p.epochs, path);
  read_field(obj, "batch_size", p.batch_size, path);
  read_field(obj, "eta", p.eta, path);
}

void parse_federation(const json& obj, FederationConfig& f) {
  const std::string path = "federation";
  require_object(obj, path);
  check_keys(obj,
             {"rounds", "clients_per_round", "local_epochs", "batch_size",
              "eta", "clear_all_buffers", "threads"},
             path);
  read_field(obj, "rounds", f.rounds, path);
  read_field(obj, "clients_per_round", f.clients_per_round, path);
  read_field(obj, "local_epochs", f.local_epochs, path);
  read_field(obj, "batch_size", f.batch_size, path);
  read_field(obj, "eta", f.eta, path);
  read_field(obj, "clear_all_buffers", f.clear_all_buffers, path);
  read_field(obj, "threads", f.threads, path);
}

void parse_classifier_train(const json& obj, ClassifierTrainConfig& c) {
  const std::string path = "classifier_train";
  require_object(obj, path);
  check_keys(obj, {"epochs", "batch_size", "eta"}, path);
  read_field(obj, "epochs", c.epochs, path);
  read_field(obj, "batch_size", c.batch_size, path);
  read_field(obj, "eta", c.eta, path);
}

void parse_eval(const json& obj, EvalConfig& e) {
  const std::string path = "eval";
  require_object(obj, path);
  check_keys(obj, {"recall_levels", "max_clips_per_partition"}, path);
  read_field(obj, "recall_levels", e.recall_levels, path);
  read_field(obj, "max_clips_per_partition", e.max_clips_per_partition, path);
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  require_object(root, "config");
  check_keys(root,
             {"seed", "seeds", "out_dir", "data", "features", "model",
              "classifier", "pretrain", "federation", "classifier_train",
              "eval", "ablation_multipliers"},
             "config");
  ExperimentConfig cfg;
  if (root.contains("seed") && root.contains("seeds")) {
    throw ConfigError("config: give either seed or seeds, not both");
  }
  if (root.contains("seed")) {
    std::uint64_t seed = 1;
    read_field(root, "seed", seed, "config");
    cfg.seeds = {seed};
  }
  if (root.contains("seeds")) {
    read_field(root, "seeds", cfg.seeds, "config");
    if (cfg.seeds.empty()) throw ConfigError("config.seeds: must be non-empty");
  }
  read_field(root, "out_dir", cfg.out_dir, "config");
  if (root.contains("data")) parse_data(root.at("data"), cfg.plan.gen);
  if (root.contains("features")) {
    parse_features(root.at("features"), cfg.plan.features);
  }
  if (root.contains("model")) parse_model(root.at("model"), cfg.plan.apc);
  if (root.contains("classifier")) {
    parse_classifier(root.at("classifier"), cfg.plan.classifier);
  }
  if (root.contains("pretrain")) {
    parse_pretrain(root.at("pretrain"), cfg.plan.pretrain);
  }
  if (root.contains("federation")) {
    parse_federation(root.at("federation"), cfg.plan.federation);
  }
  if (root.contains("classifier_train")) {
    parse_classifier_train(root.at("classifier_train"),
                           cfg.plan.classifier_train);
  }
  if (root.contains("eval")) parse_eval(root.at("eval"), cfg.plan.eval);
  if (root.contains("ablation_multipliers")) {
    read_field(root, "ablation_multipliers", cfg.plan.ablation_multipliers,
               "config");
  }
  cfg.plan.apc.input_mels = cfg.plan.features.n_mels;
  cfg.plan.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["seeds"] = cfg.seeds;
  root["out_dir"] = cfg.out_dir;
  const GenConfig& g = cfg.plan.gen;
  root["data"] = {{"device_count", g.device_count},
                  {"days", g.days},
                  {"server_days", g.server_days},
                  {"eval_tail_days", g.eval_tail_days},
                  {"clips_per_device_per_day", g.clips_per_device_per_day},
                  {"client_data_multiplier", g.client_data_multiplier},
                  {"clip_seconds", g.clip_seconds},
                  {"sample_rate", g.sample_rate},
                  {"overlap_fraction", g.overlap_fraction},
                  {"test_fraction", g.test_fraction},
                  {"event_rate", g.event_rate},
                  {"distractor_rate", g.distractor_rate},
                  {"event_min_seconds", g.event_min_seconds},
                  {"event_max_seconds", g.event_max_seconds},
                  {"server_pitch_lo_hz", g.server_pitch_lo_hz},
                  {"server_pitch_hi_hz", g.server_pitch_hi_hz},
                  {"client_pitch_lo_hz", g.client_pitch_lo_hz},
                  {"client_pitch_hi_hz", g.client_pitch_hi_hz},
                  {"server_noise_db_lo", g.server_noise_db_lo},
                  {"server_noise_db_hi", g.server_noise_db_hi},
                  {"client_noise_db_lo", g.client_noise_db_lo},
                  {"client_noise_db_hi", g.client_noise_db_hi}};
  const FeatureConfig& f = cfg.plan.features;
  root["features"] = {{"frame_ms", f.frame_ms},
                      {"hop_ms", f.hop_ms},
                      {"n_mels", f.n_mels},
                      {"fft_size", f.fft_size},
                      {"mel_low_hz", f.mel_low_hz},
                      {"mel_high_hz", f.mel_high_hz},
                      {"log_floor", f.log_floor},
                      {"cmvn_epsilon", f.cmvn_epsilon}};
  const ApcConfig& m = cfg.plan.apc;
  json kernels = json::array(), strides = json::array();
  for (int i = 0; i < 5; ++i) {
    kernels.push_back({m.conv_kernels[i].first, m.conv_kernels[i].second});
    strides.push_back({m.conv_strides[i].first, m.conv_strides[i].second});
  }
  root["model"] = {{"conv_kernels", kernels},
                   {"conv_strides", strides},
                   {"conv_channels", m.conv_channels},
                   {"lstm_units", m.lstm_units},
                   {"n_shift", m.n_shift},
                   {"decoder_kernel", m.decoder_kernel}};
  const ClassifierConfig& c = cfg.plan.classifier;
  root["classifier"] = {{"lstm_units", c.lstm_units},
                        {"scale_c", c.scale_c},
                        {"clamp_eps", c.clamp_eps}};
  const PretrainConfig& p = cfg.plan.pretrain;
  root["pretrain"] = {
      {"epochs", p.epochs}, {"batch_size", p.batch_size}, {"eta", p.eta}};
  const FederationConfig& fed = cfg.plan.federation;
  root["federation"] = {{"rounds", fed.rounds},
                        {"clients_per_round", fed.clients_per_round},
                        {"local_epochs", fed.local_epochs},
                        {"batch_size", fed.batch_size},
                        {"eta", fed.eta},
                        {"clear_all_buffers", fed.clear_all_buffers},
                        {"threads", fed.threads}};
  const ClassifierTrainConfig& ct = cfg.plan.classifier_train;
  root["classifier_train"] = {
      {"epochs", ct.epochs}, {"batch_size", ct.batch_size}, {"eta", ct.eta}};
  const EvalConfig& e = cfg.plan.eval;
  root["eval"] = {{"recall_levels", e.recall_levels},
                  {"max_clips_per_partition", e.max_clips_per_partition}};
  root["ablation_multipliers"] = cfg.plan.ablation_multipliers;
  return root.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
  // Seed list, thread count and output location are runtime knobs, not
  // experiment identity: hash the config with them pinned so reruns match.
  ExperimentConfig canon = cfg;
  canon.seeds = {0};
  canon.out_dir.clear();
  canon.plan.federation.threads = 1;
  const std::uint64_t h = fnv1a64(config_to_json(canon));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string build_id() { return FSSL_BUILD_ID; }

}  // namespace fssl
