#include "fssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

constexpr std::int64_t kEpoch = 1700000000;  // fixed origin for timestamps

std::string make_dsn(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "dsn-%04d", index);
  return buf;
}

Split split_for(Cohort cohort, int day, const GenConfig& gen) {
  if (day >= gen.days - gen.eval_tail_days) return Split::test;
  if (day < gen.server_days) {
    return cohort == Cohort::overlap ? Split::server : Split::test;
  }
  return cohort == Cohort::holdout ? Split::test : Split::client;
}

DeviceProfile draw_profile(const GenConfig& gen, std::uint64_t seed,
                           int index, Cohort cohort) {
  Rng rng(substream(seed, "profile", index));
  DeviceProfile p;
  p.dsn = make_dsn(index);
  p.index = index;
  p.cohort = cohort;
  const bool in_home = cohort == Cohort::overlap;
  const double noise_lo = in_home ? gen.server_noise_db_lo : gen.client_noise_db_lo;
  const double noise_hi = in_home ? gen.server_noise_db_hi : gen.client_noise_db_hi;
  const double tilt_span = in_home ? 1.0 : 3.0;
  const double pitch_lo = in_home ? gen.server_pitch_lo_hz : gen.client_pitch_lo_hz;
  const double pitch_hi = in_home ? gen.server_pitch_hi_hz : gen.client_pitch_hi_hz;
  p.noise_floor_db = rng.uniform(noise_lo, noise_hi);
  p.channel_gain = rng.uniform(0.5, 1.2);
  p.channel_tilt = rng.uniform(-tilt_span, tilt_span);
  p.event_rate = std::clamp(rng.uniform(gen.event_rate - 0.15,
                                        gen.event_rate + 0.15),
                            0.05, 0.95);
  p.event_pitch_hz = rng.uniform(pitch_lo, pitch_hi);
  return p;
}

ClipRecord draw_record(const GenConfig& gen, std::uint64_t seed,
                       const DeviceProfile& device, int day, int slot,
                       int clips_today, Split split) {
  Rng rng(substream(seed, "clip", device.index, day, slot));
  ClipRecord rec;
  rec.dsn = device.dsn;
  rec.device_index = device.index;
  rec.day = day;
  rec.slot = slot;
  rec.split = split;
  const std::int64_t spacing = 86400 / clips_today;
  rec.timestamp = kEpoch + static_cast<std::int64_t>(day) * 86400 +
                  static_cast<std::int64_t>(slot) * spacing + device.index;
  rec.has_event = rng.uniform() < device.event_rate;
  if (rec.has_event) {
    rec.label = 1;
    rec.event_seconds = rng.uniform(gen.event_min_seconds, gen.event_max_seconds);
    rec.onset_seconds = rng.uniform(0.0, gen.clip_seconds - rec.event_seconds);
  } else {
    rec.label = 0;
    rec.has_distractor = rng.uniform() < gen.distractor_rate;
    if (rec.has_distractor) {
      rec.event_seconds =
          rng.uniform(gen.event_min_seconds, gen.event_max_seconds);
      rec.onset_seconds =
          rng.uniform(0.0, gen.clip_seconds - rec.event_seconds);
    }
  }
  return rec;
}

std::vector<double> render_clip(const GenConfig& gen, std::uint64_t seed,
                                const DeviceProfile& device,
                                const ClipRecord& rec) {
  const int n = gen.clip_samples();
  const int rate = gen.sample_rate;
  std::vector<double> s(static_cast<std::size_t>(n));
  Rng rng(substream(seed, "noise", device.index, rec.day, rec.slot));
  // Colored noise floor: white noise blended with a one-pole lowpass (or its
  // highpass residual) according to the device tilt, then RMS-normalized.
  const double t = std::clamp(device.channel_tilt / 3.0, -1.0, 1.0);
  double lp = 0.0;
  double energy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = rng.normal();
    lp += 0.25 * (w - lp);
    const double v = t >= 0.0 ? (1.0 - t) * w + t * lp
                              : (1.0 + t) * w - t * (w - lp);
    s[static_cast<std::size_t>(i)] = v;
    energy += v * v;
  }
  const double rms = std::sqrt(energy / n);
  const double target = std::pow(10.0, device.noise_floor_db / 20.0);
  const double norm = rms > 0.0 ? target / rms : 0.0;
  for (double& v : s) v *= norm;

  if (rec.has_event || rec.has_distractor) {
    const double amplitude = 0.22;
    // The steady distractor carries the same average power as the modulated
    // burst, so energy alone cannot separate the classes.
    const double steady = amplitude * std::sqrt(3.0 / 8.0);
    const int onset = static_cast<int>(std::lround(rec.onset_seconds * rate));
    const int dur = static_cast<int>(std::lround(rec.event_seconds * rate));
    const double omega =
        2.0 * std::numbers::pi * device.event_pitch_hz / rate;
    const double am = 2.0 * std::numbers::pi * 4.0 / rate;
    for (int i = onset; i < std::min(n, onset + dur); ++i) {
      const double carrier = std::sin(omega * i);
      const double env =
          rec.has_event ? amplitude * 0.5 * (1.0 - std::cos(am * (i - onset)))
                        : steady;
      s[static_cast<std::size_t>(i)] += env * carrier;
    }
  }
  for (double& v : s) v *= device.channel_gain;
  return s;
}

}  // namespace

void GenConfig::validate() const {
  if (device_count < 1) throw ConfigError("device_count must be positive");
  if (days < 1) throw ConfigError("days must be positive");
  if (server_days < 1) throw ConfigError("server_days must be positive");
  if (eval_tail_days < 1) throw ConfigError("eval_tail_days must be positive");
  if (days < server_days + eval_tail_days) {
    throw ConfigError("days must cover server block plus evaluation tail");
  }
  if (clips_per_device_per_day < 1) {
    throw ConfigError("clips_per_device_per_day must be positive");
  }
  if (client_data_multiplier < 1) {
    throw ConfigError("client_data_multiplier must be positive");
  }
  if (clips_per_device_per_day * client_data_multiplier > 86400) {
    throw ConfigError("more clips per day than seconds in a day");
  }
  if (sample_rate < 1000) throw ConfigError("sample_rate too low");
  if (clip_seconds <= 0.0) throw ConfigError("clip_seconds must be positive");
  if (event_min_seconds <= 0.0 || event_max_seconds < event_min_seconds ||
      event_max_seconds > clip_seconds) {
    throw ConfigError("event duration range must fit inside the clip");
  }
  if (overlap_fraction < 0.0 || test_fraction < 0.0 ||
      overlap_fraction + test_fraction > 1.0) {
    throw ConfigError("cohort fractions must be non-negative and sum to <= 1");
  }
  if (event_rate < 0.0 || event_rate > 1.0 || distractor_rate < 0.0 ||
      distractor_rate > 1.0) {
    throw ConfigError("rates must lie in [0,1]");
  }
}

int GenConfig::clip_samples() const {
  return static_cast<int>(std::lround(clip_seconds * sample_rate));
}

std::string split_name(Split s) {
  switch (s) {
    case Split::server: return "server";
    case Split::client: return "client";
    case Split::test: return "test";
  }
  throw ContractError("bad split value");
}

Split parse_split(const std::string& name) {
  if (name == "server") return Split::server;
  if (name == "client") return Split::client;
  if (name == "test") return Split::test;
  throw IngestError("unknown split tag: " + name);
}

const DeviceProfile& CorpusSplit::profile(const std::string& dsn) const {
  for (const DeviceProfile& p : devices) {
    if (p.dsn == dsn) return p;
  }
  throw ContractError("unknown device: " + dsn);
}

std::vector<std::string> CorpusSplit::all_dsns() const {
  std::set<std::string> names;
  for (const auto& r : server_clips) names.insert(r.dsn);
  for (const auto& [dsn, recs] : client_clips) {
    if (!recs.empty()) names.insert(dsn);
  }
  for (const auto& r : test_clips) names.insert(r.dsn);
  return {names.begin(), names.end()};
}

std::size_t CorpusSplit::total_clips() const {
  std::size_t n = server_clips.size() + test_clips.size();
  for (const auto& [dsn, recs] : client_clips) n += recs.size();
  return n;
}

CorpusSplit synth_corpus(const GenConfig& gen, std::uint64_t seed) {
  gen.validate();
  CorpusSplit corpus;
  corpus.gen = gen;
  corpus.seed = seed;

  const int overlap_count =
      static_cast<int>(std::lround(gen.device_count * gen.overlap_fraction));
  const int holdout_count =
      static_cast<int>(std::lround(gen.device_count * gen.test_fraction));
  for (int index = 0; index < gen.device_count; ++index) {
    Cohort cohort = Cohort::client_only;
    if (index < overlap_count) {
      cohort = Cohort::overlap;
    } else if (index >= gen.device_count - holdout_count) {
      cohort = Cohort::holdout;
    }
    corpus.devices.push_back(draw_profile(gen, seed, index, cohort));
  }

  int uid = 0;
  for (const DeviceProfile& device : corpus.devices) {
    for (int day = 0; day < gen.days; ++day) {
      const Split split = split_for(device.cohort, day, gen);
      const int clips_today =
          split == Split::client
              ? gen.clips_per_device_per_day * gen.client_data_multiplier
              : gen.clips_per_device_per_day;
      for (int slot = 0; slot < clips_today; ++slot) {
        ClipRecord rec =
            draw_record(gen, seed, device, day, slot, clips_today, split);
        rec.uid = uid++;
        switch (split) {
          case Split::server:
            corpus.server_clips.push_back(std::move(rec));
            break;
          case Split::client:
            corpus.client_clips[device.dsn].push_back(std::move(rec));
            break;
          case Split::test:
            corpus.test_clips.push_back(std::move(rec));
            break;
        }
      }
    }
  }
  return corpus;
}

PartitionSpec derive_partitions(const CorpusSplit& split) {
  std::set<std::string> server_dsns, client_dsns;
  for (const auto& r : split.server_clips) server_dsns.insert(r.dsn);
  for (const auto& [dsn, recs] : split.client_clips) {
    if (!recs.empty()) client_dsns.insert(dsn);
  }
  PartitionSpec spec;
  for (const std::string& dsn : split.all_dsns()) {
    const bool on_server = server_dsns.count(dsn) != 0;
    const bool on_client = client_dsns.count(dsn) != 0;
    if (on_server && on_client) {
      spec.internal.push_back(dsn);
    } else if (on_client) {
      spec.unseen.push_back(dsn);
    } else if (!on_server) {
      spec.transferred.push_back(dsn);
    }
  }
  return spec;
}

std::vector<double> clip_samples(const CorpusSplit& corpus,
                                 const ClipRecord& record) {
  if (!record.wav_path.empty()) {
    const WavData wav = read_wav(record.wav_path);
    if (wav.sample_rate != corpus.gen.sample_rate) {
      throw IngestError("unexpected sample rate in " + record.wav_path);
    }
    return wav.samples;
  }
  return render_clip(corpus.gen, corpus.seed, corpus.profile(record.dsn),
                     record);
}

AudioClip clip_audio(const CorpusSplit& corpus, const ClipRecord& record) {
  AudioClip clip;
  clip.samples = clip_samples(corpus, record);
  clip.sample_rate = corpus.gen.sample_rate;
  clip.dsn = record.dsn;
  clip.timestamp = record.timestamp;
  if (record.label >= 0) clip.label = record.label;
  return clip;
}

namespace {

void append_manifest_row(std::ofstream& out, const CorpusSplit& corpus,
                         const ClipRecord& rec,
                         const std::filesystem::path& dir) {
  char name[64];
  std::snprintf(name, sizeof(name), "%s_d%03d_s%03d.wav", rec.dsn.c_str(),
                rec.day, rec.slot);
  const std::filesystem::path rel = std::filesystem::path("wav") / name;
  write_wav(dir / rel, clip_samples(corpus, rec), corpus.gen.sample_rate);
  nlohmann::json row;
  row["path"] = rel.generic_string();
  row["dsn"] = rec.dsn;
  row["timestamp"] = rec.timestamp;
  if (rec.label < 0) {
    row["label"] = nullptr;
  } else {
    row["label"] = rec.label;
  }
  row["split"] = split_name(rec.split);
  out << row.dump() << '\n';
}

}  // namespace

std::filesystem::path export_corpus(const CorpusSplit& corpus,
                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wav");
  const std::filesystem::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest);
  if (!out) throw IngestError("cannot open for write: " + manifest.string());
  for (const auto& rec : corpus.server_clips) {
    append_manifest_row(out, corpus, rec, dir);
  }
  for (const auto& [dsn, recs] : corpus.client_clips) {
    for (const auto& rec : recs) append_manifest_row(out, corpus, rec, dir);
  }
  for (const auto& rec : corpus.test_clips) {
    append_manifest_row(out, corpus, rec, dir);
  }
  if (!out) throw IngestError("write failed: " + manifest.string());
  return manifest;
}

CorpusSplit load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw IngestError("cannot open manifest: " + manifest_path.string());
  }
  const std::filesystem::path dir = manifest_path.parent_path();
  CorpusSplit corpus;
  std::string line;
  int row_number = 0;
  int uid = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty()) continue;
    const std::string where = "manifest row " + std::to_string(row_number);
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!row.is_object()) throw IngestError(where + ": not an object");
    static const std::set<std::string> kKeys = {"path", "dsn", "timestamp",
                                               "label", "split"};
    for (const auto& [key, value] : row.items()) {
      if (kKeys.count(key) == 0) {
        throw IngestError(where + ": unknown key '" + key + "'");
      }
    }
    for (const std::string& key : kKeys) {
      if (!row.contains(key)) {
        throw IngestError(where + ": missing key '" + key + "'");
      }
    }
    ClipRecord rec;
    rec.uid = uid++;
    try {
      rec.dsn = row["dsn"].get<std::string>();
      rec.timestamp = row["timestamp"].get<std::int64_t>();
      rec.label = row["label"].is_null() ? -1 : row["label"].get<int>();
      rec.split = parse_split(row["split"].get<std::string>());
      rec.wav_path = (dir / row["path"].get<std::string>()).string();
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(where + ": bad field type (" + std::string(e.what()) +
                        ")");
    }
    if (rec.label != -1 && rec.label != 0 && rec.label != 1) {
      throw IngestError(where + ": label must be 0, 1 or null");
    }
    const WavData wav = read_wav(rec.wav_path);
    if (wav.sample_rate != 16000) {
      throw IngestError(where + ": expected 16 kHz WAV, got " +
                        std::to_string(wav.sample_rate));
    }
    switch (rec.split) {
      case Split::server:
        corpus.server_clips.push_back(std::move(rec));
        break;
      case Split::client:
        corpus.client_clips[rec.dsn].push_back(std::move(rec));
        break;
      case Split::test:
        corpus.test_clips.push_back(std::move(rec));
        break;
    }
  }
  if (corpus.total_clips() == 0) {
    throw EmptyCorpusError("manifest lists no clips: " +
                           manifest_path.string());
  }
  for (auto& [dsn, recs] : corpus.client_clips) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const ClipRecord& a, const ClipRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
  }
  int index = 0;
  for (const std::string& dsn : corpus.all_dsns()) {
    DeviceProfile p;
    p.dsn = dsn;
    p.index = index++;
    corpus.devices.push_back(std::move(p));
  }
  return corpus;
}

}  // namespace fssl
