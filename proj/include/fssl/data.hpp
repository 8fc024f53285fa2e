#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fssl/audio.hpp"
#include "fssl/rng.hpp"

namespace fssl {

struct GenConfig {
  int device_count = 50;
  int days = 22;
  int server_days = 1;       // leading block reserved for the server corpus
  int eval_tail_days = 1;    // trailing block held out for evaluation
  int clips_per_device_per_day = 4;
  int client_data_multiplier = 1;  // scales client-stream volume only
  double clip_seconds = 2.0;
  int sample_rate = 16000;
  double overlap_fraction = 0.3;  // devices present in both periods
  double test_fraction = 0.3;     // devices present in neither period
  double event_rate = 0.5;        // target positive rate, varied per device
  double distractor_rate = 0.5;   // steady-tone share among negatives
  double event_min_seconds = 0.5;
  double event_max_seconds = 1.0;
  // Device profile ranges. The in-home fleet (overlap cohort) is narrower
  // and cleaner than the production fleet, which is what federation of the
  // encoder is supposed to bridge.
  double server_pitch_lo_hz = 320.0, server_pitch_hi_hz = 700.0;
  double client_pitch_lo_hz = 320.0, client_pitch_hi_hz = 1150.0;
  double server_noise_db_lo = -38.0, server_noise_db_hi = -30.0;
  double client_noise_db_lo = -34.0, client_noise_db_hi = -22.0;

  void validate() const;  // throws ConfigError
  int clip_samples() const;
};

// Cohort decides which periods a device appears in: `overlap` spans both
// server and client periods, `client_only` the client period, `holdout`
// neither (its clips all land in the test split).
enum class Cohort : std::uint8_t { overlap = 0, client_only = 1, holdout = 2 };

struct DeviceProfile {
  std::string dsn;
  int index = -1;
  Cohort cohort = Cohort::holdout;
  double noise_floor_db = -30.0;
  double channel_gain = 1.0;
  double channel_tilt = 0.0;  // spectral slope knob in [-3, 3]
  double event_rate = 0.5;
  double event_pitch_hz = 500.0;
};

enum class Split : std::uint8_t { server = 0, client = 1, test = 2 };

std::string split_name(Split s);
Split parse_split(const std::string& name);  // throws IngestError

// One clip, either a synthesis recipe (rendered on demand) or a WAV file on
// disk. label is 0/1, or -1 when unknown (unlabeled manifest rows).
struct ClipRecord {
  int uid = -1;
  std::string dsn;
  int device_index = -1;
  int day = 0;
  int slot = 0;
  std::int64_t timestamp = 0;
  int label = -1;
  Split split = Split::test;
  bool has_event = false;
  bool has_distractor = false;
  double onset_seconds = 0.0;
  double event_seconds = 0.0;
  std::string wav_path;  // empty for synthesized clips
};

struct CorpusSplit {
  GenConfig gen;
  std::uint64_t seed = 0;
  std::vector<DeviceProfile> devices;
  std::vector<ClipRecord> server_clips;
  std::map<std::string, std::vector<ClipRecord>> client_clips;  // time-ordered
  std::vector<ClipRecord> test_clips;

  const DeviceProfile& profile(const std::string& dsn) const;
  std::vector<std::string> all_dsns() const;  // sorted, unique
  std::size_t total_clips() const;
};

struct PartitionSpec {
  std::vector<std::string> internal;     // server ∩ client devices
  std::vector<std::string> unseen;       // client-only devices
  std::vector<std::string> transferred;  // devices in neither period
};

CorpusSplit synth_corpus(const GenConfig& gen, std::uint64_t seed);

PartitionSpec derive_partitions(const CorpusSplit& split);

// Renders or loads the clip's waveform.
std::vector<double> clip_samples(const CorpusSplit& corpus,
                                 const ClipRecord& record);

// Same waveform packaged with its metadata for the feature front end.
AudioClip clip_audio(const CorpusSplit& corpus, const ClipRecord& record);

// WAV + JSON-lines manifest round trip.
std::filesystem::path export_corpus(const CorpusSplit& corpus,
                                    const std::filesystem::path& dir);
CorpusSplit load_manifest(const std::filesystem::path& manifest_path);

}  // namespace fssl
