#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fssl {

// One recorded clip. Samples are dimensionless amplitudes in [-1, 1];
// the label is present on server/test clips and absent where unknown.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string dsn;
  std::int64_t timestamp = 0;
  std::optional<int> label;
};

// Minimal RIFF/WAVE support: 16-bit PCM, mono. Anything else is rejected.
struct WavData {
  std::vector<double> samples;
  int sample_rate = 0;
};

WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace fssl
