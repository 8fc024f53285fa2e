#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fssl/audio.hpp"
#include "fssl/tensor.hpp"

namespace fssl {

struct FeatureConfig {
  int frame_ms = 25;
  int hop_ms = 10;
  int n_mels = 20;
  int fft_size = 512;
  double mel_low_hz = 0.0;
  double mel_high_hz = 0.0;  // 0 means Nyquist
  double log_floor = 1e-10;
  double cmvn_epsilon = 1e-8;

  void validate() const;  // throws ConfigError
};

// T x M log-mel energy matrix for one clip.
struct LfbeMatrix {
  Tensor values;  // shape {T, M}
  int frame_ms = 25;
  int hop_ms = 10;
  int n_mels = 20;

  int frames() const { return values.shape.empty() ? 0 : values.dim(0); }
  int mels() const { return values.rank() < 2 ? 0 : values.dim(1); }
};

struct CmvnStats {
  std::vector<double> mean;
  std::vector<double> variance;
  std::int64_t count = 0;

  int dims() const { return static_cast<int>(mean.size()); }
};

// Streaming mean/variance accumulation so a corpus never has to be resident
// in memory at once. Population variance.
class CmvnAccumulator {
 public:
  void add(const LfbeMatrix& m);
  CmvnStats finish() const;  // throws EmptyCorpusError if nothing was added

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  std::int64_t count_ = 0;
};

int frame_length_samples(int sample_rate, int frame_ms);
int hop_length_samples(int sample_rate, int hop_ms);

// Number of full analysis windows: floor((n - win) / hop) + 1.
int frame_count(std::int64_t n_samples, int win_samples, int hop_samples);

std::vector<std::vector<double>> frame_signal(const AudioClip& clip,
                                              int frame_ms, int hop_ms);

LfbeMatrix lfbe(const AudioClip& clip, const FeatureConfig& config);

CmvnStats compute_cmvn(const std::vector<LfbeMatrix>& corpus);

LfbeMatrix apply_cmvn(const LfbeMatrix& m, const CmvnStats& stats,
                      double epsilon = 1e-8);

void save_cmvn(const std::string& path, const CmvnStats& stats);
CmvnStats load_cmvn(const std::string& path);

// Mel scale helpers, exposed so tests can locate filter centers independently.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filterbank evaluated at FFT bin frequencies; one row per filter,
// fft_size/2 + 1 columns.
std::vector<std::vector<double>> mel_filterbank(int n_mels, int fft_size,
                                                int sample_rate, double low_hz,
                                                double high_hz);

}  // namespace fssl
