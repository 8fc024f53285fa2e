#include "fssl/features.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// In-place iterative radix-2 FFT. Size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

void write_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void FeatureConfig::validate() const {
  if (frame_ms <= 0) throw ConfigError("frame_ms must be positive");
  if (hop_ms <= 0) throw ConfigError("hop_ms must be positive");
  if (hop_ms > frame_ms) throw ConfigError("hop_ms must not exceed frame_ms");
  if (n_mels <= 0) throw ConfigError("n_mels must be positive");
  if (!is_power_of_two(fft_size)) {
    throw ConfigError("fft_size must be a power of two");
  }
  if (mel_low_hz < 0.0) throw ConfigError("mel_low_hz must be non-negative");
  if (mel_high_hz < 0.0) throw ConfigError("mel_high_hz must be non-negative");
  if (mel_high_hz > 0.0 && mel_high_hz <= mel_low_hz) {
    throw ConfigError("mel_high_hz must exceed mel_low_hz");
  }
  if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
  if (!(cmvn_epsilon > 0.0)) throw ConfigError("cmvn_epsilon must be positive");
}

int frame_length_samples(int sample_rate, int frame_ms) {
  return static_cast<int>(
      static_cast<std::int64_t>(sample_rate) * frame_ms / 1000);
}

int hop_length_samples(int sample_rate, int hop_ms) {
  return static_cast<int>(
      static_cast<std::int64_t>(sample_rate) * hop_ms / 1000);
}

int frame_count(std::int64_t n_samples, int win_samples, int hop_samples) {
  if (n_samples < win_samples) return 0;
  return static_cast<int>((n_samples - win_samples) / hop_samples) + 1;
}

std::vector<std::vector<double>> frame_signal(const AudioClip& clip,
                                              int frame_ms, int hop_ms) {
  if (clip.sample_rate <= 0) throw ContractError("clip sample_rate must be positive");
  const int win = frame_length_samples(clip.sample_rate, frame_ms);
  const int hop = hop_length_samples(clip.sample_rate, hop_ms);
  const int t = frame_count(static_cast<std::int64_t>(clip.samples.size()), win, hop);
  if (t == 0) {
    throw ShortClipError("clip of " + std::to_string(clip.samples.size()) +
                         " samples is shorter than one " +
                         std::to_string(win) + "-sample window");
  }
  std::vector<std::vector<double>> frames(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    const std::size_t start = static_cast<std::size_t>(i) * hop;
    frames[static_cast<std::size_t>(i)].assign(
        clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
        clip.samples.begin() + static_cast<std::ptrdiff_t>(start + win));
  }
  return frames;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<std::vector<double>> mel_filterbank(int n_mels, int fft_size,
                                                int sample_rate, double low_hz,
                                                double high_hz) {
  if (high_hz <= 0.0) high_hz = sample_rate / 2.0;
  const int n_bins = fft_size / 2 + 1;
  const double mel_low = hz_to_mel(low_hz);
  const double mel_high = hz_to_mel(high_hz);
  // n_mels + 2 evenly spaced mel points delimit the triangles.
  std::vector<double> points(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    points[static_cast<std::size_t>(i)] =
        mel_low + (mel_high - mel_low) * i / (n_mels + 1);
  }
  std::vector<std::vector<double>> bank(
      static_cast<std::size_t>(n_mels),
      std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double left = points[static_cast<std::size_t>(m)];
    const double center = points[static_cast<std::size_t>(m) + 1];
    const double right = points[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double mel =
          hz_to_mel(static_cast<double>(k) * sample_rate / fft_size);
      double w = 0.0;
      if (mel > left && mel < right) {
        w = (mel <= center) ? (mel - left) / (center - left)
                            : (right - mel) / (right - center);
      }
      bank[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w;
    }
  }
  return bank;
}

LfbeMatrix lfbe(const AudioClip& clip, const FeatureConfig& config) {
  if (!is_power_of_two(config.fft_size)) {
    throw ConfigError("features.fft_size must be a power of two");
  }
  const int win = frame_length_samples(clip.sample_rate, config.frame_ms);
  if (config.fft_size < win) {
    throw ConfigError("features.fft_size smaller than the analysis window");
  }
  const auto frames = frame_signal(clip, config.frame_ms, config.hop_ms);
  const int t = static_cast<int>(frames.size());
  const int n_bins = config.fft_size / 2 + 1;

  // Periodic Hann window.
  std::vector<double> window(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) {
    window[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * kPi * i / win);
  }
  const auto bank = mel_filterbank(config.n_mels, config.fft_size,
                                   clip.sample_rate, config.mel_low_hz,
                                   config.mel_high_hz);

  LfbeMatrix out;
  out.frame_ms = config.frame_ms;
  out.hop_ms = config.hop_ms;
  out.n_mels = config.n_mels;
  out.values = Tensor::zeros({t, config.n_mels});

  std::vector<std::complex<double>> spectrum(
      static_cast<std::size_t>(config.fft_size));
  std::vector<double> power(static_cast<std::size_t>(n_bins));
  for (int i = 0; i < t; ++i) {
    const auto& frame = frames[static_cast<std::size_t>(i)];
    for (int j = 0; j < config.fft_size; ++j) {
      spectrum[static_cast<std::size_t>(j)] =
          (j < win) ? frame[static_cast<std::size_t>(j)] *
                          window[static_cast<std::size_t>(j)]
                    : 0.0;
    }
    fft_radix2(spectrum);
    for (int k = 0; k < n_bins; ++k) {
      power[static_cast<std::size_t>(k)] =
          std::norm(spectrum[static_cast<std::size_t>(k)]);
    }
    for (int m = 0; m < config.n_mels; ++m) {
      const auto& filter = bank[static_cast<std::size_t>(m)];
      double energy = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        energy += filter[static_cast<std::size_t>(k)] *
                  power[static_cast<std::size_t>(k)];
      }
      out.values.at(i, m) = std::log(std::max(energy, config.log_floor));
    }
  }
  return out;
}

void CmvnAccumulator::add(const LfbeMatrix& m) {
  const int dims = m.mels();
  if (sum_.empty()) {
    sum_.assign(static_cast<std::size_t>(dims), 0.0);
    sum_sq_.assign(static_cast<std::size_t>(dims), 0.0);
  } else if (static_cast<int>(sum_.size()) != dims) {
    throw DimMismatchError("feature dimension changed mid-corpus");
  }
  for (int i = 0; i < m.frames(); ++i) {
    for (int j = 0; j < dims; ++j) {
      const double v = m.values.at(i, j);
      sum_[static_cast<std::size_t>(j)] += v;
      sum_sq_[static_cast<std::size_t>(j)] += v * v;
    }
  }
  count_ += m.frames();
}

CmvnStats CmvnAccumulator::finish() const {
  if (count_ == 0) throw EmptyCorpusError("no frames accumulated for CMVN");
  CmvnStats stats;
  stats.count = count_;
  stats.mean.resize(sum_.size());
  stats.variance.resize(sum_.size());
  for (std::size_t j = 0; j < sum_.size(); ++j) {
    const double mean = sum_[j] / static_cast<double>(count_);
    stats.mean[j] = mean;
    stats.variance[j] =
        std::max(0.0, sum_sq_[j] / static_cast<double>(count_) - mean * mean);
  }
  return stats;
}

CmvnStats compute_cmvn(const std::vector<LfbeMatrix>& corpus) {
  if (corpus.empty()) throw EmptyCorpusError("CMVN over an empty corpus");
  CmvnAccumulator acc;
  for (const auto& m : corpus) acc.add(m);
  return acc.finish();
}

LfbeMatrix apply_cmvn(const LfbeMatrix& m, const CmvnStats& stats,
                      double epsilon) {
  if (m.mels() != stats.dims()) {
    throw DimMismatchError("matrix has " + std::to_string(m.mels()) +
                           " dims, stats have " + std::to_string(stats.dims()));
  }
  LfbeMatrix out = m;
  std::vector<double> inv_std(stats.mean.size());
  for (std::size_t j = 0; j < inv_std.size(); ++j) {
    inv_std[j] = 1.0 / std::sqrt(stats.variance[j] + epsilon);
  }
  for (int i = 0; i < m.frames(); ++i) {
    for (int j = 0; j < m.mels(); ++j) {
      out.values.at(i, j) = (m.values.at(i, j) -
                             stats.mean[static_cast<std::size_t>(j)]) *
                            inv_std[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

void save_cmvn(const std::string& path, const CmvnStats& stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot create CMVN file: " + path);
  out.write("CMVN", 4);
  write_u32le(out, 1);  // format version
  write_u32le(out, static_cast<std::uint32_t>(stats.mean.size()));
  auto write_doubles = [&out](const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  write_doubles(stats.mean);
  write_doubles(stats.variance);
  const std::uint64_t count = static_cast<std::uint64_t>(stats.count);
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  if (!out) throw IngestError("failed writing CMVN file: " + path);
}

CmvnStats load_cmvn(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open CMVN file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CMVN", 4) != 0) {
    throw IngestError("bad CMVN magic in " + path);
  }
  const std::uint32_t version = read_u32le(in);
  if (version != 1) {
    throw IngestError("unsupported CMVN version " + std::to_string(version));
  }
  const std::uint32_t dims = read_u32le(in);
  CmvnStats stats;
  stats.mean.resize(dims);
  stats.variance.resize(dims);
  in.read(reinterpret_cast<char*>(stats.mean.data()),
          static_cast<std::streamsize>(dims * sizeof(double)));
  in.read(reinterpret_cast<char*>(stats.variance.data()),
          static_cast<std::streamsize>(dims * sizeof(double)));
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in) throw IngestError("truncated CMVN file: " + path);
  stats.count = static_cast<std::int64_t>(count);
  return stats;
}

}  // namespace fssl
