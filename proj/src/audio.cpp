#include "fssl/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open WAV file: " + path);

  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32(in);  // chunk size
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(wave, "WAVE", 4) != 0) {
    throw IngestError("not a RIFF/WAVE file: " + path);
  }

  WavData wav;
  int channels = 0;
  int bits = 0;
  bool have_fmt = false;

  while (in) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    std::uint32_t size = read_u32(in);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      std::uint16_t format = read_u16(in);
      channels = read_u16(in);
      wav.sample_rate = static_cast<int>(read_u32(in));
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (size > 16) in.ignore(size - 16);
      if (format != 1) throw IngestError("WAV is not PCM: " + path);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw IngestError("WAV data before fmt chunk: " + path);
      if (channels != 1) throw IngestError("WAV is not mono: " + path);
      if (bits != 16) throw IngestError("WAV is not 16-bit: " + path);
      const std::uint32_t count = size / 2;
      wav.samples.resize(count);
      std::vector<unsigned char> raw(size);
      in.read(reinterpret_cast<char*>(raw.data()), size);
      if (!in) throw IngestError("truncated WAV data: " + path);
      for (std::uint32_t i = 0; i < count; ++i) {
        const std::int16_t s = static_cast<std::int16_t>(
            raw[2 * i] | (raw[2 * i + 1] << 8));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return wav;
    } else {
      in.ignore(size + (size & 1));
    }
  }
  throw IngestError("WAV has no data chunk: " + path);
}

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot create WAV file: " + path);

  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(samples.size()) * 2;
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<std::uint32_t>(sample_rate));
  write_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (double v : samples) {
    const double clipped = std::clamp(v, -1.0, 1.0);
    const int q = static_cast<int>(std::lrint(clipped * 32767.0));
    write_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (!out) throw IngestError("failed writing WAV file: " + path);
}

}  // namespace fssl
