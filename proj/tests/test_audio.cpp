#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fssl/audio.hpp"
#include "fssl/errors.hpp"

using namespace fssl;

namespace {

std::filesystem::path temp_wav(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("wav round trip preserves samples to PCM16 resolution") {
  std::vector<double> samples;
  for (int i = 0; i < 480; ++i) {
    samples.push_back(0.8 * std::sin(2.0 * 3.14159265358979 * i / 48.0));
  }
  const auto path = temp_wav("fssl_roundtrip.wav");
  write_wav(path.string(), samples, 16000);
  const WavData back = read_wav(path.string());
  REQUIRE(back.samples.size() == samples.size());
  CHECK(back.sample_rate == 16000);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(std::abs(back.samples[i] - samples[i]) < 1.0 / 32000.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("write clamps out-of-range amplitudes instead of wrapping") {
  const auto path = temp_wav("fssl_clamp.wav");
  write_wav(path.string(), {2.0, -2.0, 0.0}, 16000);
  const WavData back = read_wav(path.string());
  REQUIRE(back.samples.size() == 3);
  CHECK(back.samples[0] > 0.99);
  CHECK(back.samples[1] < -0.99);
  CHECK(back.samples[2] == doctest::Approx(0.0).epsilon(1e-4));
  std::filesystem::remove(path);
}

TEST_CASE("missing file raises an ingest error") {
  CHECK_THROWS_AS(read_wav("/nonexistent/nowhere.wav"), IngestError);
}

TEST_CASE("garbage header raises an ingest error") {
  const auto path = temp_wav("fssl_garbage.wav");
  std::ofstream out(path, std::ios::binary);
  out << "this is not a wav file at all, not even close";
  out.close();
  CHECK_THROWS_AS(read_wav(path.string()), IngestError);
  std::filesystem::remove(path);
}

TEST_CASE("double write to the same path is byte-identical") {
  std::vector<double> samples(320, 0.25);
  const auto pa = temp_wav("fssl_detA.wav");
  const auto pb = temp_wav("fssl_detB.wav");
  write_wav(pa.string(), samples, 16000);
  write_wav(pb.string(), samples, 16000);
  std::ifstream a(pa, std::ios::binary), b(pb, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                            std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK(bytes_a.size() == 44 + 320 * 2);  // RIFF header + PCM16 payload
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}
