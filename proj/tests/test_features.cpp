#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bcp/features.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>

using namespace bcp;

namespace {

// Definitional O(n^2) DFT oracle; the library must match it bin for bin.
Vector dft_power_ref(const Vector& frame, Index nfft) {
  Vector power(nfft / 2 + 1);
  for (Index k = 0; k < power.size(); ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (Index i = 0; i < frame.size(); ++i) {
      double angle = -2.0 * std::acos(-1.0) * static_cast<double>(k) *
                     static_cast<double>(i) / static_cast<double>(nfft);
      acc += frame(i) * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    power(k) = std::norm(acc);
  }
  return power;
}

PcmAudio tone(int sample_rate, double seconds, double hz, double amplitude) {
  PcmAudio audio;
  audio.sample_rate = sample_rate;
  std::size_t n = static_cast<std::size_t>(seconds * sample_rate);
  audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    audio.samples[i] = static_cast<std::int16_t>(
        amplitude * std::sin(2.0 * std::acos(-1.0) * hz * static_cast<double>(i) / sample_rate));
  return audio;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("power_spectrum matches the DFT oracle on random frames") {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    Index len = 50 + static_cast<Index>(rng.index(151));
    Vector frame = rng.matrix(len, 1, -1.0, 1.0).col(0);
    Index nfft = next_pow2(len);
    Vector fast = power_spectrum(frame, nfft);
    Vector slow = dft_power_ref(frame, nfft);
    REQUIRE(fast.size() == slow.size());
    for (Index k = 0; k < fast.size(); ++k) {
      double rel = std::abs(fast(k) - slow(k)) / std::max(std::abs(slow(k)), 1e-6);
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("frame count formula: 2000 ms gives 198 frames at both rates") {
  CHECK(mfcc_frame_count(16000, 8000) == 198);
  CHECK(mfcc_frame_count(32000, 16000) == 198);
  // sample-based and millisecond-based formulas agree
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    int rate = (trial % 2 == 0) ? 8000 : 16000;
    Index n = rate / 40 + static_cast<Index>(rng.index(5 * static_cast<std::size_t>(rate)));
    double duration_ms = 1000.0 * static_cast<double>(n) / rate;
    Index by_ms = static_cast<Index>(std::floor((duration_ms - 25.0) / 10.0)) + 1;
    CHECK(mfcc_frame_count(n, rate) == by_ms);
  }
}

TEST_CASE("mfcc output shape and finiteness") {
  PcmAudio audio = tone(8000, 2.0, 440.0, 8000.0);
  Matrix feats = mfcc(audio);
  CHECK(feats.rows() == 198);
  CHECK(feats.cols() == 13);
  CHECK(feats.allFinite());
}

TEST_CASE("mfcc rejects unsupported rates and short audio") {
  PcmAudio audio = tone(44100, 0.5, 440.0, 1000.0);
  CHECK_THROWS_WITH_AS(mfcc(audio), doctest::Contains("UnsupportedSampleRate"), Error);
  PcmAudio tiny = tone(8000, 0.01, 440.0, 1000.0);  // 80 samples < one frame
  CHECK_THROWS_WITH_AS(mfcc(tiny), doctest::Contains("AudioTooShort"), Error);
}

TEST_CASE("silence maps every frame to the log-floor cepstrum") {
  PcmAudio silence;
  silence.sample_rate = 8000;
  silence.samples.assign(8000, 0);
  Matrix feats = mfcc(silence);
  double c0_expected = std::sqrt(1.0 / 26.0) * 26.0 * std::log(1e-10);
  for (Index f = 0; f < feats.rows(); ++f) {
    CHECK(feats(f, 0) == doctest::Approx(c0_expected).epsilon(1e-9));
    for (Index c = 1; c < 13; ++c) CHECK(std::abs(feats(f, c)) < 1e-9);
  }
}

TEST_CASE("shifting audio by one hop shifts frames by one index") {
  PcmAudio audio = tone(8000, 1.0, 313.0, 6000.0);
  for (std::size_t i = 0; i < audio.samples.size(); ++i)
    audio.samples[i] = static_cast<std::int16_t>(audio.samples[i] + (i * 2654435761u) % 400 - 200);
  Matrix full = mfcc(audio);
  PcmAudio shifted = audio;
  shifted.samples.erase(shifted.samples.begin(), shifted.samples.begin() + 80);  // one 10 ms hop
  Matrix tail = mfcc(shifted);
  REQUIRE(tail.rows() == full.rows() - 1);
  CHECK((tail - full.bottomRows(tail.rows())).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("amplitude scaling shifts c0 by a constant and leaves c1..c12 alone") {
  PcmAudio audio = tone(8000, 1.0, 200.0, 2000.0);
  for (std::size_t i = 0; i < audio.samples.size(); ++i)
    audio.samples[i] = static_cast<std::int16_t>(audio.samples[i] + (i * 40503u) % 1200 - 600);
  const int alpha = 4;
  PcmAudio louder = audio;
  for (auto& s : louder.samples) s = static_cast<std::int16_t>(s * alpha);
  Matrix base = mfcc(audio);
  Matrix scaled = mfcc(louder);
  double expected_shift = std::sqrt(26.0) * 2.0 * std::log(static_cast<double>(alpha));
  for (Index f = 0; f < base.rows(); ++f) {
    CHECK(scaled(f, 0) - base(f, 0) == doctest::Approx(expected_shift).epsilon(1e-6));
    for (Index c = 1; c < 13; ++c)
      CHECK(scaled(f, c) == doctest::Approx(base(f, c)).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("extract_window right-aligns at t and pins the 2000 ms example") {
  Matrix feats(198, 13);
  for (Index f = 0; f < feats.rows(); ++f)
    for (Index c = 0; c < 13; ++c) feats(f, c) = static_cast<double>(f * 100 + c);
  FeatureWindow w = extract_window(feats, 2000.0, 198);
  CHECK(w.values.rows() == 198);
  CHECK(w.values(0, 0) == 0.0);  // first frame starts at 0 ms
  CHECK(w.values(197, 0) == 19700.0);  // last frame starts at 1970 ms
  CHECK(w.end_time_ms == 2000.0);

  FeatureWindow mid = extract_window(feats, 1000.0, 48);
  // frames ending at or before 1000 ms: last is floor((1000-25)/10) = 97
  CHECK(mid.values(47, 0) == 9700.0);
  CHECK(mid.values(0, 0) == 5000.0);
}

TEST_CASE("extract_window raises InsufficientContext near the start") {
  Matrix feats = Matrix::Zero(198, 13);
  // frame 197 ends at 1995 ms, so t = 1994 leaves only 197 usable frames
  CHECK_THROWS_WITH_AS(extract_window(feats, 1994.0, 198), doctest::Contains("InsufficientContext"),
                       Error);
  CHECK_THROWS_WITH_AS(extract_window(feats, 10.0, 1), doctest::Contains("InsufficientContext"),
                       Error);
  CHECK_NOTHROW(extract_window(feats, 25.0, 1));
}

TEST_CASE("cache round-trips at single precision") {
  Rng rng(23);
  Matrix feats = rng.matrix(40, 13, -120.0, 40.0);
  std::string path = temp_path("bcp_cache_test.bcmf");
  cache_write(path, feats);
  Matrix back = cache_read(path);
  REQUIRE(back.rows() == feats.rows());
  REQUIRE(back.cols() == feats.cols());
  for (Index r = 0; r < feats.rows(); ++r)
    for (Index c = 0; c < feats.cols(); ++c)
      CHECK(back(r, c) == static_cast<double>(static_cast<float>(feats(r, c))));
  // a second write of re-read values is byte-stable
  std::string path2 = temp_path("bcp_cache_test2.bcmf");
  cache_write(path2, back);
  Matrix again = cache_read(path2);
  CHECK((again - back).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("cache rejects foreign, stale and truncated files") {
  std::string path = temp_path("bcp_cache_bad.bcmf");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("NOPE....", 1, 8, f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(cache_read(path), doctest::Contains("BadMagic"), Error);
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::uint16_t version = 9;
    std::fwrite("BCMF", 1, 4, f);
    std::fwrite(&version, 2, 1, f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(cache_read(path), doctest::Contains("VersionMismatch"), Error);
  cache_write(path, Matrix::Ones(4, 13));
  std::filesystem::resize_file(path, 20);
  CHECK_THROWS_WITH_AS(cache_read(path), doctest::Contains("TruncatedFile"), Error);
  std::filesystem::remove(path);
}

TEST_CASE("wav io round-trips samples exactly") {
  PcmAudio audio = tone(16000, 0.25, 523.0, 12000.0);
  std::string path = temp_path("bcp_wav_test.wav");
  write_wav(path, audio);
  PcmAudio back = read_wav(path);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == audio.samples.size());
  CHECK(std::equal(back.samples.begin(), back.samples.end(), audio.samples.begin()));
  std::filesystem::remove(path);
}

TEST_CASE("wav reader rejects non-wav payloads") {
  std::string path = temp_path("bcp_wav_bad.wav");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("RIFFxxxxJUNK", 1, 12, f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(read_wav(path), doctest::Contains("BadMagic"), Error);
  std::filesystem::remove(path);
}
