#include <bcp/features.hpp>

#include <unsupported/Eigen/FFT>

#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace bcp {

namespace {

static_assert(std::endian::native == std::endian::little,
              "cache and wav I/O assume a little-endian host");

template <class T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail("TruncatedFile", std::string("unexpected end of file reading ") + what);
  return value;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

PcmAudio read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoFailure", "cannot open " + path);
  char riff[4], wave[4];
  in.read(riff, 4);
  std::uint32_t riff_size = read_raw<std::uint32_t>(in, "riff size");
  (void)riff_size;
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    fail("BadMagic", path + " is not a RIFF/WAVE file");

  PcmAudio audio;
  bool have_fmt = false, have_data = false;
  while (in && !(have_fmt && have_data)) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    std::uint32_t size = read_raw<std::uint32_t>(in, "chunk size");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      std::uint16_t format = read_raw<std::uint16_t>(in, "fmt");
      std::uint16_t channels = read_raw<std::uint16_t>(in, "fmt");
      std::uint32_t rate = read_raw<std::uint32_t>(in, "fmt");
      read_raw<std::uint32_t>(in, "fmt");  // byte rate
      read_raw<std::uint16_t>(in, "fmt");  // block align
      std::uint16_t bits = read_raw<std::uint16_t>(in, "fmt");
      if (format != 1 || bits != 16)
        fail("InvalidConfig", path + ": only 16-bit PCM is supported");
      if (channels != 1)
        fail("InvalidConfig", path + ": expected mono audio, got " + std::to_string(channels) + " channels");
      audio.sample_rate = static_cast<int>(rate);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      audio.samples.resize(size / 2);
      in.read(reinterpret_cast<char*>(audio.samples.data()),
              static_cast<std::streamsize>(audio.samples.size() * 2));
      if (!in) fail("TruncatedFile", path + ": data chunk shorter than declared");
      have_data = true;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) fail("TruncatedFile", path + ": missing fmt or data chunk");
  audio.channel_id = std::filesystem::path(path).stem().string();
  return audio;
}

void write_wav(const std::string& path, const PcmAudio& audio) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("IoFailure", "cannot open " + path + " for writing");
  std::uint32_t data_size = static_cast<std::uint32_t>(audio.samples.size() * 2);
  out.write("RIFF", 4);
  write_raw(out, static_cast<std::uint32_t>(36 + data_size));
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_raw(out, static_cast<std::uint32_t>(16));
  write_raw(out, static_cast<std::uint16_t>(1));
  write_raw(out, static_cast<std::uint16_t>(1));
  write_raw(out, static_cast<std::uint32_t>(audio.sample_rate));
  write_raw(out, static_cast<std::uint32_t>(audio.sample_rate * 2));
  write_raw(out, static_cast<std::uint16_t>(2));
  write_raw(out, static_cast<std::uint16_t>(16));
  out.write("data", 4);
  write_raw(out, data_size);
  out.write(reinterpret_cast<const char*>(audio.samples.data()), data_size);
  if (!out) fail("IoFailure", "short write to " + path);
}

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p *= 2;
  return p;
}

Vector power_spectrum(const Vector& frame, Index nfft) {
  if (nfft < frame.size() || nfft != next_pow2(nfft))
    fail("InvalidConfig", "power_spectrum: nfft must be a power of two >= frame length");
  std::vector<double> padded(static_cast<std::size_t>(nfft), 0.0);
  for (Index i = 0; i < frame.size(); ++i) padded[static_cast<std::size_t>(i)] = frame(i);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, padded);
  Vector power(nfft / 2 + 1);
  for (Index k = 0; k < power.size(); ++k) power(k) = std::norm(spectrum[static_cast<std::size_t>(k)]);
  return power;
}

Matrix mel_filterbank(int n_filters, Index nfft, int sample_rate) {
  Index n_bins = nfft / 2 + 1;
  double high_mel = hz_to_mel(sample_rate / 2.0);
  std::vector<Index> bin(static_cast<std::size_t>(n_filters) + 2);
  for (std::size_t j = 0; j < bin.size(); ++j) {
    double mel = high_mel * static_cast<double>(j) / static_cast<double>(n_filters + 1);
    bin[j] = static_cast<Index>(std::floor((static_cast<double>(nfft) + 1.0) * mel_to_hz(mel) /
                                           static_cast<double>(sample_rate)));
  }
  Matrix fb = Matrix::Zero(n_filters, n_bins);
  for (int m = 0; m < n_filters; ++m) {
    Index lo = bin[static_cast<std::size_t>(m)];
    Index mid = bin[static_cast<std::size_t>(m) + 1];
    Index hi = bin[static_cast<std::size_t>(m) + 2];
    for (Index k = lo; k < mid; ++k)
      fb(m, k) = static_cast<double>(k - lo) / static_cast<double>(mid - lo);
    for (Index k = mid; k < hi; ++k)
      fb(m, k) = static_cast<double>(hi - k) / static_cast<double>(hi - mid);
    if (mid == lo && mid == hi && mid < n_bins) fb(m, mid) = 1.0;
  }
  return fb;
}

Matrix dct_matrix(Index n_out, Index n_in) {
  Matrix dct(n_out, n_in);
  double pi = std::acos(-1.0);
  for (Index k = 0; k < n_out; ++k) {
    double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n_in));
    for (Index i = 0; i < n_in; ++i)
      dct(k, i) = scale * std::cos(pi * static_cast<double>(k) *
                                   (2.0 * static_cast<double>(i) + 1.0) /
                                   (2.0 * static_cast<double>(n_in)));
  }
  return dct;
}

namespace {

void check_sample_rate(int sample_rate) {
  if (sample_rate != 8000 && sample_rate != 16000)
    fail("UnsupportedSampleRate", std::to_string(sample_rate) + " Hz (supported: 8000, 16000)");
}

}  // namespace

Index mfcc_frame_count(Index n_samples, int sample_rate) {
  check_sample_rate(sample_rate);
  Index frame_len = sample_rate / 40;
  Index hop = sample_rate / 100;
  if (n_samples < frame_len)
    fail("AudioTooShort", std::to_string(n_samples) + " samples is less than one 25 ms frame");
  return (n_samples - frame_len) / hop + 1;
}

Matrix mfcc(const PcmAudio& audio) {
  check_sample_rate(audio.sample_rate);
  Index frame_len = audio.sample_rate / 40;
  Index hop = audio.sample_rate / 100;
  Index n_frames = mfcc_frame_count(static_cast<Index>(audio.samples.size()), audio.sample_rate);
  Index nfft = next_pow2(frame_len);

  Vector hamming(frame_len);
  double pi = std::acos(-1.0);
  for (Index i = 0; i < frame_len; ++i)
    hamming(i) = 0.54 - 0.46 * std::cos(2.0 * pi * static_cast<double>(i) /
                                        static_cast<double>(frame_len - 1));
  Matrix fb = mel_filterbank(kNumMelFilters, nfft, audio.sample_rate);
  Matrix dct = dct_matrix(kNumCoeffs, kNumMelFilters);

  Matrix out(n_frames, kNumCoeffs);
  Vector frame(frame_len);
  for (Index f = 0; f < n_frames; ++f) {
    const std::int16_t* base = audio.samples.data() + f * hop;
    frame(0) = static_cast<double>(base[0]);
    for (Index i = 1; i < frame_len; ++i)
      frame(i) = static_cast<double>(base[i]) - kPreemphasis * static_cast<double>(base[i - 1]);
    frame = frame.cwiseProduct(hamming);
    Vector power = power_spectrum(frame, nfft);
    Vector mel = fb * power;
    Vector log_mel = mel.cwiseMax(kLogFloor).array().log();
    out.row(f) = (dct * log_mel).transpose();
  }
  return out;
}

FeatureWindow extract_window(const Matrix& features, double t_ms, Index n_frames) {
  if (n_frames < 1) fail("InvalidConfig", "extract_window: n_frames must be >= 1");
  if (features.rows() == 0) fail("InsufficientContext", "no frames available");
  // Frame i spans [10 i, 10 i + 25) ms.
  double last = std::floor((t_ms - kFrameMs) / kHopMs);
  if (last < 0.0)
    fail("InsufficientContext", "no frame ends at or before t = " + std::to_string(t_ms) + " ms");
  Index last_idx = std::min(static_cast<Index>(last), features.rows() - 1);
  Index start = last_idx - n_frames + 1;
  if (start < 0)
    fail("InsufficientContext",
         "need " + std::to_string(n_frames) + " frames ending by t = " + std::to_string(t_ms) +
             " ms, have " + std::to_string(last_idx + 1));
  FeatureWindow window;
  window.values = features.middleRows(start, n_frames);
  window.end_time_ms = t_ms;
  return window;
}

void cache_write(const std::string& path, const Matrix& features) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("IoFailure", "cannot open " + tmp + " for writing");
    out.write("BCMF", 4);
    write_raw(out, static_cast<std::uint16_t>(1));
    write_raw(out, static_cast<std::uint32_t>(features.rows()));
    write_raw(out, static_cast<std::uint32_t>(features.cols()));
    for (Index r = 0; r < features.rows(); ++r)
      for (Index c = 0; c < features.cols(); ++c)
        write_raw(out, static_cast<float>(features(r, c)));
    if (!out) fail("IoFailure", "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Matrix cache_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoFailure", "cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BCMF", 4) != 0) fail("BadMagic", path + " is not a feature cache");
  std::uint16_t version = read_raw<std::uint16_t>(in, "version");
  if (version != 1)
    fail("VersionMismatch", path + ": cache version " + std::to_string(version) + ", expected 1");
  std::uint32_t n_frames = read_raw<std::uint32_t>(in, "n_frames");
  std::uint32_t n_coeffs = read_raw<std::uint32_t>(in, "n_coeffs");
  Matrix features(static_cast<Index>(n_frames), static_cast<Index>(n_coeffs));
  for (Index r = 0; r < features.rows(); ++r)
    for (Index c = 0; c < features.cols(); ++c)
      features(r, c) = static_cast<double>(read_raw<float>(in, "payload"));
  return features;
}

}  // namespace bcp
