#pragma once

#include <bcp/types.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace bcp {

inline constexpr int kNumCoeffs = 13;
inline constexpr int kNumMelFilters = 26;
inline constexpr double kFrameMs = 25.0;
inline constexpr double kHopMs = 10.0;
inline constexpr double kPreemphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;

struct PcmAudio {
  std::vector<std::int16_t> samples;
  int sample_rate = 8000;
  std::string channel_id;
};

// Mono 16-bit PCM WAV only.
PcmAudio read_wav(const std::string& path);
void write_wav(const std::string& path, const PcmAudio& audio);

Index next_pow2(Index n);

// |FFT|^2 of a real frame zero-padded to nfft (a power of two); returns the
// nfft/2 + 1 non-redundant bins.
Vector power_spectrum(const Vector& frame, Index nfft);

// Triangular mel filterbank, rows = filters, cols = spectrum bins.
Matrix mel_filterbank(int n_filters, Index nfft, int sample_rate);

// Orthonormal DCT-II matrix taking n_in log-energies to n_out cepstra.
Matrix dct_matrix(Index n_out, Index n_in);

Index mfcc_frame_count(Index n_samples, int sample_rate);

// 25 ms / 10 ms Hamming frames, per-frame pre-emphasis, 26 mel filters,
// floored log, orthonormal DCT-II keeping c0..c12. Rows are frames.
Matrix mfcc(const PcmAudio& audio);

struct FeatureWindow {
  Matrix values;  // [n_frames x kNumCoeffs]
  double end_time_ms = 0.0;
};

// The n_frames consecutive frames with the latest start times whose frame end
// (start + 25 ms) lies at or before t_ms.
FeatureWindow extract_window(const Matrix& features, double t_ms, Index n_frames);

// Binary feature cache: "BCMF", version u16, n_frames u32, n_coeffs u32,
// row-major float32 little-endian payload. Written atomically.
void cache_write(const std::string& path, const Matrix& features);
Matrix cache_read(const std::string& path);

}  // namespace bcp
