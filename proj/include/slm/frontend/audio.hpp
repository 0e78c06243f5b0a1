#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace slm::frontend {

inline constexpr int kSampleRate = 16000;
inline constexpr double kMaxSeconds = 20.0;

/// Mono float samples in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Reads RIFF/WAVE PCM16. Multi-channel audio is averaged to mono and other
/// rates are resampled to 16 kHz. Throws DataError on malformed headers,
/// non-PCM16 payloads and utterances longer than 20 s.
Waveform load_audio(const std::filesystem::path& path);

/// Parses an in-memory WAV image with the same rules as load_audio.
Waveform decode_wav(std::span<const unsigned char> bytes);

/// Writes interleaved PCM16 (channels * frames samples).
void write_wav(const std::filesystem::path& path, std::span<const float> interleaved, int sample_rate,
               int channels = 1);

/// Band-limited (windowed-sinc) resampling.
std::vector<float> resample(std::span<const float> in, int from_rate, int to_rate);

} // namespace slm::frontend
