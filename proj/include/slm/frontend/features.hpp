#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "slm/frontend/audio.hpp"
#include "slm/numcore/tensor.hpp"

namespace slm::frontend {

struct FrontendConfig {
    std::size_t window = 400;  // 25 ms
    std::size_t hop = 160;     // 10 ms
    std::size_t fft_size = 512;
    std::size_t num_mel = 80;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;
};

/// T x num_mel log-mel frames at a 10 ms hop.
struct FeatureMatrix {
    Tensor<float> frames;
    int hop_ms = 10;
    int window_ms = 25;

    std::size_t num_frames() const { return frames.rows(); }
    std::size_t dim() const { return frames.cols(); }
};

/// Frame count for a waveform of `num_samples`; 0 when shorter than a window.
std::size_t num_frames(std::size_t num_samples, const FrontendConfig& config = {});

/// Triangular HTK-mel filters over the one-sided spectrum, num_mel x (fft/2+1).
std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& config);

/// Hann window -> |FFT|^2 -> mel filters -> natural log with a floor.
/// Owns an FFTW plan; one extractor per worker.
class LogMelExtractor {
public:
    explicit LogMelExtractor(FrontendConfig config = {});
    ~LogMelExtractor();
    LogMelExtractor(const LogMelExtractor&) = delete;
    LogMelExtractor& operator=(const LogMelExtractor&) = delete;

    /// Throws DataError when the audio is shorter than one window.
    FeatureMatrix operator()(const Waveform& wave) const;

    const FrontendConfig& config() const { return config_; }

private:
    struct Impl;
    FrontendConfig config_;
    std::vector<std::vector<double>> filters_;
    std::vector<double> window_;
    std::unique_ptr<Impl> impl_;
};

/// Unnormalized log-mel features with the default configuration.
FeatureMatrix log_mel(const Waveform& wave);

/// Per-dimension normalization statistics, computed once over a training set.
struct NormStats {
    std::vector<float> mean;
    std::vector<float> stddev;

    bool empty() const { return mean.empty(); }
};

NormStats compute_norm_stats(std::span<const FeatureMatrix> corpus);
/// In-place (x - mean) / stddev.
void apply_norm(FeatureMatrix& features, const NormStats& stats);

/// Flat dump: "SLFD", u32 version, u32 T, u32 D, then row-major LE float32.
void write_feature_dump(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_dump(const std::filesystem::path& path);

} // namespace slm::frontend
