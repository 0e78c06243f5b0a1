#include "slm/frontend/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "slm/errors.hpp"

namespace slm::frontend {

namespace {

// FFTW's planner is not thread-safe.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

constexpr char kDumpMagic[4] = {'S', 'L', 'F', 'D'};
constexpr std::uint32_t kDumpVersion = 1;

static_assert(std::endian::native == std::endian::little, "dump I/O assumes a little-endian host");

} // namespace

std::size_t num_frames(std::size_t num_samples, const FrontendConfig& c) {
    if (num_samples < c.window) return 0;
    return 1 + (num_samples - c.window) / c.hop;
}

std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& c) {
    const std::size_t bins = c.fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(c.fmin), mel_hi = hz_to_mel(c.fmax);
    std::vector<double> edges(c.num_mel + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(c.num_mel + 1));
    std::vector<std::vector<double>> fb(c.num_mel, std::vector<double>(bins, 0.0));
    for (std::size_t m = 0; m < c.num_mel; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(c.fft_size);
            if (f > lo && f < hi) fb[m][k] = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        }
    }
    return fb;
}

struct LogMelExtractor::Impl {
    double* in = nullptr;
    fftw_complex* out = nullptr;
    fftw_plan plan = nullptr;
};

LogMelExtractor::LogMelExtractor(FrontendConfig config)
    : config_(config), filters_(mel_filterbank(config)), window_(config.window), impl_(std::make_unique<Impl>()) {
    if (config_.window > config_.fft_size) throw InputError("frontend: window longer than FFT size");
    for (std::size_t i = 0; i < config_.window; ++i)
        window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(config_.window));
    std::lock_guard lock(planner_mutex());
    impl_->in = fftw_alloc_real(config_.fft_size);
    impl_->out = fftw_alloc_complex(config_.fft_size / 2 + 1);
    impl_->plan = fftw_plan_dft_r2c_1d(static_cast<int>(config_.fft_size), impl_->in, impl_->out, FFTW_ESTIMATE);
}

LogMelExtractor::~LogMelExtractor() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(impl_->plan);
    fftw_free(impl_->in);
    fftw_free(impl_->out);
}

FeatureMatrix LogMelExtractor::operator()(const Waveform& wave) const {
    const std::size_t frames = num_frames(wave.samples.size(), config_);
    if (frames == 0)
        throw DataError("audio shorter than one analysis window (" + std::to_string(wave.samples.size()) + " samples)");
    const std::size_t bins = config_.fft_size / 2 + 1;
    FeatureMatrix fm;
    fm.frames = Tensor<float>::matrix(frames, config_.num_mel);
    std::vector<double> power(bins);
    for (std::size_t t = 0; t < frames; ++t) {
        const float* src = wave.samples.data() + t * config_.hop;
        std::fill(impl_->in, impl_->in + config_.fft_size, 0.0);
        for (std::size_t i = 0; i < config_.window; ++i) impl_->in[i] = src[i] * window_[i];
        fftw_execute(impl_->plan);
        for (std::size_t k = 0; k < bins; ++k)
            power[k] = impl_->out[k][0] * impl_->out[k][0] + impl_->out[k][1] * impl_->out[k][1];
        for (std::size_t m = 0; m < config_.num_mel; ++m) {
            double e = 0.0;
            for (std::size_t k = 0; k < bins; ++k) e += filters_[m][k] * power[k];
            fm.frames.at(t, m) = static_cast<float>(std::log(std::max(e, config_.log_floor)));
        }
    }
    return fm;
}

FeatureMatrix log_mel(const Waveform& wave) {
    static thread_local LogMelExtractor extractor;
    return extractor(wave);
}

NormStats compute_norm_stats(std::span<const FeatureMatrix> corpus) {
    if (corpus.empty()) throw InputError("normalization stats need at least one utterance");
    const std::size_t d = corpus.front().dim();
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    double count = 0.0;
    for (const auto& fm : corpus) {
        if (fm.dim() != d) throw ShapeError("normalization stats: inconsistent feature width");
        for (std::size_t t = 0; t < fm.num_frames(); ++t)
            for (std::size_t j = 0; j < d; ++j) {
                const double v = fm.frames.at(t, j);
                sum[j] += v;
                sq[j] += v * v;
            }
        count += static_cast<double>(fm.num_frames());
    }
    NormStats s;
    s.mean.resize(d);
    s.stddev.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double mu = sum[j] / count;
        const double var = std::max(sq[j] / count - mu * mu, 0.0);
        s.mean[j] = static_cast<float>(mu);
        s.stddev[j] = static_cast<float>(std::max(std::sqrt(var), 1e-5));
    }
    return s;
}

void apply_norm(FeatureMatrix& fm, const NormStats& s) {
    if (s.empty()) return;
    if (s.mean.size() != fm.dim()) throw ShapeError("apply_norm: stats width differs from features");
    for (std::size_t t = 0; t < fm.num_frames(); ++t)
        for (std::size_t j = 0; j < fm.dim(); ++j) fm.frames.at(t, j) = (fm.frames.at(t, j) - s.mean[j]) / s.stddev[j];
}

void write_feature_dump(const std::filesystem::path& path, const FeatureMatrix& fm) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    const std::uint32_t header[3] = {kDumpVersion, static_cast<std::uint32_t>(fm.num_frames()),
                                     static_cast<std::uint32_t>(fm.dim())};
    os.write(kDumpMagic, 4);
    os.write(reinterpret_cast<const char*>(header), sizeof(header));
    os.write(reinterpret_cast<const char*>(fm.frames.data()), static_cast<std::streamsize>(fm.frames.size() * 4));
}

FeatureMatrix read_feature_dump(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    char magic[4];
    std::uint32_t header[3];
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!is || std::memcmp(magic, kDumpMagic, 4) != 0) throw DataError(path.string() + ": not a feature dump");
    if (header[0] != kDumpVersion) throw DataError(path.string() + ": unsupported dump version");
    FeatureMatrix fm;
    fm.frames = Tensor<float>::matrix(header[1], header[2]);
    is.read(reinterpret_cast<char*>(fm.frames.data()), static_cast<std::streamsize>(fm.frames.size() * 4));
    if (!is) throw DataError(path.string() + ": truncated feature dump");
    return fm;
}

} // namespace slm::frontend
