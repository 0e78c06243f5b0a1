#include "slm/frontend/audio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "slm/errors.hpp"

namespace slm::frontend {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ofstream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

} // namespace

std::vector<float> resample(std::span<const float> in, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw DataError("resample: invalid sample rate");
    if (from_rate == to_rate) return {in.begin(), in.end()};
    const double ratio = static_cast<double>(to_rate) / from_rate;
    const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(in.size()) * ratio));
    const double cutoff = std::min(1.0, ratio);
    constexpr double kZeroCrossings = 16.0;
    const double half = kZeroCrossings / cutoff;
    std::vector<float> out(out_len);
    const auto n = static_cast<std::ptrdiff_t>(in.size());
    for (std::size_t i = 0; i < out_len; ++i) {
        const double t = static_cast<double>(i) / ratio;
        const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - half)));
        const auto hi = std::min<std::ptrdiff_t>(n - 1, static_cast<std::ptrdiff_t>(std::floor(t + half)));
        double acc = 0.0;
        for (std::ptrdiff_t k = lo; k <= hi; ++k) {
            const double d = t - static_cast<double>(k);
            const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half);
            acc += in[k] * cutoff * sinc(cutoff * d) * window;
        }
        out[i] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
    }
    return out;
}

Waveform decode_wav(std::span<const unsigned char> bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DataError("malformed header: not a RIFF/WAVE file");

    int channels = 0, rate = 0, bits = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::size_t len = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = bytes.size() - body;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16 || avail < 16) throw DataError("malformed header: short fmt chunk");
            std::uint16_t format = read_u16(chunk + 8);
            channels = read_u16(chunk + 10);
            rate = static_cast<int>(read_u32(chunk + 12));
            bits = read_u16(chunk + 22);
            if (format == 0xFFFE && len >= 26 && avail >= 26) format = read_u16(chunk + 32);
            if (format != 1) throw DataError("unsupported codec: WAVE format tag " + std::to_string(format));
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            // tolerate streaming writers that leave the size field unset
            data_len = std::min(len, avail);
            break;
        }
        pos = body + len + (len & 1);
    }
    if (!have_fmt) throw DataError("malformed header: missing fmt chunk");
    if (!data) throw DataError("malformed header: missing data chunk");
    if (bits != 16) throw DataError("unsupported codec: " + std::to_string(bits) + "-bit PCM (need 16)");
    if (channels < 1) throw DataError("malformed header: zero channels");
    if (rate < 1000 || rate > 384000) throw DataError("malformed header: sample rate " + std::to_string(rate));

    const std::size_t frames = data_len / (2 * static_cast<std::size_t>(channels));
    if (static_cast<double>(frames) / rate > kMaxSeconds + 1e-9)
        throw DataError("utterance longer than 20 s (" + std::to_string(static_cast<double>(frames) / rate) + " s)");

    std::vector<float> mono(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const auto s = static_cast<std::int16_t>(read_u16(data + 2 * (f * channels + c)));
            acc += s / 32768.0;
        }
        mono[f] = static_cast<float>(acc / channels);
    }
    Waveform w;
    w.samples = rate == kSampleRate ? std::move(mono) : resample(mono, rate, kSampleRate);
    w.sample_rate = kSampleRate;
    if (w.samples.size() > static_cast<std::size_t>(kMaxSeconds * kSampleRate))
        throw DataError("utterance longer than 20 s");
    return w;
}

Waveform load_audio(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open audio file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return decode_wav(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_wav(const std::filesystem::path& path, std::span<const float> interleaved, int sample_rate, int channels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
    os.write("RIFF", 4);
    put_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_u32(os, 16);
    put_u16(os, 1);
    put_u16(os, static_cast<std::uint16_t>(channels));
    put_u32(os, static_cast<std::uint32_t>(sample_rate));
    put_u32(os, static_cast<std::uint32_t>(sample_rate * channels * 2));
    put_u16(os, static_cast<std::uint16_t>(channels * 2));
    put_u16(os, 16);
    os.write("data", 4);
    put_u32(os, data_bytes);
    for (float s : interleaved) {
        const double c = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
        put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
    }
}

} // namespace slm::frontend
