#pragma once

// Synthetic "speech": every character is a short tone at its own frequency,
// so a transcript is recoverable from the audio by construction.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "slm/frontend/audio.hpp"
#include "slm/numcore/rng.hpp"
#include "slm/numcore/utf8.hpp"
#include "slm/trainer/manifest.hpp"

namespace slm::testing {

inline const std::vector<std::string> kToyTranscripts{
    "cat sat", "dog ran", "big red hen", "sun up", "tea cup", "go home", "fig jam", "wax owl",
};

struct ToneSpec {
    double char_seconds = 0.2;
    double gap_seconds = 0.03;
    double base_hz = 300.0;
    double step_hz = 110.0;
    double noise = 0.01;
};

inline std::vector<float> tone_utterance(const std::string& text, std::uint64_t seed, const ToneSpec& spec = {}) {
    const int rate = frontend::kSampleRate;
    Rng rng(seed);
    std::vector<float> out;
    const auto emit = [&](double hz, double seconds) {
        const auto n = static_cast<std::size_t>(seconds * rate);
        for (std::size_t i = 0; i < n; ++i) {
            // raised-cosine envelope avoids clicks at the tone edges
            const double env = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
            const double s = hz > 0 ? 0.4 * env * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / rate) : 0.0;
            out.push_back(static_cast<float>(s + spec.noise * rng.normal()));
        }
    };
    emit(0, 0.1);
    for (char32_t c : utf8::decode(text)) {
        const double hz = c == U' ' ? 0.0 : spec.base_hz + spec.step_hz * static_cast<double>(c - U'a');
        emit(hz, spec.char_seconds);
        emit(0, spec.gap_seconds);
    }
    emit(0, 0.1);
    return out;
}

/// Writes one WAV per transcript and a manifest next to them.
inline std::filesystem::path write_toy_corpus(const std::filesystem::path& dir,
                                              const std::vector<std::string>& transcripts = kToyTranscripts,
                                              const std::vector<std::string>& languages = {"en"},
                                              const ToneSpec& spec = {}) {
    std::filesystem::create_directories(dir);
    std::vector<trainer::ManifestEntry> entries;
    for (std::size_t i = 0; i < transcripts.size(); ++i) {
        const std::string id = "utt" + std::to_string(i);
        const auto wav = dir / (id + ".wav");
        frontend::write_wav(wav, tone_utterance(transcripts[i], 1000 + i, spec), frontend::kSampleRate);
        entries.push_back({id, wav.filename(), transcripts[i], languages[i % languages.size()]});
    }
    const auto manifest = dir / "manifest.jsonl";
    trainer::write_manifest(manifest, entries);
    return manifest;
}

} // namespace slm::testing
