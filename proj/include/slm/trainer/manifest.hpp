#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace slm::trainer {

/// Report column order.
inline const std::vector<std::string> kLanguages{"en", "de", "nl", "fr", "es", "it", "pt", "pl"};

struct ManifestEntry {
    std::string id;
    /// Resolved against the manifest's directory when relative.
    std::filesystem::path audio_path;
    std::string text;
    std::string language;
};

/// One JSON object per line: {"audio_path", "text", "language"} plus an
/// optional "id" (defaults to the audio file stem). Blank lines are skipped.
/// A missing file is an InputError; malformed lines, empty transcripts and
/// languages outside `languages` are DataErrors naming the line.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path,
                                         std::span<const std::string> languages = kLanguages);

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

} // namespace slm::trainer
