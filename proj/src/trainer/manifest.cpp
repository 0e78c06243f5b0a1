#include "slm/trainer/manifest.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slm/errors.hpp"

namespace slm::trainer {

using nlohmann::json;

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, std::span<const std::string> languages) {
    std::ifstream is(path);
    if (!is) throw InputError("manifest not found: " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where + "invalid JSON (" + e.what() + ")");
        }
        if (!j.is_object()) throw DataError(where + "expected a JSON object");
        for (const char* key : {"audio_path", "text", "language"})
            if (!j.contains(key) || !j[key].is_string()) throw DataError(where + "missing string field '" + key + "'");
        ManifestEntry e;
        e.audio_path = j["audio_path"].get<std::string>();
        if (e.audio_path.is_relative()) e.audio_path = base / e.audio_path;
        e.text = j["text"].get<std::string>();
        e.language = j["language"].get<std::string>();
        e.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : e.audio_path.stem().string();
        if (e.text.find_first_not_of(" \t") == std::string::npos) throw DataError(where + "empty transcript");
        if (std::find(languages.begin(), languages.end(), e.language) == languages.end())
            throw DataError(where + "language '" + e.language + "' is not configured");
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write manifest " + path.string());
    for (const auto& e : entries) {
        json j{{"id", e.id}, {"audio_path", e.audio_path.string()}, {"text", e.text}, {"language", e.language}};
        os << j.dump() << '\n';
    }
}

} // namespace slm::trainer
