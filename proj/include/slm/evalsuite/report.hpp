#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slm/evalsuite/wer.hpp"

namespace slm::evalsuite {

struct EvalItem {
    std::string id;
    std::string language;
    std::string reference;
    std::filesystem::path audio_path;
};

/// Hypothesis for one item. Throwing slm::DataError marks the item skipped.
using Decoder = std::function<std::string(const EvalItem&)>;

struct LanguageScore {
    double wer = 0.0;
    std::size_t utterances = 0;
    WerCounts counts;
};

struct Hypothesis {
    std::string id;
    std::string language;
    std::string reference;
    std::string hypothesis;
    WerCounts counts;
};

struct EvalReport {
    std::map<std::string, LanguageScore> per_language;
    /// Unweighted mean of the per-language WERs.
    double average = 0.0;
    std::vector<std::string> skipped;
    std::vector<Hypothesis> hypotheses;
    std::string decode_config_digest;

    nlohmann::json to_json() const;
    /// Plain-text table with one column per language in `columns` order and a
    /// final Avg column; WER in percent. Languages absent from the report
    /// print "-".
    std::string table(std::span<const std::string> columns, const std::string& row_label = "model") const;
};

/// Decodes every item (in parallel when `threads` > 1; results are reduced
/// in input order) and aggregates edit counts per language.
EvalReport eval_corpus(std::span<const EvalItem> items, const Decoder& decode, std::size_t threads = 1);

/// Average of the per-language rates already in `per_language`.
double unweighted_average(const std::map<std::string, LanguageScore>& per_language);

} // namespace slm::evalsuite
