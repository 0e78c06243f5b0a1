#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace slm::evalsuite {

/// Lowercases (ASCII, Latin-1, Latin Extended-A) and replaces punctuation
/// other than apostrophes with spaces.
std::string normalize_text(std::string_view text);

std::vector<std::string> split_words(std::string_view text);

struct WerCounts {
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;
    std::size_t reference_words = 0;

    std::size_t errors() const { return substitutions + deletions + insertions; }
    double rate() const;
    WerCounts& operator+=(const WerCounts& o);
};

/// Minimum word edit distance with its S/D/I decomposition. Among optimal
/// alignments the backtrace prefers substitution, then deletion.
WerCounts align_words(std::span<const std::string> reference, std::span<const std::string> hypothesis);

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

/// Word error counts after normalization. An empty reference is an
/// InputError (the rate is undefined).
WerCounts wer(std::string_view reference, std::string_view hypothesis, bool normalize = true);

} // namespace slm::evalsuite
