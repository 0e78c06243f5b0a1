#include "slm/evalsuite/wer.hpp"

#include <algorithm>

#include "slm/errors.hpp"
#include "slm/numcore/utf8.hpp"

namespace slm::evalsuite {

namespace {

char32_t to_lower(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
    if (c == 0x178) return 0xFF;
    if (c == 0x130) return U'i';
    if (c >= 0x100 && c <= 0x137 && c != 0x130) return c | 1;
    if (c >= 0x139 && c <= 0x148 && (c & 1)) return c + 1;
    if (c >= 0x14A && c <= 0x177) return c | 1;
    if (c >= 0x179 && c <= 0x17E && (c & 1)) return c + 1;
    return c;
}

bool is_punct(char32_t c) {
    if (c == U'\'') return false;
    if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                         (c >= 0x7B && c <= 0x7E);
    switch (c) {
        case 0xA1: case 0xAB: case 0xBB: case 0xBF: case 0xB7:
        case 0x2013: case 0x2014: case 0x2018: case 0x2019: case 0x201A:
        case 0x201C: case 0x201D: case 0x201E: case 0x2026:
            return true;
        default:
            return false;
    }
}

} // namespace

std::string normalize_text(std::string_view text) {
    std::u32string out;
    for (char32_t c : utf8::decode(text)) out.push_back(is_punct(c) ? U' ' : to_lower(c));
    return utf8::encode(out);
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    const auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (i < text.size()) {
        while (i < text.size() && space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !space(text[i])) ++i;
        if (i > start) words.emplace_back(text.substr(start, i - start));
    }
    return words;
}

double WerCounts::rate() const {
    if (reference_words == 0) throw InputError("wer: empty reference");
    return static_cast<double>(errors()) / static_cast<double>(reference_words);
}

WerCounts& WerCounts::operator+=(const WerCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    reference_words += o.reference_words;
    return *this;
}

WerCounts align_words(std::span<const std::string> ref, std::span<const std::string> hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<std::size_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                                 at(i, j - 1) + 1});
    WerCounts c;
    c.reference_words = n;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
            if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
            --i;
            --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ++c.deletions;
            --i;
        } else {
            ++c.insertions;
            --j;
        }
    }
    return c;
}

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
    return align_words(a, b).errors();
}

WerCounts wer(std::string_view reference, std::string_view hypothesis, bool normalize) {
    const auto ref = split_words(normalize ? normalize_text(reference) : std::string(reference));
    if (ref.empty()) throw InputError("wer: empty reference");
    const auto hyp = split_words(normalize ? normalize_text(hypothesis) : std::string(hypothesis));
    return align_words(ref, hyp);
}

} // namespace slm::evalsuite
