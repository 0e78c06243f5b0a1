#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace slm::declm {

/// Character-level tokenizer over Unicode code points.
///
/// LM ids: 0 pad, 1 unk, 2 bos, 3 eos, then one id per character.
/// CTC ids: 0 blank, then the same characters in the same order.
class CharTokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kNumSpecial = 4;

    CharTokenizer() = default;
    explicit CharTokenizer(std::u32string chars);

    /// Sorted set of every character in `texts`.
    static CharTokenizer build(std::span<const std::string> texts);

    std::vector<int> encode(std::string_view text) const;
    /// Specials are dropped.
    std::string decode(std::span<const int> ids) const;

    /// Throws std::out_of_range on characters outside the inventory.
    std::vector<int> encode_ctc(std::string_view text) const;
    std::string decode_ctc(std::span<const int> ids) const;

    std::size_t vocab_size() const { return kNumSpecial + chars_.size(); }
    std::size_t ctc_vocab() const { return chars_.size(); }
    const std::u32string& chars() const { return chars_; }
    static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

private:
    std::u32string chars_;
    std::unordered_map<char32_t, int> index_;
};

} // namespace slm::declm
