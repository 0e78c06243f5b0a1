#include "slm/declm/tokenizer.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "slm/numcore/utf8.hpp"

namespace slm::declm {

CharTokenizer::CharTokenizer(std::u32string chars) : chars_(std::move(chars)) {
    for (std::size_t i = 0; i < chars_.size(); ++i) {
        if (!index_.emplace(chars_[i], static_cast<int>(i)).second)
            throw std::invalid_argument("tokenizer: duplicate character in inventory");
    }
}

CharTokenizer CharTokenizer::build(std::span<const std::string> texts) {
    std::set<char32_t> seen;
    for (const auto& t : texts)
        for (char32_t c : utf8::decode(t)) seen.insert(c);
    return CharTokenizer(std::u32string(seen.begin(), seen.end()));
}

std::vector<int> CharTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (char32_t c : utf8::decode(text)) {
        auto it = index_.find(c);
        ids.push_back(it == index_.end() ? kUnk : kNumSpecial + it->second);
    }
    return ids;
}

std::string CharTokenizer::decode(std::span<const int> ids) const {
    std::u32string out;
    for (int id : ids)
        if (id >= kNumSpecial && static_cast<std::size_t>(id - kNumSpecial) < chars_.size())
            out.push_back(chars_[id - kNumSpecial]);
    return utf8::encode(out);
}

std::vector<int> CharTokenizer::encode_ctc(std::string_view text) const {
    std::vector<int> ids;
    for (char32_t c : utf8::decode(text)) {
        auto it = index_.find(c);
        if (it == index_.end())
            throw std::out_of_range("tokenizer: character '" + utf8::encode(c) + "' not in the CTC inventory");
        ids.push_back(1 + it->second);
    }
    return ids;
}

std::string CharTokenizer::decode_ctc(std::span<const int> ids) const {
    std::u32string out;
    for (int id : ids)
        if (id >= 1 && static_cast<std::size_t>(id - 1) < chars_.size()) out.push_back(chars_[id - 1]);
    return utf8::encode(out);
}

} // namespace slm::declm
