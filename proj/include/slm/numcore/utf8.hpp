#pragma once

#include <string>
#include <string_view>

namespace slm::utf8 {

/// Decodes UTF-8; invalid bytes become U+FFFD.
std::u32string decode(std::string_view s);
std::string encode(std::u32string_view s);
std::string encode(char32_t c);

} // namespace slm::utf8
