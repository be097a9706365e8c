// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace slu::text {

std::vector<std::string> split(std::string_view s, char sep);
/// Splits on runs of ASCII whitespace, dropping empty fields.
std::vector<std::string> split_ws(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string_view trim(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(const std::vector<char32_t>& cps);
std::string encode_utf8(const char32_t* begin, const char32_t* end);

/// Lowercases ASCII and Latin-1 letters; other code points pass through.
char32_t to_lower(char32_t c);
bool is_upper(char32_t c);
std::string lowercase(std::string_view s);

/// printf-style formatting into a std::string.
std::string format(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

/// Round-trippable decimal rendering of a double ("%.17g").
std::string exact(double v);

}  // namespace slu::text
