#pragma once

#include <cctype>
#include <charconv>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maestro/errors.hpp"

namespace maestro {

/// Shortest decimal rendering that re-parses to the same double.
inline std::string render_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline std::optional<double> try_parse_double(std::string_view text) {
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return value;
}

inline double parse_double(std::string_view text) {
  auto v = try_parse_double(text);
  if (!v) {
    raise(ErrorCode::ParseError, "not a number: '" + std::string(text) + "'");
  }
  return *v;
}

struct NumberToken {
  double value = 0.0;
  std::size_t begin = 0;   // byte offset of the literal in the scanned text
  std::size_t length = 0;
  bool is_integer = false; // no '.' and no exponent in the literal
  char preceded_by = '\0'; // nearest non-space char before the literal
};

/// Scans a text for decimal literals (optional sign and exponent). Digits that
/// are part of identifiers like "UNK_0" or "x2" are not literals.
inline std::vector<NumberToken> scan_numbers(std::string_view text) {
  std::vector<NumberToken> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  auto is_ident = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  };
  while (i < n) {
    std::size_t start = i;
    bool has_sign = false;
    if ((text[i] == '+' || text[i] == '-') && i + 1 < n &&
        (is_digit(text[i + 1]) || (text[i + 1] == '.' && i + 2 < n && is_digit(text[i + 2])))) {
      has_sign = true;
    } else if (!is_digit(text[i]) &&
               !(text[i] == '.' && i + 1 < n && is_digit(text[i + 1]))) {
      ++i;
      continue;
    }
    // Reject digits glued onto an identifier (UNK_0, Answer2, ...).
    if (start > 0 && is_ident(text[start - 1])) {
      ++i;
      while (i < n && is_digit(text[i])) ++i;
      continue;
    }
    std::size_t j = start + (has_sign ? 1 : 0);
    bool saw_digit = false, saw_dot = false, saw_exp = false;
    while (j < n) {
      char c = text[j];
      if (is_digit(c)) {
        saw_digit = true;
        ++j;
      } else if (c == '.' && !saw_dot && !saw_exp) {
        saw_dot = true;
        ++j;
      } else if ((c == 'e' || c == 'E') && saw_digit && !saw_exp) {
        std::size_t k = j + 1;
        if (k < n && (text[k] == '+' || text[k] == '-')) ++k;
        if (k < n && is_digit(text[k])) {
          saw_exp = true;
          j = k;
        } else {
          break;
        }
      } else {
        break;
      }
    }
    if (!saw_digit) {
      i = start + 1;
      continue;
    }
    // Trailing dot belongs to the sentence, not the number ("is 7.").
    if (text[j - 1] == '.') {
      --j;
      saw_dot = text.substr(start, j - start).find('.') != std::string_view::npos;
    }
    std::string_view lit = text.substr(start, j - start);
    auto value = try_parse_double(lit);
    if (value) {
      NumberToken tok;
      tok.value = *value;
      tok.begin = start;
      tok.length = j - start;
      tok.is_integer = !saw_dot && !saw_exp;
      for (std::size_t p = start; p > 0; --p) {
        if (!std::isspace(static_cast<unsigned char>(text[p - 1]))) {
          tok.preceded_by = text[p - 1];
          break;
        }
      }
      out.push_back(tok);
    }
    i = j;
  }
  return out;
}

}  // namespace maestro
