#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tmrl/common.hpp"

namespace tmrl {

enum class PoolingMode { Cls, Mean, Eos };

inline PoolingMode pooling_from_string(const std::string& s) {
  if (s == "cls") return PoolingMode::Cls;
  if (s == "mean") return PoolingMode::Mean;
  if (s == "eos") return PoolingMode::Eos;
  throw config_error("unknown pooling mode: " + s);
}

inline std::string to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::Cls: return "cls";
    case PoolingMode::Mean: return "mean";
    case PoolingMode::Eos: return "eos";
  }
  return "mean";
}

/// Half-open [begin, end) character range in the source text. Special tokens
/// carry empty ranges and therefore never intersect a temporal span.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool intersects(std::size_t b, std::size_t e) const {
    return begin < e && b < end;
  }
};

struct TokenSequence {
  std::vector<std::uint32_t> ids;
  std::vector<TokenSpan> offsets;  // parallel to ids
  bool cls_present = false;
  bool eos_present = false;

  std::size_t length() const { return ids.size(); }
};

// Reserved ids; word tokens hash into [kFirstWordId, vocab).
constexpr std::uint32_t kClsId = 0;
constexpr std::uint32_t kEosId = 1;
constexpr std::uint32_t kFirstWordId = 2;

/// Splits into maximal alphanumeric runs and single punctuation characters.
/// Offsets are exact so temporal spans can be mapped onto tokens.
inline std::vector<TokenSpan> split_tokens(std::string_view text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (std::isalnum(c)) {
      std::size_t j = i + 1;
      while (j < text.size() &&
             std::isalnum(static_cast<unsigned char>(text[j])))
        ++j;
      out.push_back({i, j});
      i = j;
    } else {
      out.push_back({i, i + 1});
      ++i;
    }
  }
  return out;
}

/// Deterministic hash-bucketed vocabulary: lowercased FNV-1a of the token
/// text mapped into the non-reserved id range.
inline std::uint32_t hash_token(std::string_view token, std::uint32_t vocab_size) {
  if (vocab_size <= kFirstWordId)
    throw config_error("vocab size must exceed reserved id count");
  std::string lower(token);
  for (char& ch : lower)
    ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  std::uint64_t h = fnv64(lower);
  return kFirstWordId +
         static_cast<std::uint32_t>(h % (vocab_size - kFirstWordId));
}

/// Tokenizes text and attaches the special tokens the pooling mode needs.
/// If max_len > 0 the word tokens are truncated to fit (specials included).
inline TokenSequence tokenize(std::string_view text, std::uint32_t vocab_size,
                              PoolingMode mode, std::size_t max_len = 0) {
  TokenSequence seq;
  auto spans = split_tokens(text);
  std::size_t budget = spans.size();
  if (max_len > 0) {
    std::size_t specials = (mode == PoolingMode::Cls || mode == PoolingMode::Eos) ? 1 : 0;
    if (max_len <= specials)
      throw config_error("max_len too small for special tokens");
    budget = std::min(budget, max_len - specials);
  }
  if (mode == PoolingMode::Cls) {
    seq.ids.push_back(kClsId);
    seq.offsets.push_back({0, 0});
    seq.cls_present = true;
  }
  for (std::size_t k = 0; k < budget; ++k) {
    const auto& s = spans[k];
    seq.ids.push_back(hash_token(text.substr(s.begin, s.end - s.begin), vocab_size));
    seq.offsets.push_back(s);
  }
  if (mode == PoolingMode::Eos) {
    seq.ids.push_back(kEosId);
    seq.offsets.push_back({text.size(), text.size()});
    seq.eos_present = true;
  }
  if (seq.ids.empty()) {
    // An empty text still needs one row to encode; reuse the EOS id.
    seq.ids.push_back(kEosId);
    seq.offsets.push_back({0, 0});
    seq.eos_present = true;
  }
  return seq;
}

}  // namespace tmrl
