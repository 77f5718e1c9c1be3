#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "yuedesk/error.hpp"

namespace yuedesk::vocab {

using TokenId = std::uint32_t;

inline constexpr int kNumCodebooks = 8;
inline constexpr int kCodebookSize = 1024;
inline constexpr int kFrameRateHz = 50;

// One entry per special-token table row, in table order.
enum class SpecialToken : int {
  Eod,
  Soa,
  Eoa,
  Stage1,
  Stage2,
  Encodec32k,
  Xcodec,
  Semanticodec,
  Hificodec,
};
inline constexpr int kNumSpecialTokens = 9;

std::string_view special_token_text(SpecialToken token);

enum class TokenizerKind : int { Encodec32k, Xcodec, Semanticodec, Hificodec };
inline constexpr int kNumTokenizerKinds = 4;

std::string_view tokenizer_kind_name(TokenizerKind kind);
std::optional<TokenizerKind> tokenizer_kind_from_name(std::string_view name);
SpecialToken tokenizer_kind_token(TokenizerKind kind);

struct IdRange {
  TokenId begin = 0;
  TokenId end = 0;  // half-open
  bool contains(TokenId id) const { return id >= begin && id < end; }
  TokenId size() const { return end - begin; }
};

struct TokenClass {
  enum class Type { Text, Special, Audio };
  Type type = Type::Text;
  SpecialToken special = SpecialToken::Eod;     // valid when type == Special
  TokenizerKind kind = TokenizerKind::Xcodec;   // valid when type == Audio
  int codebook = 0;                             // valid when type == Audio
  int code = 0;                                 // valid when type == Audio

  bool is_text() const { return type == Type::Text; }
  bool is_special() const { return type == Type::Special; }
  bool is_audio() const { return type == Type::Audio; }
};

// Unified id space: [text][9 specials][audio blocks]. Audio blocks are laid
// out tokenizer-major, codebook-minor so every codebook mask is one
// contiguous range.
class VocabLayout {
 public:
  static VocabLayout build(TokenId text_vocab_size,
                           const std::vector<TokenizerKind>& tokenizer_kinds);

  TokenId total_size() const { return total_size_; }
  IdRange text_range() const { return {0, text_size_}; }
  TokenId special_id(SpecialToken token) const {
    return text_size_ + static_cast<TokenId>(token);
  }
  bool is_special(TokenId id, SpecialToken token) const {
    return id == special_id(token);
  }
  const std::vector<TokenizerKind>& kinds() const { return kinds_; }
  bool has_kind(TokenizerKind kind) const {
    return kind_slot_[static_cast<int>(kind)] >= 0;
  }
  IdRange audio_range(TokenizerKind kind, int codebook) const;
  TokenId audio_token_id(TokenizerKind kind, int codebook, int code) const;
  TokenClass classify(TokenId id) const;

  std::string to_json_string() const;
  static VocabLayout from_json_string(std::string_view text);

 private:
  TokenId text_size_ = 0;
  TokenId audio_base_ = 0;
  TokenId total_size_ = 0;
  std::vector<TokenizerKind> kinds_;
  std::array<int, kNumTokenizerKinds> kind_slot_{};
};

// Byte-level reversible text codec over the first 256 text ids.
std::vector<TokenId> encode_text(const VocabLayout& layout, std::string_view text);
std::string decode_text(const VocabLayout& layout, std::span<const TokenId> ids);

}  // namespace yuedesk::vocab
