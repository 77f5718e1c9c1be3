#include "yuedesk/vocab.hpp"

#include <algorithm>

#include "json.hpp"

namespace yuedesk::vocab {

namespace {

constexpr std::array<std::string_view, kNumSpecialTokens> kSpecialText = {
    "<EOD>",        "<SOA>",    "<EOA>",          "<stage_1>",  "<stage_2>",
    "<encodec32k>", "<xcodec>", "<semanticodec>", "<hificodec>",
};

constexpr std::array<std::string_view, kNumTokenizerKinds> kKindName = {
    "encodec32k",
    "xcodec",
    "semanticodec",
    "hificodec",
};

constexpr TokenId kKindBlockSize = kNumCodebooks * kCodebookSize;

}  // namespace

std::string_view special_token_text(SpecialToken token) {
  return kSpecialText[static_cast<int>(token)];
}

std::string_view tokenizer_kind_name(TokenizerKind kind) {
  return kKindName[static_cast<int>(kind)];
}

std::optional<TokenizerKind> tokenizer_kind_from_name(std::string_view name) {
  for (int i = 0; i < kNumTokenizerKinds; ++i) {
    if (kKindName[i] == name) return static_cast<TokenizerKind>(i);
  }
  return std::nullopt;
}

SpecialToken tokenizer_kind_token(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::Encodec32k: return SpecialToken::Encodec32k;
    case TokenizerKind::Xcodec: return SpecialToken::Xcodec;
    case TokenizerKind::Semanticodec: return SpecialToken::Semanticodec;
    case TokenizerKind::Hificodec: return SpecialToken::Hificodec;
  }
  fail(ErrorCode::config, "unknown tokenizer kind");
}

VocabLayout VocabLayout::build(TokenId text_vocab_size,
                               const std::vector<TokenizerKind>& tokenizer_kinds) {
  if (text_vocab_size < 256) {
    fail(ErrorCode::config, "text vocab must hold at least the 256 byte ids");
  }
  if (tokenizer_kinds.empty()) {
    fail(ErrorCode::config, "at least one tokenizer kind required (no audio space)");
  }
  VocabLayout layout;
  layout.text_size_ = text_vocab_size;
  layout.audio_base_ = text_vocab_size + kNumSpecialTokens;
  layout.kind_slot_.fill(-1);
  for (TokenizerKind kind : tokenizer_kinds) {
    const int k = static_cast<int>(kind);
    if (layout.kind_slot_[k] >= 0) {
      fail(ErrorCode::config,
           "duplicate tokenizer kind: " + std::string(tokenizer_kind_name(kind)));
    }
    layout.kind_slot_[k] = static_cast<int>(layout.kinds_.size());
    layout.kinds_.push_back(kind);
  }
  layout.total_size_ =
      layout.audio_base_ + static_cast<TokenId>(layout.kinds_.size()) * kKindBlockSize;
  return layout;
}

IdRange VocabLayout::audio_range(TokenizerKind kind, int codebook) const {
  if (codebook < 0 || codebook >= kNumCodebooks) {
    fail(ErrorCode::range, "codebook index out of range");
  }
  const int slot = kind_slot_[static_cast<int>(kind)];
  if (slot < 0) {
    fail(ErrorCode::config,
         "layout has no tokenizer kind " + std::string(tokenizer_kind_name(kind)));
  }
  const TokenId begin = audio_base_ + static_cast<TokenId>(slot) * kKindBlockSize +
                        static_cast<TokenId>(codebook) * kCodebookSize;
  return {begin, begin + kCodebookSize};
}

TokenId VocabLayout::audio_token_id(TokenizerKind kind, int codebook, int code) const {
  if (code < 0 || code >= kCodebookSize) {
    fail(ErrorCode::range, "audio code out of range");
  }
  return audio_range(kind, codebook).begin + static_cast<TokenId>(code);
}

TokenClass VocabLayout::classify(TokenId id) const {
  if (id >= total_size_) {
    fail(ErrorCode::range, "token id " + std::to_string(id) + " out of range");
  }
  TokenClass cls;
  if (id < text_size_) {
    cls.type = TokenClass::Type::Text;
    return cls;
  }
  if (id < audio_base_) {
    cls.type = TokenClass::Type::Special;
    cls.special = static_cast<SpecialToken>(id - text_size_);
    return cls;
  }
  const TokenId offset = id - audio_base_;
  cls.type = TokenClass::Type::Audio;
  cls.kind = kinds_[offset / kKindBlockSize];
  cls.codebook = static_cast<int>((offset % kKindBlockSize) / kCodebookSize);
  cls.code = static_cast<int>(offset % kCodebookSize);
  return cls;
}

std::string VocabLayout::to_json_string() const {
  nlohmann::ordered_json doc;
  doc["text_vocab_size"] = text_size_;
  nlohmann::ordered_json specials;
  for (int i = 0; i < kNumSpecialTokens; ++i) {
    const auto token = static_cast<SpecialToken>(i);
    specials[std::string(special_token_text(token))] = special_id(token);
  }
  doc["special_token_ids"] = std::move(specials);
  nlohmann::ordered_json audio;
  for (TokenizerKind kind : kinds_) {
    nlohmann::ordered_json books;
    for (int cb = 0; cb < kNumCodebooks; ++cb) {
      const IdRange range = audio_range(kind, cb);
      books[std::to_string(cb)] = {range.begin, range.end};
    }
    audio[std::string(tokenizer_kind_name(kind))] = std::move(books);
  }
  doc["audio_ranges"] = std::move(audio);
  return doc.dump(2);
}

VocabLayout VocabLayout::from_json_string(std::string_view text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    fail(ErrorCode::data, "vocab layout: invalid JSON");
  }
  if (!doc.contains("text_vocab_size") || !doc.contains("audio_ranges")) {
    fail(ErrorCode::data, "vocab layout: missing required keys");
  }
  const TokenId text_size = doc["text_vocab_size"].get<TokenId>();
  std::vector<std::pair<TokenId, TokenizerKind>> kinds_by_offset;
  for (const auto& [name, books] : doc["audio_ranges"].items()) {
    const auto kind = tokenizer_kind_from_name(name);
    if (!kind) fail(ErrorCode::data, "vocab layout: unknown tokenizer kind " + name);
    if (!books.contains("0")) fail(ErrorCode::data, "vocab layout: missing codebook 0");
    kinds_by_offset.emplace_back(books["0"][0].get<TokenId>(), *kind);
  }
  std::sort(kinds_by_offset.begin(), kinds_by_offset.end());
  std::vector<TokenizerKind> kinds;
  kinds.reserve(kinds_by_offset.size());
  for (const auto& [offset, kind] : kinds_by_offset) kinds.push_back(kind);
  VocabLayout layout = build(text_size, kinds);
  // Cross-check the declared ranges against the rebuilt layout.
  for (const auto& [name, books] : doc["audio_ranges"].items()) {
    const auto kind = *tokenizer_kind_from_name(name);
    for (const auto& [cb, range] : books.items()) {
      const IdRange expect = layout.audio_range(kind, std::stoi(cb));
      if (range[0].get<TokenId>() != expect.begin ||
          range[1].get<TokenId>() != expect.end) {
        fail(ErrorCode::data, "vocab layout: inconsistent audio range for " + name);
      }
    }
  }
  return layout;
}

std::vector<TokenId> encode_text(const VocabLayout& layout, std::string_view text) {
  (void)layout;
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

std::string decode_text(const VocabLayout& layout, std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (!layout.classify(id).is_text() || id > 255) {
      fail(ErrorCode::token_class,
           "decode_text: id " + std::to_string(id) + " is not a byte-level text id");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace yuedesk::vocab
