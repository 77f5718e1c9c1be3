#include "yuedesk/vocab.hpp"

#include <set>

#include "doctest.h"
#include "yuedesk/rng.hpp"

using namespace yuedesk;
using namespace yuedesk::vocab;

namespace {

VocabLayout xcodec_layout(TokenId text_size = 256) {
  return VocabLayout::build(text_size, {TokenizerKind::Xcodec});
}

std::string random_utf8(Rng& rng, int max_codepoints) {
  std::string out;
  const int n = static_cast<int>(rng.uniform_below(max_codepoints + 1));
  for (int i = 0; i < n; ++i) {
    // Skip the surrogate range; everything else is fair game.
    std::uint32_t cp = 0;
    do {
      cp = static_cast<std::uint32_t>(rng.uniform_below(0x10FFFF + 1));
    } while (cp >= 0xD800 && cp <= 0xDFFF);
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("build_vocab: block widths and offsets") {
  const VocabLayout big = VocabLayout::build(32000, {TokenizerKind::Xcodec});
  CHECK(big.total_size() == 32000 + 9 + 8 * 1024);
  CHECK(big.total_size() == 40201);

  CHECK_THROWS_AS(VocabLayout::build(256, {}), Error);
  CHECK_THROWS_WITH_AS(VocabLayout::build(255, {TokenizerKind::Xcodec}),
                       doctest::Contains("256"), Error);

  const VocabLayout two =
      VocabLayout::build(256, {TokenizerKind::Xcodec, TokenizerKind::Encodec32k});
  CHECK(two.audio_range(TokenizerKind::Xcodec, 0).begin == 256 + 9);
  CHECK(two.audio_range(TokenizerKind::Xcodec, 0).begin == 265);
  CHECK(two.audio_range(TokenizerKind::Encodec32k, 0).begin == 265 + 8 * 1024);

  CHECK_THROWS_AS(
      VocabLayout::build(256, {TokenizerKind::Xcodec, TokenizerKind::Xcodec}),
      Error);
}

TEST_CASE("special tokens: exactly the nine table rows") {
  const VocabLayout layout = xcodec_layout();
  CHECK(kNumSpecialTokens == 9);
  CHECK(special_token_text(SpecialToken::Eod) == "<EOD>");
  CHECK(special_token_text(SpecialToken::Soa) == "<SOA>");
  CHECK(special_token_text(SpecialToken::Eoa) == "<EOA>");
  CHECK(special_token_text(SpecialToken::Stage1) == "<stage_1>");
  CHECK(special_token_text(SpecialToken::Stage2) == "<stage_2>");
  CHECK(special_token_text(SpecialToken::Encodec32k) == "<encodec32k>");
  CHECK(special_token_text(SpecialToken::Xcodec) == "<xcodec>");
  CHECK(special_token_text(SpecialToken::Semanticodec) == "<semanticodec>");
  CHECK(special_token_text(SpecialToken::Hificodec) == "<hificodec>");

  std::set<TokenId> ids;
  for (int i = 0; i < kNumSpecialTokens; ++i) {
    ids.insert(layout.special_id(static_cast<SpecialToken>(i)));
  }
  CHECK(ids.size() == 9);
  CHECK(*ids.begin() == 256);
  CHECK(*ids.rbegin() == 264);
}

TEST_CASE("classify_token: examples") {
  const VocabLayout layout = xcodec_layout();
  CHECK(layout.classify(layout.special_id(SpecialToken::Eoa)).is_special());
  CHECK(layout.classify(layout.special_id(SpecialToken::Eoa)).special ==
        SpecialToken::Eoa);

  const TokenClass first_audio =
      layout.classify(layout.audio_range(TokenizerKind::Xcodec, 0).begin);
  CHECK(first_audio.is_audio());
  CHECK(first_audio.kind == TokenizerKind::Xcodec);
  CHECK(first_audio.codebook == 0);
  CHECK(first_audio.code == 0);

  CHECK(layout.classify(0).is_text());
  CHECK_THROWS_AS(layout.classify(layout.total_size()), Error);
}

TEST_CASE("vocabulary blocks tile [0, total) with an exact inverse") {
  const VocabLayout layout =
      VocabLayout::build(300, {TokenizerKind::Semanticodec, TokenizerKind::Xcodec});
  int text = 0, special = 0, audio = 0;
  for (TokenId id = 0; id < layout.total_size(); ++id) {
    const TokenClass cls = layout.classify(id);
    switch (cls.type) {
      case TokenClass::Type::Text: ++text; break;
      case TokenClass::Type::Special:
        ++special;
        CHECK(layout.special_id(cls.special) == id);
        break;
      case TokenClass::Type::Audio:
        ++audio;
        CHECK(layout.audio_token_id(cls.kind, cls.codebook, cls.code) == id);
        break;
    }
  }
  CHECK(text == 300);
  CHECK(special == 9);
  CHECK(audio == 2 * 8 * 1024);

  // class -> id -> class round-trip over every audio code of one kind
  for (int cb = 0; cb < kNumCodebooks; ++cb) {
    const IdRange range = layout.audio_range(TokenizerKind::Xcodec, cb);
    CHECK(range.size() == 1024);
    for (int code = 0; code < kCodebookSize; ++code) {
      const TokenId id = layout.audio_token_id(TokenizerKind::Xcodec, cb, code);
      const TokenClass cls = layout.classify(id);
      CHECK(cls.kind == TokenizerKind::Xcodec);
      CHECK(cls.codebook == cb);
      CHECK(cls.code == code);
    }
  }
}

TEST_CASE("encode/decode text: byte-level reversibility") {
  const VocabLayout layout = xcodec_layout();
  CHECK(encode_text(layout, "").empty());
  CHECK(decode_text(layout, encode_text(layout, "")) == "");
  CHECK(decode_text(layout, encode_text(layout, "[verse]")) == "[verse]");

  for (TokenId id : encode_text(layout, "Generate speech:")) {
    CHECK(layout.text_range().contains(id));
  }

  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const std::string s = random_utf8(rng, 24);
    CHECK(decode_text(layout, encode_text(layout, s)) == s);
  }

  CHECK_THROWS_AS(
      decode_text(layout,
                  std::vector<TokenId>{layout.special_id(SpecialToken::Eod)}),
      Error);
}

TEST_CASE("layout JSON round-trip is byte-stable") {
  const VocabLayout layout =
      VocabLayout::build(512, {TokenizerKind::Xcodec, TokenizerKind::Hificodec});
  const std::string json = layout.to_json_string();
  const VocabLayout back = VocabLayout::from_json_string(json);
  CHECK(back.to_json_string() == json);
  CHECK(back.total_size() == layout.total_size());
  CHECK(back.audio_range(TokenizerKind::Hificodec, 7).end == layout.total_size());

  CHECK_THROWS_AS(VocabLayout::from_json_string("not json"), Error);
  CHECK_THROWS_AS(VocabLayout::from_json_string("{}"), Error);
}
