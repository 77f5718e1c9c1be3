#pragma once

// Shared helpers for the unit and acceptance suites.

#include <limits>
#include <string>
#include <vector>

#include "yuedesk/decode.hpp"
#include "yuedesk/rng.hpp"
#include "yuedesk/seqfmt.hpp"
#include "yuedesk/vocab.hpp"

namespace testsupport {

using yuedesk::Rng;
using namespace yuedesk::vocab;
using namespace yuedesk::seqfmt;

inline VocabLayout make_layout() {
  return VocabLayout::build(256, {TokenizerKind::Xcodec});
}

inline TokenId random_cb0(const VocabLayout& layout, Rng& rng,
                          TokenizerKind kind = TokenizerKind::Xcodec) {
  return layout.audio_token_id(kind, 0,
                               static_cast<int>(rng.uniform_below(kCodebookSize)));
}

inline std::vector<TrackFrame> random_frames(const VocabLayout& layout, Rng& rng,
                                             int count) {
  std::vector<TrackFrame> frames(count);
  for (TrackFrame& f : frames) {
    f.vocal = random_cb0(layout, rng);
    f.accomp = random_cb0(layout, rng);
  }
  return frames;
}

// Random word-ish lyrics; single line unless multiline is allowed. The
// bracket delimiters never appear, matching what the builders produce.
inline std::string random_lyrics(Rng& rng, int max_words, bool allow_newlines) {
  const int words = static_cast<int>(rng.uniform_below(max_words + 1));
  std::string out;
  for (int w = 0; w < words; ++w) {
    if (w > 0) {
      out += (allow_newlines && rng.bernoulli(0.2)) ? '\n' : ' ';
    }
    const int len = 1 + static_cast<int>(rng.uniform_below(8));
    for (int i = 0; i < len; ++i) {
      out += static_cast<char>('a' + rng.uniform_below(26));
    }
  }
  return out;
}

struct DocOptions {
  int max_segments = 5;
  int max_frames = 12;
  bool instrumental = false;
};

inline SongDocument random_document(const VocabLayout& layout, Rng& rng,
                                    const DocOptions& opts = {}) {
  SongDocument doc;
  doc.instruction = std::string(kLyricsToSongInstruction);
  doc.tag = "[Genre] " + random_lyrics(rng, 4, false);
  doc.lyrics = random_lyrics(rng, 16, true);
  const int segments = 1 + static_cast<int>(rng.uniform_below(opts.max_segments));
  for (int i = 0; i < segments; ++i) {
    Segment seg;
    seg.label = static_cast<SegmentLabel>(rng.uniform_below(kNumSegmentLabels));
    seg.lyrics = opts.instrumental ? "\n" : random_lyrics(rng, 8, false);
    seg.frames =
        random_frames(layout, rng, static_cast<int>(rng.uniform_below(opts.max_frames + 1)));
    doc.segments.push_back(std::move(seg));
  }
  return doc;
}

// -- logit sources -----------------------------------------------------------

// Same score everywhere: decoding reduces to uniform sampling over the mask.
struct UniformSource final : yuedesk::decode::LogitSource {
  explicit UniformSource(std::size_t vocab) : vocab_size(vocab) {}
  std::size_t vocab_size;
  yuedesk::decode::LogitVector next_logits(
      std::span<const TokenId>) const override {
    return yuedesk::decode::LogitVector(vocab_size, 0.0f);
  }
};

// Deterministic pseudo-random logits keyed on the context; two seeds give
// two distinct "models".
struct HashSource final : yuedesk::decode::LogitSource {
  HashSource(std::size_t vocab, std::uint64_t seed) : vocab_size(vocab), seed_(seed) {}
  std::size_t vocab_size;
  std::uint64_t seed_;
  yuedesk::decode::LogitVector next_logits(
      std::span<const TokenId> ctx) const override {
    std::uint64_t h = seed_;
    for (TokenId t : ctx) h = Rng::mix(h, t + 1);
    Rng rng(h);
    yuedesk::decode::LogitVector logits(vocab_size);
    for (float& v : logits) v = static_cast<float>(rng.normal(0.0, 2.0));
    return logits;
  }
};

// Worst case for grammar safety: +inf on ids the grammar forbids.
struct AdversarialSource final : yuedesk::decode::LogitSource {
  AdversarialSource(const VocabLayout& layout, std::uint64_t seed)
      : layout_(&layout), seed_(seed) {}
  const VocabLayout* layout_;
  std::uint64_t seed_;
  yuedesk::decode::LogitVector next_logits(
      std::span<const TokenId> ctx) const override {
    std::uint64_t h = seed_;
    for (TokenId t : ctx) h = Rng::mix(h, t + 1);
    Rng rng(h);
    yuedesk::decode::LogitVector logits(layout_->total_size());
    const IdRange cb0 = layout_->audio_range(TokenizerKind::Xcodec, 0);
    for (TokenId id = 0; id < logits.size(); ++id) {
      const bool legal_stage1 =
          cb0.contains(id) || layout_->is_special(id, SpecialToken::Eoa);
      logits[id] = legal_stage1 ? static_cast<float>(rng.normal(0.0, 1.0))
                                : std::numeric_limits<float>::infinity();
    }
    return logits;
  }
};

}  // namespace testsupport
