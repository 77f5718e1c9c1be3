#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "yuedesk/rng.hpp"
#include "yuedesk/vocab.hpp"

namespace yuedesk::seqfmt {

using vocab::TokenId;
using vocab::TokenizerKind;
using vocab::VocabLayout;

inline constexpr std::string_view kStartOfSegment = "[start_of_segment]";
inline constexpr std::string_view kEndOfSegment = "[end_of_segment]";
inline constexpr std::string_view kLyricsToSongInstruction =
    "Generate music from the given lyrics segment by segment.";
inline constexpr std::string_view kTagToMusicInstruction =
    "Generate music based on the given tags.";
inline constexpr std::string_view kSpeechInstruction = "Generate speech:";

enum class SegmentLabel : int { Intro, Verse, Chorus, Bridge, Outro };
inline constexpr int kNumSegmentLabels = 5;

std::string_view segment_label_text(SegmentLabel label);  // "[intro]" ...
std::optional<SegmentLabel> segment_label_from_text(std::string_view text);

// One time step of the dual-track stream: a vocal and an accompaniment
// codebook-0 token of the same tokenizer kind.
struct TrackFrame {
  TokenId vocal = 0;
  TokenId accomp = 0;
  bool operator==(const TrackFrame&) const = default;
};

struct Segment {
  SegmentLabel label = SegmentLabel::Verse;
  std::string lyrics;  // the literal "\n" marks an instrumental segment
  std::vector<TrackFrame> frames;
  bool operator==(const Segment&) const = default;
};

struct SongDocument {
  std::string instruction;
  std::string tag;
  std::string lyrics;
  std::vector<Segment> segments;
  bool operator==(const SongDocument&) const = default;
};

struct IclReference {
  enum class Mode { Vocal, Accomp, Mix, Dual };
  Mode mode = Mode::Dual;
  std::vector<TrackFrame> dual_frames;     // Dual mode payload
  std::vector<TokenId> single_track;       // Vocal/Accomp/Mix payload
  int window_frames = 0;
};

inline constexpr int kIclMinWindowSeconds = 20;
inline constexpr int kIclMaxWindowSeconds = 40;

struct Stage2Sequence {
  std::vector<std::array<TokenId, vocab::kNumCodebooks>> frames;
  std::vector<TokenId> serialized;
};

// -- dual-track interleaving ------------------------------------------------

std::vector<TokenId> interleave_dual(std::span<const TokenId> voc,
                                     std::span<const TokenId> acc,
                                     const VocabLayout& layout);
std::pair<std::vector<TokenId>, std::vector<TokenId>> deinterleave_dual(
    std::span<const TokenId> tokens);

// -- CoT documents ----------------------------------------------------------

// Serializes instruction/tag/lyrics plus per-segment audio payloads that are
// already token ids. build_cot_document is the dual-track entry point; the
// single-track document variants (mixture, speech) reuse this directly.
std::vector<TokenId> build_cot_tokens(const SongDocument& doc,
                                      std::span<const std::vector<TokenId>> payloads,
                                      TokenizerKind kind, const VocabLayout& layout);

std::vector<TokenId> build_cot_document(const SongDocument& doc,
                                        const VocabLayout& layout);
SongDocument parse_cot_document(std::span<const TokenId> tokens,
                                const VocabLayout& layout);

// -- ICL documents ----------------------------------------------------------

std::vector<TokenId> build_icl_document(const IclReference& ref,
                                        const SongDocument& doc,
                                        const VocabLayout& layout);

// Parsed form of an ICL document. The raw reference payload is kept as
// serialized; dual- and mix-mode references of matching length serialize
// identically, so the mode itself is not recoverable from tokens.
struct IclDocument {
  std::vector<TokenId> reference_payload;
  TokenizerKind reference_kind = TokenizerKind::Xcodec;
  SongDocument doc;
};
IclDocument parse_icl_document(std::span<const TokenId> tokens,
                               const VocabLayout& layout);

IclReference slice_reference_window(std::span<const TrackFrame> track, Rng& rng,
                                    int min_s = kIclMinWindowSeconds,
                                    int max_s = kIclMaxWindowSeconds);

// -- Stage-2 sequences ------------------------------------------------------

Stage2Sequence build_stage2_sequence(
    std::span<const std::array<TokenId, vocab::kNumCodebooks>> frames,
    const VocabLayout& layout);
std::vector<std::array<TokenId, vocab::kNumCodebooks>> parse_stage2_sequence(
    std::span<const TokenId> tokens, const VocabLayout& layout);

// -- binary token streams and JSONL records ----------------------------------

inline constexpr std::string_view kTokenStreamMagic = "YUETOK01";

void write_token_stream(const std::filesystem::path& path,
                        std::span<const TokenId> tokens);
std::vector<TokenId> read_token_stream(const std::filesystem::path& path);

std::string document_to_json(const SongDocument& doc, const VocabLayout& layout);
SongDocument document_from_json(std::string_view text, const VocabLayout& layout);

}  // namespace yuedesk::seqfmt
