#include "yuedesk/seqfmt.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace yuedesk::seqfmt {

using vocab::IdRange;
using vocab::SpecialToken;
using vocab::TokenClass;

namespace {

constexpr std::array<std::string_view, kNumSegmentLabels> kLabelText = {
    "[intro]", "[verse]", "[chorus]", "[bridge]", "[outro]",
};

void append_text(std::vector<TokenId>& out, const VocabLayout& layout,
                 std::string_view text) {
  const auto ids = vocab::encode_text(layout, text);
  out.insert(out.end(), ids.begin(), ids.end());
}

// Requires id to be a codebook-0 audio token; returns its kind.
TokenizerKind require_cb0(const VocabLayout& layout, TokenId id,
                          std::string_view what) {
  const TokenClass cls = layout.classify(id);
  if (!cls.is_audio() || cls.codebook != 0) {
    fail(ErrorCode::token_class,
         std::string(what) + ": id " + std::to_string(id) +
             " is not a codebook-0 audio token");
  }
  return cls.kind;
}

void validate_document_text(const SongDocument& doc) {
  if (doc.instruction.empty()) {
    fail(ErrorCode::grammar, "document instruction must be non-empty");
  }
  if (doc.segments.empty()) {
    fail(ErrorCode::grammar, "document must contain at least one segment");
  }
  if (doc.instruction.find('\n') != std::string::npos ||
      doc.tag.find('\n') != std::string::npos) {
    fail(ErrorCode::grammar, "instruction and tag must be single-line");
  }
}

TokenizerKind document_kind(const SongDocument& doc, const VocabLayout& layout) {
  for (const Segment& seg : doc.segments) {
    if (!seg.frames.empty()) return require_cb0(layout, seg.frames[0].vocal, "segment");
  }
  return layout.kinds().front();
}

struct TextRun {
  std::string text;
  std::size_t next = 0;  // cursor after the run
};

TextRun read_text_run(std::span<const TokenId> tokens, std::size_t cursor,
                      const VocabLayout& layout) {
  std::vector<TokenId> ids;
  while (cursor < tokens.size() && layout.classify(tokens[cursor]).is_text()) {
    ids.push_back(tokens[cursor]);
    ++cursor;
  }
  return {vocab::decode_text(layout, ids), cursor};
}

}  // namespace

std::string_view segment_label_text(SegmentLabel label) {
  return kLabelText[static_cast<int>(label)];
}

std::optional<SegmentLabel> segment_label_from_text(std::string_view text) {
  for (int i = 0; i < kNumSegmentLabels; ++i) {
    if (kLabelText[i] == text) return static_cast<SegmentLabel>(i);
  }
  return std::nullopt;
}

std::vector<TokenId> interleave_dual(std::span<const TokenId> voc,
                                     std::span<const TokenId> acc,
                                     const VocabLayout& layout) {
  if (voc.size() != acc.size()) {
    fail(ErrorCode::shape, "interleave_dual: track lengths differ (" +
                               std::to_string(voc.size()) + " vs " +
                               std::to_string(acc.size()) + ")");
  }
  std::vector<TokenId> out;
  out.reserve(voc.size() * 2);
  std::optional<TokenizerKind> kind;
  for (std::size_t t = 0; t < voc.size(); ++t) {
    const TokenizerKind kv = require_cb0(layout, voc[t], "vocal track");
    const TokenizerKind ka = require_cb0(layout, acc[t], "accompaniment track");
    if (kv != ka || (kind && *kind != kv)) {
      fail(ErrorCode::token_class, "interleave_dual: mixed tokenizer kinds");
    }
    kind = kv;
    out.push_back(voc[t]);
    out.push_back(acc[t]);
  }
  return out;
}

std::pair<std::vector<TokenId>, std::vector<TokenId>> deinterleave_dual(
    std::span<const TokenId> tokens) {
  if (tokens.size() % 2 != 0) {
    fail(ErrorCode::shape, "deinterleave_dual: odd token count " +
                               std::to_string(tokens.size()));
  }
  std::vector<TokenId> voc, acc;
  voc.reserve(tokens.size() / 2);
  acc.reserve(tokens.size() / 2);
  for (std::size_t i = 0; i < tokens.size(); i += 2) {
    voc.push_back(tokens[i]);
    acc.push_back(tokens[i + 1]);
  }
  return {std::move(voc), std::move(acc)};
}

std::vector<TokenId> build_cot_tokens(const SongDocument& doc,
                                      std::span<const std::vector<TokenId>> payloads,
                                      TokenizerKind kind, const VocabLayout& layout) {
  validate_document_text(doc);
  if (payloads.size() != doc.segments.size()) {
    fail(ErrorCode::shape, "audio payload count does not match segment count");
  }
  if (!layout.has_kind(kind)) {
    fail(ErrorCode::config, "layout has no tokenizer kind for document audio");
  }
  std::vector<TokenId> out;
  append_text(out, layout, doc.instruction + "\n" + doc.tag + "\n" + doc.lyrics);
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    const Segment& seg = doc.segments[i];
    std::string head{kStartOfSegment};
    head += segment_label_text(seg.label);
    head += seg.lyrics;
    append_text(out, layout, head);
    out.push_back(layout.special_id(SpecialToken::Soa));
    out.push_back(layout.special_id(vocab::tokenizer_kind_token(kind)));
    for (TokenId id : payloads[i]) {
      if (require_cb0(layout, id, "segment audio") != kind) {
        fail(ErrorCode::token_class, "segment audio kind mismatch");
      }
      out.push_back(id);
    }
    out.push_back(layout.special_id(SpecialToken::Eoa));
    append_text(out, layout, std::string(kEndOfSegment));
  }
  out.push_back(layout.special_id(SpecialToken::Eod));
  return out;
}

std::vector<TokenId> build_cot_document(const SongDocument& doc,
                                        const VocabLayout& layout) {
  validate_document_text(doc);
  const TokenizerKind kind = document_kind(doc, layout);
  std::vector<std::vector<TokenId>> payloads;
  payloads.reserve(doc.segments.size());
  for (const Segment& seg : doc.segments) {
    std::vector<TokenId> voc, acc;
    voc.reserve(seg.frames.size());
    acc.reserve(seg.frames.size());
    for (const TrackFrame& frame : seg.frames) {
      voc.push_back(frame.vocal);
      acc.push_back(frame.accomp);
    }
    payloads.push_back(interleave_dual(voc, acc, layout));
  }
  return build_cot_tokens(doc, payloads, kind, layout);
}

namespace {

// Reads <SOA> <tokenizer-type> audio* <EOA> starting at cursor; returns the
// raw audio payload. The parser is strict: the first token that does not fit
// the grammar aborts the parse.
struct AudioBlock {
  std::vector<TokenId> payload;
  TokenizerKind kind;
  std::size_t next;
};

AudioBlock read_audio_block(std::span<const TokenId> tokens, std::size_t cursor,
                            const VocabLayout& layout) {
  if (cursor >= tokens.size() ||
      !layout.is_special(tokens[cursor], SpecialToken::Soa)) {
    fail(ErrorCode::grammar, "expected <SOA> at position " + std::to_string(cursor));
  }
  ++cursor;
  if (cursor >= tokens.size()) {
    fail(ErrorCode::grammar, "missing tokenizer-type token after <SOA>");
  }
  const TokenClass kind_cls = layout.classify(tokens[cursor]);
  if (!kind_cls.is_special()) {
    fail(ErrorCode::grammar, "missing tokenizer-type token after <SOA>");
  }
  TokenizerKind kind;
  switch (kind_cls.special) {
    case SpecialToken::Encodec32k: kind = TokenizerKind::Encodec32k; break;
    case SpecialToken::Xcodec: kind = TokenizerKind::Xcodec; break;
    case SpecialToken::Semanticodec: kind = TokenizerKind::Semanticodec; break;
    case SpecialToken::Hificodec: kind = TokenizerKind::Hificodec; break;
    default:
      fail(ErrorCode::grammar, "expected tokenizer-type token after <SOA>");
  }
  ++cursor;
  std::vector<TokenId> payload;
  while (true) {
    if (cursor >= tokens.size()) {
      fail(ErrorCode::unterminated_audio, "audio block not closed by <EOA>");
    }
    const TokenId id = tokens[cursor];
    if (layout.is_special(id, SpecialToken::Eoa)) {
      ++cursor;
      break;
    }
    const TokenClass cls = layout.classify(id);
    if (!cls.is_audio()) {
      fail(ErrorCode::unterminated_audio,
           "audio block interrupted before <EOA> at position " +
               std::to_string(cursor));
    }
    if (cls.codebook != 0 || cls.kind != kind) {
      fail(ErrorCode::token_class, "unexpected audio token inside codebook-0 block");
    }
    payload.push_back(id);
    ++cursor;
  }
  return {std::move(payload), kind, cursor};
}

struct SegmentHead {
  SegmentLabel label;
  std::string lyrics;
};

SegmentHead parse_segment_head(std::string_view text) {
  if (!text.starts_with(kStartOfSegment)) {
    fail(ErrorCode::grammar, "expected [start_of_segment]");
  }
  text.remove_prefix(kStartOfSegment.size());
  for (int i = 0; i < kNumSegmentLabels; ++i) {
    if (text.starts_with(kLabelText[i])) {
      text.remove_prefix(kLabelText[i].size());
      return {static_cast<SegmentLabel>(i), std::string(text)};
    }
  }
  fail(ErrorCode::grammar, "unknown segment label");
}

}  // namespace

SongDocument parse_cot_document(std::span<const TokenId> tokens,
                                const VocabLayout& layout) {
  if (tokens.empty()) fail(ErrorCode::grammar, "empty document");
  SongDocument doc;
  TextRun head = read_text_run(tokens, 0, layout);
  const std::size_t seg_pos = head.text.find(kStartOfSegment);
  if (seg_pos == std::string::npos) {
    fail(ErrorCode::grammar, "document has no segments");
  }
  const std::string prompt = head.text.substr(0, seg_pos);
  const std::size_t nl1 = prompt.find('\n');
  if (nl1 == std::string::npos) fail(ErrorCode::grammar, "malformed document prompt");
  const std::size_t nl2 = prompt.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) fail(ErrorCode::grammar, "malformed document prompt");
  doc.instruction = prompt.substr(0, nl1);
  doc.tag = prompt.substr(nl1 + 1, nl2 - nl1 - 1);
  doc.lyrics = prompt.substr(nl2 + 1);
  if (doc.instruction.empty()) fail(ErrorCode::grammar, "empty instruction");

  std::string seg_text = head.text.substr(seg_pos);
  std::size_t cursor = head.next;
  while (true) {
    SegmentHead seg_head = parse_segment_head(seg_text);
    AudioBlock block = read_audio_block(tokens, cursor, layout);
    if (block.payload.size() % 2 != 0) {
      fail(ErrorCode::shape, "odd audio token count inside dual-track segment");
    }
    Segment seg;
    seg.label = seg_head.label;
    seg.lyrics = std::move(seg_head.lyrics);
    auto [voc, acc] = deinterleave_dual(block.payload);
    seg.frames.reserve(voc.size());
    for (std::size_t t = 0; t < voc.size(); ++t) {
      seg.frames.push_back({voc[t], acc[t]});
    }
    doc.segments.push_back(std::move(seg));

    TextRun tail = read_text_run(tokens, block.next, layout);
    if (!std::string_view(tail.text).starts_with(kEndOfSegment)) {
      fail(ErrorCode::grammar, "expected [end_of_segment]");
    }
    std::string rest = tail.text.substr(kEndOfSegment.size());
    cursor = tail.next;
    if (rest.empty()) {
      if (cursor >= tokens.size() ||
          !layout.is_special(tokens[cursor], SpecialToken::Eod)) {
        fail(ErrorCode::grammar, "expected <EOD> after final segment");
      }
      if (cursor + 1 != tokens.size()) {
        fail(ErrorCode::grammar, "trailing tokens after <EOD>");
      }
      break;
    }
    seg_text = std::move(rest);
  }
  return doc;
}

std::vector<TokenId> build_icl_document(const IclReference& ref,
                                        const SongDocument& doc,
                                        const VocabLayout& layout) {
  const int min_frames = kIclMinWindowSeconds * vocab::kFrameRateHz;
  const int max_frames = kIclMaxWindowSeconds * vocab::kFrameRateHz;
  if (ref.window_frames < min_frames || ref.window_frames > max_frames) {
    fail(ErrorCode::range, "ICL reference window of " +
                               std::to_string(ref.window_frames) +
                               " frames is outside [" + std::to_string(min_frames) +
                               ", " + std::to_string(max_frames) + "]");
  }
  std::vector<TokenId> payload;
  if (ref.mode == IclReference::Mode::Dual) {
    if (static_cast<int>(ref.dual_frames.size()) != ref.window_frames) {
      fail(ErrorCode::shape, "ICL dual payload does not match window_frames");
    }
    std::vector<TokenId> voc, acc;
    for (const TrackFrame& frame : ref.dual_frames) {
      voc.push_back(frame.vocal);
      acc.push_back(frame.accomp);
    }
    payload = interleave_dual(voc, acc, layout);
  } else {
    if (static_cast<int>(ref.single_track.size()) != ref.window_frames) {
      fail(ErrorCode::shape, "ICL single payload does not match window_frames");
    }
    payload = ref.single_track;
  }
  TokenizerKind kind = layout.kinds().front();
  if (!payload.empty()) kind = require_cb0(layout, payload.front(), "ICL reference");
  for (TokenId id : payload) {
    if (require_cb0(layout, id, "ICL reference") != kind) {
      fail(ErrorCode::token_class, "ICL reference mixes tokenizer kinds");
    }
  }
  std::vector<TokenId> out;
  out.reserve(payload.size() + 3);
  out.push_back(layout.special_id(SpecialToken::Soa));
  out.push_back(layout.special_id(vocab::tokenizer_kind_token(kind)));
  out.insert(out.end(), payload.begin(), payload.end());
  out.push_back(layout.special_id(SpecialToken::Eoa));
  const std::vector<TokenId> cot = build_cot_document(doc, layout);
  out.insert(out.end(), cot.begin(), cot.end());
  return out;
}

IclDocument parse_icl_document(std::span<const TokenId> tokens,
                               const VocabLayout& layout) {
  AudioBlock block = read_audio_block(tokens, 0, layout);
  IclDocument out;
  out.reference_payload = std::move(block.payload);
  out.reference_kind = block.kind;
  out.doc = parse_cot_document(tokens.subspan(block.next), layout);
  return out;
}

IclReference slice_reference_window(std::span<const TrackFrame> track, Rng& rng,
                                    int min_s, int max_s) {
  const int min_frames = min_s * vocab::kFrameRateHz;
  const int max_frames = max_s * vocab::kFrameRateHz;
  const int total = static_cast<int>(track.size());
  if (total < min_frames) {
    fail(ErrorCode::insufficient_length,
         "track of " + std::to_string(total) + " frames is shorter than the " +
             std::to_string(min_frames) + "-frame minimum reference window");
  }
  const int len = static_cast<int>(
      rng.uniform_int(min_frames, std::min(max_frames, total)));
  const int start = static_cast<int>(rng.uniform_int(0, total - len));
  IclReference ref;
  ref.mode = IclReference::Mode::Dual;
  ref.dual_frames.assign(track.begin() + start, track.begin() + start + len);
  ref.window_frames = len;
  return ref;
}

Stage2Sequence build_stage2_sequence(
    std::span<const std::array<TokenId, vocab::kNumCodebooks>> frames,
    const VocabLayout& layout) {
  TokenizerKind kind = layout.kinds().front();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (int cb = 0; cb < vocab::kNumCodebooks; ++cb) {
      const TokenClass cls = layout.classify(frames[t][cb]);
      if (!cls.is_audio() || cls.codebook != cb) {
        fail(ErrorCode::token_class,
             "frame " + std::to_string(t) + " slot " + std::to_string(cb) +
                 " does not hold a codebook-" + std::to_string(cb) + " token");
      }
      if (t == 0 && cb == 0) kind = cls.kind;
      if (cls.kind != kind) {
        fail(ErrorCode::token_class, "stage-2 frames mix tokenizer kinds");
      }
    }
  }
  Stage2Sequence seq;
  seq.frames.assign(frames.begin(), frames.end());
  seq.serialized.reserve(frames.size() * 9 + 4);
  seq.serialized.push_back(layout.special_id(SpecialToken::Soa));
  seq.serialized.push_back(layout.special_id(SpecialToken::Stage2));
  seq.serialized.push_back(layout.special_id(vocab::tokenizer_kind_token(kind)));
  for (const auto& frame : frames) seq.serialized.push_back(frame[0]);
  for (const auto& frame : frames) {
    for (int cb = 0; cb < vocab::kNumCodebooks; ++cb) {
      seq.serialized.push_back(frame[cb]);
    }
  }
  seq.serialized.push_back(layout.special_id(SpecialToken::Eoa));
  return seq;
}

std::vector<std::array<TokenId, vocab::kNumCodebooks>> parse_stage2_sequence(
    std::span<const TokenId> tokens, const VocabLayout& layout) {
  if (tokens.size() < 4 || !layout.is_special(tokens[0], SpecialToken::Soa) ||
      !layout.is_special(tokens[1], SpecialToken::Stage2)) {
    fail(ErrorCode::grammar, "stage-2 sequence must open with <SOA> <stage_2>");
  }
  const TokenClass kind_cls = layout.classify(tokens[2]);
  if (!kind_cls.is_special()) {
    fail(ErrorCode::grammar, "missing tokenizer-type token after <stage_2>");
  }
  TokenizerKind kind;
  switch (kind_cls.special) {
    case SpecialToken::Encodec32k: kind = TokenizerKind::Encodec32k; break;
    case SpecialToken::Xcodec: kind = TokenizerKind::Xcodec; break;
    case SpecialToken::Semanticodec: kind = TokenizerKind::Semanticodec; break;
    case SpecialToken::Hificodec: kind = TokenizerKind::Hificodec; break;
    default:
      fail(ErrorCode::grammar, "expected tokenizer-type token after <stage_2>");
  }
  std::vector<TokenId> payload;
  std::size_t cursor = 3;
  while (true) {
    if (cursor >= tokens.size()) {
      fail(ErrorCode::unterminated_audio, "stage-2 sequence not closed by <EOA>");
    }
    const TokenId id = tokens[cursor];
    if (layout.is_special(id, SpecialToken::Eoa)) {
      ++cursor;
      break;
    }
    const TokenClass cls = layout.classify(id);
    if (!cls.is_audio() || cls.kind != kind) {
      fail(ErrorCode::unterminated_audio,
           "stage-2 sequence interrupted before <EOA>");
    }
    payload.push_back(id);
    ++cursor;
  }
  if (cursor != tokens.size()) {
    fail(ErrorCode::grammar, "trailing tokens after stage-2 <EOA>");
  }
  if (payload.size() % 9 != 0) {
    fail(ErrorCode::shape, "stage-2 audio token count must be 9*T");
  }
  const std::size_t total_frames = payload.size() / 9;
  std::vector<std::array<TokenId, vocab::kNumCodebooks>> frames(total_frames);
  for (std::size_t t = 0; t < total_frames; ++t) {
    const TokenClass cls = layout.classify(payload[t]);
    if (!cls.is_audio() || cls.codebook != 0) {
      fail(ErrorCode::token_class, "stage-2 prefix must hold codebook-0 tokens");
    }
  }
  for (std::size_t t = 0; t < total_frames; ++t) {
    for (int cb = 0; cb < vocab::kNumCodebooks; ++cb) {
      const TokenId id = payload[total_frames + t * vocab::kNumCodebooks + cb];
      const TokenClass cls = layout.classify(id);
      if (!cls.is_audio() || cls.codebook != cb || cls.kind != kind) {
        fail(ErrorCode::token_class,
             "stage-2 frame block slot " + std::to_string(cb) +
                 " holds a token of the wrong codebook");
      }
      frames[t][cb] = id;
    }
    if (frames[t][0] != payload[t]) {
      fail(ErrorCode::grammar, "stage-2 codebook-0 prefix disagrees with frame block");
    }
  }
  return frames;
}

void write_token_stream(const std::filesystem::path& path,
                        std::span<const TokenId> tokens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  out.write(kTokenStreamMagic.data(),
            static_cast<std::streamsize>(kTokenStreamMagic.size()));
  for (TokenId id : tokens) {
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(id & 0xff),
        static_cast<unsigned char>((id >> 8) & 0xff),
        static_cast<unsigned char>((id >> 16) & 0xff),
        static_cast<unsigned char>((id >> 24) & 0xff),
    };
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

std::vector<TokenId> read_token_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() != 8 || std::string_view(magic, 8) != kTokenStreamMagic) {
    fail(ErrorCode::data, path.string() + ": bad token stream magic");
  }
  std::vector<TokenId> tokens;
  unsigned char bytes[4];
  while (in.read(reinterpret_cast<char*>(bytes), 4)) {
    tokens.push_back(static_cast<TokenId>(bytes[0]) |
                     (static_cast<TokenId>(bytes[1]) << 8) |
                     (static_cast<TokenId>(bytes[2]) << 16) |
                     (static_cast<TokenId>(bytes[3]) << 24));
  }
  if (in.gcount() != 0) {
    fail(ErrorCode::data, path.string() + ": truncated token stream");
  }
  return tokens;
}

std::string document_to_json(const SongDocument& doc, const VocabLayout& layout) {
  const TokenizerKind kind = document_kind(doc, layout);
  nlohmann::ordered_json rec;
  rec["instruction"] = doc.instruction;
  rec["tag"] = doc.tag;
  rec["lyrics"] = doc.lyrics;
  rec["tokenizer"] = std::string(vocab::tokenizer_kind_name(kind));
  nlohmann::ordered_json segs = nlohmann::ordered_json::array();
  for (const Segment& seg : doc.segments) {
    nlohmann::ordered_json s;
    s["label"] = std::string(segment_label_text(seg.label));
    s["lyrics"] = seg.lyrics;
    std::vector<int> voc, acc;
    for (const TrackFrame& frame : seg.frames) {
      voc.push_back(layout.classify(frame.vocal).code);
      acc.push_back(layout.classify(frame.accomp).code);
    }
    s["vocal"] = voc;
    s["accomp"] = acc;
    segs.push_back(std::move(s));
  }
  rec["segments"] = std::move(segs);
  return rec.dump();
}

SongDocument document_from_json(std::string_view text, const VocabLayout& layout) {
  nlohmann::json rec = nlohmann::json::parse(text, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) {
    fail(ErrorCode::data, "document record: invalid JSON");
  }
  SongDocument doc;
  doc.instruction = rec.value("instruction", "");
  doc.tag = rec.value("tag", "");
  doc.lyrics = rec.value("lyrics", "");
  const auto kind =
      vocab::tokenizer_kind_from_name(rec.value("tokenizer", "xcodec"));
  if (!kind || !layout.has_kind(*kind)) {
    fail(ErrorCode::data, "document record: unknown tokenizer kind");
  }
  if (!rec.contains("segments") || !rec["segments"].is_array()) {
    fail(ErrorCode::data, "document record: missing segments");
  }
  for (const auto& s : rec["segments"]) {
    Segment seg;
    const auto label = segment_label_from_text(s.value("label", ""));
    if (!label) fail(ErrorCode::data, "document record: unknown segment label");
    seg.label = *label;
    seg.lyrics = s.value("lyrics", "");
    const auto& voc = s["vocal"];
    const auto& acc = s["accomp"];
    if (voc.size() != acc.size()) {
      fail(ErrorCode::shape, "document record: vocal/accomp length mismatch");
    }
    for (std::size_t t = 0; t < voc.size(); ++t) {
      seg.frames.push_back({layout.audio_token_id(*kind, 0, voc[t].get<int>()),
                            layout.audio_token_id(*kind, 0, acc[t].get<int>())});
    }
    doc.segments.push_back(std::move(seg));
  }
  return doc;
}

}  // namespace yuedesk::seqfmt
