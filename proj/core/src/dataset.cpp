#include "yuedesk/dataset.hpp"

#include <algorithm>
#include <numeric>

namespace yuedesk::dataset {

using seqfmt::Segment;
using seqfmt::SongDocument;
using seqfmt::TrackFrame;
using vocab::SpecialToken;
using vocab::TokenizerKind;

namespace {

TokenizerKind layout_kind(const VocabLayout& layout) { return layout.kinds().front(); }

void check_song(const SyntheticSong& song) {
  const std::size_t frames = song.vocal.size();
  if (song.accomp.size() != frames || song.mixture.size() != frames ||
      song.lyrics.size() != frames) {
    fail(ErrorCode::corpus, "song tracks have mismatched lengths");
  }
  const int total = std::accumulate(song.segment_frames.begin(),
                                    song.segment_frames.end(), 0);
  if (static_cast<std::size_t>(total) != frames ||
      song.segment_labels.size() != song.segment_frames.size() ||
      song.segment_frames.empty()) {
    fail(ErrorCode::corpus, "song segmentation is inconsistent");
  }
}

std::string segment_lyrics(const SyntheticSong& song, int begin, int count) {
  std::string text;
  for (int t = begin; t < begin + count; ++t) {
    if (!text.empty()) text += ' ';
    text += synth::lyric_word(song.lyrics[t]);
  }
  return text;
}

// Header-only document (no frames); shared by the dual and mixture views.
SongDocument song_skeleton(const SyntheticSong& song) {
  SongDocument doc;
  doc.instruction = std::string(seqfmt::kLyricsToSongInstruction);
  doc.tag = song.tag;
  int begin = 0;
  std::string all_lyrics;
  for (std::size_t i = 0; i < song.segment_frames.size(); ++i) {
    Segment seg;
    seg.label = song.segment_labels[i];
    seg.lyrics = segment_lyrics(song, begin, song.segment_frames[i]);
    if (!all_lyrics.empty()) all_lyrics += '\n';
    all_lyrics += seg.lyrics;
    doc.segments.push_back(std::move(seg));
    begin += song.segment_frames[i];
  }
  doc.lyrics = all_lyrics;
  return doc;
}

}  // namespace

SongDocument song_to_document(const SyntheticSong& song, const VocabLayout& layout) {
  check_song(song);
  SongDocument doc = song_skeleton(song);
  const TokenizerKind kind = layout_kind(layout);
  int begin = 0;
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    const int count = song.segment_frames[i];
    Segment& seg = doc.segments[i];
    seg.frames.reserve(count);
    for (int t = begin; t < begin + count; ++t) {
      seg.frames.push_back({layout.audio_token_id(kind, 0, song.vocal[t]),
                            layout.audio_token_id(kind, 0, song.accomp[t])});
    }
    begin += count;
  }
  return doc;
}

std::vector<TokenId> dual_view_tokens(const SyntheticSong& song,
                                      const VocabLayout& layout) {
  return seqfmt::build_cot_document(song_to_document(song, layout), layout);
}

std::vector<TokenId> mix_view_tokens(const SyntheticSong& song,
                                     const VocabLayout& layout) {
  check_song(song);
  const SongDocument doc = song_skeleton(song);
  const TokenizerKind kind = layout_kind(layout);
  std::vector<std::vector<TokenId>> payloads(doc.segments.size());
  int begin = 0;
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    const int count = song.segment_frames[i];
    payloads[i].reserve(count);
    for (int t = begin; t < begin + count; ++t) {
      payloads[i].push_back(layout.audio_token_id(kind, 0, song.mixture[t]));
    }
    begin += count;
  }
  return seqfmt::build_cot_tokens(doc, payloads, kind, layout);
}

std::vector<TokenId> uncond_view_tokens(const SyntheticSong& song,
                                        const VocabLayout& layout) {
  check_song(song);
  const TokenizerKind kind = layout_kind(layout);
  std::vector<TokenId> out = vocab::encode_text(
      layout, std::string(seqfmt::kTagToMusicInstruction) + "\n" + song.tag + "\n");
  out.push_back(layout.special_id(SpecialToken::Soa));
  out.push_back(layout.special_id(vocab::tokenizer_kind_token(kind)));
  for (int code : song.mixture) out.push_back(layout.audio_token_id(kind, 0, code));
  out.push_back(layout.special_id(SpecialToken::Eoa));
  out.push_back(layout.special_id(SpecialToken::Eod));
  return out;
}

std::vector<TokenId> speech_view_tokens(const SyntheticSong& song,
                                        const VocabLayout& layout) {
  check_song(song);
  const TokenizerKind kind = layout_kind(layout);
  std::string transcript;
  for (std::size_t t = 0; t < song.lyrics.size(); ++t) {
    if (!transcript.empty()) transcript += ' ';
    transcript += synth::lyric_word(song.lyrics[t]);
  }
  std::vector<TokenId> out = vocab::encode_text(
      layout, std::string(seqfmt::kSpeechInstruction) + "\n" + transcript + "\n");
  out.push_back(layout.special_id(SpecialToken::Soa));
  out.push_back(layout.special_id(vocab::tokenizer_kind_token(kind)));
  for (int code : song.vocal) out.push_back(layout.audio_token_id(kind, 0, code));
  out.push_back(layout.special_id(SpecialToken::Eoa));
  out.push_back(layout.special_id(SpecialToken::Eod));
  return out;
}

std::vector<TokenId> icl_view_tokens(const SyntheticSong& song,
                                     const VocabLayout& layout, Rng& rng) {
  const SongDocument doc = song_to_document(song, layout);
  std::vector<TrackFrame> track;
  track.reserve(song.vocal.size());
  for (const Segment& seg : doc.segments) {
    track.insert(track.end(), seg.frames.begin(), seg.frames.end());
  }
  const seqfmt::IclReference ref = seqfmt::slice_reference_window(track, rng);
  return seqfmt::build_icl_document(ref, doc, layout);
}

std::vector<std::uint8_t> target_mask(std::span<const TokenId> tokens,
                                      const VocabLayout& layout) {
  std::vector<std::uint8_t> mask(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    mask[i] = layout.classify(tokens[i]).is_text() ? 0 : 1;
  }
  return mask;
}

std::vector<TrainBatch> chunk_batches(std::span<const TokenId> tokens,
                                      const VocabLayout& layout, int chunk_len) {
  if (chunk_len < 2) fail(ErrorCode::config, "chunk_len must be >= 2");
  const std::vector<std::uint8_t> mask = target_mask(tokens, layout);
  std::vector<TrainBatch> batches;
  for (std::size_t begin = 0; begin < tokens.size();
       begin += static_cast<std::size_t>(chunk_len)) {
    const std::size_t end =
        std::min(tokens.size(), begin + static_cast<std::size_t>(chunk_len));
    if (end - begin < 2) break;
    TrainBatch batch;
    batch.tokens.assign(tokens.begin() + begin, tokens.begin() + end);
    batch.target_mask.assign(mask.begin() + begin, mask.begin() + end);
    bool any = false;
    for (std::uint8_t m : batch.target_mask) any = any || (m != 0);
    if (any) batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

struct ViewData {
  std::vector<TrainBatch> train;
  std::vector<TrainBatch> heldout;
};

ViewData build_view(std::span<const SyntheticSong> corpus, const VocabLayout& layout,
                    const AblationConfig& cfg, bool dual) {
  const std::size_t heldout_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.heldout_fraction *
                                  static_cast<double>(corpus.size())));
  if (heldout_count >= corpus.size()) {
    fail(ErrorCode::corpus, "corpus too small for a held-out split");
  }
  ViewData data;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::vector<TokenId> tokens = dual ? dual_view_tokens(corpus[i], layout)
                                             : mix_view_tokens(corpus[i], layout);
    auto chunks = chunk_batches(tokens, layout, cfg.chunk_len);
    auto& sink = (i >= corpus.size() - heldout_count) ? data.heldout : data.train;
    for (auto& chunk : chunks) sink.push_back(std::move(chunk));
  }
  if (data.train.empty() || data.heldout.empty()) {
    fail(ErrorCode::corpus, "ablation corpus produced no usable batches");
  }
  return data;
}

double heldout_loss(const model::Net<float>& net,
                    std::span<const TrainBatch> batches) {
  double weighted = 0.0;
  double weight = 0.0;
  for (const TrainBatch& batch : batches) {
    std::size_t masked = 0;
    for (std::uint8_t m : batch.target_mask) masked += m ? 1 : 0;
    weighted += net.loss(batch.tokens, batch.target_mask) *
                static_cast<double>(masked);
    weight += static_cast<double>(masked);
  }
  return weighted / weight;
}

LossCurve train_one_view(const ViewData& data, const VocabLayout& layout,
                         const AblationConfig& cfg) {
  model::ModelConfig net_cfg = cfg.net;
  net_cfg.vocab_size = static_cast<int>(layout.total_size());

  model::PhaseSchedule schedule;
  const std::uint64_t warmup = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(cfg.warmup_fraction *
                                    static_cast<double>(cfg.token_budget)));
  schedule.phases = {
      {"warmup", warmup, 0.0, cfg.lr_peak, model::LrShape::Linear, cfg.chunk_len},
      {"train", std::max<std::uint64_t>(1, cfg.token_budget - warmup), cfg.lr_peak,
       cfg.lr_peak, model::LrShape::Constant, cfg.chunk_len},
  };
  model::TrainState state(net_cfg, schedule, cfg.seed);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::mix(cfg.seed, 0x0badcafe));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);
  }

  // Milestones are nominal so the two views share the same x-axis even
  // though their batch sizes differ.
  std::vector<std::uint64_t> milestones;
  for (std::uint64_t m = cfg.eval_every; m < cfg.token_budget; m += cfg.eval_every) {
    milestones.push_back(m);
  }
  milestones.push_back(cfg.token_budget);

  LossCurve curve;
  double window_loss = 0.0;
  std::uint64_t window_steps = 0;
  std::size_t next = 0;
  std::size_t cursor = 0;
  const auto record = [&](std::uint64_t milestone) {
    curve.train_points.emplace_back(
        milestone, window_steps > 0 ? window_loss / window_steps : 0.0);
    curve.heldout_points.emplace_back(milestone,
                                      heldout_loss(state.net, data.heldout));
    window_loss = 0.0;
    window_steps = 0;
  };
  while (state.consumed_tokens < cfg.token_budget) {
    const TrainBatch& batch = data.train[order[cursor]];
    cursor = (cursor + 1) % order.size();
    window_loss += model::train_step(state, batch);
    window_steps += 1;
    while (next < milestones.size() && state.consumed_tokens >= milestones[next]) {
      record(milestones[next]);
      ++next;
    }
  }
  while (next < milestones.size()) {
    record(milestones[next]);
    ++next;
  }
  curve.final_heldout = curve.heldout_points.back().second;
  return curve;
}

}  // namespace

AblationResult train_ablation_pair(std::span<const SyntheticSong> corpus,
                                   const VocabLayout& layout,
                                   const AblationConfig& cfg) {
  if (corpus.size() < 2) fail(ErrorCode::corpus, "ablation needs at least 2 songs");
  for (const SyntheticSong& song : corpus) check_song(song);
  const ViewData ntp = build_view(corpus, layout, cfg, /*dual=*/false);
  const ViewData dual = build_view(corpus, layout, cfg, /*dual=*/true);
  AblationResult result;
  result.ntp = train_one_view(ntp, layout, cfg);
  result.dual = train_one_view(dual, layout, cfg);
  return result;
}

}  // namespace yuedesk::dataset
