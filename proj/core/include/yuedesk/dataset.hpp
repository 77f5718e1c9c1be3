#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "yuedesk/model.hpp"
#include "yuedesk/synth.hpp"

namespace yuedesk::dataset {

using model::TrainBatch;
using synth::SyntheticSong;
using vocab::TokenId;
using vocab::VocabLayout;

// Structured document built from a synthetic song (dual-track view).
seqfmt::SongDocument song_to_document(const SyntheticSong& song,
                                      const VocabLayout& layout);

// Token views of one song. dual = the lyrics-to-song CoT document over
// (vocal, accompaniment) pairs; mix = the same document over the single
// mixture track; uncond = tag-conditioned mixture with no lyrics; speech =
// transcript plus the vocal track alone.
std::vector<TokenId> dual_view_tokens(const SyntheticSong& song,
                                      const VocabLayout& layout);
std::vector<TokenId> mix_view_tokens(const SyntheticSong& song,
                                     const VocabLayout& layout);
std::vector<TokenId> uncond_view_tokens(const SyntheticSong& song,
                                        const VocabLayout& layout);
std::vector<TokenId> speech_view_tokens(const SyntheticSong& song,
                                        const VocabLayout& layout);
std::vector<TokenId> icl_view_tokens(const SyntheticSong& song,
                                     const VocabLayout& layout, Rng& rng);

// Loss mask: train on audio tokens and structural specials, not prompt text.
std::vector<std::uint8_t> target_mask(std::span<const TokenId> tokens,
                                      const VocabLayout& layout);

// Consecutive chunks of at most chunk_len tokens; chunks without any masked
// target are dropped.
std::vector<TrainBatch> chunk_batches(std::span<const TokenId> tokens,
                                      const VocabLayout& layout, int chunk_len);

// -- NTP vs dual-NTP ablation --------------------------------------------------

struct AblationConfig {
  model::ModelConfig net;  // vocab_size is overwritten from the layout
  std::uint64_t token_budget = 120'000;  // per view
  int chunk_len = 256;
  double heldout_fraction = 0.1;
  std::uint64_t eval_every = 20'000;
  std::uint64_t seed = 0;
  double lr_peak = 1e-3;
  double warmup_fraction = 0.1;
};

struct LossCurve {
  // (consumed_tokens, mean train loss since the previous point)
  std::vector<std::pair<std::uint64_t, double>> train_points;
  // (consumed_tokens, held-out loss) at the same milestones
  std::vector<std::pair<std::uint64_t, double>> heldout_points;
  double final_heldout = 0.0;
};

struct AblationResult {
  LossCurve ntp;
  LossCurve dual;
};

// Trains one model per view of the same songs under an identical seed,
// schedule, and token budget.
AblationResult train_ablation_pair(std::span<const SyntheticSong> corpus,
                                   const VocabLayout& layout,
                                   const AblationConfig& cfg);

}  // namespace yuedesk::dataset
