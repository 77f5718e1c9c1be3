#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "yuedesk/rng.hpp"
#include "yuedesk/seqfmt.hpp"
#include "yuedesk/vocab.hpp"

namespace yuedesk::decode {

using vocab::TokenId;
using vocab::TokenizerKind;
using vocab::VocabLayout;

// Raw next-token scores in log-probability-proportional units; finite except
// -inf for masked ids.
using LogitVector = std::vector<float>;

// Abstracts the stage-1/stage-2 LMs. next_logits must be deterministic given
// the context. Implementations must either be safe for concurrent read-only
// use or document that they are not (CachedNetSource keeps mutable state and
// is single-stream).
struct LogitSource {
  virtual ~LogitSource() = default;
  virtual LogitVector next_logits(std::span<const TokenId> context) const = 0;
};

struct SamplerConfig {
  int top_k = 50;
  double top_p = 0.93;
  double temperature = 1.0;
  double repetition_penalty = 1.1;
  int max_new_tokens = 3000;
  double cfg_scale_first = 1.5;
  double cfg_scale_rest = 1.2;
  std::uint64_t seed = 0;
};

struct GrammarState {
  enum class Phase { InText, InAudioStage1, InAudioStage2 };
  Phase phase = Phase::InText;
  int codebook = 0;  // active residual slot while in InAudioStage2
  int segment_index = 0;
  int emitted_in_segment = 0;  // audio tokens emitted in the current segment
  TokenizerKind kind = TokenizerKind::Xcodec;
};

// Allowed-id set as sorted disjoint ranges; codebook masks stay O(1) wide.
struct IdMask {
  std::vector<vocab::IdRange> ranges;
  bool contains(TokenId id) const {
    for (const auto& r : ranges) {
      if (r.contains(id)) return true;
    }
    return false;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& r : ranges) n += r.size();
    return n;
  }
};

IdMask grammar_mask(const GrammarState& state, const VocabLayout& layout);

// Sets logits outside the mask to -inf. Non-finite scores inside the mask are
// clamped so an adversarial source cannot poison the softmax.
void apply_mask(LogitVector& logits, const IdMask& mask);

// Ids seen in history: positive logits divided by penalty, non-positive
// multiplied. penalty = 1 is the identity.
void apply_repetition_penalty(LogitVector& logits,
                              std::span<const TokenId> history, double penalty);

// l_cfg = s*(l_c - l_u) + l_u, with s=1 / s=0 returning the inputs bit-exactly.
LogitVector cfg_combine(const LogitVector& cond, const LogitVector& uncond,
                        double scale);

// Keeps the top_k highest logits, then the minimal softmax prefix reaching
// top_p (crossing token included); everything else is set to -inf.
void filter_top_k_p(LogitVector& logits, int top_k, double top_p);

TokenId sample(const LogitVector& logits, double temperature, Rng& rng);

struct GenerationReport {
  int segments = 0;
  std::vector<int> tokens_per_segment;  // sampled audio tokens, <EOA> excluded
  std::vector<bool> truncation_flags;   // per segment: hit max_new_tokens
  std::uint64_t seed = 0;
  SamplerConfig config;
};

struct GenerationResult {
  std::vector<TokenId> tokens;
  GenerationReport report;
};

// The CFG unconditional branch: instruction, tag, and lyrics replaced by
// empty text with the structural framing kept.
seqfmt::SongDocument unconditional_prompt(const seqfmt::SongDocument& prompt);

// Forced decoding over a text-only document prefix: segment text is forced,
// audio is sampled under the stage-1 grammar, and <EOA> hands control to the
// next segment. Passing uncond == nullptr decodes unguided (no CFG branch);
// the guided unconditional context is the one unconditional_prompt builds.
GenerationResult generate_stage1(const LogitSource& cond, const LogitSource* uncond,
                                 const seqfmt::SongDocument& prompt,
                                 const SamplerConfig& cfg, const VocabLayout& layout);

// Residual decoding with the codebook-0 column clamped to the stage-1 output.
seqfmt::Stage2Sequence generate_stage2(const LogitSource& source,
                                       std::span<const TokenId> codebook0,
                                       const SamplerConfig& cfg,
                                       const VocabLayout& layout);

std::string report_to_json(const GenerationReport& report);

}  // namespace yuedesk::decode
