#include "yuedesk/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace yuedesk::decode {

using vocab::IdRange;
using vocab::SpecialToken;

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();
constexpr float kLogitCap = std::numeric_limits<float>::max() / 4;

void validate_sampler(const SamplerConfig& cfg) {
  if (cfg.top_k < 1) fail(ErrorCode::config, "top_k must be >= 1");
  if (!(cfg.top_p > 0.0) || cfg.top_p > 1.0) {
    fail(ErrorCode::config, "top_p must be in (0, 1]");
  }
  if (!(cfg.temperature > 0.0)) {
    fail(ErrorCode::config, "temperature must be positive");
  }
  if (cfg.repetition_penalty < 1.0) {
    fail(ErrorCode::config, "repetition_penalty must be >= 1");
  }
  if (cfg.max_new_tokens < 1) {
    fail(ErrorCode::config, "max_new_tokens must be >= 1");
  }
}

void normalize_ranges(std::vector<IdRange>& ranges) {
  std::sort(ranges.begin(), ranges.end(),
            [](const IdRange& a, const IdRange& b) { return a.begin < b.begin; });
  std::vector<IdRange> merged;
  for (const IdRange& r : ranges) {
    if (!merged.empty() && r.begin <= merged.back().end) {
      merged.back().end = std::max(merged.back().end, r.end);
    } else {
      merged.push_back(r);
    }
  }
  ranges = std::move(merged);
}

const LogitVector& require_vocab_sized(const LogitVector& logits,
                                       const VocabLayout& layout) {
  if (logits.size() != layout.total_size()) {
    fail(ErrorCode::shape, "logit source returned " + std::to_string(logits.size()) +
                               " scores for a vocabulary of " +
                               std::to_string(layout.total_size()));
  }
  return logits;
}

}  // namespace

IdMask grammar_mask(const GrammarState& state, const VocabLayout& layout) {
  IdMask mask;
  switch (state.phase) {
    case GrammarState::Phase::InText: {
      mask.ranges.push_back(layout.text_range());
      const TokenId soa = layout.special_id(SpecialToken::Soa);
      const TokenId eod = layout.special_id(SpecialToken::Eod);
      mask.ranges.push_back({soa, soa + 1});
      mask.ranges.push_back({eod, eod + 1});
      break;
    }
    case GrammarState::Phase::InAudioStage1: {
      mask.ranges.push_back(layout.audio_range(state.kind, 0));
      // <EOA> may only close the segment on a frame boundary; mid-frame it
      // would leave an odd dual-track payload behind.
      if (state.emitted_in_segment % 2 == 0) {
        const TokenId eoa = layout.special_id(SpecialToken::Eoa);
        mask.ranges.push_back({eoa, eoa + 1});
      }
      break;
    }
    case GrammarState::Phase::InAudioStage2:
      mask.ranges.push_back(layout.audio_range(state.kind, state.codebook));
      break;
  }
  normalize_ranges(mask.ranges);
  return mask;
}

void apply_mask(LogitVector& logits, const IdMask& mask) {
  TokenId cursor = 0;
  for (const IdRange& range : mask.ranges) {
    for (TokenId id = cursor; id < range.begin && id < logits.size(); ++id) {
      logits[id] = kNegInf;
    }
    for (TokenId id = range.begin; id < range.end && id < logits.size(); ++id) {
      const float v = logits[id];
      if (std::isnan(v)) {
        logits[id] = kNegInf;
      } else if (std::isinf(v) && v > 0) {
        logits[id] = kLogitCap;
      }
    }
    cursor = range.end;
  }
  for (TokenId id = cursor; id < logits.size(); ++id) logits[id] = kNegInf;
}

void apply_repetition_penalty(LogitVector& logits,
                              std::span<const TokenId> history, double penalty) {
  if (penalty < 1.0) fail(ErrorCode::config, "repetition_penalty must be >= 1");
  if (penalty == 1.0 || history.empty()) return;
  std::vector<std::uint8_t> seen(logits.size(), 0);
  for (TokenId id : history) {
    if (id >= logits.size() || seen[id]) continue;
    seen[id] = 1;
    const double v = logits[id];
    logits[id] = static_cast<float>(v > 0.0 ? v / penalty : v * penalty);
  }
}

LogitVector cfg_combine(const LogitVector& cond, const LogitVector& uncond,
                        double scale) {
  if (cond.size() != uncond.size()) {
    fail(ErrorCode::shape, "cfg_combine: logit vectors differ in length");
  }
  if (scale == 1.0) return cond;
  if (scale == 0.0) return uncond;
  LogitVector out(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    const double c = cond[i];
    const double u = uncond[i];
    out[i] = static_cast<float>(scale * (c - u) + u);
  }
  return out;
}

void filter_top_k_p(LogitVector& logits, int top_k, double top_p) {
  if (top_k < 1) fail(ErrorCode::config, "top_k must be >= 1");
  if (!(top_p > 0.0) || top_p > 1.0) fail(ErrorCode::config, "top_p must be in (0, 1]");
  std::vector<TokenId> alive;
  alive.reserve(logits.size());
  for (TokenId id = 0; id < logits.size(); ++id) {
    if (logits[id] > kNegInf) alive.push_back(id);
  }
  if (alive.empty()) fail(ErrorCode::empty_support, "all logits are masked");

  const std::size_t keep = std::min<std::size_t>(top_k, alive.size());
  const auto by_score = [&](TokenId a, TokenId b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;  // deterministic tie order
  };
  std::partial_sort(alive.begin(), alive.begin() + keep, alive.end(), by_score);
  alive.resize(keep);

  const double max_logit = logits[alive.front()];
  double total = 0.0;
  std::vector<double> exps(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    exps[i] = std::exp(static_cast<double>(logits[alive[i]]) - max_logit);
    total += exps[i];
  }
  std::size_t cut = keep;
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += exps[i];
    if (cum >= top_p * total) {
      cut = i + 1;  // the crossing token stays in
      break;
    }
  }
  std::vector<float> kept_values(cut);
  for (std::size_t i = 0; i < cut; ++i) kept_values[i] = logits[alive[i]];
  std::fill(logits.begin(), logits.end(), kNegInf);
  for (std::size_t i = 0; i < cut; ++i) logits[alive[i]] = kept_values[i];
}

TokenId sample(const LogitVector& logits, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) fail(ErrorCode::config, "temperature must be positive");
  std::vector<TokenId> alive;
  for (TokenId id = 0; id < logits.size(); ++id) {
    if (logits[id] > kNegInf) alive.push_back(id);
  }
  if (alive.empty()) fail(ErrorCode::empty_support, "sample: empty support");
  double max_scaled = -std::numeric_limits<double>::infinity();
  for (TokenId id : alive) {
    max_scaled = std::max(max_scaled, static_cast<double>(logits[id]) / temperature);
  }
  std::vector<double> probs(alive.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alive.size(); ++i) {
    probs[i] = std::exp(static_cast<double>(logits[alive[i]]) / temperature - max_scaled);
    total += probs[i];
  }
  const double u = rng.uniform() * total;
  double cdf = 0.0;
  for (std::size_t i = 0; i < alive.size(); ++i) {
    cdf += probs[i];
    if (u <= cdf) return alive[i];
  }
  return alive.back();
}

seqfmt::SongDocument unconditional_prompt(const seqfmt::SongDocument& prompt) {
  seqfmt::SongDocument empty = prompt;
  empty.instruction.clear();
  empty.tag.clear();
  empty.lyrics.clear();
  for (seqfmt::Segment& seg : empty.segments) seg.lyrics.clear();
  return empty;
}

GenerationResult generate_stage1(const LogitSource& cond, const LogitSource* uncond,
                                 const seqfmt::SongDocument& prompt,
                                 const SamplerConfig& cfg, const VocabLayout& layout) {
  validate_sampler(cfg);
  // An empty instruction is allowed here (it is how the unconditional branch
  // itself decodes); empty segment lists are not.
  if (prompt.segments.empty()) {
    fail(ErrorCode::grammar, "generation prompt needs at least one segment");
  }
  for (const seqfmt::Segment& seg : prompt.segments) {
    if (!seg.frames.empty()) {
      fail(ErrorCode::grammar, "generation prompt must not already contain audio");
    }
  }
  const TokenizerKind kind = layout.kinds().front();
  const TokenId soa = layout.special_id(SpecialToken::Soa);
  const TokenId eoa = layout.special_id(SpecialToken::Eoa);
  const TokenId eod = layout.special_id(SpecialToken::Eod);
  const TokenId kind_tok = layout.special_id(vocab::tokenizer_kind_token(kind));

  Rng rng(cfg.seed);
  std::vector<TokenId> out;
  std::vector<TokenId> uncond_ctx;
  const auto push_both = [&](TokenId id) {
    out.push_back(id);
    uncond_ctx.push_back(id);
  };
  const auto push_text = [&](const std::string& cond_text,
                             const std::string& uncond_text) {
    for (TokenId id : vocab::encode_text(layout, cond_text)) out.push_back(id);
    for (TokenId id : vocab::encode_text(layout, uncond_text)) {
      uncond_ctx.push_back(id);
    }
  };

  const seqfmt::SongDocument uncond_doc = unconditional_prompt(prompt);
  push_text(prompt.instruction + "\n" + prompt.tag + "\n" + prompt.lyrics,
            uncond_doc.instruction + "\n" + uncond_doc.tag + "\n" + uncond_doc.lyrics);

  GenerationReport report;
  report.seed = cfg.seed;
  report.config = cfg;
  report.segments = static_cast<int>(prompt.segments.size());

  for (std::size_t i = 0; i < prompt.segments.size(); ++i) {
    const seqfmt::Segment& seg = prompt.segments[i];
    const std::string label{seqfmt::segment_label_text(seg.label)};
    push_text(std::string(seqfmt::kStartOfSegment) + label + seg.lyrics,
              std::string(seqfmt::kStartOfSegment) + label +
                  uncond_doc.segments[i].lyrics);
    push_both(soa);
    push_both(kind_tok);

    const double scale = (i == 0) ? cfg.cfg_scale_first : cfg.cfg_scale_rest;
    GrammarState state;
    state.phase = GrammarState::Phase::InAudioStage1;
    state.segment_index = static_cast<int>(i);
    state.kind = kind;
    std::vector<TokenId> history;  // audio ids of this segment only
    int sampled = 0;
    bool truncated = false;

    while (true) {
      const IdMask mask = grammar_mask(state, layout);
      LogitVector scores = require_vocab_sized(cond.next_logits(out), layout);
      apply_repetition_penalty(scores, history, cfg.repetition_penalty);
      if (uncond != nullptr) {
        LogitVector lu = require_vocab_sized(uncond->next_logits(uncond_ctx), layout);
        apply_repetition_penalty(lu, history, cfg.repetition_penalty);
        scores = cfg_combine(scores, lu, scale);
      }
      apply_mask(scores, mask);
      filter_top_k_p(scores, cfg.top_k, cfg.top_p);
      const TokenId tok = sample(scores, cfg.temperature, rng);
      if (tok == eoa) {
        push_both(eoa);
        break;
      }
      push_both(tok);
      history.push_back(tok);
      ++state.emitted_in_segment;
      ++sampled;
      if (sampled >= cfg.max_new_tokens && state.emitted_in_segment % 2 == 0) {
        truncated = true;  // force-close so the stream still parses
        push_both(eoa);
        break;
      }
    }
    report.tokens_per_segment.push_back(sampled);
    report.truncation_flags.push_back(truncated);
    push_text(std::string(seqfmt::kEndOfSegment), std::string(seqfmt::kEndOfSegment));
  }
  push_both(eod);
  return {std::move(out), std::move(report)};
}

seqfmt::Stage2Sequence generate_stage2(const LogitSource& source,
                                       std::span<const TokenId> codebook0,
                                       const SamplerConfig& cfg,
                                       const VocabLayout& layout) {
  validate_sampler(cfg);
  if (codebook0.empty()) {
    fail(ErrorCode::data, "generate_stage2: empty codebook-0 input");
  }
  TokenizerKind kind = TokenizerKind::Xcodec;
  for (std::size_t t = 0; t < codebook0.size(); ++t) {
    const vocab::TokenClass cls = layout.classify(codebook0[t]);
    if (!cls.is_audio() || cls.codebook != 0) {
      fail(ErrorCode::token_class, "stage-2 input must be codebook-0 tokens");
    }
    if (t == 0) {
      kind = cls.kind;
    } else if (cls.kind != kind) {
      fail(ErrorCode::token_class, "stage-2 input mixes tokenizer kinds");
    }
  }

  Rng rng(cfg.seed);
  std::vector<TokenId> ctx;
  ctx.reserve(codebook0.size() * 9 + 4);
  ctx.push_back(layout.special_id(SpecialToken::Soa));
  ctx.push_back(layout.special_id(SpecialToken::Stage2));
  ctx.push_back(layout.special_id(vocab::tokenizer_kind_token(kind)));
  ctx.insert(ctx.end(), codebook0.begin(), codebook0.end());

  seqfmt::Stage2Sequence seq;
  seq.frames.resize(codebook0.size());
  GrammarState state;
  state.phase = GrammarState::Phase::InAudioStage2;
  state.kind = kind;
  for (std::size_t t = 0; t < codebook0.size(); ++t) {
    // Slot 0 is clamped to the stage-1 token; the model never overrides it.
    seq.frames[t][0] = codebook0[t];
    ctx.push_back(codebook0[t]);
    for (int cb = 1; cb < vocab::kNumCodebooks; ++cb) {
      state.codebook = cb;
      LogitVector scores = require_vocab_sized(source.next_logits(ctx), layout);
      apply_mask(scores, grammar_mask(state, layout));
      filter_top_k_p(scores, cfg.top_k, cfg.top_p);
      const TokenId tok = sample(scores, cfg.temperature, rng);
      seq.frames[t][cb] = tok;
      ctx.push_back(tok);
    }
  }
  ctx.push_back(layout.special_id(SpecialToken::Eoa));
  seq.serialized = std::move(ctx);
  return seq;
}

std::string report_to_json(const GenerationReport& report) {
  nlohmann::ordered_json doc;
  doc["segments"] = report.segments;
  doc["tokens_per_segment"] = report.tokens_per_segment;
  doc["truncation_flags"] = report.truncation_flags;
  doc["seed"] = report.seed;
  nlohmann::ordered_json cfg;
  cfg["top_k"] = report.config.top_k;
  cfg["top_p"] = report.config.top_p;
  cfg["temperature"] = report.config.temperature;
  cfg["repetition_penalty"] = report.config.repetition_penalty;
  cfg["max_new_tokens"] = report.config.max_new_tokens;
  cfg["cfg_scale_first"] = report.config.cfg_scale_first;
  cfg["cfg_scale_rest"] = report.config.cfg_scale_rest;
  doc["config"] = std::move(cfg);
  return doc.dump(2);
}

}  // namespace yuedesk::decode
