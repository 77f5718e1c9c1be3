#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "yuedesk/decode.hpp"
#include "yuedesk/net.hpp"

namespace yuedesk::model {

enum class LrShape { Linear, Constant, Cosine };

const char* lr_shape_name(LrShape shape);
LrShape lr_shape_from_name(std::string_view name);

struct PhaseSpec {
  std::string name;
  std::uint64_t token_budget = 0;
  double lr_start = 0.0;
  double lr_end = 0.0;
  LrShape shape = LrShape::Linear;
  int context_len = 512;
};

struct PhaseSchedule {
  std::vector<PhaseSpec> phases;

  // Four phases scaled 1e-6 from the full-size budgets, ratios preserved:
  // warmup 280K (linear 0 -> 3e-4), constant 1M, context extension 750K,
  // anneal 40K (cosine down to 3e-5).
  static PhaseSchedule desk_default();

  std::uint64_t total_budget() const;
  // Consumed-token offset where the final (annealing) phase begins.
  std::uint64_t anneal_start() const;
};

double lr_at(const PhaseSchedule& schedule, std::uint64_t consumed_tokens);
int context_len_at(const PhaseSchedule& schedule, std::uint64_t consumed_tokens);

struct TrainHyper {
  double clip = 1.0;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double init_std = 0.02;
};

struct TrainBatch {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> target_mask;
};

struct TrainState {
  TrainState(const ModelConfig& cfg, const PhaseSchedule& schedule,
             std::uint64_t seed);

  Net<float> net;
  PhaseSchedule schedule;
  TrainHyper hyper;
  std::vector<float> adam_m, adam_v;
  std::vector<float> grads;  // scratch, reused across steps
  std::uint64_t step = 0;
  std::uint64_t consumed_tokens = 0;
  std::uint64_t seed = 0;
};

// One AdamW update under global-norm clipping; returns the batch loss.
double train_step(TrainState& state, const TrainBatch& batch);

// -- multitask mixing ---------------------------------------------------------

struct MixtureSpec {
  std::vector<std::pair<std::string, double>> weights;
};

// Conditional:Unconditional = 3:1 with Music:Speech = 10:1 solved over the
// three desk streams {cot, uncond, speech}.
MixtureSpec pre_anneal_mixture();
// CoT:ICL = 2:1 during the annealing phase.
MixtureSpec anneal_mixture();
// ICL activation is delayed: the pre-anneal spec simply has no icl entry.
MixtureSpec active_mixture(const PhaseSchedule& schedule, std::uint64_t consumed);

struct ExampleStream {
  std::string name;
  std::vector<TrainBatch> examples;
};

class MixedStream {
 public:
  MixedStream(MixtureSpec spec, std::vector<ExampleStream> streams,
              std::uint64_t seed);
  const TrainBatch& next();
  const std::map<std::string, std::uint64_t>& realized_counts() const {
    return counts_;
  }

 private:
  MixtureSpec spec_;
  std::vector<ExampleStream> streams_;
  std::vector<int> spec_to_stream_;
  std::vector<std::size_t> cursor_;
  std::map<std::string, std::uint64_t> counts_;
  Rng rng_;
  double total_weight_ = 0.0;
};

// -- checkpoints --------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "YUECKPT1";

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

// -- decode adapter -----------------------------------------------------------

// LogitSource over a Net<float> with an internal KV cache keyed on the
// longest shared context prefix. Contexts longer than the model's
// context_len are evaluated over a trailing window that advances in strides,
// so generation degrades gracefully instead of erroring. Stateful: not safe
// for concurrent use; give each decode stream its own instance.
class CachedNetSource final : public decode::LogitSource {
 public:
  explicit CachedNetSource(const Net<float>& net);
  ~CachedNetSource() override;
  decode::LogitVector next_logits(std::span<const TokenId> context) const override;

 private:
  const Net<float>* net_;
  mutable Net<float>::Incremental inc_;
  mutable std::size_t window_begin_ = 0;
};

}  // namespace yuedesk::model
