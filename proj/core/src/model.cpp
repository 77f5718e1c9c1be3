#include "yuedesk/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace yuedesk::model {

const char* lr_shape_name(LrShape shape) {
  switch (shape) {
    case LrShape::Linear: return "linear";
    case LrShape::Constant: return "constant";
    case LrShape::Cosine: return "cosine";
  }
  return "linear";
}

LrShape lr_shape_from_name(std::string_view name) {
  if (name == "linear") return LrShape::Linear;
  if (name == "constant") return LrShape::Constant;
  if (name == "cosine") return LrShape::Cosine;
  fail(ErrorCode::config, "unknown lr shape: " + std::string(name));
}

PhaseSchedule PhaseSchedule::desk_default() {
  PhaseSchedule s;
  s.phases = {
      {"warmup", 280'000, 0.0, 3e-4, LrShape::Linear, 256},
      {"constant", 1'000'000, 3e-4, 3e-4, LrShape::Constant, 256},
      {"extension", 750'000, 3e-4, 3e-4, LrShape::Constant, 512},
      {"anneal", 40'000, 3e-4, 3e-5, LrShape::Cosine, 512},
  };
  return s;
}

std::uint64_t PhaseSchedule::total_budget() const {
  std::uint64_t total = 0;
  for (const PhaseSpec& p : phases) total += p.token_budget;
  return total;
}

std::uint64_t PhaseSchedule::anneal_start() const {
  if (phases.empty()) fail(ErrorCode::config, "empty phase schedule");
  return total_budget() - phases.back().token_budget;
}

namespace {

double phase_lr(const PhaseSpec& phase, double u) {
  if (u <= 0.0) return phase.lr_start;
  if (u >= 1.0) return phase.lr_end;
  switch (phase.shape) {
    case LrShape::Linear:
      return phase.lr_start + (phase.lr_end - phase.lr_start) * u;
    case LrShape::Constant:
      return phase.lr_start;
    case LrShape::Cosine:
      return phase.lr_end +
             (phase.lr_start - phase.lr_end) * 0.5 * (1.0 + std::cos(M_PI * u));
  }
  return phase.lr_end;
}

const PhaseSpec& phase_for(const PhaseSchedule& schedule, std::uint64_t consumed,
                           std::uint64_t* local) {
  if (schedule.phases.empty()) fail(ErrorCode::config, "empty phase schedule");
  std::uint64_t start = 0;
  for (const PhaseSpec& phase : schedule.phases) {
    if (phase.token_budget == 0) fail(ErrorCode::config, "phase budget must be positive");
    if (consumed < start + phase.token_budget) {
      *local = consumed - start;
      return phase;
    }
    start += phase.token_budget;
  }
  *local = schedule.phases.back().token_budget;  // clamp past the end
  return schedule.phases.back();
}

}  // namespace

double lr_at(const PhaseSchedule& schedule, std::uint64_t consumed_tokens) {
  std::uint64_t local = 0;
  const PhaseSpec& phase = phase_for(schedule, consumed_tokens, &local);
  const double u =
      static_cast<double>(local) / static_cast<double>(phase.token_budget);
  return phase_lr(phase, u);
}

int context_len_at(const PhaseSchedule& schedule, std::uint64_t consumed_tokens) {
  std::uint64_t local = 0;
  return phase_for(schedule, consumed_tokens, &local).context_len;
}

TrainState::TrainState(const ModelConfig& cfg, const PhaseSchedule& schedule_in,
                       std::uint64_t seed_in)
    : net(cfg), schedule(schedule_in), seed(seed_in) {
  Rng rng(seed_in);
  net.init_params(rng, hyper.init_std);
  adam_m.assign(net.params().size(), 0.0f);
  adam_v.assign(net.params().size(), 0.0f);
}

double train_step(TrainState& state, const TrainBatch& batch) {
  const double loss =
      state.net.loss_and_grad(batch.tokens, batch.target_mask, state.grads);

  double sq = 0.0;
  for (float g : state.grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm) || !std::isfinite(loss)) {
    fail(ErrorCode::divergence, "non-finite gradient at step " +
                                    std::to_string(state.step));
  }
  const double clip_scale =
      norm > state.hyper.clip ? state.hyper.clip / norm : 1.0;

  const double lr = lr_at(state.schedule, state.consumed_tokens);
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(state.hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.hyper.beta2, static_cast<double>(t));
  const float b1 = static_cast<float>(state.hyper.beta1);
  const float b2 = static_cast<float>(state.hyper.beta2);

  float* __restrict__ params = state.net.params().data();
  float* __restrict__ m = state.adam_m.data();
  float* __restrict__ v = state.adam_v.data();
  const float* __restrict__ grads = state.grads.data();
  for (const TensorInfo& tensor : state.net.layout().tensors()) {
    const double decay = tensor.decay ? state.hyper.weight_decay : 0.0;
    for (std::size_t i = tensor.offset; i < tensor.offset + tensor.size; ++i) {
      const double g = static_cast<double>(grads[i]) * clip_scale;
      m[i] = b1 * m[i] + static_cast<float>((1.0 - state.hyper.beta1) * g);
      v[i] = b2 * v[i] + static_cast<float>((1.0 - state.hyper.beta2) * g * g);
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      const double update =
          mhat / (std::sqrt(vhat) + state.hyper.eps) + decay * params[i];
      params[i] = static_cast<float>(params[i] - lr * update);
    }
  }
  state.step += 1;
  state.consumed_tokens += batch.tokens.size();
  return loss;
}

MixtureSpec pre_anneal_mixture() {
  return {{{"cot", 29.0 / 44.0}, {"uncond", 11.0 / 44.0}, {"speech", 4.0 / 44.0}}};
}

MixtureSpec anneal_mixture() {
  return {{{"cot", 2.0 / 3.0}, {"icl", 1.0 / 3.0}}};
}

MixtureSpec active_mixture(const PhaseSchedule& schedule, std::uint64_t consumed) {
  return consumed >= schedule.anneal_start() ? anneal_mixture()
                                             : pre_anneal_mixture();
}

MixedStream::MixedStream(MixtureSpec spec, std::vector<ExampleStream> streams,
                         std::uint64_t seed)
    : spec_(std::move(spec)), streams_(std::move(streams)), rng_(seed) {
  if (spec_.weights.empty()) fail(ErrorCode::config, "empty mixture spec");
  for (const auto& [name, weight] : spec_.weights) {
    if (!(weight > 0.0)) {
      fail(ErrorCode::config, "mixture weight for " + name + " must be positive");
    }
    int found = -1;
    for (std::size_t i = 0; i < streams_.size(); ++i) {
      if (streams_[i].name == name) {
        found = static_cast<int>(i);
        break;
      }
    }
    if (found < 0) fail(ErrorCode::config, "mixture names unknown stream " + name);
    spec_to_stream_.push_back(found);
    total_weight_ += weight;
  }
  cursor_.assign(streams_.size(), 0);
}

const TrainBatch& MixedStream::next() {
  const double u = rng_.uniform() * total_weight_;
  double cum = 0.0;
  std::size_t pick = spec_.weights.size() - 1;
  for (std::size_t i = 0; i < spec_.weights.size(); ++i) {
    cum += spec_.weights[i].second;
    if (u < cum) {
      pick = i;
      break;
    }
  }
  ExampleStream& stream = streams_[spec_to_stream_[pick]];
  if (stream.examples.empty()) {
    fail(ErrorCode::exhausted_stream, "stream " + stream.name + " has no examples");
  }
  counts_[stream.name] += 1;
  std::size_t& cur = cursor_[spec_to_stream_[pick]];
  const TrainBatch& batch = stream.examples[cur];
  cur = (cur + 1) % stream.examples.size();
  return batch;
}

namespace {

void write_u64_le(std::ofstream& out, std::uint64_t value) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(std::ifstream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return value;
}

void write_f32_array(std::ofstream& out, const std::vector<float>& data) {
  for (float f : data) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    unsigned char bytes[4] = {
        static_cast<unsigned char>(bits & 0xff),
        static_cast<unsigned char>((bits >> 8) & 0xff),
        static_cast<unsigned char>((bits >> 16) & 0xff),
        static_cast<unsigned char>((bits >> 24) & 0xff),
    };
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

void read_f32_array(std::ifstream& in, std::vector<float>& data) {
  for (float& f : data) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                               (static_cast<std::uint32_t>(bytes[1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[3]) << 24);
    f = std::bit_cast<float>(bits);
  }
}

nlohmann::ordered_json schedule_to_json(const PhaseSchedule& schedule) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const PhaseSpec& p : schedule.phases) {
    arr.push_back({{"name", p.name},
                   {"token_budget", p.token_budget},
                   {"lr_start", p.lr_start},
                   {"lr_end", p.lr_end},
                   {"shape", lr_shape_name(p.shape)},
                   {"context_len", p.context_len}});
  }
  return arr;
}

PhaseSchedule schedule_from_json(const nlohmann::json& arr) {
  PhaseSchedule schedule;
  for (const auto& p : arr) {
    schedule.phases.push_back({p.at("name").get<std::string>(),
                               p.at("token_budget").get<std::uint64_t>(),
                               p.at("lr_start").get<double>(),
                               p.at("lr_end").get<double>(),
                               lr_shape_from_name(p.at("shape").get<std::string>()),
                               p.at("context_len").get<int>()});
  }
  return schedule;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");

  const ModelConfig& cfg = state.net.config();
  nlohmann::ordered_json header;
  header["format"] = "yuedesk-checkpoint-v1";
  header["model"] = {{"vocab_size", cfg.vocab_size},   {"embed_dim", cfg.embed_dim},
                     {"layers", cfg.layers},           {"heads", cfg.heads},
                     {"context_len", cfg.context_len}, {"rope_base", cfg.rope_base}};
  header["step"] = state.step;
  header["consumed_tokens"] = state.consumed_tokens;
  header["seed"] = state.seed;
  header["hyper"] = {{"clip", state.hyper.clip},
                     {"weight_decay", state.hyper.weight_decay},
                     {"beta1", state.hyper.beta1},
                     {"beta2", state.hyper.beta2},
                     {"eps", state.hyper.eps},
                     {"init_std", state.hyper.init_std}};
  header["schedule"] = schedule_to_json(state.schedule);
  header["arrays"] = {"params", "adam_m", "adam_v"};
  const std::string json = header.dump();

  out.write(kCheckpointMagic.data(),
            static_cast<std::streamsize>(kCheckpointMagic.size()));
  write_u64_le(out, json.size());
  out.write(json.data(), static_cast<std::streamsize>(json.size()));
  write_f32_array(out, state.net.params());
  write_f32_array(out, state.adam_m);
  write_f32_array(out, state.adam_v);
  if (!out) fail(ErrorCode::io, "failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::string_view(magic, 8) != kCheckpointMagic) {
    fail(ErrorCode::data, path.string() + ": bad checkpoint magic");
  }
  const std::uint64_t json_len = read_u64_le(in);
  std::string json(json_len, '\0');
  in.read(json.data(), static_cast<std::streamsize>(json_len));
  nlohmann::json header = nlohmann::json::parse(json, nullptr, false);
  if (header.is_discarded()) fail(ErrorCode::data, "checkpoint header is not JSON");

  ModelConfig cfg;
  const auto& m = header.at("model");
  cfg.vocab_size = m.at("vocab_size").get<int>();
  cfg.embed_dim = m.at("embed_dim").get<int>();
  cfg.layers = m.at("layers").get<int>();
  cfg.heads = m.at("heads").get<int>();
  cfg.context_len = m.at("context_len").get<int>();
  cfg.rope_base = m.at("rope_base").get<double>();

  TrainState state(cfg, schedule_from_json(header.at("schedule")),
                   header.at("seed").get<std::uint64_t>());
  state.step = header.at("step").get<std::uint64_t>();
  state.consumed_tokens = header.at("consumed_tokens").get<std::uint64_t>();
  const auto& h = header.at("hyper");
  state.hyper.clip = h.at("clip").get<double>();
  state.hyper.weight_decay = h.at("weight_decay").get<double>();
  state.hyper.beta1 = h.at("beta1").get<double>();
  state.hyper.beta2 = h.at("beta2").get<double>();
  state.hyper.eps = h.at("eps").get<double>();
  state.hyper.init_std = h.at("init_std").get<double>();

  read_f32_array(in, state.net.params());
  read_f32_array(in, state.adam_m);
  read_f32_array(in, state.adam_v);
  if (!in) fail(ErrorCode::data, "truncated checkpoint " + path.string());
  return state;
}

CachedNetSource::CachedNetSource(const Net<float>& net)
    : net_(&net), inc_(net) {}

CachedNetSource::~CachedNetSource() = default;

decode::LogitVector CachedNetSource::next_logits(
    std::span<const TokenId> context) const {
  const std::size_t limit = static_cast<std::size_t>(net_->config().context_len);
  std::size_t begin = window_begin_;
  if (context.size() > limit) {
    // Trailing window, advanced in strides of limit/8 so the cache is only
    // rebuilt occasionally.
    const std::size_t stride = std::max<std::size_t>(1, limit / 8);
    const std::size_t min_begin = context.size() - limit;
    if (begin < min_begin || begin > context.size()) {
      begin = ((min_begin + stride - 1) / stride) * stride;
    }
  } else {
    begin = 0;
  }
  if (begin != window_begin_) {
    window_begin_ = begin;
    inc_.reset();
  }
  std::span<const TokenId> window = context.subspan(begin);

  const auto& cached = inc_.tokens();
  std::size_t common = 0;
  while (common < cached.size() && common < window.size() &&
         cached[common] == window[common]) {
    ++common;
  }
  if (common < cached.size()) inc_.truncate(common);
  for (std::size_t i = common; i < window.size(); ++i) inc_.push(window[i]);
  return inc_.logits();
}

}  // namespace yuedesk::model
