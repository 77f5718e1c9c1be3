#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "yuedesk/error.hpp"
#include "yuedesk/rng.hpp"
#include "yuedesk/vocab.hpp"

namespace yuedesk::model {

using vocab::TokenId;

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 128;
  int layers = 2;
  int heads = 4;
  int context_len = 512;
  double rope_base = 10000.0;

  int head_dim() const { return embed_dim / heads; }
  int mlp_hidden() const { return 2 * embed_dim; }

  void validate() const {
    if (vocab_size < 2) fail(ErrorCode::config, "vocab_size must be >= 2");
    if (embed_dim < 2 || layers < 1 || heads < 1) {
      fail(ErrorCode::config, "model dimensions must be positive");
    }
    if (embed_dim % heads != 0) {
      fail(ErrorCode::config, "embed_dim must be divisible by heads");
    }
    if ((embed_dim / heads) % 2 != 0) {
      fail(ErrorCode::config, "head_dim must be even for rotary embeddings");
    }
    if (context_len < 512) fail(ErrorCode::config, "context_len must be >= 512");
    if (!(rope_base > 1.0)) fail(ErrorCode::config, "rope_base must exceed 1");
  }
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool decay = false;  // weight decay applies to matrices, not gains/embeddings
};

// Flat parameter buffer layout; the declared tensor order is also the
// checkpoint serialization order.
class ParamLayout {
 public:
  struct LayerOffsets {
    std::size_t attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down;
  };

  ParamLayout() = default;

  explicit ParamLayout(const ModelConfig& cfg) {
    const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t h = static_cast<std::size_t>(cfg.mlp_hidden());
    wte = add("wte", v * d, true);
    bos = add("bos", d, false);
    layer.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      layer[l].attn_norm = add(p + "attn_norm", d, false);
      layer[l].wq = add(p + "wq", d * d, true);
      layer[l].wk = add(p + "wk", d * d, true);
      layer[l].wv = add(p + "wv", d * d, true);
      layer[l].wo = add(p + "wo", d * d, true);
      layer[l].mlp_norm = add(p + "mlp_norm", d, false);
      layer[l].w_gate = add(p + "w_gate", h * d, true);
      layer[l].w_up = add(p + "w_up", h * d, true);
      layer[l].w_down = add(p + "w_down", d * h, true);
    }
    final_norm = add("final_norm", d, false);
    lm_head = add("lm_head", v * d, true);
  }

  std::size_t total_params() const { return total_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  std::size_t wte = 0, bos = 0, final_norm = 0, lm_head = 0;
  std::vector<LayerOffsets> layer;

 private:
  std::size_t add(const std::string& name, std::size_t size, bool decay) {
    const std::size_t offset = total_;
    tensors_.push_back({name, offset, size, decay});
    total_ += size;
    return offset;
  }
  std::size_t total_ = 0;
  std::vector<TensorInfo> tensors_;
};

namespace detail {

template <typename Real>
inline Real dot_n(const Real* __restrict__ a, const Real* __restrict__ b, int n) {
  Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 3 < n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename Real>
inline void matvec(const Real* __restrict__ w, const Real* __restrict__ x,
                   Real* __restrict__ y, int out_dim, int in_dim) {
  for (int o = 0; o < out_dim; ++o) {
    y[o] = dot_n(w + static_cast<std::size_t>(o) * in_dim, x, in_dim);
  }
}

// dW += dy ⊗ x, dx += W^T dy
template <typename Real>
inline void matvec_backward(const Real* __restrict__ w, const Real* __restrict__ x,
                            const Real* __restrict__ dy, Real* __restrict__ dw,
                            Real* __restrict__ dx, int out_dim, int in_dim) {
  for (int o = 0; o < out_dim; ++o) {
    const Real g = dy[o];
    const Real* __restrict__ wrow = w + static_cast<std::size_t>(o) * in_dim;
    Real* __restrict__ dwrow = dw + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      dwrow[i] += g * x[i];
      dx[i] += wrow[i] * g;
    }
  }
}

inline constexpr double kRmsEps = 1e-5;

// y = gain ⊙ x / rms(x); returns 1/rms for the backward pass.
template <typename Real>
inline Real rmsnorm(const Real* __restrict__ x, const Real* __restrict__ gain,
                    Real* __restrict__ y, int n) {
  Real ms = 0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  const Real inv = Real(1) / std::sqrt(ms / Real(n) + Real(kRmsEps));
  for (int i = 0; i < n; ++i) y[i] = gain[i] * x[i] * inv;
  return inv;
}

template <typename Real>
inline void rmsnorm_backward(const Real* __restrict__ dy, const Real* __restrict__ x,
                             const Real* __restrict__ gain, Real inv,
                             Real* __restrict__ dgain, Real* __restrict__ dx, int n) {
  Real s = 0;
  for (int i = 0; i < n; ++i) {
    dgain[i] += dy[i] * x[i] * inv;
    s += dy[i] * gain[i] * x[i];
  }
  const Real coeff = s * inv * inv * inv / Real(n);
  for (int i = 0; i < n; ++i) dx[i] += dy[i] * gain[i] * inv - coeff * x[i];
}

}  // namespace detail

// Minimal pre-norm decoder-only transformer: RMSNorm, rotary attention,
// SwiGLU MLP, untied embedding/head, and a learned begin-of-sequence vector
// so that the empty context still yields logits. Forward and backward are
// hand-rolled over a flat parameter buffer; the scalar type is a template
// parameter so gradients can be validated in both single and double
// precision against the same code path.
template <typename Real>
class Net {
 public:
  Net() = default;

  explicit Net(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    layout_ = ParamLayout(cfg_);
    params_.assign(layout_.total_params(), Real(0));
    const int hd = cfg_.head_dim();
    rope_inv_freq_.resize(hd / 2);
    for (int j = 0; j < hd / 2; ++j) {
      rope_inv_freq_[j] = std::pow(cfg_.rope_base, -2.0 * j / static_cast<double>(hd));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<Real>& params() { return params_; }
  const std::vector<Real>& params() const { return params_; }

  void init_params(Rng& rng, double init_std = 0.02) {
    for (const TensorInfo& t : layout_.tensors()) {
      const bool is_gain = !t.decay && t.size == static_cast<std::size_t>(cfg_.embed_dim) &&
                           t.name.find("norm") != std::string::npos;
      for (std::size_t i = 0; i < t.size; ++i) {
        params_[t.offset + i] = is_gain ? Real(1) : Real(rng.normal(0.0, init_std));
      }
    }
  }

  template <typename From>
  void copy_params_from(const Net<From>& other) {
    if (other.params().size() != params_.size()) {
      fail(ErrorCode::shape, "copy_params_from: parameter count mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i] = static_cast<Real>(other.params()[i]);
    }
  }

  // Logits for the next position after consuming `context`. The empty
  // context is legal (begin-of-sequence state).
  std::vector<float> next_logits(std::span<const TokenId> context) const {
    if (static_cast<int>(context.size()) > cfg_.context_len) {
      fail(ErrorCode::context_length, "context of " + std::to_string(context.size()) +
                                          " tokens exceeds context_len " +
                                          std::to_string(cfg_.context_len));
    }
    Activations act;
    forward_states(context, act);
    const int last = static_cast<int>(context.size());
    const Real* hidden = row(act.n_final, last);
    std::vector<float> logits(cfg_.vocab_size);
    const Real* head = params_.data() + layout_.lm_head;
    for (int v = 0; v < cfg_.vocab_size; ++v) {
      logits[v] = static_cast<float>(
          detail::dot_n(head + static_cast<std::size_t>(v) * cfg_.embed_dim, hidden,
                        cfg_.embed_dim));
    }
    return logits;
  }

  // Mean next-token cross-entropy in nats over masked positions.
  double loss(std::span<const TokenId> tokens,
              std::span<const std::uint8_t> mask) const {
    check_loss_inputs(tokens, mask);
    Activations act;
    forward_states(tokens.subspan(0, tokens.size() - 1), act);
    const Real* head = params_.data() + layout_.lm_head;
    std::vector<double> z(cfg_.vocab_size);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      if (!mask[p]) continue;
      const Real* hidden = row(act.n_final, static_cast<int>(p));
      for (int v = 0; v < cfg_.vocab_size; ++v) {
        z[v] = static_cast<double>(detail::dot_n(
            head + static_cast<std::size_t>(v) * cfg_.embed_dim, hidden, cfg_.embed_dim));
      }
      total += cross_entropy(z, tokens[p]);
      ++count;
    }
    return total / static_cast<double>(count);
  }

  double loss_and_grad(std::span<const TokenId> tokens,
                       std::span<const std::uint8_t> mask,
                       std::vector<Real>& grads) const {
    check_loss_inputs(tokens, mask);
    grads.assign(params_.size(), Real(0));
    Activations act;
    forward_states(tokens.subspan(0, tokens.size() - 1), act);

    const int positions = static_cast<int>(tokens.size());
    const int d = cfg_.embed_dim;
    const int hm = cfg_.mlp_hidden();
    std::size_t masked = 0;
    for (std::size_t p = 0; p < tokens.size(); ++p) masked += mask[p] ? 1 : 0;
    const double inv_masked = 1.0 / static_cast<double>(masked);

    // Head + cross-entropy, fused.
    std::vector<Real> d_nfinal(static_cast<std::size_t>(positions) * d, Real(0));
    std::vector<double> z(cfg_.vocab_size);
    const Real* head = params_.data() + layout_.lm_head;
    Real* d_head = grads.data() + layout_.lm_head;
    double total = 0.0;
    for (int p = 0; p < positions; ++p) {
      if (!mask[p]) continue;
      const Real* hidden = row(act.n_final, p);
      for (int v = 0; v < cfg_.vocab_size; ++v) {
        z[v] = static_cast<double>(detail::dot_n(
            head + static_cast<std::size_t>(v) * d, hidden, d));
      }
      double zmax = z[0];
      for (int v = 1; v < cfg_.vocab_size; ++v) zmax = std::max(zmax, z[v]);
      double sum = 0.0;
      for (int v = 0; v < cfg_.vocab_size; ++v) sum += std::exp(z[v] - zmax);
      const TokenId target = tokens[p];
      total += -(z[target] - zmax - std::log(sum));
      Real* dn = d_nfinal.data() + static_cast<std::size_t>(p) * d;
      const double inv_sum = 1.0 / sum;
      for (int v = 0; v < cfg_.vocab_size; ++v) {
        double dlogit = std::exp(z[v] - zmax) * inv_sum;
        if (static_cast<TokenId>(v) == target) dlogit -= 1.0;
        const Real g = static_cast<Real>(dlogit * inv_masked);
        const Real* hrow = head + static_cast<std::size_t>(v) * d;
        Real* dhrow = d_head + static_cast<std::size_t>(v) * d;
        for (int i = 0; i < d; ++i) {
          dhrow[i] += g * hidden[i];
          dn[i] += hrow[i] * g;
        }
      }
    }

    // Final RMSNorm backward into the residual stream.
    std::vector<Real> dx(static_cast<std::size_t>(positions) * d, Real(0));
    {
      const Real* gain = params_.data() + layout_.final_norm;
      Real* dgain = grads.data() + layout_.final_norm;
      for (int p = 0; p < positions; ++p) {
        detail::rmsnorm_backward(row(d_nfinal, p), crow(act.x_final, p), gain,
                                 act.inv_final[p], dgain, row(dx, p), d);
      }
    }

    // Layers in reverse.
    std::vector<Real> d_mid(static_cast<std::size_t>(positions) * d);
    std::vector<Real> d_n2(static_cast<std::size_t>(positions) * d);
    std::vector<Real> d_hmlp(hm);
    std::vector<Real> d_gpre(static_cast<std::size_t>(positions) * hm);
    std::vector<Real> d_upre(static_cast<std::size_t>(positions) * hm);
    std::vector<Real> d_concat(static_cast<std::size_t>(positions) * d);
    std::vector<Real> d_q(static_cast<std::size_t>(positions) * d);
    std::vector<Real> d_k(static_cast<std::size_t>(positions) * d);
    std::vector<Real> d_v(static_cast<std::size_t>(positions) * d);
    std::vector<Real> d_n1(static_cast<std::size_t>(positions) * d);
    std::vector<Real> hmlp(hm);
    for (int l = cfg_.layers - 1; l >= 0; --l) {
      const LayerActs& la = act.layers[l];
      const auto& off = layout_.layer[l];

      // dx currently holds the gradient wrt the layer output x_out.
      std::fill(d_n2.begin(), d_n2.end(), Real(0));
      std::fill(d_gpre.begin(), d_gpre.end(), Real(0));
      std::fill(d_upre.begin(), d_upre.end(), Real(0));
      for (int p = 0; p < positions; ++p) {
        // x_out = x_mid + w_down * h; recompute h from saved preactivations.
        const Real* gpre = crow(la.g_pre, p, hm);
        const Real* upre = crow(la.u_pre, p, hm);
        for (int i = 0; i < hm; ++i) {
          const Real sig = Real(1) / (Real(1) + std::exp(-gpre[i]));
          hmlp[i] = gpre[i] * sig * upre[i];
        }
        std::fill(d_hmlp.begin(), d_hmlp.end(), Real(0));
        detail::matvec_backward(params_.data() + off.w_down, hmlp.data(), crow(dx, p),
                                grads.data() + off.w_down, d_hmlp.data(), d, hm);
        Real* dg = row(d_gpre, p, hm);
        Real* du = row(d_upre, p, hm);
        for (int i = 0; i < hm; ++i) {
          const Real sig = Real(1) / (Real(1) + std::exp(-gpre[i]));
          const Real silu = gpre[i] * sig;
          du[i] = d_hmlp[i] * silu;
          dg[i] = d_hmlp[i] * upre[i] * sig * (Real(1) + gpre[i] * (Real(1) - sig));
        }
      }
      for (int p = 0; p < positions; ++p) {
        detail::matvec_backward(params_.data() + off.w_gate, crow(la.n2, p),
                                crow(d_gpre, p, hm), grads.data() + off.w_gate,
                                row(d_n2, p), hm, d);
        detail::matvec_backward(params_.data() + off.w_up, crow(la.n2, p),
                                crow(d_upre, p, hm), grads.data() + off.w_up,
                                row(d_n2, p), hm, d);
      }
      // d_mid = dx (residual) + rmsnorm-backward(d_n2).
      std::copy(dx.begin(), dx.end(), d_mid.begin());
      {
        const Real* gain = params_.data() + off.mlp_norm;
        Real* dgain = grads.data() + off.mlp_norm;
        for (int p = 0; p < positions; ++p) {
          detail::rmsnorm_backward(crow(d_n2, p), crow(la.x_mid, p), gain,
                                   la.inv2[p], dgain, row(d_mid, p), d);
        }
      }

      // x_mid = x_in + wo * concat.
      std::fill(d_concat.begin(), d_concat.end(), Real(0));
      for (int p = 0; p < positions; ++p) {
        detail::matvec_backward(params_.data() + off.wo, crow(la.concat, p),
                                crow(d_mid, p), grads.data() + off.wo,
                                row(d_concat, p), d, d);
      }

      attention_backward(la, d_concat, d_q, d_k, d_v, positions);
      rope_backward(d_q, positions);
      rope_backward(d_k, positions);

      std::fill(d_n1.begin(), d_n1.end(), Real(0));
      for (int p = 0; p < positions; ++p) {
        detail::matvec_backward(params_.data() + off.wq, crow(la.n1, p), crow(d_q, p),
                                grads.data() + off.wq, row(d_n1, p), d, d);
        detail::matvec_backward(params_.data() + off.wk, crow(la.n1, p), crow(d_k, p),
                                grads.data() + off.wk, row(d_n1, p), d, d);
        detail::matvec_backward(params_.data() + off.wv, crow(la.n1, p), crow(d_v, p),
                                grads.data() + off.wv, row(d_n1, p), d, d);
      }
      // dx (wrt x_in) = d_mid (residual) + rmsnorm-backward(d_n1).
      std::copy(d_mid.begin(), d_mid.end(), dx.begin());
      {
        const Real* gain = params_.data() + off.attn_norm;
        Real* dgain = grads.data() + off.attn_norm;
        for (int p = 0; p < positions; ++p) {
          detail::rmsnorm_backward(crow(d_n1, p), crow(la.x_in, p), gain, la.inv1[p],
                                   dgain, row(dx, p), d);
        }
      }
    }

    // Embedding gradients. Position 0 is the BOS vector.
    {
      Real* d_bos = grads.data() + layout_.bos;
      const Real* dx0 = dx.data();
      for (int i = 0; i < d; ++i) d_bos[i] += dx0[i];
      const std::span<const TokenId> fed = tokens.subspan(0, tokens.size() - 1);
      for (std::size_t t = 0; t < fed.size(); ++t) {
        Real* d_wte =
            grads.data() + layout_.wte + static_cast<std::size_t>(fed[t]) * d;
        const Real* dxp = crow(dx, static_cast<int>(t) + 1);
        for (int i = 0; i < d; ++i) d_wte[i] += dxp[i];
      }
    }
    return total * inv_masked;
  }

  // Incremental per-token evaluation with cached keys/values; rotary
  // positions are absolute within the fed window.
  class Incremental {
   public:
    explicit Incremental(const Net& net) : net_(&net) { reset(); }

    void reset() {
      tokens_.clear();
      const int layers = net_->cfg_.layers;
      k_cache_.assign(layers, {});
      v_cache_.assign(layers, {});
      hidden_.clear();
      feed(net_->params_.data() + net_->layout_.bos);
    }

    const std::vector<TokenId>& tokens() const { return tokens_; }

    void truncate(std::size_t keep_tokens) {
      if (keep_tokens >= tokens_.size()) return;
      tokens_.resize(keep_tokens);
      const std::size_t pos = keep_tokens + 1;  // BOS occupies position 0
      const std::size_t d = static_cast<std::size_t>(net_->cfg_.embed_dim);
      for (auto& k : k_cache_) k.resize(pos * d);
      for (auto& v : v_cache_) v.resize(pos * d);
      hidden_.resize(pos * d);
    }

    void push(TokenId token) {
      if (token >= static_cast<TokenId>(net_->cfg_.vocab_size)) {
        fail(ErrorCode::range, "token id out of vocabulary");
      }
      feed(net_->params_.data() + net_->layout_.wte +
           static_cast<std::size_t>(token) * net_->cfg_.embed_dim);
      tokens_.push_back(token);
    }

    std::vector<float> logits() const {
      const int d = net_->cfg_.embed_dim;
      const Real* hidden = hidden_.data() + hidden_.size() - d;
      const Real* head = net_->params_.data() + net_->layout_.lm_head;
      std::vector<float> out(net_->cfg_.vocab_size);
      for (int v = 0; v < net_->cfg_.vocab_size; ++v) {
        out[v] = static_cast<float>(detail::dot_n(
            head + static_cast<std::size_t>(v) * d, hidden, d));
      }
      return out;
    }

   private:
    void feed(const Real* embedding) {
      const ModelConfig& cfg = net_->cfg_;
      const int d = cfg.embed_dim;
      const int hd = cfg.head_dim();
      const int hm = cfg.mlp_hidden();
      // The new state's absolute position equals the number of states cached.
      const int p = static_cast<int>(hidden_.size() / static_cast<std::size_t>(d));
      std::vector<Real> x(embedding, embedding + d);
      std::vector<Real> n1(d), q(d), k(d), v(d), concat(d), proj(d), n2(d);
      std::vector<Real> gpre(hm), upre(hm), hmlp(hm), mlp_out(d);
      const Real scale = Real(1) / std::sqrt(Real(hd));
      for (int l = 0; l < cfg.layers; ++l) {
        const auto& off = net_->layout_.layer[l];
        detail::rmsnorm(x.data(), net_->params_.data() + off.attn_norm, n1.data(), d);
        detail::matvec(net_->params_.data() + off.wq, n1.data(), q.data(), d, d);
        detail::matvec(net_->params_.data() + off.wk, n1.data(), k.data(), d, d);
        detail::matvec(net_->params_.data() + off.wv, n1.data(), v.data(), d, d);
        net_->rope_rotate(q.data(), p, +1);
        net_->rope_rotate(k.data(), p, +1);
        k_cache_[l].insert(k_cache_[l].end(), k.begin(), k.end());
        v_cache_[l].insert(v_cache_[l].end(), v.begin(), v.end());
        const int steps = p + 1;
        for (int h = 0; h < cfg.heads; ++h) {
          const int hs = h * hd;
          std::vector<Real> score(steps);
          Real smax = -std::numeric_limits<Real>::infinity();
          for (int s = 0; s < steps; ++s) {
            const Real* krow = k_cache_[l].data() + static_cast<std::size_t>(s) * d + hs;
            score[s] = detail::dot_n(q.data() + hs, krow, hd) * scale;
            smax = std::max(smax, score[s]);
          }
          Real sum = 0;
          for (int s = 0; s < steps; ++s) {
            score[s] = std::exp(score[s] - smax);
            sum += score[s];
          }
          const Real inv = Real(1) / sum;
          for (int j = 0; j < hd; ++j) {
            Real acc = 0;
            for (int s = 0; s < steps; ++s) {
              acc += score[s] * inv *
                     v_cache_[l][static_cast<std::size_t>(s) * d + hs + j];
            }
            concat[hs + j] = acc;
          }
        }
        detail::matvec(net_->params_.data() + off.wo, concat.data(), proj.data(), d, d);
        for (int i = 0; i < d; ++i) x[i] += proj[i];
        detail::rmsnorm(x.data(), net_->params_.data() + off.mlp_norm, n2.data(), d);
        detail::matvec(net_->params_.data() + off.w_gate, n2.data(), gpre.data(), hm, d);
        detail::matvec(net_->params_.data() + off.w_up, n2.data(), upre.data(), hm, d);
        for (int i = 0; i < hm; ++i) {
          const Real sig = Real(1) / (Real(1) + std::exp(-gpre[i]));
          hmlp[i] = gpre[i] * sig * upre[i];
        }
        detail::matvec(net_->params_.data() + off.w_down, hmlp.data(), mlp_out.data(),
                       d, hm);
        for (int i = 0; i < d; ++i) x[i] += mlp_out[i];
      }
      std::vector<Real> n3(d);
      detail::rmsnorm(x.data(), net_->params_.data() + net_->layout_.final_norm,
                      n3.data(), d);
      hidden_.insert(hidden_.end(), n3.begin(), n3.end());
    }

    const Net* net_;
    std::vector<TokenId> tokens_;
    std::vector<std::vector<Real>> k_cache_, v_cache_;
    std::vector<Real> hidden_;  // final-norm state per position
  };

 private:
  struct LayerActs {
    std::vector<Real> x_in, n1, inv1, q, k, v, attn, concat, x_mid, n2, inv2;
    std::vector<Real> g_pre, u_pre;
  };
  struct Activations {
    std::vector<LayerActs> layers;
    std::vector<Real> x_final, n_final, inv_final;
  };

  Real* row(std::vector<Real>& buf, int p) const {
    return buf.data() + static_cast<std::size_t>(p) * cfg_.embed_dim;
  }
  Real* row(std::vector<Real>& buf, int p, int width) const {
    return buf.data() + static_cast<std::size_t>(p) * width;
  }
  const Real* row(const std::vector<Real>& buf, int p) const {
    return buf.data() + static_cast<std::size_t>(p) * cfg_.embed_dim;
  }
  const Real* crow(const std::vector<Real>& buf, int p) const {
    return buf.data() + static_cast<std::size_t>(p) * cfg_.embed_dim;
  }
  const Real* crow(const std::vector<Real>& buf, int p, int width) const {
    return buf.data() + static_cast<std::size_t>(p) * width;
  }

  void check_loss_inputs(std::span<const TokenId> tokens,
                         std::span<const std::uint8_t> mask) const {
    if (tokens.size() < 2) fail(ErrorCode::shape, "loss needs at least 2 tokens");
    if (mask.size() != tokens.size()) {
      fail(ErrorCode::shape, "loss mask length mismatch");
    }
    if (static_cast<int>(tokens.size()) > cfg_.context_len) {
      fail(ErrorCode::context_length, "sequence exceeds context_len");
    }
    bool any = false;
    for (std::uint8_t m : mask) any = any || (m != 0);
    if (!any) fail(ErrorCode::undefined_loss, "loss mask selects no positions");
    for (TokenId t : tokens) {
      if (t >= static_cast<TokenId>(cfg_.vocab_size)) {
        fail(ErrorCode::range, "token id out of vocabulary");
      }
    }
  }

  static double cross_entropy(const std::vector<double>& z, TokenId target) {
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    return -(z[target] - zmax - std::log(sum));
  }

  // In-place rotary rotation of one position's q or k row; dir=-1 inverts.
  void rope_rotate(Real* vec, int pos, int dir) const {
    const int hd = cfg_.head_dim();
    for (int j = 0; j < hd / 2; ++j) {
      const double theta = static_cast<double>(pos) * rope_inv_freq_[j];
      const Real c = static_cast<Real>(std::cos(theta));
      const Real s = static_cast<Real>(std::sin(theta)) * Real(dir);
      for (int h = 0; h < cfg_.heads; ++h) {
        Real* base = vec + h * hd;
        const Real a = base[2 * j];
        const Real b = base[2 * j + 1];
        base[2 * j] = a * c - b * s;
        base[2 * j + 1] = a * s + b * c;
      }
    }
  }

  // Full forward over BOS + fed tokens; keeps every intermediate needed by
  // the backward pass.
  void forward_states(std::span<const TokenId> fed, Activations& act) const {
    const int d = cfg_.embed_dim;
    const int hd = cfg_.head_dim();
    const int hm = cfg_.mlp_hidden();
    const int positions = static_cast<int>(fed.size()) + 1;
    const std::size_t pd = static_cast<std::size_t>(positions) * d;

    std::vector<Real> x(pd);
    {
      const Real* bos = params_.data() + layout_.bos;
      std::copy(bos, bos + d, x.data());
      for (std::size_t t = 0; t < fed.size(); ++t) {
        if (fed[t] >= static_cast<TokenId>(cfg_.vocab_size)) {
          fail(ErrorCode::range, "token id out of vocabulary");
        }
        const Real* e = params_.data() + layout_.wte +
                        static_cast<std::size_t>(fed[t]) * d;
        std::copy(e, e + d, x.data() + (t + 1) * d);
      }
    }

    const Real scale = Real(1) / std::sqrt(Real(hd));
    act.layers.resize(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      LayerActs& la = act.layers[l];
      la.x_in = x;
      la.n1.resize(pd);
      la.inv1.resize(positions);
      la.q.resize(pd);
      la.k.resize(pd);
      la.v.resize(pd);
      la.attn.assign(static_cast<std::size_t>(cfg_.heads) * positions * positions,
                     Real(0));
      la.concat.assign(pd, Real(0));
      const auto& off = layout_.layer[l];
      for (int p = 0; p < positions; ++p) {
        la.inv1[p] = detail::rmsnorm(crow(la.x_in, p),
                                     params_.data() + off.attn_norm, row(la.n1, p), d);
        detail::matvec(params_.data() + off.wq, crow(la.n1, p), row(la.q, p), d, d);
        detail::matvec(params_.data() + off.wk, crow(la.n1, p), row(la.k, p), d, d);
        detail::matvec(params_.data() + off.wv, crow(la.n1, p), row(la.v, p), d, d);
        rope_rotate(row(la.q, p), p, +1);
        rope_rotate(row(la.k, p), p, +1);
      }
      for (int p = 0; p < positions; ++p) {
        for (int h = 0; h < cfg_.heads; ++h) {
          const int hs = h * hd;
          Real* aw = la.attn.data() +
                     (static_cast<std::size_t>(h) * positions + p) * positions;
          Real smax = -std::numeric_limits<Real>::infinity();
          for (int s = 0; s <= p; ++s) {
            aw[s] = detail::dot_n(crow(la.q, p) + hs, crow(la.k, s) + hs, hd) * scale;
            smax = std::max(smax, aw[s]);
          }
          Real sum = 0;
          for (int s = 0; s <= p; ++s) {
            aw[s] = std::exp(aw[s] - smax);
            sum += aw[s];
          }
          const Real inv = Real(1) / sum;
          for (int s = 0; s <= p; ++s) aw[s] *= inv;
          Real* out = row(la.concat, p) + hs;
          for (int j = 0; j < hd; ++j) {
            Real acc = 0;
            for (int s = 0; s <= p; ++s) acc += aw[s] * crow(la.v, s)[hs + j];
            out[j] = acc;
          }
        }
      }
      la.x_mid.resize(pd);
      std::vector<Real> proj(d);
      for (int p = 0; p < positions; ++p) {
        detail::matvec(params_.data() + off.wo, crow(la.concat, p), proj.data(), d, d);
        const Real* xin = crow(la.x_in, p);
        Real* xm = row(la.x_mid, p);
        for (int i = 0; i < d; ++i) xm[i] = xin[i] + proj[i];
      }
      la.n2.resize(pd);
      la.inv2.resize(positions);
      la.g_pre.resize(static_cast<std::size_t>(positions) * hm);
      la.u_pre.resize(static_cast<std::size_t>(positions) * hm);
      std::vector<Real> hmlp(hm), mlp_out(d);
      for (int p = 0; p < positions; ++p) {
        la.inv2[p] = detail::rmsnorm(crow(la.x_mid, p),
                                     params_.data() + off.mlp_norm, row(la.n2, p), d);
        detail::matvec(params_.data() + off.w_gate, crow(la.n2, p),
                       row(la.g_pre, p, hm), hm, d);
        detail::matvec(params_.data() + off.w_up, crow(la.n2, p),
                       row(la.u_pre, p, hm), hm, d);
        const Real* gp = crow(la.g_pre, p, hm);
        const Real* up = crow(la.u_pre, p, hm);
        for (int i = 0; i < hm; ++i) {
          const Real sig = Real(1) / (Real(1) + std::exp(-gp[i]));
          hmlp[i] = gp[i] * sig * up[i];
        }
        detail::matvec(params_.data() + off.w_down, hmlp.data(), mlp_out.data(), d, hm);
        const Real* xm = crow(la.x_mid, p);
        Real* xo = row(x, p);
        for (int i = 0; i < d; ++i) xo[i] = xm[i] + mlp_out[i];
      }
    }
    act.x_final = x;
    act.n_final.resize(pd);
    act.inv_final.resize(positions);
    for (int p = 0; p < positions; ++p) {
      act.inv_final[p] =
          detail::rmsnorm(crow(act.x_final, p), params_.data() + layout_.final_norm,
                          row(act.n_final, p), d);
    }
  }

  void attention_backward(const LayerActs& la, const std::vector<Real>& d_concat,
                          std::vector<Real>& d_q, std::vector<Real>& d_k,
                          std::vector<Real>& d_v, int positions) const {
    const int d = cfg_.embed_dim;
    const int hd = cfg_.head_dim();
    const Real scale = Real(1) / std::sqrt(Real(hd));
    std::fill(d_q.begin(), d_q.end(), Real(0));
    std::fill(d_k.begin(), d_k.end(), Real(0));
    std::fill(d_v.begin(), d_v.end(), Real(0));
    std::vector<Real> dscore(static_cast<std::size_t>(positions) * positions);
    for (int h = 0; h < cfg_.heads; ++h) {
      const int hs = h * hd;
      for (int p = 0; p < positions; ++p) {
        const Real* dhead = crow(d_concat, p) + hs;
        const Real* aw = la.attn.data() +
                         (static_cast<std::size_t>(h) * positions + p) * positions;
        Real* ds = dscore.data() + static_cast<std::size_t>(p) * positions;
        for (int s = 0; s <= p; ++s) {
          const Real* vrow = crow(la.v, s) + hs;
          Real* dvrow = row(d_v, s) + hs;
          const Real w = aw[s];
          for (int j = 0; j < hd; ++j) dvrow[j] += w * dhead[j];
          ds[s] = detail::dot_n(dhead, vrow, hd);
        }
        Real dot_ws = 0;
        for (int s = 0; s <= p; ++s) dot_ws += ds[s] * aw[s];
        for (int s = 0; s <= p; ++s) ds[s] = aw[s] * (ds[s] - dot_ws);
      }
      for (int p = 0; p < positions; ++p) {
        const Real* ds = dscore.data() + static_cast<std::size_t>(p) * positions;
        const Real* qrow = crow(la.q, p) + hs;
        Real* dqrow = row(d_q, p) + hs;
        for (int s = 0; s <= p; ++s) {
          const Real g = ds[s] * scale;
          const Real* krow = crow(la.k, s) + hs;
          Real* dkrow = row(d_k, s) + hs;
          for (int j = 0; j < hd; ++j) {
            dqrow[j] += g * krow[j];
            dkrow[j] += g * qrow[j];
          }
        }
      }
    }
  }

  void rope_backward(std::vector<Real>& d_rotated, int positions) const {
    for (int p = 0; p < positions; ++p) {
      rope_rotate(row(d_rotated, p), p, -1);
    }
  }

  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<Real> params_;
  std::vector<double> rope_inv_freq_;
};

}  // namespace yuedesk::model
