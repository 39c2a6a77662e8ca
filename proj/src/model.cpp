// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "math_detail.hpp"
#include "slidemask/errors.hpp"
#include "slidemask/hash.hpp"
#include "slidemask/manifest.hpp"
#include "slidemask/rng.hpp"

namespace slidemask {

using detail::gelu;
using detail::gelu_grad;
using detail::logsumexp;
using detail::matvec;
using detail::matvec_backward;
using detail::rmsnorm;
using detail::rmsnorm_backward;
using detail::rope_rotate;
using detail::rope_rotate_backward;

// ============================================================================
// Config / state
// ============================================================================

std::string position_mode_name(PositionMode m) {
  switch (m) {
    case PositionMode::None:
      return "none";
    case PositionMode::AbsoluteLearned:
      return "absolute_learned";
    case PositionMode::RelativeRotation:
      return "relative_rotation";
  }
  return "?";
}

PositionMode position_mode_from_name(const std::string& name) {
  if (name == "none") return PositionMode::None;
  if (name == "absolute_learned") return PositionMode::AbsoluteLearned;
  if (name == "relative_rotation") return PositionMode::RelativeRotation;
  throw std::invalid_argument("unknown position mode: " + name);
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1)
    throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  if (position_mode == PositionMode::AbsoluteLearned && max_positions < 1)
    throw std::invalid_argument("ModelConfig: max_positions must be >= 1");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_layers"] = n_layers;
  j["d_ff"] = d_ff;
  j["position_mode"] = position_mode_name(position_mode);
  j["seed"] = seed;
  j["max_positions"] = max_positions;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.position_mode = position_mode_from_name(j.value("position_mode", "none"));
  c.seed = j.value("seed", uint64_t{0});
  c.max_positions = j.value("max_positions", 256);
  c.validate();
  return c;
}

size_t ModelState::parameter_count() const {
  size_t total = 0;
  visit_tensors([&](const std::string&, const std::vector<double>& t) { total += t.size(); });
  return total;
}

void ModelState::check_finite(const std::string& context) const {
  bool ok = true;
  std::string offender;
  visit_tensors([&](const std::string& name, const std::vector<double>& t) {
    if (!ok) return;
    for (double v : t) {
      if (!std::isfinite(v)) {
        ok = false;
        offender = name;
        return;
      }
    }
  });
  if (!ok)
    throw gate_error("non-finite parameter in tensor '" + offender + "' (" + context + ")");
}

ModelState init_model(const ModelConfig& config) {
  config.validate();
  ModelState m;
  m.config = config;
  Rng rng(derive_seed(config.seed, "model_init"));
  const auto d = static_cast<size_t>(config.d_model);
  const auto ff = static_cast<size_t>(config.d_ff);
  const auto v = static_cast<size_t>(config.vocab_size);
  // Small-variance normal for projections, zeros for biases, ones for gains.
  const double proj_std = 0.08;
  const double emb_std = 0.08;
  auto fill_normal = [&](std::vector<double>& t, size_t size, double std_dev) {
    t.resize(size);
    for (auto& x : t) x = rng.next_normal(0.0, std_dev);
  };
  fill_normal(m.tok_emb, v * d, emb_std);
  if (config.position_mode == PositionMode::AbsoluteLearned) {
    fill_normal(m.pos_emb, static_cast<size_t>(config.max_positions) * d, emb_std);
  }
  m.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& lp : m.layers) {
    lp.attn_gain.assign(d, 1.0);
    fill_normal(lp.wq, d * d, proj_std);
    fill_normal(lp.wk, d * d, proj_std);
    fill_normal(lp.wv, d * d, proj_std);
    fill_normal(lp.wo, d * d, proj_std);
    lp.bq.assign(d, 0.0);
    lp.bk.assign(d, 0.0);
    lp.bv.assign(d, 0.0);
    lp.bo.assign(d, 0.0);
    lp.ffn_gain.assign(d, 1.0);
    fill_normal(lp.w1, ff * d, proj_std);
    lp.b1.assign(ff, 0.0);
    fill_normal(lp.w2, d * ff, proj_std);
    lp.b2.assign(d, 0.0);
  }
  m.final_gain.assign(d, 1.0);
  fill_normal(m.w_out, v * d, proj_std);
  m.b_out.assign(v, 0.0);
  return m;
}

ModelState zeros_like(const ModelState& model) {
  ModelState z = model;
  z.visit_tensors([](const std::string&, std::vector<double>& t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
  z.step = 0;
  return z;
}

// ============================================================================
// Forward with activation cache
// ============================================================================

namespace {

struct Activations {
  size_t n = 0;
  std::vector<std::vector<size_t>> rows;  // visible keys per position, ascending
  std::vector<std::vector<double>> xs;    // [L+1] residual streams, n x d
  struct Layer {
    std::vector<double> an, q, k, v, attn_concat, x_mid, fn;  // n x d
    std::vector<double> u, g;                                 // n x d_ff
    std::vector<double> r_attn, r_ffn;                        // n
    std::vector<std::vector<double>> alpha;                   // [h * n + t] -> weights
  };
  std::vector<Layer> layers;
  std::vector<double> fno;      // n x d
  std::vector<double> r_final;  // n
  std::vector<double> logits;   // n x vocab
};

void run_forward(const ModelState& model, std::span<const int> tokens,
                 const AttentionMask& mask, std::span<const int> positions, Activations& acts) {
  const ModelConfig& cfg = model.config;
  const size_t n = tokens.size();
  if (mask.n() != n || positions.size() != n)
    throw std::invalid_argument("forward: tokens, mask and positions must agree in length");
  mask.validate();
  const auto d = static_cast<size_t>(cfg.d_model);
  const auto nh = static_cast<size_t>(cfg.n_heads);
  const size_t dh = d / nh;
  const auto ff = static_cast<size_t>(cfg.d_ff);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  acts.n = n;
  acts.rows.resize(n);
  for (size_t t = 0; t < n; ++t) acts.rows[t] = mask.visible_in_row(t);

  acts.xs.assign(static_cast<size_t>(cfg.n_layers) + 1, std::vector<double>(n * d, 0.0));
  auto& x0 = acts.xs[0];
  for (size_t t = 0; t < n; ++t) {
    const int tok = tokens[t];
    if (tok < 0 || tok >= cfg.vocab_size)
      throw std::invalid_argument("forward: token id out of vocabulary range");
    const double* e = model.tok_emb.data() + static_cast<size_t>(tok) * d;
    double* dst = x0.data() + t * d;
    std::copy(e, e + d, dst);
    if (cfg.position_mode == PositionMode::AbsoluteLearned) {
      if (positions[t] < 0 || positions[t] >= cfg.max_positions)
        throw std::invalid_argument("forward: position id exceeds max_positions");
      const double* p = model.pos_emb.data() + static_cast<size_t>(positions[t]) * d;
      for (size_t i = 0; i < d; ++i) dst[i] += p[i];
    }
  }

  acts.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (size_t l = 0; l < static_cast<size_t>(cfg.n_layers); ++l) {
    const LayerParams& lp = model.layers[l];
    auto& al = acts.layers[l];
    const auto& x_in = acts.xs[l];
    al.an.resize(n * d);
    al.q.resize(n * d);
    al.k.resize(n * d);
    al.v.resize(n * d);
    al.attn_concat.assign(n * d, 0.0);
    al.x_mid.resize(n * d);
    al.fn.resize(n * d);
    al.u.resize(n * ff);
    al.g.resize(n * ff);
    al.r_attn.resize(n);
    al.r_ffn.resize(n);
    al.alpha.assign(nh * n, {});

    for (size_t t = 0; t < n; ++t) {
      al.r_attn[t] = rmsnorm({x_in.data() + t * d, d}, lp.attn_gain, {al.an.data() + t * d, d});
      matvec(lp.wq, lp.bq, {al.an.data() + t * d, d}, {al.q.data() + t * d, d});
      matvec(lp.wk, lp.bk, {al.an.data() + t * d, d}, {al.k.data() + t * d, d});
      matvec(lp.wv, lp.bv, {al.an.data() + t * d, d}, {al.v.data() + t * d, d});
      if (cfg.position_mode == PositionMode::RelativeRotation) {
        for (size_t h = 0; h < nh; ++h) {
          rope_rotate({al.q.data() + t * d + h * dh, dh}, positions[t]);
          rope_rotate({al.k.data() + t * d + h * dh, dh}, positions[t]);
        }
      }
    }

    // Attention: iterate only visible cells so masked positions contribute
    // exactly nothing.
    for (size_t t = 0; t < n; ++t) {
      const auto& visible = acts.rows[t];
      for (size_t h = 0; h < nh; ++h) {
        auto& alpha = al.alpha[h * n + t];
        alpha.resize(visible.size());
        detail::attention_row(
            {al.q.data() + t * d + h * dh, dh}, visible.size(),
            [&](size_t idx) { return al.k.data() + visible[idx] * d + h * dh; },
            [&](size_t idx) { return al.v.data() + visible[idx] * d + h * dh; }, inv_sqrt_dh,
            alpha, {al.attn_concat.data() + t * d + h * dh, dh});
      }
    }

    auto& x_out = acts.xs[l + 1];
    std::vector<double> tmp(d);
    for (size_t t = 0; t < n; ++t) {
      matvec(lp.wo, lp.bo, {al.attn_concat.data() + t * d, d}, tmp);
      for (size_t i = 0; i < d; ++i) al.x_mid[t * d + i] = x_in[t * d + i] + tmp[i];
      al.r_ffn[t] =
          rmsnorm({al.x_mid.data() + t * d, d}, lp.ffn_gain, {al.fn.data() + t * d, d});
      matvec(lp.w1, lp.b1, {al.fn.data() + t * d, d}, {al.u.data() + t * ff, ff});
      for (size_t i = 0; i < ff; ++i) al.g[t * ff + i] = gelu(al.u[t * ff + i]);
      std::vector<double> y(d);
      matvec(lp.w2, lp.b2, {al.g.data() + t * ff, ff}, y);
      for (size_t i = 0; i < d; ++i) x_out[t * d + i] = al.x_mid[t * d + i] + y[i];
    }
  }

  const auto& x_last = acts.xs.back();
  acts.fno.resize(n * d);
  acts.r_final.resize(n);
  acts.logits.resize(n * static_cast<size_t>(cfg.vocab_size));
  for (size_t t = 0; t < n; ++t) {
    acts.r_final[t] =
        rmsnorm({x_last.data() + t * d, d}, model.final_gain, {acts.fno.data() + t * d, d});
    matvec(model.w_out, model.b_out, {acts.fno.data() + t * d, d},
           {acts.logits.data() + t * static_cast<size_t>(cfg.vocab_size),
            static_cast<size_t>(cfg.vocab_size)});
  }
}

}  // namespace

std::span<const double> ForwardTrace::logits_at(size_t position) const {
  return {logits.data() + position * static_cast<size_t>(vocab), static_cast<size_t>(vocab)};
}

std::span<const double> ForwardTrace::hidden_at(size_t layer, size_t position) const {
  const size_t d = hidden[layer].size() / n;
  return {hidden[layer].data() + position * d, d};
}

ForwardTrace forward(const ModelState& model, std::span<const int> tokens,
                     const AttentionMask& mask, std::span<const int> positions,
                     const TraceOptions& options) {
  Activations acts;
  run_forward(model, tokens, mask, positions, acts);
  ForwardTrace trace;
  trace.n = acts.n;
  trace.vocab = model.config.vocab_size;
  trace.logits = std::move(acts.logits);
  if (options.retain_hidden) trace.hidden = acts.xs;
  if (options.retain_attention) {
    const auto nh = static_cast<size_t>(model.config.n_heads);
    trace.attention_row_sums.reserve(acts.layers.size() * nh * acts.n);
    for (const auto& layer : acts.layers) {
      for (size_t h = 0; h < nh; ++h) {
        for (size_t t = 0; t < acts.n; ++t) {
          double s = 0.0;
          for (double a : layer.alpha[h * acts.n + t]) s += a;
          trace.attention_row_sums.push_back(s);
        }
      }
    }
  }
  return trace;
}

// ============================================================================
// Positions
// ============================================================================

std::vector<int> absolute_positions(size_t n) {
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<int>(i);
  return out;
}

std::vector<int> window_local_positions(const MaskSpec& spec, const PromptLayout& layout) {
  if (layout.variant == LayoutVariant::Plain || !method_is_windowed(spec.method))
    return absolute_positions(layout.size());
  std::vector<int> pos(layout.size(), 0);
  auto fill_from_window = [&](const Segment& seg, const std::vector<SegmentRole>& window) {
    size_t before = 0;
    for (const auto& role : window) {
      if (role == seg.role) break;
      before += layout.find_segment(role).length();
    }
    for (size_t t = seg.begin; t < seg.end; ++t)
      pos[t] = static_cast<int>(1 + before + (t - seg.begin));
  };
  for (const auto& seg : layout.segments) {
    switch (seg.role.kind) {
      case SegmentKind::Sos:
        pos[seg.begin] = 0;
        break;
      case SegmentKind::Dup: {
        if (spec.dup_policy == DupPolicy::IsolatedDups) {
          for (size_t t = seg.begin; t < seg.end; ++t)
            pos[t] = static_cast<int>(1 + (t - seg.begin));
        } else {
          // Offsets continue across the duplicate block.
          const Segment& first_dup = layout.find_segment(SegmentRole::dup(2));
          for (size_t t = seg.begin; t < seg.end; ++t)
            pos[t] = static_cast<int>(1 + (t - first_dup.begin));
        }
        break;
      }
      case SegmentKind::Orig:
        fill_from_window(seg, demo_window(spec, seg.role.index).segments);
        break;
      case SegmentKind::Query:
        fill_from_window(seg, query_window(spec).segments);
        break;
    }
  }
  return pos;
}

std::string position_policy_name(PositionPolicy p) {
  return p == PositionPolicy::Absolute ? "absolute" : "window_local";
}

PositionPolicy position_policy_from_name(const std::string& name) {
  if (name == "absolute") return PositionPolicy::Absolute;
  if (name == "window_local") return PositionPolicy::WindowLocal;
  throw std::invalid_argument("unknown position policy: " + name);
}

std::vector<int> assign_positions(PositionPolicy policy, const MaskSpec& spec,
                                  const PromptLayout& layout) {
  if (policy == PositionPolicy::Absolute) return absolute_positions(layout.size());
  return window_local_positions(spec, layout);
}

// ============================================================================
// Loss and gradients
// ============================================================================

double clm_loss(const ModelState& model, std::span<const int> tokens,
                const AttentionMask& mask, std::span<const int> positions) {
  Activations acts;
  run_forward(model, tokens, mask, positions, acts);
  const size_t n = tokens.size();
  const auto v = static_cast<size_t>(model.config.vocab_size);
  if (n < 2) throw std::invalid_argument("clm_loss: need at least two tokens");
  double total = 0.0;
  for (size_t t = 0; t + 1 < n; ++t) {
    std::span<const double> row(acts.logits.data() + t * v, v);
    total += logsumexp(row) - row[static_cast<size_t>(tokens[t + 1])];
  }
  return total / static_cast<double>(n - 1);
}

double clm_backward(const ModelState& model, std::span<const int> tokens,
                    const AttentionMask& mask, std::span<const int> positions,
                    ModelState& grads) {
  Activations acts;
  run_forward(model, tokens, mask, positions, acts);
  const ModelConfig& cfg = model.config;
  const size_t n = tokens.size();
  const auto d = static_cast<size_t>(cfg.d_model);
  const auto nh = static_cast<size_t>(cfg.n_heads);
  const size_t dh = d / nh;
  const auto ff = static_cast<size_t>(cfg.d_ff);
  const auto v = static_cast<size_t>(cfg.vocab_size);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  if (n < 2) throw std::invalid_argument("clm_backward: need at least two tokens");
  const double inv_t = 1.0 / static_cast<double>(n - 1);

  // dlogits = (softmax - onehot) / T on supervised rows.
  double loss = 0.0;
  std::vector<double> dlogits(n * v, 0.0);
  for (size_t t = 0; t + 1 < n; ++t) {
    std::span<const double> row(acts.logits.data() + t * v, v);
    const double lse = logsumexp(row);
    const auto target = static_cast<size_t>(tokens[t + 1]);
    loss += lse - row[target];
    for (size_t i = 0; i < v; ++i) dlogits[t * v + i] = std::exp(row[i] - lse) * inv_t;
    dlogits[t * v + target] -= inv_t;
  }
  loss *= inv_t;

  // Unembedding and final norm.
  std::vector<double> dx(n * d, 0.0);
  {
    std::vector<double> dfno(d);
    for (size_t t = 0; t < n; ++t) {
      std::fill(dfno.begin(), dfno.end(), 0.0);
      matvec_backward(model.w_out, {acts.fno.data() + t * d, d}, {dlogits.data() + t * v, v},
                      grads.w_out, grads.b_out, dfno);
      rmsnorm_backward({acts.xs.back().data() + t * d, d}, model.final_gain, acts.r_final[t],
                       dfno, grads.final_gain, {dx.data() + t * d, d});
    }
  }

  std::vector<double> dan(n * d), dq(n * d), dk(n * d), dv(n * d), dconcat(n * d);
  std::vector<double> dx_mid(n * d), dfn(d), du(ff), dg(ff);
  for (size_t li = acts.layers.size(); li-- > 0;) {
    const LayerParams& lp = model.layers[li];
    LayerParams& gl = grads.layers[li];
    const auto& al = acts.layers[li];
    const auto& x_in = acts.xs[li];

    // FFN half: x_out = x_mid + W2 gelu(W1 fn + b1) + b2.
    std::fill(dx_mid.begin(), dx_mid.end(), 0.0);
    for (size_t t = 0; t < n; ++t) {
      std::span<const double> dy(dx.data() + t * d, d);  // d(x_out)
      for (size_t i = 0; i < d; ++i) dx_mid[t * d + i] += dy[i];
      std::fill(dg.begin(), dg.end(), 0.0);
      matvec_backward(lp.w2, {al.g.data() + t * ff, ff}, dy, gl.w2, gl.b2, dg);
      for (size_t i = 0; i < ff; ++i) du[i] = dg[i] * gelu_grad(al.u[t * ff + i]);
      std::fill(dfn.begin(), dfn.end(), 0.0);
      matvec_backward(lp.w1, {al.fn.data() + t * d, d}, du, gl.w1, gl.b1, dfn);
      rmsnorm_backward({al.x_mid.data() + t * d, d}, lp.ffn_gain, al.r_ffn[t], dfn,
                       gl.ffn_gain, {dx_mid.data() + t * d, d});
    }

    // Attention half: x_mid = x_in + Wo concat + bo.
    std::fill(dconcat.begin(), dconcat.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (size_t t = 0; t < n; ++t) {
      std::span<const double> dmid(dx_mid.data() + t * d, d);
      for (size_t i = 0; i < d; ++i) dx[t * d + i] += dmid[i];
      matvec_backward(lp.wo, {al.attn_concat.data() + t * d, d}, dmid, gl.wo, gl.bo,
                      {dconcat.data() + t * d, d});
    }

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    std::vector<double> dalpha;
    for (size_t t = 0; t < n; ++t) {
      const auto& visible = acts.rows[t];
      for (size_t h = 0; h < nh; ++h) {
        const auto& alpha = al.alpha[h * n + t];
        const double* dout = dconcat.data() + t * d + h * dh;
        dalpha.resize(visible.size());
        double inner = 0.0;
        for (size_t idx = 0; idx < visible.size(); ++idx) {
          const size_t p = visible[idx];
          const double* vp = al.v.data() + p * d + h * dh;
          double* dvp = dv.data() + p * d + h * dh;
          double acc = 0.0;
          const double a = alpha[idx];
          for (size_t i = 0; i < dh; ++i) {
            acc += dout[i] * vp[i];
            dvp[i] += a * dout[i];
          }
          dalpha[idx] = acc;
          inner += a * acc;
        }
        const double* qt = al.q.data() + t * d + h * dh;
        double* dqt = dq.data() + t * d + h * dh;
        for (size_t idx = 0; idx < visible.size(); ++idx) {
          const size_t p = visible[idx];
          const double dscore = alpha[idx] * (dalpha[idx] - inner) * inv_sqrt_dh;
          const double* kp = al.k.data() + p * d + h * dh;
          double* dkp = dk.data() + p * d + h * dh;
          for (size_t i = 0; i < dh; ++i) {
            dqt[i] += dscore * kp[i];
            dkp[i] += dscore * qt[i];
          }
        }
      }
    }

    if (cfg.position_mode == PositionMode::RelativeRotation) {
      for (size_t t = 0; t < n; ++t) {
        for (size_t h = 0; h < nh; ++h) {
          rope_rotate_backward({dq.data() + t * d + h * dh, dh}, positions[t]);
          rope_rotate_backward({dk.data() + t * d + h * dh, dh}, positions[t]);
        }
      }
    }

    std::fill(dan.begin(), dan.end(), 0.0);
    for (size_t t = 0; t < n; ++t) {
      matvec_backward(lp.wq, {al.an.data() + t * d, d}, {dq.data() + t * d, d}, gl.wq, gl.bq,
                      {dan.data() + t * d, d});
      matvec_backward(lp.wk, {al.an.data() + t * d, d}, {dk.data() + t * d, d}, gl.wk, gl.bk,
                      {dan.data() + t * d, d});
      matvec_backward(lp.wv, {al.an.data() + t * d, d}, {dv.data() + t * d, d}, gl.wv, gl.bv,
                      {dan.data() + t * d, d});
      rmsnorm_backward({x_in.data() + t * d, d}, lp.attn_gain, al.r_attn[t],
                       {dan.data() + t * d, d}, gl.attn_gain, {dx.data() + t * d, d});
    }
  }

  // Embeddings.
  for (size_t t = 0; t < n; ++t) {
    double* ge = grads.tok_emb.data() + static_cast<size_t>(tokens[t]) * d;
    const double* dxt = dx.data() + t * d;
    for (size_t i = 0; i < d; ++i) ge[i] += dxt[i];
    if (cfg.position_mode == PositionMode::AbsoluteLearned) {
      double* gp = grads.pos_emb.data() + static_cast<size_t>(positions[t]) * d;
      for (size_t i = 0; i < d; ++i) gp[i] += dxt[i];
    }
  }
  return loss;
}

// ============================================================================
// Training
// ============================================================================

namespace {

AttentionMask causal_mask(size_t n) {
  AttentionMask m(n);
  for (size_t q = 0; q < n; ++q)
    for (size_t k = 0; k <= q; ++k) m.set(q, k);
  return m;
}

double corpus_loss(const ModelState& model, std::span<const std::vector<int>> sequences) {
  double total = 0.0;
  for (const auto& seq : sequences) {
    total += clm_loss(model, seq, causal_mask(seq.size()), absolute_positions(seq.size()));
  }
  return sequences.empty() ? 0.0 : total / static_cast<double>(sequences.size());
}

}  // namespace

TrainResult train_clm(ModelState& model, const std::vector<std::vector<int>>& corpus,
                      const SgdOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("train_clm: empty corpus");
  for (const auto& seq : corpus) {
    if (seq.size() < 2) throw std::invalid_argument("train_clm: sequence shorter than 2");
  }
  if (options.batch_size < 1) throw std::invalid_argument("train_clm: batch_size must be >= 1");

  // Held-out slice from the corpus tail; a single-sequence corpus is its own
  // held-out set (memorization runs).
  size_t n_held =
      std::min(corpus.size() - 1,
               static_cast<size_t>(options.heldout_fraction * static_cast<double>(corpus.size())));
  if (corpus.size() == 1) n_held = 0;
  const size_t n_train = corpus.size() - n_held;
  std::span<const std::vector<int>> train_split(corpus.data(), n_train);
  std::span<const std::vector<int>> held_split =
      n_held ? std::span<const std::vector<int>>(corpus.data() + n_train, n_held)
             : std::span<const std::vector<int>>(corpus.data(), corpus.size());

  TrainResult result;
  result.initial_heldout_loss = corpus_loss(model, held_split);
  result.log.push_back({model.step, result.initial_heldout_loss, result.initial_heldout_loss});

  Rng rng(derive_seed(options.seed, "train_order"));
  ModelState grads = zeros_like(model);
  const double scale = options.learning_rate / static_cast<double>(options.batch_size);

  // visit_tensors enumerates both states in the same fixed order.
  std::vector<std::vector<double>*> params, grad_tensors;
  model.visit_tensors(
      [&](const std::string&, std::vector<double>& t) { params.push_back(&t); });
  grads.visit_tensors(
      [&](const std::string&, std::vector<double>& t) { grad_tensors.push_back(&t); });

  for (int64_t s = 0; s < options.steps; ++s) {
    for (auto* g : grad_tensors) std::fill(g->begin(), g->end(), 0.0);
    double batch_loss = 0.0;
    for (int b = 0; b < options.batch_size; ++b) {
      const auto& seq = train_split[static_cast<size_t>(rng.next_below(train_split.size()))];
      batch_loss += clm_backward(model, seq, causal_mask(seq.size()),
                                 absolute_positions(seq.size()), grads);
    }
    batch_loss /= static_cast<double>(options.batch_size);
    if (!std::isfinite(batch_loss))
      throw gate_error("train_clm: loss diverged (non-finite) at step " +
                       std::to_string(model.step));

    if (options.learning_rate != 0.0) {
      for (size_t ti = 0; ti < params.size(); ++ti) {
        auto& t = *params[ti];
        const auto& g = *grad_tensors[ti];
        for (size_t i = 0; i < t.size(); ++i) t[i] -= scale * g[i];
      }
    }
    model.step++;
    model.check_finite("after SGD step " + std::to_string(model.step));

    if (options.log_every > 0 &&
        (model.step % options.log_every == 0 || s + 1 == options.steps)) {
      result.log.push_back({model.step, batch_loss, corpus_loss(model, held_split)});
    }
  }
  result.final_heldout_loss = corpus_loss(model, held_split);
  return result;
}

// ============================================================================
// Scoring
// ============================================================================

LabelScore score_labels(const ForwardTrace& trace, size_t query_end,
                        std::span<const int> label_ids) {
  if (label_ids.empty()) throw std::invalid_argument("score_labels: empty label set");
  if (query_end >= trace.n) throw std::invalid_argument("score_labels: position out of range");
  const auto row = trace.logits_at(query_end);
  const double lse = logsumexp(row);
  LabelScore score;
  score.log_probs.reserve(label_ids.size());
  for (int id : label_ids) {
    if (id < 0 || id >= trace.vocab)
      throw std::invalid_argument("score_labels: label id outside vocabulary");
    score.log_probs.push_back(row[static_cast<size_t>(id)] - lse);
  }
  score.chosen_index = 0;
  for (size_t i = 1; i < score.log_probs.size(); ++i) {
    // Strict comparison: ties stay with the lowest label index.
    if (score.log_probs[i] > score.log_probs[static_cast<size_t>(score.chosen_index)])
      score.chosen_index = static_cast<int>(i);
  }
  return score;
}

// ============================================================================
// Finite differences
// ============================================================================

GradCheckReport finite_difference_check(const ModelState& model, std::span<const int> tokens,
                                        const AttentionMask& mask,
                                        std::span<const int> positions,
                                        size_t sample_coordinates, uint64_t seed) {
  ModelState work = model;
  ModelState grads = zeros_like(model);
  clm_backward(work, tokens, mask, positions, grads);

  struct TensorRef {
    std::string name;
    std::vector<double>* data;
    std::vector<double>* grad;
  };
  std::vector<TensorRef> refs;
  work.visit_tensors([&](const std::string& name, std::vector<double>& t) {
    refs.push_back({name, &t, nullptr});
  });
  size_t i = 0;
  grads.visit_tensors([&](const std::string&, std::vector<double>& t) {
    refs[i++].grad = &t;
  });

  Rng rng(derive_seed(seed, "gradcheck"));
  GradCheckReport report;
  report.coordinates = sample_coordinates;
  for (size_t c = 0; c < sample_coordinates; ++c) {
    // Round-robin across tensors so every parameter family is covered.
    TensorRef& ref = refs[c % refs.size()];
    const size_t idx = static_cast<size_t>(rng.next_below(ref.data->size()));
    const double original = (*ref.data)[idx];
    const double h = 1e-5 * std::max(1.0, std::abs(original));
    (*ref.data)[idx] = original + h;
    const double up = clm_loss(work, tokens, mask, positions);
    (*ref.data)[idx] = original - h;
    const double down = clm_loss(work, tokens, mask, positions);
    (*ref.data)[idx] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = (*ref.grad)[idx];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    const double rel = std::abs(numeric - analytic) / scale;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_tensor = ref.name;
      report.worst_index = idx;
    }
  }
  return report;
}

// ============================================================================
// Checkpoints
// ============================================================================

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'L', 'M', 'K', 'C', 'K', 'P', '1'};

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const std::string& in, size_t& cursor) {
  if (cursor + 8 > in.size()) throw std::runtime_error("checkpoint: truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(in[cursor + static_cast<size_t>(i)]))
         << (8 * i);
  cursor += 8;
  return v;
}
}  // namespace

std::string serialize_checkpoint(const ModelState& model, uint64_t vocab_fingerprint) {
  std::string out;
  out.append(kCheckpointMagic, 8);
  const std::string config = model.config.to_json();
  put_u64(out, config.size());
  out += config;
  put_u64(out, vocab_fingerprint);
  put_u64(out, static_cast<uint64_t>(model.step));
  size_t count = 0;
  model.visit_tensors([&](const std::string&, const std::vector<double>&) { ++count; });
  put_u64(out, count);
  model.visit_tensors([&](const std::string& name, const std::vector<double>& t) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.size());
    const size_t offset = out.size();
    out.resize(offset + t.size() * sizeof(double));
    std::memcpy(out.data() + offset, t.data(), t.size() * sizeof(double));
  });
  return out;
}

void save_checkpoint(const ModelState& model, uint64_t vocab_fingerprint,
                     const std::string& path) {
  write_file(path, serialize_checkpoint(model, vocab_fingerprint));
}

Checkpoint parse_checkpoint(const std::string& in) {
  size_t cursor = 0;
  if (in.size() < 8 || std::memcmp(in.data(), kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  cursor = 8;
  const uint64_t config_len = get_u64(in, cursor);
  if (cursor + config_len > in.size()) throw std::runtime_error("checkpoint: truncated config");
  const std::string config_json = in.substr(cursor, config_len);
  cursor += config_len;
  Checkpoint ck;
  ck.vocab_fingerprint = get_u64(in, cursor);
  const auto step = static_cast<int64_t>(get_u64(in, cursor));
  ck.model = init_model(ModelConfig::from_json(config_json));
  ck.model.step = step;
  const uint64_t count = get_u64(in, cursor);

  std::map<std::string, std::vector<double>*> by_name;
  ck.model.visit_tensors(
      [&](const std::string& name, std::vector<double>& t) { by_name[name] = &t; });
  if (count != by_name.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = get_u64(in, cursor);
    if (cursor + name_len > in.size()) throw std::runtime_error("checkpoint: truncated name");
    const std::string name = in.substr(cursor, name_len);
    cursor += name_len;
    const uint64_t elems = get_u64(in, cursor);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown tensor " + name);
    if (it->second->size() != elems)
      throw std::runtime_error("checkpoint: size mismatch for tensor " + name);
    if (cursor + elems * sizeof(double) > in.size())
      throw std::runtime_error("checkpoint: truncated tensor " + name);
    std::memcpy(it->second->data(), in.data() + cursor, elems * sizeof(double));
    cursor += elems * sizeof(double);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

}  // namespace slidemask
