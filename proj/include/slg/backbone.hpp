#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slg/common.hpp"
#include "slg/corpus.hpp"
#include "slg/mat.hpp"
#include "slg/nn.hpp"
#include "slg/rng.hpp"
#include "slg/scale.hpp"
#include "slg/speechprior.hpp"

namespace slg {

// ---------------------------------------------------------------------------
// Session sequences: [prior?] then per part its instruction tokens, then per
// response the prompt tokens followed by that response's audio frames, and a
// single end-of-session marker the head reads from.
// ---------------------------------------------------------------------------

enum class ItemKind { PriorPrefix, TextToken, AudioFrame };

struct SequenceItem {
  ItemKind kind = ItemKind::TextToken;
  std::optional<PartId> part;
  std::optional<int> response_index;
  int token_id = -1;                        // TextToken
  std::vector<double> enc;                  // AudioFrame: frozen-encoded frame
  std::array<double, kNumBands> prior{};    // PriorPrefix: band probabilities
  std::vector<double> embedding;            // d_model, filled at build time
};

struct SessionSequence {
  std::vector<SequenceItem> items;
  std::vector<bool> attention_mask;  // per item; all true at batch size 1
};

inline const char* part_instruction(PartId p) {
  switch (p) {
    case PartId::P1:
      return "Part 1. Interview: answer short questions about yourself.";
    case PartId::P3:
      return "Part 3. Long turn: give a one-minute opinion talk on the topic.";
    case PartId::P4:
      return "Part 4. Long turn: describe the process shown in the graphic.";
    case PartId::P5:
      return "Part 5. Communication activity: answer five questions on the topic.";
  }
  throw std::invalid_argument("part_instruction: bad PartId");
}

// ---------------------------------------------------------------------------
// Model configuration. Base transformer weights are frozen at init; only the
// LoRA pairs, regression head, audio adapter and prior projector train.
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 6> kLoraTargetNames = {
    "attn.q", "attn.k", "attn.v", "attn.o", "mlp.fc1", "mlp.fc2"};

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 0;  // 0 -> 4 * d_model
  int vocab = 256;
  int max_context = 4096;
  int audio_stride = 8;
  bool causal = false;
  int head_outputs = 5;
  int d_w = 32;

  int lora_rank = 4;
  double lora_alpha = 8.0;
  std::vector<std::string> lora_targets{kLoraTargetNames.begin(),
                                        kLoraTargetNames.end()};

  // Init scales. The frozen branch-output projections run hot on purpose so
  // the residual stream at the marker keeps a large, linearly readable trace
  // of the audio evidence for the low-rate head updates to latch onto.
  double pe_scale = 0.5;
  double embed_init = 1.0;
  double qk_init = 1.0;
  double v_init = 1.0;
  double o_init = 2.0;
  double ff_in_init = 1.0;
  double ff_out_init = 2.0;
  double adapter_init = 4.0;
  double projector_init = 1.0;
  double lora_a_init = 1.0;
  double head_bias_init = 3.75;  // scale midpoint

  std::uint64_t seed = 1;

  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || vocab < 1)
      throw std::invalid_argument("ModelConfig: dims must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must divide by n_heads");
    if (head_outputs != 5 && head_outputs != 1)
      throw std::invalid_argument("ModelConfig: head_outputs must be 5 or 1");
    if (audio_stride < 1)
      throw std::invalid_argument("ModelConfig: audio_stride must be >= 1");
  }
};

struct LoraPair {
  Mat a;  // r x d_in
  Mat b;  // d_out x r
};

struct LayerWeights {
  std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
  Mat wq, wk, wv, wo;
  std::vector<double> bq, bk, bv, bo;
  Mat w1;  // d_ff x d_model
  std::vector<double> b1;
  Mat w2;  // d_model x d_ff
  std::vector<double> b2;
  std::array<std::optional<LoraPair>, 6> lora;
};

// Gradients for exactly the trainable set. Traversal order must match
// GraderModel::visit_trainables.
struct GraderGrads {
  Mat adapter_w;
  std::vector<double> adapter_b;
  Mat proj_w;
  std::vector<double> proj_b;
  std::vector<std::array<std::optional<LoraPair>, 6>> lora;
  Mat head_w;
  std::vector<double> head_b;

  void zero() {
    adapter_w.zero();
    std::fill(adapter_b.begin(), adapter_b.end(), 0.0);
    proj_w.zero();
    std::fill(proj_b.begin(), proj_b.end(), 0.0);
    for (auto& layer : lora)
      for (auto& p : layer)
        if (p) {
          p->a.zero();
          p->b.zero();
        }
    head_w.zero();
    std::fill(head_b.begin(), head_b.end(), 0.0);
  }
};

struct Prediction {
  double p1 = 0, p3 = 0, p4 = 0, p5 = 0, ori_overall = 0;
  double part_mean_overall = 0;

  double part_score(PartId p) const {
    switch (p) {
      case PartId::P1: return p1;
      case PartId::P3: return p3;
      case PartId::P4: return p4;
      case PartId::P5: return p5;
    }
    throw std::invalid_argument("Prediction: bad PartId");
  }
  std::array<double, 5> raw() const { return {p1, p3, p4, p5, ori_overall}; }
};

class GraderModel {
 public:
  GraderModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dff = static_cast<std::size_t>(cfg_.ff_dim());

    Rng rng(derive_seed(cfg_.seed, 1));
    token_table_ = Mat(static_cast<std::size_t>(cfg_.vocab) + 1, d);
    token_table_.fill_gaussian(rng, cfg_.embed_init);

    layers_.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& L = layers_[l];
      Rng lr(derive_seed(cfg_.seed, 100 + l));
      const double sd_qk = cfg_.qk_init / std::sqrt(static_cast<double>(d));
      const double sd_v = cfg_.v_init / std::sqrt(static_cast<double>(d));
      const double sd_o = cfg_.o_init / std::sqrt(static_cast<double>(d));
      L.wq = Mat(d, d);
      L.wq.fill_gaussian(lr, sd_qk);
      L.wk = Mat(d, d);
      L.wk.fill_gaussian(lr, sd_qk);
      L.wv = Mat(d, d);
      L.wv.fill_gaussian(lr, sd_v);
      L.wo = Mat(d, d);
      L.wo.fill_gaussian(lr, sd_o);
      L.bq.assign(d, 0.0);
      L.bk.assign(d, 0.0);
      L.bv.assign(d, 0.0);
      L.bo.assign(d, 0.0);
      L.w1 = Mat(dff, d);
      L.w1.fill_gaussian(lr, cfg_.ff_in_init / std::sqrt(static_cast<double>(d)));
      L.b1.assign(dff, 0.0);
      L.w2 = Mat(d, dff);
      L.w2.fill_gaussian(lr, cfg_.ff_out_init / std::sqrt(static_cast<double>(dff)));
      L.b2.assign(d, 0.0);
      L.ln1_g.assign(d, 1.0);
      L.ln1_b.assign(d, 0.0);
      L.ln2_g.assign(d, 1.0);
      L.ln2_b.assign(d, 0.0);
    }

    adapter_w_ = Mat(d, static_cast<std::size_t>(cfg_.d_w));
    {
      Rng ar(derive_seed(cfg_.seed, 7));
      adapter_w_.fill_gaussian(
          ar, cfg_.adapter_init / std::sqrt(static_cast<double>(cfg_.d_w)));
    }
    adapter_b_.assign(d, 0.0);

    projector_ = PriorProjector(cfg_.d_model, cfg_.seed, cfg_.projector_init);

    head_w_ = Mat(static_cast<std::size_t>(cfg_.head_outputs), d);  // zero
    head_b_.assign(static_cast<std::size_t>(cfg_.head_outputs),
                   cfg_.head_bias_init);

    if (!cfg_.lora_targets.empty())
      wrap_lora(cfg_.lora_rank, cfg_.lora_alpha, cfg_.lora_targets);
  }

  const ModelConfig& config() const { return cfg_; }

  // Adds low-rank pairs to the named projections on every layer. A starts
  // small and random, B at zero, so a freshly wrapped layer computes exactly
  // the base projection.
  void wrap_lora(int rank, double alpha,
                 const std::vector<std::string>& targets) {
    if (rank < 1) throw std::invalid_argument("wrap_lora: rank must be >= 1");
    cfg_.lora_rank = rank;
    cfg_.lora_alpha = alpha;
    cfg_.lora_targets = targets;
    for (auto& L : layers_)
      for (auto& p : L.lora) p.reset();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dff = static_cast<std::size_t>(cfg_.ff_dim());
    for (const auto& t : targets) {
      int slot = -1;
      for (int i = 0; i < 6; ++i)
        if (t == kLoraTargetNames[static_cast<std::size_t>(i)]) slot = i;
      if (slot < 0) throw errf("wrap_lora: unknown target '%s'", t.c_str());
      const std::size_t d_in = slot == 5 ? dff : d;
      const std::size_t d_out = slot == 4 ? dff : d;
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        Rng rng(derive_seed(cfg_.seed, 9000 + 16 * l + static_cast<std::size_t>(slot)));
        LoraPair pair;
        pair.a = Mat(static_cast<std::size_t>(rank), d_in);
        pair.a.fill_gaussian(rng,
                             cfg_.lora_a_init / std::sqrt(static_cast<double>(d_in)));
        pair.b = Mat(d_out, static_cast<std::size_t>(rank));  // zero
        layers_[l].lora[static_cast<std::size_t>(slot)] = std::move(pair);
      }
    }
  }

  // --- embeddings ---------------------------------------------------------

  static std::vector<int> tokenize(const std::string& text, int vocab) {
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i)
        ids.push_back(static_cast<int>(fnv1a64(text.data() + i, j - i) %
                                       static_cast<std::uint64_t>(vocab)));
      i = j;
    }
    return ids;
  }

  int marker_token() const { return cfg_.vocab; }

  std::vector<double> embed_item(const SequenceItem& item) const {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    std::vector<double> e(d, 0.0);
    switch (item.kind) {
      case ItemKind::TextToken: {
        if (item.token_id < 0 || item.token_id > cfg_.vocab)
          throw errf("embed_item: token id %d out of range", item.token_id);
        const double* row = token_table_.row(static_cast<std::size_t>(item.token_id));
        for (std::size_t j = 0; j < d; ++j) e[j] = row[j];
        break;
      }
      case ItemKind::AudioFrame: {
        if (item.enc.size() != static_cast<std::size_t>(cfg_.d_w))
          throw errf("embed_item: audio payload dim %zu, expected %d",
                     item.enc.size(), cfg_.d_w);
        for (std::size_t j = 0; j < d; ++j) {
          double acc = adapter_b_[j];
          const double* wj = adapter_w_.row(j);
          for (std::size_t k = 0; k < item.enc.size(); ++k)
            acc += wj[k] * item.enc[k];
          e[j] = acc;
        }
        break;
      }
      case ItemKind::PriorPrefix: {
        AppPrior p;
        p.probs = item.prior;
        e = projector_.project(p);
        break;
      }
    }
    return e;
  }

  // --- forward / backward -------------------------------------------------

  struct Cache {
    Mat x0;
    std::vector<Mat> ln1_out, ln2_out;
    std::vector<std::vector<double>> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    std::vector<Mat> q, k, v;
    std::vector<std::vector<Mat>> attn_p;  // [layer][head]: n x n
    std::vector<Mat> attn_concat;
    std::vector<Mat> x_after_attn;
    std::vector<Mat> h1, gelu_out;
    std::vector<Mat> x_in;  // layer inputs; x_in[0] == x0
    std::array<std::vector<std::optional<Mat>>, 6> lora_u;  // [slot][layer]
    std::vector<double> h_last;
  };

  std::vector<double> forward_raw(const SessionSequence& seq,
                                  Cache* cache = nullptr) const {
    const std::size_t n = seq.items.size();
    if (n == 0) throw errf("forward: empty sequence");
    for (bool b : seq.attention_mask)
      if (!b) throw errf("forward: padded attention masks are not supported");
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dff = static_cast<std::size_t>(cfg_.ff_dim());
    const int H = cfg_.n_heads;
    const auto dh = static_cast<std::size_t>(cfg_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double lora_scale =
        cfg_.lora_rank > 0 ? cfg_.lora_alpha / cfg_.lora_rank : 0.0;

    Mat x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto e = embed_item(seq.items[i]);
      double* xi = x.row(i);
      for (std::size_t j = 0; j < d; ++j) xi[j] = e[j];
      add_positional(xi, i, d);
    }
    if (cache) {
      cache->x0 = x;
      cache->ln1_out.resize(layers_.size());
      cache->ln2_out.resize(layers_.size());
      cache->ln1_mean.resize(layers_.size());
      cache->ln1_rstd.resize(layers_.size());
      cache->ln2_mean.resize(layers_.size());
      cache->ln2_rstd.resize(layers_.size());
      cache->q.resize(layers_.size());
      cache->k.resize(layers_.size());
      cache->v.resize(layers_.size());
      cache->attn_p.resize(layers_.size());
      cache->attn_concat.resize(layers_.size());
      cache->x_after_attn.resize(layers_.size());
      cache->h1.resize(layers_.size());
      cache->gelu_out.resize(layers_.size());
      cache->x_in.resize(layers_.size());
      for (auto& slot : cache->lora_u) slot.assign(layers_.size(), std::nullopt);
    }

    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (cache) cache->x_in[l] = x;

      Mat a(n, d);
      std::vector<double> mean1(n), rstd1(n);
      layer_norm(x, L.ln1_g, L.ln1_b, a, mean1, rstd1);

      Mat q, k, v;
      std::optional<Mat> uq, uk, uv;
      project(a, L.wq, L.bq, L.lora[0], lora_scale, q, &uq);
      project(a, L.wk, L.bk, L.lora[1], lora_scale, k, &uk);
      project(a, L.wv, L.bv, L.lora[2], lora_scale, v, &uv);

      Mat concat(n, d);
      std::vector<Mat> probs(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h) {
        Mat qh = slice_cols(q, static_cast<std::size_t>(h) * dh, dh);
        Mat kh = slice_cols(k, static_cast<std::size_t>(h) * dh, dh);
        Mat vh = slice_cols(v, static_cast<std::size_t>(h) * dh, dh);
        Mat s;
        matmul_nt(qh, kh, s);
        for (auto& val : s.a) val *= scale;
        if (cfg_.causal) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s(i, j) = -1e30;
        }
        for (std::size_t i = 0; i < n; ++i) softmax_row(s.row(i), n);
        Mat oh;
        matmul_nn(s, vh, oh);
        for (std::size_t i = 0; i < n; ++i) {
          double* ci = concat.row(i) + static_cast<std::size_t>(h) * dh;
          const double* oi = oh.row(i);
          for (std::size_t j = 0; j < dh; ++j) ci[j] = oi[j];
        }
        probs[static_cast<std::size_t>(h)] = std::move(s);
      }

      Mat attn_out;
      std::optional<Mat> uo;
      project(concat, L.wo, L.bo, L.lora[3], lora_scale, attn_out, &uo);
      for (std::size_t i = 0; i < x.size(); ++i) x.a[i] += attn_out.a[i];

      if (cache) {
        cache->ln1_out[l] = std::move(a);
        cache->ln1_mean[l] = std::move(mean1);
        cache->ln1_rstd[l] = std::move(rstd1);
        cache->q[l] = std::move(q);
        cache->k[l] = std::move(k);
        cache->v[l] = std::move(v);
        cache->attn_p[l] = std::move(probs);
        cache->attn_concat[l] = std::move(concat);
        cache->x_after_attn[l] = x;
        cache->lora_u[0][l] = std::move(uq);
        cache->lora_u[1][l] = std::move(uk);
        cache->lora_u[2][l] = std::move(uv);
        cache->lora_u[3][l] = std::move(uo);
      }

      Mat m(n, d);
      std::vector<double> mean2(n), rstd2(n);
      layer_norm(x, L.ln2_g, L.ln2_b, m, mean2, rstd2);

      Mat h1, mlp_out;
      std::optional<Mat> u1, u2;
      project(m, L.w1, L.b1, L.lora[4], lora_scale, h1, &u1);
      Mat g(n, dff);
      for (std::size_t i = 0; i < h1.size(); ++i) g.a[i] = gelu(h1.a[i]);
      project(g, L.w2, L.b2, L.lora[5], lora_scale, mlp_out, &u2);
      for (std::size_t i = 0; i < x.size(); ++i) x.a[i] += mlp_out.a[i];

      if (cache) {
        cache->ln2_out[l] = std::move(m);
        cache->ln2_mean[l] = std::move(mean2);
        cache->ln2_rstd[l] = std::move(rstd2);
        cache->h1[l] = std::move(h1);
        cache->gelu_out[l] = std::move(g);
        cache->lora_u[4][l] = std::move(u1);
        cache->lora_u[5][l] = std::move(u2);
      }
    }

    const double* h_last = x.row(n - 1);
    std::vector<double> pred(static_cast<std::size_t>(cfg_.head_outputs));
    for (std::size_t o = 0; o < pred.size(); ++o) {
      double acc = head_b_[o];
      const double* wo = head_w_.row(o);
      for (std::size_t j = 0; j < d; ++j) acc += wo[j] * h_last[j];
      pred[o] = acc;
    }
    for (double p : pred)
      if (!std::isfinite(p)) throw errf("forward: non-finite activation in head output");
    if (cache) cache->h_last.assign(h_last, h_last + d);
    return pred;
  }

  // Accumulates gradients of the trainable set given d(loss)/d(pred).
  void backward(const SessionSequence& seq, const Cache& cache,
                const std::vector<double>& dpred, GraderGrads& grads) const {
    const std::size_t n = seq.items.size();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dff = static_cast<std::size_t>(cfg_.ff_dim());
    const int H = cfg_.n_heads;
    const auto dh = static_cast<std::size_t>(cfg_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double lora_scale =
        cfg_.lora_rank > 0 ? cfg_.lora_alpha / cfg_.lora_rank : 0.0;
    if (dpred.size() != static_cast<std::size_t>(cfg_.head_outputs))
      throw errf("backward: dpred size mismatch");

    Mat dx(n, d);
    for (std::size_t o = 0; o < dpred.size(); ++o) {
      const double g = dpred[o];
      double* gw = grads.head_w.row(o);
      const double* wo = head_w_.row(o);
      double* dlast = dx.row(n - 1);
      for (std::size_t j = 0; j < d; ++j) {
        gw[j] += g * cache.h_last[j];
        dlast[j] += g * wo[j];
      }
      grads.head_b[o] += g;
    }

    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& L = layers_[li];

      // MLP block: x_out = x_mid + W2' gelu(W1' ln2(x_mid))
      Mat dg(n, dff);
      project_backward(cache.gelu_out[li], L.w2, L.lora[5], lora_scale,
                       cache.lora_u[5][li], dx, dg,
                       grads.lora[li][5]);
      Mat dh1(n, dff);
      for (std::size_t i = 0; i < dh1.size(); ++i)
        dh1.a[i] = dg.a[i] * gelu_grad(cache.h1[li].a[i]);
      Mat dm(n, d);
      project_backward(cache.ln2_out[li], L.w1, L.lora[4], lora_scale,
                       cache.lora_u[4][li], dh1, dm,
                       grads.lora[li][4]);
      layer_norm_backward(cache.x_after_attn[li], cache.ln2_mean[li],
                          cache.ln2_rstd[li], L.ln2_g, dm, dx);

      // Attention block: x_mid = x_in + Wo' heads(ln1(x_in))
      Mat dconcat(n, d);
      project_backward(cache.attn_concat[li], L.wo, L.lora[3], lora_scale,
                       cache.lora_u[3][li], dx, dconcat,
                       grads.lora[li][3]);

      Mat dq(n, d), dk(n, d), dv(n, d);
      for (int h = 0; h < H; ++h) {
        const Mat& p = cache.attn_p[li][static_cast<std::size_t>(h)];
        Mat qh = slice_cols(cache.q[li], static_cast<std::size_t>(h) * dh, dh);
        Mat kh = slice_cols(cache.k[li], static_cast<std::size_t>(h) * dh, dh);
        Mat vh = slice_cols(cache.v[li], static_cast<std::size_t>(h) * dh, dh);
        Mat doh = slice_cols(dconcat, static_cast<std::size_t>(h) * dh, dh);

        Mat dvh(n, dh);
        matmul_tn_acc(p, doh, dvh);
        Mat dp;
        matmul_nt(doh, vh, dp);
        for (std::size_t i = 0; i < n; ++i)
          softmax_row_backward(p.row(i), dp.row(i), n);
        if (cfg_.causal) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) dp(i, j) = 0.0;
        }
        for (auto& val : dp.a) val *= scale;
        Mat dqh;
        matmul_nn(dp, kh, dqh);
        Mat dkh(n, dh);
        matmul_tn_acc(dp, qh, dkh);

        for (std::size_t i = 0; i < n; ++i) {
          double* q_out = dq.row(i) + static_cast<std::size_t>(h) * dh;
          double* k_out = dk.row(i) + static_cast<std::size_t>(h) * dh;
          double* v_out = dv.row(i) + static_cast<std::size_t>(h) * dh;
          const double* q_in = dqh.row(i);
          const double* k_in = dkh.row(i);
          const double* v_in = dvh.row(i);
          for (std::size_t j = 0; j < dh; ++j) {
            q_out[j] += q_in[j];
            k_out[j] += k_in[j];
            v_out[j] += v_in[j];
          }
        }
      }

      Mat da(n, d);
      project_backward(cache.ln1_out[li], L.wq, L.lora[0], lora_scale,
                       cache.lora_u[0][li], dq, da, grads.lora[li][0]);
      project_backward(cache.ln1_out[li], L.wk, L.lora[1], lora_scale,
                       cache.lora_u[1][li], dk, da, grads.lora[li][1]);
      project_backward(cache.ln1_out[li], L.wv, L.lora[2], lora_scale,
                       cache.lora_u[2][li], dv, da, grads.lora[li][2]);
      layer_norm_backward(cache.x_in[li], cache.ln1_mean[li],
                          cache.ln1_rstd[li], L.ln1_g, da, dx);
    }

    // Route input-embedding gradients into the trainable embedders.
    for (std::size_t i = 0; i < n; ++i) {
      const auto& item = seq.items[i];
      const double* g = dx.row(i);
      if (item.kind == ItemKind::AudioFrame) {
        for (std::size_t j = 0; j < d; ++j) {
          double* gw = grads.adapter_w.row(j);
          for (std::size_t k2 = 0; k2 < item.enc.size(); ++k2)
            gw[k2] += g[j] * item.enc[k2];
          grads.adapter_b[j] += g[j];
        }
      } else if (item.kind == ItemKind::PriorPrefix) {
        for (std::size_t j = 0; j < d; ++j) {
          double* gw = grads.proj_w.row(j);
          for (std::size_t k2 = 0; k2 < kNumBands; ++k2)
            gw[k2] += g[j] * item.prior[k2];
          grads.proj_b[j] += g[j];
        }
      }
    }
  }

  // --- parameter registry ---------------------------------------------------

  struct ParamRef {
    std::string name;
    double* data;
    std::size_t n;
    bool decay;  // weight decay applies (biases are exempt)
  };

  GraderGrads make_grads() const {
    GraderGrads g;
    g.adapter_w = Mat(adapter_w_.rows, adapter_w_.cols);
    g.adapter_b.assign(adapter_b_.size(), 0.0);
    g.proj_w = Mat(projector_.w.rows, projector_.w.cols);
    g.proj_b.assign(projector_.b.size(), 0.0);
    g.lora.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (int s = 0; s < 6; ++s)
        if (layers_[l].lora[static_cast<std::size_t>(s)]) {
          const auto& p = *layers_[l].lora[static_cast<std::size_t>(s)];
          LoraPair zp;
          zp.a = Mat(p.a.rows, p.a.cols);
          zp.b = Mat(p.b.rows, p.b.cols);
          g.lora[l][static_cast<std::size_t>(s)] = std::move(zp);
        }
    g.head_w = Mat(head_w_.rows, head_w_.cols);
    g.head_b.assign(head_b_.size(), 0.0);
    return g;
  }

  std::vector<ParamRef> trainable_parameters() {
    std::vector<ParamRef> refs;
    visit(*this, [&](const std::string& name, double* p, std::size_t n, bool decay) {
      refs.push_back({name, p, n, decay});
    });
    return refs;
  }

  std::vector<ParamRef> grad_refs(GraderGrads& g) const {
    std::vector<ParamRef> refs;
    visit_grads(g, [&](const std::string& name, double* p, std::size_t n, bool decay) {
      refs.push_back({name, p, n, decay});
    });
    return refs;
  }

  long trainable_count() {
    long c = 0;
    for (const auto& r : trainable_parameters()) c += static_cast<long>(r.n);
    return c;
  }

  // Frozen base tensors, exposed for checkpointing and freeze audits.
  std::vector<ParamRef> frozen_parameters() {
    std::vector<ParamRef> refs;
    auto add = [&](const std::string& name, std::vector<double>& v) {
      refs.push_back({name, v.data(), v.size(), false});
    };
    auto addm = [&](const std::string& name, Mat& m) {
      refs.push_back({name, m.a.data(), m.a.size(), false});
    };
    addm("token_table", token_table_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& L = layers_[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      addm(p + "wq", L.wq);
      addm(p + "wk", L.wk);
      addm(p + "wv", L.wv);
      addm(p + "wo", L.wo);
      add(p + "bq", L.bq);
      add(p + "bk", L.bk);
      add(p + "bv", L.bv);
      add(p + "bo", L.bo);
      addm(p + "w1", L.w1);
      add(p + "b1", L.b1);
      addm(p + "w2", L.w2);
      add(p + "b2", L.b2);
      add(p + "ln1_g", L.ln1_g);
      add(p + "ln1_b", L.ln1_b);
      add(p + "ln2_g", L.ln2_g);
      add(p + "ln2_b", L.ln2_b);
    }
    return refs;
  }

  Mat& head_w() { return head_w_; }
  std::vector<double>& head_b() { return head_b_; }
  const Mat& head_w() const { return head_w_; }
  const std::vector<double>& head_b() const { return head_b_; }
  PriorProjector& projector() { return projector_; }
  const PriorProjector& projector() const { return projector_; }
  Mat& adapter_w() { return adapter_w_; }
  std::vector<double>& adapter_b() { return adapter_b_; }
  std::vector<LayerWeights>& layers() { return layers_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }
  const Mat& token_table() const { return token_table_; }

 private:
  static Mat slice_cols(const Mat& m, std::size_t start, std::size_t width) {
    Mat out(m.rows, width);
    for (std::size_t i = 0; i < m.rows; ++i) {
      const double* src = m.row(i) + start;
      double* dst = out.row(i);
      for (std::size_t j = 0; j < width; ++j) dst[j] = src[j];
    }
    return out;
  }

  void add_positional(double* x, std::size_t pos, std::size_t d) const {
    for (std::size_t j = 0; j < d; j += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      x[j] += cfg_.pe_scale * std::sin(angle);
      if (j + 1 < d) x[j + 1] += cfg_.pe_scale * std::cos(angle);
    }
  }

  static constexpr double kLnEps = 1e-5;

  static void layer_norm(const Mat& x, const std::vector<double>& g,
                         const std::vector<double>& b, Mat& out,
                         std::vector<double>& means,
                         std::vector<double>& rstds) {
    const std::size_t d = x.cols;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* xi = x.row(i);
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += xi[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xi[j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + kLnEps);
      double* oi = out.row(i);
      for (std::size_t j = 0; j < d; ++j)
        oi[j] = (xi[j] - mean) * rstd * g[j] + b[j];
      means[i] = mean;
      rstds[i] = rstd;
    }
  }

  static void layer_norm_backward(const Mat& x, const std::vector<double>& means,
                                  const std::vector<double>& rstds,
                                  const std::vector<double>& g, const Mat& dy,
                                  Mat& dx_acc) {
    const std::size_t d = x.cols;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* xi = x.row(i);
      const double* dyi = dy.row(i);
      double* dxi = dx_acc.row(i);
      const double mean = means[i];
      const double rstd = rstds[i];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat = (xi[j] - mean) * rstd;
        const double dxhat = dyi[j] * g[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat = (xi[j] - mean) * rstd;
        const double dxhat = dyi[j] * g[j];
        dxi[j] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
      }
    }
  }

  // y = x W' + b (+ lora branch). u caches the rank-r intermediate x A'.
  static void project(const Mat& x, const Mat& w, const std::vector<double>& b,
                      const std::optional<LoraPair>& lora, double lora_scale,
                      Mat& y, std::optional<Mat>* u_out) {
    linear_forward(x, w, b, y);
    if (lora) {
      Mat u;
      matmul_nt(x, lora->a, u);
      Mat add;
      matmul_nt(u, lora->b, add);
      for (std::size_t i = 0; i < y.size(); ++i)
        y.a[i] += lora_scale * add.a[i];
      if (u_out) *u_out = std::move(u);
    } else if (u_out) {
      u_out->reset();
    }
  }

  // dx += dy W (+ lora path); lora grads accumulate into dlora.
  static void project_backward(const Mat& x, const Mat& w,
                               const std::optional<LoraPair>& lora,
                               double lora_scale, const std::optional<Mat>& u,
                               const Mat& dy, Mat& dx,
                               std::optional<LoraPair>& dlora) {
    linear_backward(x, w, dy, &dx, nullptr, nullptr);
    if (lora) {
      if (!u || !dlora) throw errf("project_backward: missing lora cache");
      Mat dy_s = dy;
      for (auto& v : dy_s.a) v *= lora_scale;
      matmul_tn_acc(dy_s, *u, dlora->b);  // dB += s dy' u
      Mat du;
      matmul_nn(dy_s, lora->b, du);  // n x r
      matmul_tn_acc(du, x, dlora->a);  // dA += du' x
      for (std::size_t i = 0; i < dx.rows; ++i) {
        const double* dui = du.row(i);
        double* dxi = dx.row(i);
        for (std::size_t r2 = 0; r2 < du.cols; ++r2) {
          const double v = dui[r2];
          if (v == 0.0) continue;
          const double* ar = lora->a.row(r2);
          for (std::size_t j = 0; j < dx.cols; ++j) dxi[j] += v * ar[j];
        }
      }
    }
  }

  template <class Model, class F>
  static void visit(Model& m, F&& f) {
    f("audio_adapter.w", m.adapter_w_.a.data(), m.adapter_w_.a.size(), true);
    f("audio_adapter.b", m.adapter_b_.data(), m.adapter_b_.size(), false);
    f("prior_projector.w", m.projector_.w.a.data(), m.projector_.w.a.size(), true);
    f("prior_projector.b", m.projector_.b.data(), m.projector_.b.size(), false);
    for (std::size_t l = 0; l < m.layers_.size(); ++l)
      for (int s = 0; s < 6; ++s)
        if (m.layers_[l].lora[static_cast<std::size_t>(s)]) {
          auto& p = *m.layers_[l].lora[static_cast<std::size_t>(s)];
          const std::string base = "layer" + std::to_string(l) + "." +
                                   kLoraTargetNames[static_cast<std::size_t>(s)];
          f(base + ".lora_a", p.a.a.data(), p.a.a.size(), true);
          f(base + ".lora_b", p.b.a.data(), p.b.a.size(), true);
        }
    f("head.w", m.head_w_.a.data(), m.head_w_.a.size(), true);
    f("head.b", m.head_b_.data(), m.head_b_.size(), false);
  }

  // Must mirror visit() exactly.
  template <class F>
  static void visit_grads(GraderGrads& g, F&& f) {
    f("audio_adapter.w", g.adapter_w.a.data(), g.adapter_w.a.size(), true);
    f("audio_adapter.b", g.adapter_b.data(), g.adapter_b.size(), false);
    f("prior_projector.w", g.proj_w.a.data(), g.proj_w.a.size(), true);
    f("prior_projector.b", g.proj_b.data(), g.proj_b.size(), false);
    for (std::size_t l = 0; l < g.lora.size(); ++l)
      for (int s = 0; s < 6; ++s)
        if (g.lora[l][static_cast<std::size_t>(s)]) {
          auto& p = *g.lora[l][static_cast<std::size_t>(s)];
          const std::string base = "layer" + std::to_string(l) + "." +
                                   kLoraTargetNames[static_cast<std::size_t>(s)];
          f(base + ".lora_a", p.a.a.data(), p.a.a.size(), true);
          f(base + ".lora_b", p.b.a.data(), p.b.a.size(), true);
        }
    f("head.w", g.head_w.a.data(), g.head_w.a.size(), true);
    f("head.b", g.head_b.data(), g.head_b.size(), false);
  }

  ModelConfig cfg_;
  Mat token_table_;
  Mat adapter_w_;
  std::vector<double> adapter_b_;
  PriorProjector projector_;
  std::vector<LayerWeights> layers_;
  Mat head_w_;
  std::vector<double> head_b_;
};

// ---------------------------------------------------------------------------
// Sequence builders
// ---------------------------------------------------------------------------

namespace detail {

inline void push_tokens(std::vector<SequenceItem>& items, const std::string& text,
                        const GraderModel& model, std::optional<PartId> part,
                        std::optional<int> response_index) {
  for (int id : GraderModel::tokenize(text, model.config().vocab)) {
    SequenceItem it;
    it.kind = ItemKind::TextToken;
    it.part = part;
    it.response_index = response_index;
    it.token_id = id;
    items.push_back(std::move(it));
  }
}

inline void push_audio(std::vector<SequenceItem>& items, const Response& r,
                       const FrozenEncoder& encoder, const GraderModel& model) {
  const Mat enc = encoder.encode(r.features);
  const int stride = model.config().audio_stride;
  for (std::size_t t = 0; t < enc.rows; t += static_cast<std::size_t>(stride)) {
    SequenceItem it;
    it.kind = ItemKind::AudioFrame;
    it.part = r.part;
    it.response_index = r.index_in_part;
    it.enc.assign(enc.row(t), enc.row(t) + enc.cols);
    items.push_back(std::move(it));
  }
}

inline void push_marker(std::vector<SequenceItem>& items, const GraderModel& model) {
  SequenceItem it;
  it.kind = ItemKind::TextToken;
  it.token_id = model.marker_token();
  items.push_back(std::move(it));
}

inline SessionSequence finish_sequence(std::vector<SequenceItem> items,
                                       const GraderModel& model,
                                       const std::string& what) {
  if (items.size() > static_cast<std::size_t>(model.config().max_context))
    throw errf("sequence for %s has %zu items, exceeding max context %d",
               what.c_str(), items.size(), model.config().max_context);
  SessionSequence seq;
  for (auto& it : items) it.embedding = model.embed_item(it);
  seq.attention_mask.assign(items.size(), true);
  seq.items = std::move(items);
  return seq;
}

}  // namespace detail

inline SessionSequence build_session_sequence(
    const Session& session, const FrozenEncoder& encoder,
    const std::optional<AppPrior>& prior, const GraderModel& model) {
  std::vector<SequenceItem> items;
  if (prior) {
    prior->validate();
    SequenceItem it;
    it.kind = ItemKind::PriorPrefix;
    it.prior = prior->probs;
    items.push_back(std::move(it));
  }
  for (PartId p : kParts) {
    detail::push_tokens(items, part_instruction(p), model, p, std::nullopt);
    for (const auto& r : session.responses) {
      if (r.part != p) continue;
      detail::push_tokens(items, r.prompt_text, model, p, r.index_in_part);
      detail::push_audio(items, r, encoder, model);
    }
  }
  detail::push_marker(items, model);
  return detail::finish_sequence(std::move(items), model,
                                 "session " + session.session_id);
}

inline SessionSequence build_response_sequence(const Response& r,
                                               const FrozenEncoder& encoder,
                                               const GraderModel& model) {
  std::vector<SequenceItem> items;
  detail::push_tokens(items, part_instruction(r.part), model, r.part, std::nullopt);
  detail::push_tokens(items, r.prompt_text, model, r.part, r.index_in_part);
  detail::push_audio(items, r, encoder, model);
  detail::push_marker(items, model);
  return detail::finish_sequence(std::move(items), model, "response");
}

// Five raw head outputs plus the part-mean read-out, sharing the one
// overall_from_parts arithmetic.
inline Prediction predict_session(const GraderModel& model,
                                  const SessionSequence& seq) {
  if (model.config().head_outputs != 5)
    throw errf("predict_session: model has %d head outputs, expected 5",
               model.config().head_outputs);
  const auto raw = model.forward_raw(seq);
  Prediction pr;
  pr.p1 = raw[0];
  pr.p3 = raw[1];
  pr.p4 = raw[2];
  pr.p5 = raw[3];
  pr.ori_overall = raw[4];
  pr.part_mean_overall = overall_from_parts(raw[0], raw[1], raw[2], raw[3]);
  return pr;
}

}  // namespace slg
