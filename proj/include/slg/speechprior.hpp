#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "slg/common.hpp"
#include "slg/corpus.hpp"
#include "slg/mat.hpp"
#include "slg/nn.hpp"
#include "slg/rng.hpp"
#include "slg/scale.hpp"

namespace slg {

// ---------------------------------------------------------------------------
// Frozen speech-encoder surrogate: a seed-determined per-frame affine map
// through tanh. Never trained; the weights exist only so downstream code has
// a fixed, non-trivial acoustic representation to work against.
// ---------------------------------------------------------------------------

struct EncoderConfig {
  int d_feat = 16;
  int d_w = 32;
  double weight_scale = 1.0;  // pre-tanh activation scale, per unit input
  std::uint64_t seed = 0x5eedac0u;
};

class FrozenEncoder {
 public:
  explicit FrozenEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    Rng rng(derive_seed(cfg.seed, 101));
    w_ = Mat(static_cast<std::size_t>(cfg.d_w), static_cast<std::size_t>(cfg.d_feat));
    w_.fill_gaussian(rng, cfg.weight_scale / std::sqrt(static_cast<double>(cfg.d_feat)));
    b_.resize(static_cast<std::size_t>(cfg.d_w));
    for (auto& v : b_) v = rng.gaussian(0.0, 0.1);
  }

  const EncoderConfig& config() const { return cfg_; }
  const Mat& weights() const { return w_; }
  const std::vector<double>& bias() const { return b_; }

  // T x d_w tanh features, one row per input frame.
  Mat encode(const FrameBlob& frames) const {
    if (static_cast<int>(frames.d_feat) != cfg_.d_feat)
      throw errf("frozen_encode: feature dim %u does not match encoder d_feat %d",
                 frames.d_feat, cfg_.d_feat);
    Mat out(frames.t_frames, static_cast<std::size_t>(cfg_.d_w));
    for (std::uint32_t t = 0; t < frames.t_frames; ++t) {
      const float* x = frames.frame(t);
      double* y = out.row(t);
      for (int j = 0; j < cfg_.d_w; ++j) {
        double acc = b_[static_cast<std::size_t>(j)];
        const double* wj = w_.row(static_cast<std::size_t>(j));
        for (int k = 0; k < cfg_.d_feat; ++k) acc += wj[k] * x[k];
        y[j] = std::tanh(acc);
      }
    }
    return out;
  }

  // Used by checkpointing to restore an encoder bit-exactly.
  void set_weights(Mat w, std::vector<double> b) {
    if (w.rows != static_cast<std::size_t>(cfg_.d_w) ||
        w.cols != static_cast<std::size_t>(cfg_.d_feat) ||
        b.size() != static_cast<std::size_t>(cfg_.d_w))
      throw errf("encoder weight shape mismatch on restore");
    w_ = std::move(w);
    b_ = std::move(b);
  }

 private:
  EncoderConfig cfg_;
  Mat w_;
  std::vector<double> b_;
};

inline std::vector<double> mean_pool(const Mat& h) {
  if (h.rows == 0) throw std::invalid_argument("mean_pool: empty matrix");
  std::vector<double> out(h.cols, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t) {
    const double* r = h.row(t);
    for (std::size_t j = 0; j < h.cols; ++j) out[j] += r[j];
  }
  for (auto& v : out) v /= static_cast<double>(h.rows);
  return out;
}

// ---------------------------------------------------------------------------
// Acoustic proficiency prior: pooled encoder frames -> two-layer MLP ->
// softmax over the eight score bands.
// ---------------------------------------------------------------------------

struct AppPrior {
  std::array<double, kNumBands> probs{};

  void validate() const {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw errf("AppPrior: negative or non-finite probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw errf("AppPrior: probabilities sum to %.9f, not 1", sum);
  }
};

inline double app_expected_score(const AppPrior& prior) {
  prior.validate();
  const auto values = band_values();
  double s = 0.0;
  for (int i = 0; i < kNumBands; ++i)
    s += prior.probs[static_cast<std::size_t>(i)] * values[static_cast<std::size_t>(i)];
  return s;
}

// Linear d_w -> hidden, GELU, Dropout 0.1, Linear hidden -> 8. The final
// layer starts at zero so an untrained prior is uniform.
class AppMlp {
 public:
  AppMlp() = default;
  AppMlp(int d_in, int hidden, std::uint64_t init_seed)
      : w1_(static_cast<std::size_t>(hidden), static_cast<std::size_t>(d_in)),
        b1_(static_cast<std::size_t>(hidden), 0.0),
        w2_(kNumBands, static_cast<std::size_t>(hidden)),
        b2_(kNumBands, 0.0) {
    Rng rng(derive_seed(init_seed, 202));
    w1_.fill_gaussian(rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
  }

  int d_in() const { return static_cast<int>(w1_.cols); }
  int hidden() const { return static_cast<int>(w1_.rows); }

  struct Cache {
    std::vector<double> x, pre1, act, dropped;
    std::vector<double> drop_mask;  // inverted-dropout scale per unit
    std::array<double, kNumBands> probs{};
  };

  // train_mode enables dropout; rng must be non-null in that case.
  AppPrior forward(const std::vector<double>& pooled, bool train_mode = false,
                   Rng* rng = nullptr, Cache* cache = nullptr) const {
    if (pooled.size() != w1_.cols)
      throw errf("app_forward: pooled dim %zu does not match MLP input %zu",
                 pooled.size(), w1_.cols);
    const std::size_t h = w1_.rows;
    std::vector<double> pre1(h), act(h), dropped(h), mask(h, 1.0);
    for (std::size_t j = 0; j < h; ++j) {
      double acc = b1_[j];
      const double* wj = w1_.row(j);
      for (std::size_t k = 0; k < pooled.size(); ++k) acc += wj[k] * pooled[k];
      pre1[j] = acc;
      act[j] = gelu(acc);
    }
    if (train_mode) {
      if (!rng) throw errf("app_forward: train mode requires an rng");
      for (std::size_t j = 0; j < h; ++j)
        mask[j] = rng->bernoulli(kDropout) ? 0.0 : 1.0 / (1.0 - kDropout);
    }
    for (std::size_t j = 0; j < h; ++j) dropped[j] = act[j] * mask[j];

    std::array<double, kNumBands> logits{};
    for (std::size_t o = 0; o < kNumBands; ++o) {
      double acc = b2_[o];
      const double* wo = w2_.row(o);
      for (std::size_t j = 0; j < h; ++j) acc += wo[j] * dropped[j];
      if (!std::isfinite(acc)) throw errf("app_forward: non-finite logit");
      logits[o] = acc;
    }
    softmax_row(logits.data(), kNumBands);
    AppPrior prior;
    prior.probs = logits;
    prior.validate();
    if (cache) {
      cache->x = pooled;
      cache->pre1 = std::move(pre1);
      cache->act = std::move(act);
      cache->dropped = std::move(dropped);
      cache->drop_mask = std::move(mask);
      cache->probs = prior.probs;
    }
    return prior;
  }

  Mat& w1() { return w1_; }
  Mat& w2() { return w2_; }
  std::vector<double>& b1() { return b1_; }
  std::vector<double>& b2() { return b2_; }
  const Mat& w1() const { return w1_; }
  const Mat& w2() const { return w2_; }
  const std::vector<double>& b1() const { return b1_; }
  const std::vector<double>& b2() const { return b2_; }

  static constexpr double kDropout = 0.1;

 private:
  Mat w1_;
  std::vector<double> b1_;
  Mat w2_;
  std::vector<double> b2_;
};

// ---------------------------------------------------------------------------
// APP bundle: frozen encoder plus the band-classifier MLP, usable both as a
// prior source for the unified grader and as a standalone grader.
// ---------------------------------------------------------------------------

struct AppBundle {
  EncoderConfig enc_cfg;
  FrozenEncoder encoder;
  AppMlp mlp;
  int hidden = 64;

  AppBundle(const EncoderConfig& ec, int hidden_width, std::uint64_t init_seed)
      : enc_cfg(ec), encoder(ec), mlp(ec.d_w, hidden_width, init_seed),
        hidden(hidden_width) {}
};

inline AppPrior prior_for_response(const AppBundle& bundle, const Response& r) {
  return bundle.mlp.forward(mean_pool(bundle.encoder.encode(r.features)));
}

// One prior per session: pooled over the concatenation of every response's
// encoded frames (frame-weighted, so long responses count more).
inline AppPrior prior_for_session(const AppBundle& bundle, const Session& s) {
  std::vector<double> sum(static_cast<std::size_t>(bundle.enc_cfg.d_w), 0.0);
  std::size_t total = 0;
  for (const auto& r : s.responses) {
    const Mat enc = bundle.encoder.encode(r.features);
    for (std::size_t t = 0; t < enc.rows; ++t) {
      const double* row = enc.row(t);
      for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += row[j];
    }
    total += enc.rows;
  }
  if (total == 0) throw errf("prior_for_session: session %s has no frames",
                             s.session_id.c_str());
  for (auto& v : sum) v /= static_cast<double>(total);
  return bundle.mlp.forward(sum);
}

// Standalone grader read-out: expected score of each response's prior,
// averaged within the part; overall is the mean of the four part scores.
struct AppPartScores {
  std::array<double, kNumParts> part{};
  double overall = 0.0;
};

inline AppPartScores app_part_scores(const AppBundle& bundle, const Session& s) {
  std::array<double, kNumParts> sum{};
  std::array<int, kNumParts> count{};
  for (const auto& r : s.responses) {
    const double e = app_expected_score(prior_for_response(bundle, r));
    sum[static_cast<std::size_t>(static_cast<int>(r.part))] += e;
    count[static_cast<std::size_t>(static_cast<int>(r.part))] += 1;
  }
  AppPartScores out;
  for (int p = 0; p < kNumParts; ++p) {
    if (count[static_cast<std::size_t>(p)] == 0)
      throw errf("app_part_scores: session %s has no %s responses",
                 s.session_id.c_str(), part_name(static_cast<PartId>(p)));
    out.part[static_cast<std::size_t>(p)] =
        sum[static_cast<std::size_t>(p)] / count[static_cast<std::size_t>(p)];
  }
  out.overall = overall_from_parts(out.part[0], out.part[1], out.part[2], out.part[3]);
  return out;
}

// ---------------------------------------------------------------------------
// APP pre-training: 8-way band classification with cross-entropy against the
// band-quantized target score, one example per in-scope response. The
// encoder stays frozen throughout.
// ---------------------------------------------------------------------------

struct AppTrainConfig {
  int epochs = 8;
  int batch = 32;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// target: a specific part, or overall when empty.
inline AppBundle app_pretrain(const std::vector<Session>& corpus,
                              std::optional<PartId> target, int epochs,
                              std::uint64_t seed, const EncoderConfig& enc_cfg,
                              int hidden = 64,
                              const AppTrainConfig& base_cfg = {}) {
  AppTrainConfig cfg = base_cfg;
  cfg.epochs = epochs;
  AppBundle bundle(enc_cfg, hidden, seed);

  // Pooled inputs and band targets.
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (const auto& s : corpus) {
    const int k = target ? static_cast<int>(*target) : 4;
    if (!s.mask.m[static_cast<std::size_t>(k)]) continue;
    const double score = s.labels.component(k);
    for (const auto& r : s.responses) {
      if (target && r.part != *target) continue;
      xs.push_back(mean_pool(bundle.encoder.encode(r.features)));
      ys.push_back(band_index(score));
    }
  }
  if (xs.empty())
    throw errf("app_pretrain: no labeled sessions for target %s",
               target ? part_name(*target) : "overall");

  AppMlp& mlp = bundle.mlp;
  const std::size_t h = static_cast<std::size_t>(hidden);
  const std::size_t d = static_cast<std::size_t>(enc_cfg.d_w);
  Mat m_w1(h, d), v_w1(h, d), m_w2(kNumBands, h), v_w2(kNumBands, h);
  std::vector<double> m_b1(h, 0.0), v_b1(h, 0.0), m_b2(kNumBands, 0.0),
      v_b2(kNumBands, 0.0);
  long t = 0;

  Rng shuffle_rng(derive_seed(seed, 303));
  Rng dropout_rng(derive_seed(seed, 404));
  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double inv_n = 1.0 / static_cast<double>(end - start);

      Mat g_w1(h, d), g_w2(kNumBands, h);
      std::vector<double> g_b1(h, 0.0), g_b2(kNumBands, 0.0);

      for (std::size_t bi = start; bi < end; ++bi) {
        const auto& x = xs[order[bi]];
        const int y = ys[order[bi]];
        AppMlp::Cache cache;
        mlp.forward(x, true, &dropout_rng, &cache);

        std::array<double, kNumBands> dlogit = cache.probs;
        dlogit[static_cast<std::size_t>(y)] -= 1.0;
        for (auto& v : dlogit) v *= inv_n;

        std::vector<double> d_dropped(h, 0.0);
        for (std::size_t o = 0; o < kNumBands; ++o) {
          const double dl = dlogit[o];
          double* gw = g_w2.row(o);
          const double* wo = mlp.w2().row(o);
          for (std::size_t j = 0; j < h; ++j) {
            gw[j] += dl * cache.dropped[j];
            d_dropped[j] += dl * wo[j];
          }
          g_b2[o] += dl;
        }
        for (std::size_t j = 0; j < h; ++j) {
          const double da = d_dropped[j] * cache.drop_mask[j] * gelu_grad(cache.pre1[j]);
          double* gw = g_w1.row(j);
          for (std::size_t k = 0; k < d; ++k) gw[k] += da * x[k];
          g_b1[j] += da;
        }
      }

      ++t;
      auto adam = [&](double* p, const double* g, double* m, double* v,
                      std::size_t n) {
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
          v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
          p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
        }
      };
      adam(mlp.w1().a.data(), g_w1.a.data(), m_w1.a.data(), v_w1.a.data(), g_w1.size());
      adam(mlp.b1().data(), g_b1.data(), m_b1.data(), v_b1.data(), g_b1.size());
      adam(mlp.w2().a.data(), g_w2.a.data(), m_w2.a.data(), v_w2.a.data(), g_w2.size());
      adam(mlp.b2().data(), g_b2.data(), m_b2.data(), v_b2.data(), g_b2.size());
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Prior projector: trainable affine map from the 8 band probabilities to a
// backbone token embedding.
// ---------------------------------------------------------------------------

struct PriorProjector {
  Mat w;  // d_model x 8
  std::vector<double> b;

  PriorProjector() = default;
  PriorProjector(int d_model, std::uint64_t init_seed, double init_scale)
      : w(static_cast<std::size_t>(d_model), kNumBands),
        b(static_cast<std::size_t>(d_model), 0.0) {
    Rng rng(derive_seed(init_seed, 505));
    w.fill_gaussian(rng, init_scale);
  }

  std::vector<double> project(const AppPrior& p) const {
    std::vector<double> out(w.rows);
    for (std::size_t j = 0; j < w.rows; ++j) {
      double acc = b[j];
      const double* wj = w.row(j);
      for (std::size_t k = 0; k < kNumBands; ++k) acc += wj[k] * p.probs[k];
      out[j] = acc;
    }
    return out;
  }
};

}  // namespace slg
