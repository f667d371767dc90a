#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slg/common.hpp"
#include "slg/rng.hpp"
#include "slg/scale.hpp"

namespace slg {

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

// Frame-level feature matrix, row per 20 ms frame surrogate, stored float32
// so serialized corpora round-trip bit-exactly.
struct FrameBlob {
  std::uint32_t t_frames = 0;
  std::uint32_t d_feat = 0;
  std::vector<float> data;  // row-major t_frames x d_feat

  float* frame(std::size_t t) { return data.data() + t * d_feat; }
  const float* frame(std::size_t t) const { return data.data() + t * d_feat; }
};

struct Response {
  PartId part = PartId::P1;
  int index_in_part = 0;
  std::string prompt_text;
  FrameBlob features;
  double duration_s = 0.0;
};

// Five score targets in component order p1, p3, p4, p5, overall.
struct ScoreVector {
  double p1 = 0, p3 = 0, p4 = 0, p5 = 0, overall = 0;

  double component(int k) const {
    switch (k) {
      case 0: return p1;
      case 1: return p3;
      case 2: return p4;
      case 3: return p5;
      case 4: return overall;
    }
    throw std::invalid_argument("ScoreVector: component index out of range");
  }
  double& component(int k) {
    switch (k) {
      case 0: return p1;
      case 1: return p3;
      case 2: return p4;
      case 3: return p5;
      case 4: return overall;
    }
    throw std::invalid_argument("ScoreVector: component index out of range");
  }
  double part_score(PartId p) const { return component(static_cast<int>(p)); }
};

struct LabelMask {
  std::array<bool, 5> m = {true, true, true, true, true};

  bool any() const {
    for (bool b : m) {
      if (b) return true;
    }
    return false;
  }
};

struct Session {
  std::string session_id;
  std::vector<Response> responses;  // ordered by (part, index_in_part)
  ScoreVector labels;
  LabelMask mask;
};

inline int expected_response_count(PartId p) {
  switch (p) {
    case PartId::P1: return 6;  // 8 interview questions, first two unmarked
    case PartId::P3: return 1;
    case PartId::P4: return 1;
    case PartId::P5: return 5;
  }
  throw std::invalid_argument("expected_response_count: bad PartId");
}

inline constexpr int kResponsesPerSession = 13;

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

// Timing is the nominal task timing compressed by time_scale, keeping the
// 20 ms frame surrogate while bounding frame counts; one stored frame then
// stands for 200 ms of nominal speaking time at the default scale.
struct GenConfig {
  int d_feat = 16;
  double frame_period_s = 0.02;
  double time_scale = 0.1;

  double label_noise = 0.25;      // sigma of per-part score noise before banding
  double response_jitter = 0.12;  // sigma of per-response delivery offset
  double frame_noise = 0.25;      // per-frame noise on the signal channels
  double consistency_gain = 0.8;  // P1/P5 label shift per unit of delivery spread
  double duration_theta_pull = 0.6;  // how strongly length tracks proficiency

  std::string id_prefix = "ses";

  void validate() const {
    if (d_feat < 3)
      throw std::invalid_argument("GenConfig: d_feat must be >= 3 (delivery, pause, noise)");
    if (frame_period_s <= 0 || time_scale <= 0)
      throw std::invalid_argument("GenConfig: frame timing must be positive");
    if (label_noise < 0 || response_jitter < 0 || frame_noise < 0)
      throw std::invalid_argument("GenConfig: noise sigmas must be non-negative");
  }
};

namespace detail {

struct DurationRange {
  double lo, hi;
};

inline DurationRange nominal_duration(PartId p, int index_in_part) {
  switch (p) {
    case PartId::P1:
      return index_in_part < 2 ? DurationRange{6.0, 10.0}
                               : DurationRange{12.0, 20.0};
    case PartId::P3: return {35.0, 60.0};
    case PartId::P4: return {35.0, 60.0};
    case PartId::P5: return {10.0, 20.0};
  }
  throw std::invalid_argument("nominal_duration: bad PartId");
}

inline const char* prompt_template(PartId p, int index_in_part) {
  static const char* p1[6] = {
      "Tell me about the town where you live.",
      "What do you enjoy doing at the weekend?",
      "Describe a meal you like to cook.",
      "How do you usually travel to work or study?",
      "Talk about a book or film you enjoyed recently.",
      "What are your plans for the next year?",
  };
  static const char* p5[5] = {
      "Is public transport good value in your area?",
      "Should cycling be encouraged in cities?",
      "How could local parks be improved?",
      "Do you think cars should be banned from city centres?",
      "What would make your town better for visitors?",
  };
  switch (p) {
    case PartId::P1: return p1[index_in_part];
    case PartId::P3:
      return "Some people prefer to live in a big city. Do you agree? Give reasons.";
    case PartId::P4:
      return "The diagram shows how paper is recycled. Describe the process.";
    case PartId::P5: return p5[index_in_part];
  }
  throw std::invalid_argument("prompt_template: bad PartId");
}

// E[sample std of n iid N(0,1)] correction factor.
inline double c4(int n) {
  return std::sqrt(2.0 / (n - 1)) * std::tgamma(n / 2.0) /
         std::tgamma((n - 1) / 2.0);
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Draws one session. Proficiency theta drives a "delivery" channel mean
// mu = (theta-2)/3.5 and a complementary "pause-rate" channel; per-response
// delivery offsets add a cross-response consistency statistic that feeds
// the multi-response part labels (P1/P5) and is only visible session-wide.
inline Session generate_session(std::uint64_t session_seed,
                                const std::string& session_id,
                                const GenConfig& cfg,
                                double* theta_out = nullptr) {
  Rng rng(session_seed);
  Session s;
  s.session_id = session_id;

  const double theta = rng.uniform(kScaleMin, kScaleMax);
  if (theta_out) *theta_out = theta;
  const double mu = (theta - kScaleMin) / (kScaleMax - kScaleMin);
  const double theta01 = mu;

  // Per-response delivery offsets, drawn part by part in canonical order.
  std::array<std::vector<double>, kNumParts> offsets;
  for (PartId p : kParts) {
    auto& v = offsets[static_cast<int>(p)];
    v.resize(expected_response_count(p));
    for (auto& d : v) d = rng.gaussian(0.0, cfg.response_jitter);
  }

  // Part labels. The consistency shift scales with label_noise so a
  // zero-noise corpus degenerates to exact band-quantized theta.
  const double gain = cfg.consistency_gain * (cfg.label_noise / 0.25);
  ScoreVector labels;
  for (PartId p : kParts) {
    const int pi = static_cast<int>(p);
    double shift = 0.0;
    const int n = expected_response_count(p);
    if (n > 1) {
      const double spread = detail::sample_std(offsets[pi]);
      const double expected = detail::c4(n) * cfg.response_jitter;
      shift = gain * (expected - spread);
    }
    const double noise = cfg.label_noise * rng.gaussian();
    labels.component(pi) = score_to_band(theta + shift + noise).value;
  }
  labels.overall =
      overall_from_parts(labels.p1, labels.p3, labels.p4, labels.p5);
  s.labels = labels;
  s.mask = LabelMask{};

  // Responses with theta-pulled durations and frame features.
  for (PartId p : kParts) {
    const int pi = static_cast<int>(p);
    for (int r = 0; r < expected_response_count(p); ++r) {
      Response resp;
      resp.part = p;
      resp.index_in_part = r;
      resp.prompt_text = detail::prompt_template(p, r);

      const auto range = detail::nominal_duration(p, r);
      const double w = cfg.duration_theta_pull;
      const double mix = (1.0 - w) * rng.uniform() + w * theta01;
      const double dur = (range.lo + (range.hi - range.lo) * mix) * cfg.time_scale;
      resp.duration_s = dur;

      const auto t_frames = static_cast<std::uint32_t>(
          std::max<long>(1, std::lround(dur / cfg.frame_period_s)));
      resp.features.t_frames = t_frames;
      resp.features.d_feat = static_cast<std::uint32_t>(cfg.d_feat);
      resp.features.data.resize(static_cast<std::size_t>(t_frames) * cfg.d_feat);

      const double delivery = mu + offsets[pi][static_cast<std::size_t>(r)];
      for (std::uint32_t t = 0; t < t_frames; ++t) {
        float* f = resp.features.frame(t);
        f[0] = static_cast<float>(delivery + cfg.frame_noise * rng.gaussian());
        f[1] = static_cast<float>(1.0 - delivery + cfg.frame_noise * rng.gaussian());
        for (int c = 2; c < cfg.d_feat; ++c)
          f[c] = static_cast<float>(rng.gaussian());
      }
      s.responses.push_back(std::move(resp));
    }
  }
  return s;
}

inline std::vector<Session> generate_corpus(int n_sessions, std::uint64_t seed,
                                            const GenConfig& cfg,
                                            std::vector<double>* thetas = nullptr) {
  if (n_sessions < 1)
    throw std::invalid_argument("generate_corpus: n_sessions must be >= 1");
  cfg.validate();
  std::vector<Session> out;
  out.reserve(static_cast<std::size_t>(n_sessions));
  if (thetas) thetas->resize(static_cast<std::size_t>(n_sessions));
  for (int i = 0; i < n_sessions; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s%05d", cfg.id_prefix.c_str(), i);
    double theta = 0.0;
    out.push_back(generate_session(derive_seed(seed, static_cast<std::uint64_t>(i)),
                                   id, cfg, &theta));
    if (thetas) (*thetas)[static_cast<std::size_t>(i)] = theta;
  }
  return out;
}

// Independently drops each part-label bit with probability p_drop. The
// overall bit goes down with any part bit (it would no longer be the mean of
// the surviving labels); sessions that would lose every bit are re-rolled.
inline void apply_label_dropout(std::vector<Session>& sessions, double p_drop,
                                std::uint64_t seed) {
  if (p_drop < 0.0 || p_drop >= 1.0)
    throw std::invalid_argument("apply_label_dropout: p_drop must be in [0, 1)");
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    std::array<bool, 4> keep{};
    for (;;) {
      bool any = false;
      for (auto& k : keep) {
        k = !rng.bernoulli(p_drop);
        any = any || k;
      }
      if (any) break;
    }
    LabelMask mask;
    bool all = true;
    for (int k = 0; k < 4; ++k) {
      mask.m[static_cast<std::size_t>(k)] = keep[static_cast<std::size_t>(k)];
      all = all && keep[static_cast<std::size_t>(k)];
    }
    mask.m[4] = all;
    sessions[i].mask = mask;
  }
}

// ---------------------------------------------------------------------------
// Noise floor and label statistics
// ---------------------------------------------------------------------------

// Variance of the band-quantized score around its conditional mean when the
// pre-quantization score is center + N(0, sigma). Cell probabilities come
// from the normal CDF; end cells absorb the clamped tails.
inline double band_quantizer_variance(double center, double sigma) {
  if (sigma <= 0.0) return 0.0;
  const auto values = band_values();
  auto cdf = [&](double x) {
    return 0.5 * std::erfc(-(x - center) / (sigma * std::sqrt(2.0)));
  };
  double mean = 0.0, second = 0.0;
  for (int i = 0; i < kNumBands; ++i) {
    const double lo = i == 0 ? 0.0 : cdf(values[i] - kBandStep / 2.0);
    const double hi = i == kNumBands - 1 ? 1.0 : cdf(values[i] + kBandStep / 2.0);
    const double p = hi - lo;
    mean += p * values[i];
    second += p * values[i] * values[i];
  }
  return second - mean * mean;
}

struct NoiseFloor {
  double per_part = 0.0;  // RMSE floor for any single part score
  double overall = 0.0;   // RMSE floor for the mean of four parts
};

// Irreducible label noise: the part labels carry banding noise that no
// feature can predict. Averaged over the uniform proficiency range with
// composite Simpson; the four parts' noises are independent, so the overall
// floor is half the per-part floor.
inline NoiseFloor noise_floor(const GenConfig& cfg) {
  if (cfg.label_noise <= 0.0) return {0.0, 0.0};
  const int kIntervals = 2000;  // even
  const double a = kScaleMin, b = kScaleMax;
  const double h = (b - a) / kIntervals;
  double acc = 0.0;
  for (int i = 0; i <= kIntervals; ++i) {
    const double x = a + h * i;
    const double w = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    acc += w * band_quantizer_variance(x, cfg.label_noise);
  }
  const double mean_var = acc * h / 3.0 / (b - a);
  NoiseFloor f;
  f.per_part = std::sqrt(mean_var);
  f.overall = f.per_part / 2.0;
  return f;
}

struct LabelStats {
  std::array<double, 5> mean{};
  std::array<double, 5> stddev{};
  std::array<int, 5> n_labeled{};
  int n_sessions = 0;
};

inline LabelStats label_stats(const std::vector<Session>& sessions) {
  LabelStats st;
  st.n_sessions = static_cast<int>(sessions.size());
  for (int k = 0; k < 5; ++k) {
    double sum = 0.0, ss = 0.0;
    int n = 0;
    for (const auto& s : sessions) {
      if (!s.mask.m[static_cast<std::size_t>(k)]) continue;
      const double v = s.labels.component(k);
      sum += v;
      ss += v * v;
      ++n;
    }
    st.n_labeled[static_cast<std::size_t>(k)] = n;
    if (n > 0) {
      const double mean = sum / n;
      st.mean[static_cast<std::size_t>(k)] = mean;
      st.stddev[static_cast<std::size_t>(k)] =
          std::sqrt(std::max(0.0, ss / n - mean * mean));
    }
  }
  return st;
}

}  // namespace slg
