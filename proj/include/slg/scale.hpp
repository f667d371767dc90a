#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace slg {

// The native speaking-test score scale: eight half-point bands from 2.0 to
// 5.5, each aligned with a CEFR-style label.
inline constexpr double kScaleMin = 2.0;
inline constexpr double kScaleMax = 5.5;
inline constexpr double kBandStep = 0.5;
inline constexpr int kNumBands = 8;

struct Band {
  double value;
  std::string_view label;
};

inline const std::array<Band, kNumBands>& bands() {
  static const std::array<Band, kNumBands> table = {{
      {2.0, "A2"},
      {2.5, "A2+"},
      {3.0, "B1"},
      {3.5, "B1+"},
      {4.0, "B2"},
      {4.5, "B2+"},
      {5.0, "C1"},
      {5.5, "C1+"},
  }};
  return table;
}

inline std::array<double, kNumBands> band_values() {
  std::array<double, kNumBands> out{};
  for (int i = 0; i < kNumBands; ++i) out[i] = bands()[i].value;
  return out;
}

inline double clamp_to_scale(double x) {
  if (x < kScaleMin) return kScaleMin;
  if (x > kScaleMax) return kScaleMax;
  return x;
}

// Nearest band after clamping to the scale; exact midpoints round up.
inline Band score_to_band(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("score_to_band: non-finite score");
  const double c = clamp_to_scale(x);
  int idx = static_cast<int>(std::floor((c - kScaleMin) / kBandStep + 0.5));
  if (idx < 0) idx = 0;
  if (idx >= kNumBands) idx = kNumBands - 1;
  return bands()[idx];
}

inline int band_index(double x) {
  const double v = score_to_band(x).value;
  return static_cast<int>(std::lround((v - kScaleMin) / kBandStep));
}

// The four open-speaking parts, in canonical order.
enum class PartId : int { P1 = 0, P3 = 1, P4 = 2, P5 = 3 };

inline constexpr std::array<PartId, 4> kParts = {PartId::P1, PartId::P3,
                                                 PartId::P4, PartId::P5};
inline constexpr int kNumParts = 4;

inline const char* part_name(PartId p) {
  switch (p) {
    case PartId::P1: return "P1";
    case PartId::P3: return "P3";
    case PartId::P4: return "P4";
    case PartId::P5: return "P5";
  }
  throw std::invalid_argument("part_name: bad PartId");
}

inline PartId part_from_name(std::string_view s) {
  if (s == "P1") return PartId::P1;
  if (s == "P3") return PartId::P3;
  if (s == "P4") return PartId::P4;
  if (s == "P5") return PartId::P5;
  throw std::invalid_argument("unknown part id: " + std::string(s));
}

// Overall score is the arithmetic mean of the four part scores. This is the
// one implementation of that mean; model read-outs and label generation both
// call it so "exactly equal" comparisons share the same arithmetic.
inline double overall_from_parts(double p1, double p3, double p4, double p5) {
  if (!std::isfinite(p1) || !std::isfinite(p3) || !std::isfinite(p4) ||
      !std::isfinite(p5)) {
    throw std::invalid_argument("overall_from_parts: missing or non-finite part score");
  }
  return (p1 + p3 + p4 + p5) / 4.0;
}

}  // namespace slg
