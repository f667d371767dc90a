#pragma once

#include <array>
#include <vector>

#include "slg/common.hpp"

namespace slg {

// A batch of multi-target predictions against partially observed targets.
// masks[n][k] marks which of the five score components carry a label.
struct Batch {
  std::vector<std::array<double, 5>> predictions;
  std::vector<std::array<double, 5>> targets;
  std::vector<std::array<bool, 5>> masks;

  std::size_t size() const { return predictions.size(); }

  void validate() const {
    if (targets.size() != predictions.size() || masks.size() != predictions.size())
      throw errf("Batch: predictions/targets/masks row counts differ");
  }

  long mask_count() const {
    long c = 0;
    for (const auto& row : masks)
      for (bool b : row) c += b ? 1 : 0;
    return c;
  }
};

// Sum of masked squared errors over the count of unmasked entries.
inline double masked_mse(const Batch& batch) {
  batch.validate();
  const long count = batch.mask_count();
  if (count == 0) throw errf("masked_mse: batch has no unmasked entries");
  double sum = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    for (int k = 0; k < 5; ++k) {
      if (!batch.masks[n][static_cast<std::size_t>(k)]) continue;
      const double d = batch.predictions[n][static_cast<std::size_t>(k)] -
                       batch.targets[n][static_cast<std::size_t>(k)];
      sum += d * d;
    }
  }
  return sum / static_cast<double>(count);
}

// d(masked_mse)/d(predictions); exactly zero at masked entries.
inline std::vector<std::array<double, 5>> masked_mse_grad(const Batch& batch) {
  batch.validate();
  const long count = batch.mask_count();
  if (count == 0) throw errf("masked_mse_grad: batch has no unmasked entries");
  std::vector<std::array<double, 5>> grad(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    for (int k = 0; k < 5; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      grad[n][ks] = batch.masks[n][ks]
                        ? 2.0 * (batch.predictions[n][ks] - batch.targets[n][ks]) /
                              static_cast<double>(count)
                        : 0.0;
    }
  }
  return grad;
}

}  // namespace slg
