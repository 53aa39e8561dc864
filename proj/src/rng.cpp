#include "patchforge/rng.hpp"

#include "patchforge/error.hpp"

namespace patchforge {

std::size_t CounterRng::weighted(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) {
      throw ValidationError("weights must be non-negative");
    }
    total += w;
  }
  if (total <= 0.0) {
    throw ValidationError("weights are all zero");
  }
  const double target = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) {
      last_positive = i;
      acc += weights[i];
      if (target < acc) {
        return i;
      }
    }
  }
  return last_positive;
}

}  // namespace patchforge
