#pragma once

#include <cstdint>
#include <functional>

#include "dcasr/nn/param_store.hpp"

namespace dcasr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  ParamStore first_moment;
  ParamStore second_moment;

  // Flattened view ("m/<name>", "v/<name>", "step") for checkpointing.
  ParamStore to_store() const;
  static AdamState from_store(const ParamStore& store, const AdamConfig& config);
};

// One bias-corrected Adam step over every parameter in `params`.
void adam_update(ParamStore& params, const ParamStore& grads, AdamState& state);

// Loss evaluated at `params`; fills `grads` (same names as params) when non-null.
using LossGradFn = std::function<double(const ParamStore& params, ParamStore* grads)>;

// Central-difference check of an analytic gradient. Returns the maximum over
// coordinates of |g_fd - g| / max(1, |g_fd|, |g|).
double finite_diff_check(const LossGradFn& f, const ParamStore& params, double eps = 1e-5);

}  // namespace dcasr::nn
