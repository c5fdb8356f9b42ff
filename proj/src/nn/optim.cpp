#include "dcasr/nn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "dcasr/error.hpp"

namespace dcasr::nn {

ParamStore AdamState::to_store() const {
  ParamStore out;
  for (const auto& [name, t] : first_moment) out.set("m/" + name, t);
  for (const auto& [name, t] : second_moment) out.set("v/" + name, t);
  out.set("step", Tensor({1}, static_cast<double>(step)));
  return out;
}

AdamState AdamState::from_store(const ParamStore& store, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const auto& [name, t] : store) {
    if (name == "step") {
      s.step = static_cast<std::uint64_t>(t[0]);
    } else if (name.rfind("m/", 0) == 0) {
      s.first_moment.set(name.substr(2), t);
    } else if (name.rfind("v/", 0) == 0) {
      s.second_moment.set(name.substr(2), t);
    } else {
      throw FormatError("adam state: unexpected entry '" + name + "'");
    }
  }
  return s;
}

void adam_update(ParamStore& params, const ParamStore& grads, AdamState& state) {
  for (const auto& [name, p] : params) {
    if (!grads.contains(name)) throw ConsistencyError("adam_update: missing gradient for '" + name + "'");
    if (grads.at(name).shape() != p.shape()) {
      throw ConsistencyError("adam_update: gradient shape mismatch for '" + name + "'");
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (!state.first_moment.contains(name)) {
      state.first_moment.set(name, Tensor(p.shape()));
      state.second_moment.set(name, Tensor(p.shape()));
    }
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    if (!p.all_finite()) throw NumericError("adam_update: non-finite parameter '" + name + "'");
  }
  params.bump_version();
}

double finite_diff_check(const LossGradFn& f, const ParamStore& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw InvalidInputError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  ParamStore analytic;
  const double base = f(params, &analytic);
  if (!std::isfinite(base)) throw NumericError("finite_diff_check: non-finite loss at base point");
  ParamStore probe = params;
  double worst = 0.0;
  for (const auto& [name, t] : params) {
    if (!analytic.contains(name)) throw ConsistencyError("finite_diff_check: no analytic gradient for '" + name + "'");
    const Tensor& g = analytic.at(name);
    Tensor& slot = probe.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      slot[i] = orig + eps;
      const double up = f(probe, nullptr);
      slot[i] = orig - eps;
      const double down = f(probe, nullptr);
      slot[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_check: non-finite loss near '" + name + "'[" + std::to_string(i) + "]");
      }
      const double fd = (up - down) / (2.0 * eps);
      const double denom = std::max({1.0, std::abs(fd), std::abs(g[i])});
      worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
  }
  return worst;
}

}  // namespace dcasr::nn
