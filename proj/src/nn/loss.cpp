#include "dcasr/nn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "dcasr/error.hpp"

namespace dcasr::nn {

void softmax_inplace(std::span<double> values) {
  if (values.empty()) return;
  const double mx = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (auto& v : values) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : values) v /= total;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

LossWithGrad softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("cross-entropy target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  const auto arg = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double mx = logits[arg];
  // log-sum-exp as mx + log1p(sum over the non-argmax terms) keeps confident
  // logits accurate to full relative precision.
  double rest = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != arg) rest += std::exp(logits[i] - mx);
  }
  const double z = 1.0 + rest;
  LossWithGrad out;
  out.loss = (mx - logits[target]) + std::log1p(rest);
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = (i == arg ? 1.0 : std::exp(logits[i] - mx)) / z;
  if (target == arg) {
    out.grad[target] = -rest / z;
  } else {
    out.grad[target] -= 1.0;
  }
  return out;
}

}  // namespace dcasr::nn
