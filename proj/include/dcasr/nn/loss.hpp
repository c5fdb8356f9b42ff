#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dcasr::nn {

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);
void softmax_inplace(std::span<double> values);

struct LossWithGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// -log softmax(logits)[target] and its gradient softmax - onehot(target).
LossWithGrad softmax_cross_entropy(std::span<const double> logits, std::size_t target);

}  // namespace dcasr::nn
