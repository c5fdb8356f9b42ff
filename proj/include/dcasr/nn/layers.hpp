#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcasr/nn/autograd.hpp"
#include "dcasr/nn/param_store.hpp"
#include "dcasr/nn/rng.hpp"

namespace dcasr::nn {

// Gaussian init with the given standard deviation.
Tensor random_normal(Shape shape, double stddev, Rng& rng);

// Single-block self-attention encoder: learned positional embeddings,
// scaled dot-product attention, residual + layer norm, position-wise
// feed-forward, residual + layer norm. The encoding of a sequence is the
// output row at its final position.
struct AttentionConfig {
  std::size_t dim = 32;
  std::size_t heads = 1;
  std::size_t max_len = 10;
  std::size_t ffn_width = 64;
  double ln_eps = 1e-5;
};

struct AttentionTrace {
  std::vector<Tensor> weights;  // one l x l matrix per head
};

void init_attention_encoder(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);

Var attention_encode(Graph& g, Var seq, const ParamStore& params, const std::string& prefix,
                     const AttentionConfig& cfg, AttentionTrace* trace = nullptr);

Tensor attention_encode(const Tensor& seq, const ParamStore& params, const std::string& prefix,
                        const AttentionConfig& cfg, AttentionTrace* trace = nullptr);

}  // namespace dcasr::nn
