#include "dcasr/nn/layers.hpp"

#include <cmath>
#include <numeric>

#include "dcasr/error.hpp"

namespace dcasr::nn {

Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = stddev * rng.normal();
  return t;
}

void init_attention_encoder(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng) {
  if (cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw InvalidInputError("attention: dim must be a positive multiple of heads");
  }
  if (cfg.max_len == 0 || cfg.ffn_width == 0) throw InvalidInputError("attention: max_len and ffn_width must be positive");
  const std::size_t d = cfg.dim, f = cfg.ffn_width;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  store.set(prefix + "pos", random_normal({cfg.max_len, d}, 0.1, rng));
  store.set(prefix + "wq", random_normal({d, d}, sd, rng));
  store.set(prefix + "wk", random_normal({d, d}, sd, rng));
  store.set(prefix + "wv", random_normal({d, d}, sd, rng));
  store.set(prefix + "wo", random_normal({d, d}, sd, rng));
  store.set(prefix + "ln1.g", Tensor({d}, 1.0));
  store.set(prefix + "ln1.b", Tensor({d}, 0.0));
  store.set(prefix + "ff1.w", random_normal({d, f}, sd, rng));
  store.set(prefix + "ff1.b", Tensor({f}, 0.0));
  store.set(prefix + "ff2.w", random_normal({f, d}, 1.0 / std::sqrt(static_cast<double>(f)), rng));
  store.set(prefix + "ff2.b", Tensor({d}, 0.0));
  store.set(prefix + "ln2.g", Tensor({d}, 1.0));
  store.set(prefix + "ln2.b", Tensor({d}, 0.0));
}

Var attention_encode(Graph& g, Var seq, const ParamStore& params, const std::string& prefix,
                     const AttentionConfig& cfg, AttentionTrace* trace) {
  const std::size_t l = seq.rows();
  const std::size_t d = cfg.dim;
  if (l == 0 || seq.value().size() == 0) throw InvalidInputError("attention_encode: empty sequence");
  if (seq.cols() != d) {
    throw DimensionError("attention_encode: expected width " + std::to_string(d) + ", got " +
                         shape_string(seq.value().shape()));
  }
  if (l > cfg.max_len) {
    throw InvalidInputError("attention_encode: length " + std::to_string(l) + " exceeds max_len " +
                            std::to_string(cfg.max_len));
  }
  std::vector<std::size_t> positions(l);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Var x = add(seq, gather_rows(g.bind(params, prefix + "pos"), positions));

  Var q = matmul(x, g.bind(params, prefix + "wq"));
  Var k = matmul(x, g.bind(params, prefix + "wk"));
  Var v = matmul(x, g.bind(params, prefix + "wv"));
  const std::size_t dh = d / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  if (trace) trace->weights.clear();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var qh = cfg.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = cfg.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = cfg.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    if (trace) trace->weights.push_back(weights.value());
    heads.push_back(matmul(weights, vh));
  }
  Var attended = cfg.heads == 1 ? heads[0] : concat_cols(heads);
  Var mixed = matmul(attended, g.bind(params, prefix + "wo"));
  Var h1 = layer_norm_rows(add(x, mixed), g.bind(params, prefix + "ln1.g"), g.bind(params, prefix + "ln1.b"),
                           cfg.ln_eps);
  Var ff = affine(silu(affine(h1, g.bind(params, prefix + "ff1.w"), g.bind(params, prefix + "ff1.b"))),
                  g.bind(params, prefix + "ff2.w"), g.bind(params, prefix + "ff2.b"));
  Var h2 = layer_norm_rows(add(h1, ff), g.bind(params, prefix + "ln2.g"), g.bind(params, prefix + "ln2.b"),
                           cfg.ln_eps);
  return slice_rows(h2, l - 1, l);
}

Tensor attention_encode(const Tensor& seq, const ParamStore& params, const std::string& prefix,
                        const AttentionConfig& cfg, AttentionTrace* trace) {
  if (seq.size() == 0) throw InvalidInputError("attention_encode: empty sequence");
  Graph g(false);
  Var out = attention_encode(g, g.constant(seq), params, prefix, cfg, trace);
  return Tensor::vector(out.value().storage());
}

}  // namespace dcasr::nn
