#include "dcasr/sr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcasr/error.hpp"
#include "dcasr/nn/layers.hpp"
#include "dcasr/nn/loss.hpp"
#include "dcasr/nn/optim.hpp"

namespace dcasr::sr {

namespace {

// out[j] = sum_r v[r] * W[r][j]
void vec_mat(const double* v, const nn::Tensor& w, double* out) {
  const std::size_t rows = w.rows(), cols = w.cols();
  std::fill(out, out + cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double x = v[r];
    const double* wr = w.storage().data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += x * wr[j];
  }
}

// out[r] += sum_j W[r][j] * u[j]
void mat_vec_add(const nn::Tensor& w, const double* u, double* out) {
  const std::size_t rows = w.rows(), cols = w.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.storage().data() + r * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * u[j];
    out[r] += acc;
  }
}

// G[r][j] += a[r] * b[j]
void outer_add(const double* a, const double* b, nn::Tensor& g) {
  const std::size_t rows = g.rows(), cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double x = a[r];
    if (x == 0.0) continue;
    double* gr = g.storage().data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) gr[j] += x * b[j];
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

struct Forward {
  std::vector<double> q, k, v, alpha, g, c, h;  // k, v are l x d row-major
};

}  // namespace

std::vector<Example> make_examples(const std::vector<data::ClickSession>& sessions) {
  std::vector<Example> out;
  for (const auto& s : sessions) {
    const auto items = s.items();
    for (std::size_t t = 1; t < items.size(); ++t) {
      out.push_back({std::vector<ItemId>(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(t)), items[t]});
    }
  }
  return out;
}

SrModel::SrModel(const SrConfig& config, std::uint64_t seed) : config_(config) {
  if (config.n_items < 1) throw InvalidInputError("sr: catalog must be non-empty");
  if (config.dim < 2) throw InvalidInputError("sr: dim must be >= 2");
  if (config.variant == Variant::normalized && !(config.scale > 0.0)) throw InvalidInputError("sr: scale must be > 0");
  const std::size_t m = config.n_items, d = config.dim;
  nn::Rng rng(seed, 0x5A);
  const double s = config.init_std;
  params_.set("sr.E", nn::random_normal({m, d}, s, rng));
  params_.set("sr.Wq", nn::random_normal({d, d}, 1.0 / std::sqrt(double(d)), rng));
  params_.set("sr.Wk", nn::random_normal({d, d}, 1.0 / std::sqrt(double(d)), rng));
  params_.set("sr.Wv", nn::random_normal({d, d}, 1.0 / std::sqrt(double(d)), rng));
  params_.set("sr.Wo", nn::random_normal({2 * d, d}, 1.0 / std::sqrt(double(2 * d)), rng));
  params_.set("sr.bo", nn::Tensor({d}, 0.0));
}

SrModel::SrModel(const SrConfig& config, nn::ParamStore params) : config_(config), params_(std::move(params)) {
  const std::size_t m = config.n_items, d = config.dim;
  const std::pair<const char*, nn::Shape> expected[] = {{"sr.E", {m, d}},       {"sr.Wq", {d, d}}, {"sr.Wk", {d, d}},
                                                        {"sr.Wv", {d, d}},      {"sr.Wo", {2 * d, d}},
                                                        {"sr.bo", {d}}};
  for (const auto& [name, shape] : expected) {
    if (!params_.contains(name)) throw ConsistencyError(std::string("sr: missing parameter ") + name);
    if (params_.at(name).shape() != shape) {
      throw DimensionError(std::string("sr: parameter ") + name + " has shape " +
                           nn::shape_string(params_.at(name).shape()) + ", expected " + nn::shape_string(shape));
    }
  }
}

void SrModel::check_prefix(std::span<const ItemId> prefix) const {
  if (prefix.empty()) throw InvalidInputError("sr: empty session prefix");
  for (ItemId i : prefix) {
    if (i < 0 || static_cast<std::size_t>(i) >= config_.n_items) {
      throw IndexError("sr: item " + std::to_string(i) + " outside catalog");
    }
  }
}

namespace {

Forward forward(const nn::ParamStore& p, std::size_t d, std::span<const ItemId> prefix) {
  const auto& E = p.at("sr.E");
  const std::size_t l = prefix.size();
  Forward f;
  f.q.resize(d);
  f.k.resize(l * d);
  f.v.resize(l * d);
  const double* last = E.storage().data() + static_cast<std::size_t>(prefix.back()) * d;
  vec_mat(last, p.at("sr.Wq"), f.q.data());
  for (std::size_t i = 0; i < l; ++i) {
    const double* e = E.storage().data() + static_cast<std::size_t>(prefix[i]) * d;
    vec_mat(e, p.at("sr.Wk"), f.k.data() + i * d);
    vec_mat(e, p.at("sr.Wv"), f.v.data() + i * d);
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  f.alpha.resize(l);
  for (std::size_t i = 0; i < l; ++i) f.alpha[i] = dot(f.q.data(), f.k.data() + i * d, d) * inv;
  nn::softmax_inplace(f.alpha);
  f.g.assign(d, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < d; ++j) f.g[j] += f.alpha[i] * f.v[i * d + j];
  }
  f.c.resize(2 * d);
  std::copy(f.g.begin(), f.g.end(), f.c.begin());
  std::copy(last, last + d, f.c.begin() + static_cast<std::ptrdiff_t>(d));
  f.h.resize(d);
  vec_mat(f.c.data(), p.at("sr.Wo"), f.h.data());
  const auto& bo = p.at("sr.bo");
  for (std::size_t j = 0; j < d; ++j) f.h[j] += bo[j];
  return f;
}

}  // namespace

std::vector<double> SrModel::encode(std::span<const ItemId> prefix) const {
  check_prefix(prefix);
  return forward(params_, config_.dim, prefix).h;
}

std::vector<double> SrModel::attention(std::span<const ItemId> prefix) const {
  check_prefix(prefix);
  return forward(params_, config_.dim, prefix).alpha;
}

std::vector<double> SrModel::score_items(std::span<const double> h) const {
  const std::size_t d = config_.dim, m = config_.n_items;
  if (h.size() != d) throw DimensionError("sr: session vector has wrong dimension");
  const auto& E = params_.at("sr.E");
  std::vector<double> s(m);
  if (config_.variant == Variant::plain) {
    for (std::size_t i = 0; i < m; ++i) s[i] = dot(h.data(), E.storage().data() + i * d, d);
    return s;
  }
  const double nh = std::max(std::sqrt(dot(h.data(), h.data(), d)), config_.norm_floor);
  for (std::size_t i = 0; i < m; ++i) {
    const double* e = E.storage().data() + i * d;
    const double ne = std::max(std::sqrt(dot(e, e, d)), config_.norm_floor);
    s[i] = config_.scale * dot(h.data(), e, d) / (nh * ne);
  }
  return s;
}

std::vector<double> SrModel::probabilities(std::span<const ItemId> prefix) const {
  auto s = scores(prefix);
  nn::softmax_inplace(s);
  return s;
}

std::vector<ItemId> topk_from_scores(std::span<const double> scores, std::size_t k, const std::set<ItemId>& exclude) {
  std::size_t excluded = 0;
  for (ItemId x : exclude) excluded += (x >= 0 && static_cast<std::size_t>(x) < scores.size()) ? 1 : 0;
  if (k > scores.size() - excluded) {
    throw InvalidInputError("recommend_topk: K=" + std::to_string(k) + " exceeds the " +
                            std::to_string(scores.size() - excluded) + " available items");
  }
  std::vector<ItemId> ids;
  ids.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!exclude.count(static_cast<ItemId>(i))) ids.push_back(static_cast<ItemId>(i));
  }
  auto better = [&](ItemId a, ItemId b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  ids.resize(k);
  return ids;
}

std::vector<ItemId> SrModel::recommend_topk(std::span<const ItemId> prefix, std::size_t k,
                                            const std::set<ItemId>& exclude) const {
  return topk_from_scores(scores(prefix), k, exclude);
}

double SrModel::loss_and_grad(std::span<const Example> batch, nn::ParamStore* grads) const {
  if (batch.empty()) throw InvalidInputError("sr: empty batch");
  const std::size_t d = config_.dim, m = config_.n_items, B = batch.size();
  const auto& E = params_.at("sr.E");
  const bool normalized = config_.variant == Variant::normalized;

  std::vector<Forward> fw;
  fw.reserve(B);
  for (const auto& ex : batch) {
    check_prefix(ex.prefix);
    if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= m) throw IndexError("sr: target outside catalog");
    fw.push_back(forward(params_, d, ex.prefix));
  }

  // Row norms of E for the cosine variant.
  std::vector<double> e_norm;
  if (normalized) {
    e_norm.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* e = E.storage().data() + i * d;
      e_norm[i] = std::max(std::sqrt(dot(e, e, d)), config_.norm_floor);
    }
  }

  double total = 0.0;
  nn::Tensor dE_scaled;  // gradient w.r.t. normalized rows (cosine) or rows (plain)
  if (grads) {
    *grads = params_.zeros_like();
    dE_scaled = nn::Tensor({m, d}, 0.0);
  }
  std::vector<double> logits(m), dh(d), dc(2 * d), dq(d), dalpha, de(d), hn(d), dhn(d);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& f = fw[b];
    double nh = 1.0;
    const double* hv = f.h.data();
    if (normalized) {
      nh = std::max(std::sqrt(dot(f.h.data(), f.h.data(), d)), config_.norm_floor);
      for (std::size_t j = 0; j < d; ++j) hn[j] = f.h[j] / nh;
      hv = hn.data();
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double s = dot(hv, E.storage().data() + i * d, d);
      logits[i] = normalized ? config_.scale * s / e_norm[i] : s;
    }
    const auto ce = nn::softmax_cross_entropy(logits, static_cast<std::size_t>(batch[b].target));
    total += ce.loss;
    if (!grads) continue;

    // Scores: plain s_i = h.E_i ; cosine s_i = scale * hn.En_i.
    std::fill(dhn.begin(), dhn.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double g = ce.grad[i] / static_cast<double>(B);
      if (normalized) g *= config_.scale;
      if (g == 0.0) continue;
      const double* e = E.storage().data() + i * d;
      double* dEi = dE_scaled.storage().data() + i * d;
      const double inv = normalized ? 1.0 / e_norm[i] : 1.0;
      for (std::size_t j = 0; j < d; ++j) {
        dhn[j] += g * e[j] * inv;
        dEi[j] += g * hv[j];
      }
    }
    if (normalized) {
      if (std::sqrt(dot(f.h.data(), f.h.data(), d)) > config_.norm_floor) {
        const double proj = dot(hn.data(), dhn.data(), d);
        for (std::size_t j = 0; j < d; ++j) dh[j] = (dhn[j] - hn[j] * proj) / nh;
      } else {
        for (std::size_t j = 0; j < d; ++j) dh[j] = dhn[j] / nh;
      }
    } else {
      dh = dhn;
    }

    // Output projection.
    auto& gE = grads->at("sr.E");
    for (std::size_t j = 0; j < d; ++j) grads->at("sr.bo")[j] += dh[j];
    outer_add(f.c.data(), dh.data(), grads->at("sr.Wo"));
    std::fill(dc.begin(), dc.end(), 0.0);
    mat_vec_add(params_.at("sr.Wo"), dh.data(), dc.data());
    const auto& prefix = batch[b].prefix;
    const std::size_t l = prefix.size();
    double* de_last = gE.storage().data() + static_cast<std::size_t>(prefix.back()) * d;
    for (std::size_t j = 0; j < d; ++j) de_last[j] += dc[d + j];

    // Attention readout.
    const double* dg = dc.data();
    dalpha.assign(l, 0.0);
    double weighted = 0.0;
    for (std::size_t i = 0; i < l; ++i) {
      dalpha[i] = dot(dg, f.v.data() + i * d, d);
      weighted += f.alpha[i] * dalpha[i];
    }
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::fill(dq.begin(), dq.end(), 0.0);
    std::vector<double> dk(d), dv(d);
    for (std::size_t i = 0; i < l; ++i) {
      const double da = f.alpha[i] * (dalpha[i] - weighted) * inv;
      const double* e = E.storage().data() + static_cast<std::size_t>(prefix[i]) * d;
      double* gei = gE.storage().data() + static_cast<std::size_t>(prefix[i]) * d;
      for (std::size_t j = 0; j < d; ++j) {
        dq[j] += da * f.k[i * d + j];
        dk[j] = da * f.q[j];
        dv[j] = f.alpha[i] * dg[j];
      }
      outer_add(e, dk.data(), grads->at("sr.Wk"));
      outer_add(e, dv.data(), grads->at("sr.Wv"));
      mat_vec_add(params_.at("sr.Wk"), dk.data(), gei);
      mat_vec_add(params_.at("sr.Wv"), dv.data(), gei);
    }
    const double* e_last = E.storage().data() + static_cast<std::size_t>(prefix.back()) * d;
    outer_add(e_last, dq.data(), grads->at("sr.Wq"));
    mat_vec_add(params_.at("sr.Wq"), dq.data(), de_last);
  }

  if (grads) {
    // Fold the scoring gradient into sr.E.
    auto& gE = grads->at("sr.E");
    for (std::size_t i = 0; i < m; ++i) {
      const double* e = E.storage().data() + i * d;
      const double* g = dE_scaled.storage().data() + i * d;
      double* out = gE.storage().data() + i * d;
      if (!normalized) {
        for (std::size_t j = 0; j < d; ++j) out[j] += g[j];
        continue;
      }
      // d(E_i / |E_i|) back to E_i.
      const double n = e_norm[i];
      const double raw = std::sqrt(dot(e, e, d));
      if (raw > config_.norm_floor) {
        const double proj = dot(e, g, d) / (n * n);
        for (std::size_t j = 0; j < d; ++j) out[j] += (g[j] - e[j] * proj) / n;
      } else {
        for (std::size_t j = 0; j < d; ++j) out[j] += g[j] / n;
      }
    }
  }
  return total / static_cast<double>(B);
}

nn::ParamStore SrModel::checkpoint() const {
  nn::ParamStore out = params_;
  out.set("meta.sr", nn::Tensor::vector({static_cast<double>(config_.n_items), static_cast<double>(config_.dim),
                                          config_.variant == Variant::normalized ? 1.0 : 0.0, config_.scale,
                                          config_.norm_floor}));
  return out;
}

SrModel SrModel::from_checkpoint(const nn::ParamStore& store) {
  if (!store.contains("meta.sr") || store.at("meta.sr").size() != 5) {
    throw FormatError("sr checkpoint: missing or malformed meta.sr");
  }
  const auto& meta = store.at("meta.sr");
  SrConfig c;
  c.n_items = static_cast<std::size_t>(meta[0]);
  c.dim = static_cast<std::size_t>(meta[1]);
  c.variant = meta[2] != 0.0 ? Variant::normalized : Variant::plain;
  c.scale = meta[3];
  c.norm_floor = meta[4];
  nn::ParamStore params = store;
  params.erase("meta.sr");
  return SrModel(c, std::move(params));
}

double recall_at_1(const SrModel& model, const std::vector<data::ClickSession>& sessions) {
  std::size_t hits = 0, n = 0;
  for (const auto& s : sessions) {
    if (s.length() < 2) continue;
    const auto items = s.items();
    const std::span<const ItemId> prefix(items.data(), items.size() - 1);
    hits += model.recommend_topk(prefix, 1)[0] == items.back() ? 1 : 0;
    ++n;
  }
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

SrModel train_sr(const std::vector<data::ClickSession>& train, const std::vector<data::ClickSession>& valid,
                 const SrConfig& config, const TrainConfig& tc, std::uint64_t seed, TrainReport* report) {
  const auto examples = make_examples(train);
  if (examples.empty()) throw EmptyDatasetError("train_sr: no (prefix, target) pairs in the training data");
  if (tc.batch_size < 1 || tc.max_epochs < 1) throw InvalidInputError("train_sr: batch size and epochs must be >= 1");
  const nn::Rng root(seed);
  SrModel model(config, root.substream(0).next_u64());
  nn::AdamState adam;
  adam.config.lr = tc.lr;
  bool use_valid = false;
  for (const auto& s : valid) use_valid = use_valid || s.length() >= 2;

  TrainReport rep;
  double best = -1.0;
  nn::ParamStore best_params;
  std::size_t bad = 0;
  std::vector<std::size_t> order(examples.size());
  std::vector<Example> batch;
  nn::ParamStore grads;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    nn::Rng shuffle_rng = root.substream(epoch);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      loss_sum += model.loss_and_grad(batch, &grads) * static_cast<double>(batch.size());
      nn::adam_update(model.params(), grads, adam);
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(examples.size()));
    if (!use_valid) continue;
    const double r1 = recall_at_1(model, valid);
    rep.valid_recall1.push_back(r1);
    if (r1 > best) {
      best = r1;
      best_params = model.params();
      rep.best_epoch = epoch;
      bad = 0;
    } else if (++bad >= tc.patience) {
      break;
    }
  }
  if (use_valid) model.params() = best_params;
  if (report) *report = rep;
  return model;
}

}  // namespace dcasr::sr
