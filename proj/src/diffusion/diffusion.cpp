#include "dcasr/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcasr/error.hpp"
#include "dcasr/nn/autograd.hpp"
#include "dcasr/nn/optim.hpp"

namespace dcasr::diffusion {

namespace {

constexpr double kNormFloor = 1e-12;

void check_t(std::size_t t, const Schedule& s) {
  if (t < 1 || t > s.T) throw IndexError("diffusion: timestep " + std::to_string(t) + " outside 1.." + std::to_string(s.T));
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": dimension " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace

Schedule make_schedule(std::size_t T, double beta_1, double beta_T) {
  if (T < 1) throw InvalidInputError("schedule: T must be >= 1");
  if (!(beta_1 > 0.0) || !(beta_1 <= beta_T) || !(beta_T < 1.0)) {
    throw InvalidInputError("schedule: need 0 < beta_1 <= beta_T < 1");
  }
  Schedule s;
  s.T = T;
  s.beta_1 = beta_1;
  s.beta_T = beta_T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.beta_tilde.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.beta_tilde[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

std::vector<double> forward_diffuse(std::span<const double> e0, std::size_t t, std::span<const double> eps,
                                    const Schedule& s) {
  check_t(t, s);
  check_same(e0.size(), eps.size(), "forward_diffuse");
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  std::vector<double> out(e0.size());
  for (std::size_t i = 0; i < e0.size(); ++i) out[i] = a * e0[i] + b * eps[i];
  return out;
}

std::vector<double> cfg_combine(std::span<const double> f_cond, std::span<const double> f_uncond, double w) {
  check_same(f_cond.size(), f_uncond.size(), "cfg_combine");
  std::vector<double> out(f_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 + w) * f_cond[i] - w * f_uncond[i];
  return out;
}

ReverseCoefficients reverse_coefficients(std::size_t t, const Schedule& s) {
  check_t(t, s);
  const double denom = 1.0 - s.alpha_bar[t];
  // beta_1 / (1 - alpha_bar_1) is exactly 1.
  const double on_f = t == 1 ? 1.0 : std::sqrt(s.alpha_bar[t - 1]) * s.beta[t] / denom;
  return {on_f, std::sqrt(s.alpha[t]) * (1.0 - s.alpha_bar[t - 1]) / denom,
          std::sqrt(s.beta_tilde[t])};
}

std::vector<double> reverse_step(std::span<const double> e_t, std::span<const double> f, std::size_t t,
                                 const Schedule& s, std::span<const double> z) {
  const auto c = reverse_coefficients(t, s);
  check_same(e_t.size(), f.size(), "reverse_step");
  check_same(e_t.size(), z.size(), "reverse_step");
  std::vector<double> out(e_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c.on_f * f[i] + c.on_e * e_t[i] + c.noise * z[i];
  return out;
}

std::vector<ItemId> retrieve_slate(std::span<const double> query, const nn::Tensor& table, std::size_t k,
                                   const std::set<ItemId>& exclude) {
  const std::size_t m = table.rows(), d = table.cols();
  check_same(query.size(), d, "retrieve_slate");
  std::size_t excluded = 0;
  for (ItemId x : exclude) excluded += (x >= 0 && static_cast<std::size_t>(x) < m) ? 1 : 0;
  if (k > m - excluded) throw InvalidInputError("retrieve_slate: K=" + std::to_string(k) + " exceeds available items");
  std::vector<std::pair<double, ItemId>> dist;
  dist.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (exclude.count(static_cast<ItemId>(i))) continue;
    double s = 0.0;
    const auto row = table.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - query[j];
      s += diff * diff;
    }
    dist.emplace_back(s, static_cast<ItemId>(i));
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<ItemId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(dist[i].second);
  return out;
}

nn::Tensor timestep_table(std::size_t T, std::size_t dim) {
  nn::Tensor out({T + 1, dim});
  for (std::size_t t = 0; t <= T; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      out(t, i) = i % 2 == 0 ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return out;
}

namespace {

nn::AttentionConfig make_encoder_config(const DiffusionConfig& c) {
  nn::AttentionConfig a;
  a.dim = c.dim;
  a.heads = c.heads;
  a.max_len = c.max_len;
  a.ffn_width = 2 * c.dim;
  return a;
}

}  // namespace

DiffusionModel::DiffusionModel(const DiffusionConfig& config, std::uint64_t seed)
    : config_(config),
      schedule_(make_schedule(config.T, config.beta_1, config.beta_T)),
      encoder_(make_encoder_config(config)),
      time_table_(timestep_table(config.T, config.dim)) {
  if (config.n_items < 1 || config.dim < 2) throw InvalidInputError("diffusion: need n_items >= 1 and dim >= 2");
  const std::size_t d = config.dim, m = config.n_items, h = 4 * d;
  nn::Rng rng(seed, 0xD1FF);
  params_.set("diff.E", nn::random_normal({m, d}, 1.0, rng));
  params_.set("diff.phi", nn::random_normal({d}, 1.0, rng));
  nn::init_attention_encoder(params_, "diff.enc.", encoder_, rng);
  params_.set("diff.mlp.w1", nn::random_normal({3 * d, h}, 1.0 / std::sqrt(3.0 * static_cast<double>(d)), rng));
  params_.set("diff.mlp.b1", nn::Tensor({h}, 0.0));
  params_.set("diff.mlp.w2", nn::random_normal({h, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
  params_.set("diff.mlp.b2", nn::Tensor({h}, 0.0));
  params_.set("diff.mlp.w3", nn::random_normal({h, d}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
  params_.set("diff.mlp.b3", nn::Tensor({d}, 0.0));
  validate();
}

DiffusionModel::DiffusionModel(const DiffusionConfig& config, nn::ParamStore params)
    : config_(config),
      schedule_(make_schedule(config.T, config.beta_1, config.beta_T)),
      encoder_(make_encoder_config(config)),
      time_table_(timestep_table(config.T, config.dim)),
      params_(std::move(params)) {
  validate();
}

void DiffusionModel::validate() const {
  const std::size_t d = config_.dim, m = config_.n_items, h = 4 * d, f = encoder_.ffn_width;
  const std::pair<const char*, nn::Shape> expected[] = {
      {"diff.E", {m, d}},          {"diff.phi", {d}},           {"diff.enc.pos", {config_.max_len, d}},
      {"diff.enc.wq", {d, d}},     {"diff.enc.wk", {d, d}},     {"diff.enc.wv", {d, d}},
      {"diff.enc.wo", {d, d}},     {"diff.enc.ln1.g", {d}},     {"diff.enc.ln1.b", {d}},
      {"diff.enc.ff1.w", {d, f}},  {"diff.enc.ff1.b", {f}},     {"diff.enc.ff2.w", {f, d}},
      {"diff.enc.ff2.b", {d}},     {"diff.enc.ln2.g", {d}},     {"diff.enc.ln2.b", {d}},
      {"diff.mlp.w1", {3 * d, h}}, {"diff.mlp.b1", {h}},        {"diff.mlp.w2", {h, h}},
      {"diff.mlp.b2", {h}},        {"diff.mlp.w3", {h, d}},     {"diff.mlp.b3", {d}}};
  for (const auto& [name, shape] : expected) {
    if (!params_.contains(name)) throw ConsistencyError(std::string("diffusion: missing parameter ") + name);
    if (params_.at(name).shape() != shape) {
      throw DimensionError(std::string("diffusion: parameter ") + name + " has shape " +
                           nn::shape_string(params_.at(name).shape()) + ", expected " + nn::shape_string(shape));
    }
  }
  if (params_.size() != std::size(expected)) throw ConsistencyError("diffusion: unexpected extra parameters");
}

std::vector<ItemId> DiffusionModel::clip(std::span<const ItemId> prefix) const {
  for (ItemId i : prefix) {
    if (i < 0 || static_cast<std::size_t>(i) >= config_.n_items) {
      throw IndexError("diffusion: item " + std::to_string(i) + " outside catalog");
    }
  }
  const std::size_t start = prefix.size() > config_.max_len ? prefix.size() - config_.max_len : 0;
  return {prefix.begin() + static_cast<std::ptrdiff_t>(start), prefix.end()};
}

nn::Tensor DiffusionModel::item_embeddings() const {
  nn::Tensor out = params_.at("diff.E");
  const std::size_t d = config_.dim;
  const double target = std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    double n = 0.0;
    for (double x : row) n += x * x;
    const double k = target / std::max(std::sqrt(n), kNormFloor);
    for (double& x : row) x *= k;
  }
  return out;
}

std::vector<double> DiffusionModel::null_condition() const {
  const auto& phi = params_.at("diff.phi");
  return {phi.values().begin(), phi.values().end()};
}

std::vector<double> DiffusionModel::encode_guidance(std::span<const ItemId> prefix) const {
  if (prefix.empty()) return null_condition();
  const auto items = clip(prefix);
  const auto table = item_embeddings();
  const std::size_t d = config_.dim;
  nn::Tensor seq({items.size(), d});
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto src = table.row(static_cast<std::size_t>(items[i]));
    std::copy(src.begin(), src.end(), seq.row(i).begin());
  }
  const auto c = nn::attention_encode(seq, params_, "diff.enc.", encoder_);
  return {c.values().begin(), c.values().end()};
}

namespace {

void dense_silu(const std::vector<double>& in, const nn::Tensor& w, const nn::Tensor& b, bool act,
                std::vector<double>& out) {
  const std::size_t rows = w.rows(), cols = w.cols();
  out.assign(b.values().begin(), b.values().end());
  for (std::size_t r = 0; r < rows; ++r) {
    const double x = in[r];
    const double* wr = w.storage().data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += x * wr[j];
  }
  if (act) {
    for (auto& v : out) v = v / (1.0 + std::exp(-v));
  }
}

}  // namespace

std::vector<double> DiffusionModel::denoise(std::span<const double> e_t, std::span<const double> c,
                                            std::size_t t) const {
  check_t(t, schedule_);
  const std::size_t d = config_.dim;
  check_same(e_t.size(), d, "denoise");
  check_same(c.size(), d, "denoise");
  std::vector<double> x(3 * d), h1, h2, out;
  std::copy(e_t.begin(), e_t.end(), x.begin());
  std::copy(c.begin(), c.end(), x.begin() + static_cast<std::ptrdiff_t>(d));
  auto tr = time_table_.row(t);
  std::copy(tr.begin(), tr.end(), x.begin() + static_cast<std::ptrdiff_t>(2 * d));
  dense_silu(x, params_.at("diff.mlp.w1"), params_.at("diff.mlp.b1"), true, h1);
  dense_silu(h1, params_.at("diff.mlp.w2"), params_.at("diff.mlp.b2"), true, h2);
  dense_silu(h2, params_.at("diff.mlp.w3"), params_.at("diff.mlp.b3"), false, out);
  return out;
}

std::vector<double> DiffusionModel::sample(std::span<const ItemId> prefix, double w, nn::Rng& rng) const {
  if (!(w >= 0.0)) throw InvalidInputError("sample: guidance weight must be >= 0");
  const std::size_t d = config_.dim;
  const auto cond = encode_guidance(prefix);
  const auto null = null_condition();
  std::vector<double> e = rng.normal_vector(d);
  std::vector<double> z(d, 0.0);
  for (std::size_t t = schedule_.T; t >= 1; --t) {
    auto f = denoise(e, cond, t);
    if (w != 0.0) f = cfg_combine(f, denoise(e, null, t), w);
    if (t > 1) {
      z = rng.normal_vector(d);
    } else {
      std::fill(z.begin(), z.end(), 0.0);
    }
    e = reverse_step(e, f, t, schedule_, z);
  }
  return e;
}

std::vector<ItemId> DiffusionModel::retrieve(std::span<const double> e0, std::size_t k,
                                             const std::set<ItemId>& exclude) const {
  return retrieve_slate(e0, item_embeddings(), k, exclude);
}

double DiffusionModel::loss_and_grad(std::span<const sr::Example> batch, std::uint64_t noise_seed, double p_uncond,
                                     nn::ParamStore* grads, double item_ce_weight) const {
  if (batch.empty()) throw InvalidInputError("diffusion: empty batch");
  const std::size_t d = config_.dim, B = batch.size();
  nn::Graph g(grads != nullptr);
  nn::Var table = nn::scale(nn::row_normalize(g.bind(params_, "diff.E"), kNormFloor), std::sqrt(static_cast<double>(d)));
  nn::Var phi = g.bind(params_, "diff.phi");

  nn::Rng rng(noise_seed, 0xB47C);
  std::vector<nn::Var> conds;
  std::vector<std::size_t> targets;
  nn::Tensor keep({B, d}), noise({B, d}), times({B, d});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ex = batch[b];
    if (ex.prefix.empty()) throw InvalidInputError("diffusion: example without prefix");
    const auto items = clip(ex.prefix);
    if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= config_.n_items) {
      throw IndexError("diffusion: target outside catalog");
    }
    targets.push_back(static_cast<std::size_t>(ex.target));
    const bool drop = rng.uniform() < p_uncond;
    const std::size_t t = 1 + rng.uniform_index(schedule_.T);
    const auto eps = rng.normal_vector(d);
    const double a = std::sqrt(schedule_.alpha_bar[t]), s = std::sqrt(1.0 - schedule_.alpha_bar[t]);
    for (std::size_t j = 0; j < d; ++j) {
      keep(b, j) = a;
      noise(b, j) = s * eps[j];
      times(b, j) = time_table_(t, j);
    }
    if (drop) {
      conds.push_back(phi);
    } else {
      std::vector<std::size_t> idx(items.begin(), items.end());
      conds.push_back(nn::attention_encode(g, nn::gather_rows(table, idx), params_, "diff.enc.", encoder_));
    }
  }
  nn::Var e0 = nn::gather_rows(table, targets);
  nn::Var e_t = nn::add(nn::mul(e0, g.constant(keep)), g.constant(noise));
  nn::Var x = nn::concat_cols({e_t, nn::concat_rows(conds), g.constant(times)});
  nn::Var h = nn::silu(nn::affine(x, g.bind(params_, "diff.mlp.w1"), g.bind(params_, "diff.mlp.b1")));
  h = nn::silu(nn::affine(h, g.bind(params_, "diff.mlp.w2"), g.bind(params_, "diff.mlp.b2")));
  nn::Var out = nn::affine(h, g.bind(params_, "diff.mlp.w3"), g.bind(params_, "diff.mlp.b3"));
  nn::Var loss = nn::scale(nn::squared_error(out, e0), 1.0 / static_cast<double>(B));
  if (item_ce_weight > 0.0) {
    // Logits are -||out - E_j||^2 / 2 up to a per-row constant.
    nn::Var ce = nn::cross_entropy_rows(nn::matmul_nt(out, table), targets);
    loss = nn::add(loss, nn::scale(ce, item_ce_weight / static_cast<double>(B)));
  }
  if (grads) {
    g.backward(loss);
    nn::ParamStore bound = g.parameter_grads();
    *grads = params_.zeros_like();
    for (const auto& [name, t] : bound) grads->at(name) = t;
  }
  return loss.value()[0];
}

nn::ParamStore DiffusionModel::checkpoint() const {
  nn::ParamStore out = params_;
  out.set("meta.diffusion",
          nn::Tensor::vector({static_cast<double>(config_.n_items), static_cast<double>(config_.dim),
                              static_cast<double>(config_.T), config_.beta_1, config_.beta_T,
                              static_cast<double>(config_.max_len), static_cast<double>(config_.heads), 0.0}));
  out.set("meta.time_table", time_table_);
  return out;
}

DiffusionModel DiffusionModel::from_checkpoint(const nn::ParamStore& store) {
  if (!store.contains("meta.diffusion") || store.at("meta.diffusion").size() != 8) {
    throw FormatError("diffusion checkpoint: missing or malformed meta.diffusion");
  }
  const auto& m = store.at("meta.diffusion");
  if (m[7] != 0.0) throw FormatError("diffusion checkpoint: unknown schedule kind");
  DiffusionConfig c;
  c.n_items = static_cast<std::size_t>(m[0]);
  c.dim = static_cast<std::size_t>(m[1]);
  c.T = static_cast<std::size_t>(m[2]);
  c.beta_1 = m[3];
  c.beta_T = m[4];
  c.max_len = static_cast<std::size_t>(m[5]);
  c.heads = static_cast<std::size_t>(m[6]);
  nn::ParamStore params = store;
  params.erase("meta.diffusion");
  if (params.contains("meta.time_table")) {
    if (!params.at("meta.time_table").bit_equal(timestep_table(c.T, c.dim))) {
      throw ConsistencyError("diffusion checkpoint: timestep table does not match the configuration");
    }
    params.erase("meta.time_table");
  }
  return DiffusionModel(c, std::move(params));
}

DiffusionModel train_diffusion(const std::vector<data::ClickSession>& sessions, const DiffusionConfig& config,
                               const DiffusionTrainConfig& tc, std::uint64_t seed, DiffusionTrainReport* report) {
  const auto examples = sr::make_examples(sessions);
  if (examples.empty()) throw EmptyDatasetError("train_diffusion: no session has length >= 2");
  if (tc.batch_size < 1 || tc.epochs < 1) throw InvalidInputError("train_diffusion: batch size and epochs must be >= 1");
  if (tc.p_uncond < 0.0 || tc.p_uncond > 1.0) throw InvalidInputError("train_diffusion: p_uncond must be in [0, 1]");
  const nn::Rng root(seed);
  DiffusionModel model(config, root.substream(0).next_u64());
  nn::AdamState adam;
  adam.config.lr = tc.lr;
  DiffusionTrainReport rep;
  std::vector<std::size_t> order(examples.size());
  std::vector<sr::Example> batch;
  nn::ParamStore grads;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    nn::Rng epoch_rng = root.substream(epoch);
    epoch_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      loss_sum += model.loss_and_grad(batch, epoch_rng.next_u64(), tc.p_uncond, &grads, tc.item_ce_weight) * static_cast<double>(batch.size());
      nn::adam_update(model.params(), grads, adam);
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(examples.size()));
  }
  if (report) *report = rep;
  return model;
}

}  // namespace dcasr::diffusion
