#include "dcasr/scm/scm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dcasr/error.hpp"
#include "dcasr/nn/autograd.hpp"
#include "dcasr/nn/layers.hpp"
#include "dcasr/nn/loss.hpp"
#include "dcasr/nn/optim.hpp"

namespace dcasr::scm {

namespace {

const char* const kGateNames[] = {"scm.Wz", "scm.Uz", "scm.Wr", "scm.Ur", "scm.Wh", "scm.Uh"};
const char* const kGateBiases[] = {"scm.bz", "scm.br", "scm.bh"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// out = x W + h U + b
std::vector<double> gate_input(std::span<const double> x, const nn::Tensor& W, std::span<const double> h,
                               const nn::Tensor& U, const nn::Tensor& b) {
  const std::size_t d = b.size();
  std::vector<double> out(b.values().begin(), b.values().end());
  std::vector<double> xw(d, 0.0), hu(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      xw[j] += x[r] * W(r, j);
      hu[j] += h[r] * U(r, j);
    }
  }
  for (std::size_t j = 0; j < d; ++j) out[j] = xw[j] + hu[j] + out[j];
  return out;
}

}  // namespace

ScmModel::ScmModel(const ScmConfig& config, std::uint64_t seed) : config_(config) {
  if (config.n_items < 1 || config.dim < 2) throw InvalidInputError("scm: need n_items >= 1 and dim >= 2");
  const std::size_t m = config.n_items, d = config.dim;
  nn::Rng rng(seed, 0x5C3);
  params_.set("scm.V", nn::random_normal({m, d}, 0.1, rng));
  params_.set("scm.h0", nn::random_normal({d}, 0.1, rng));
  for (const char* name : kGateNames) params_.set(name, nn::random_normal({d, d}, 1.0 / std::sqrt(double(d)), rng));
  for (const char* name : kGateBiases) params_.set(name, nn::Tensor({d}, 0.0));
  params_.set("scm.w", nn::random_normal({m}, 0.1, rng));
  params_.set("scm.b0", nn::Tensor({1}, 0.0));
  params_.set("scm.mu", nn::Tensor({m}, 0.0));
  params_.set("scm.log_sigma", nn::Tensor({m}, 0.0));
  validate();
}

ScmModel::ScmModel(const ScmConfig& config, nn::ParamStore params) : config_(config), params_(std::move(params)) {
  validate();
}

void ScmModel::validate() const {
  const std::size_t m = config_.n_items, d = config_.dim;
  std::vector<std::pair<std::string, nn::Shape>> expected{
      {"scm.V", {m, d}}, {"scm.h0", {d}}, {"scm.w", {m}}, {"scm.b0", {1}}, {"scm.mu", {m}}, {"scm.log_sigma", {m}}};
  for (const char* n : kGateNames) expected.push_back({n, {d, d}});
  for (const char* n : kGateBiases) expected.push_back({n, {d}});
  for (const auto& [name, shape] : expected) {
    if (!params_.contains(name)) throw ConsistencyError("scm: missing parameter " + name);
    if (params_.at(name).shape() != shape) {
      throw DimensionError("scm: parameter " + name + " has shape " + nn::shape_string(params_.at(name).shape()) +
                           ", expected " + nn::shape_string(shape));
    }
  }
  if (params_.size() != expected.size()) throw ConsistencyError("scm: unexpected extra parameters");
}

void ScmModel::check_item(ItemId i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= config_.n_items) {
    throw IndexError("scm: item " + std::to_string(i) + " outside catalog");
  }
}

std::vector<double> ScmModel::initial_state() const {
  const auto& h0 = params_.at("scm.h0");
  return {h0.values().begin(), h0.values().end()};
}

std::vector<double> ScmModel::update_interest(std::span<const double> h, std::span<const ItemId> clicked) const {
  const std::size_t d = config_.dim;
  if (h.size() != d) throw DimensionError("scm: interest state has wrong dimension");
  for (ItemId i : clicked) check_item(i);
  if (clicked.empty()) return {h.begin(), h.end()};
  const auto& V = params_.at("scm.V");
  std::vector<double> x(d, 0.0);
  for (ItemId i : clicked) {
    for (std::size_t j = 0; j < d; ++j) x[j] += V(static_cast<std::size_t>(i), j);
  }
  for (auto& v : x) v /= static_cast<double>(clicked.size());
  auto z = gate_input(x, params_.at("scm.Wz"), h, params_.at("scm.Uz"), params_.at("scm.bz"));
  auto r = gate_input(x, params_.at("scm.Wr"), h, params_.at("scm.Ur"), params_.at("scm.br"));
  std::vector<double> rh(d);
  for (std::size_t j = 0; j < d; ++j) {
    z[j] = sigmoid(z[j]);
    rh[j] = sigmoid(r[j]) * h[j];
  }
  auto c = gate_input(x, params_.at("scm.Wh"), rh, params_.at("scm.Uh"), params_.at("scm.bh"));
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double cand = config_.candidate == Candidate::tanh ? std::tanh(c[j]) : c[j];
    out[j] = (1.0 - z[j]) * h[j] + z[j] * cand;
  }
  return out;
}

std::vector<double> ScmModel::sigma() const {
  const auto& ls = params_.at("scm.log_sigma");
  std::vector<double> s(ls.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::max(std::exp(ls[i]), config_.sigma_floor);
  return s;
}

std::vector<double> ScmModel::sample_confounder(nn::Rng& rng) const {
  const auto& mu = params_.at("scm.mu");
  const auto s = sigma();
  std::vector<double> out(mu.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu[i] + s[i] * rng.normal();
  return out;
}

std::vector<double> ScmModel::response_logits(std::span<const double> h, std::span<const ItemId> slate,
                                              std::span<const double> beta_hat) const {
  const std::size_t d = config_.dim;
  if (h.size() != d) throw DimensionError("scm: interest state has wrong dimension");
  if (beta_hat.size() != config_.n_items) throw DimensionError("scm: confounder draw has wrong dimension");
  const auto& V = params_.at("scm.V");
  const auto& w = params_.at("scm.w");
  std::vector<double> logits(slate.size() + 1);
  for (std::size_t n = 0; n < slate.size(); ++n) {
    check_item(slate[n]);
    const auto i = static_cast<std::size_t>(slate[n]);
    double ui = 0.0;
    for (std::size_t j = 0; j < d; ++j) ui += h[j] * V(i, j);
    logits[n] = ui + w[i] * beta_hat[i];
  }
  logits.back() = params_.at("scm.b0")[0];
  return logits;
}

std::vector<double> ScmModel::response_probabilities(std::span<const double> h, std::span<const ItemId> slate,
                                                     std::span<const double> beta_hat) const {
  auto p = response_logits(h, slate, beta_hat);
  nn::softmax_inplace(p);
  return p;
}

std::vector<std::uint8_t> select_response(std::span<const double> p, std::size_t budget) {
  if (p.size() < 2) throw InvalidInputError("select_response: need at least one slate item");
  const std::size_t k = p.size() - 1;
  if (budget > k) throw InvalidInputError("select_response: click budget exceeds slate size");
  std::vector<std::uint8_t> out(k, 0);
  const double best_item = *std::max_element(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(k));
  if (p[k] >= best_item || budget == 0) return out;
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  for (std::size_t i = 0; i < budget; ++i) out[order[i]] = 1;
  return out;
}

std::vector<std::uint8_t> ScmModel::generate_response(std::span<const double> h, std::span<const ItemId> slate,
                                                      std::span<const double> beta_hat, std::size_t budget) const {
  return select_response(response_logits(h, slate, beta_hat), budget);
}

double ScmModel::kl() const {
  const auto& mu = params_.at("scm.mu");
  const auto& ls = params_.at("scm.log_sigma");
  const double log_floor = std::log(config_.sigma_floor);
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double log_s = std::max(ls[i], log_floor);
    const double s = std::exp(log_s);
    total += 0.5 * (mu[i] * mu[i] + s * s - 1.0 - 2.0 * log_s);
  }
  return total;
}

double ScmModel::elbo_loss(std::span<const data::SlateInteraction> batch, std::uint64_t noise_seed, double kl_weight,
                           nn::ParamStore* grads) const {
  if (batch.empty()) throw InvalidInputError("scm: empty batch");
  const std::size_t m = config_.n_items;
  nn::Graph g(grads != nullptr);
  nn::Var V = g.bind(params_, "scm.V");
  nn::Var mu = g.bind(params_, "scm.mu");
  nn::Var ls = g.bind(params_, "scm.log_sigma");
  nn::Var b0 = g.bind(params_, "scm.b0");
  nn::Rng rng(noise_seed, 0xE1B0);
  nn::Tensor zeta({m});
  for (auto& v : zeta.values()) v = rng.normal();
  nn::Var beta = nn::add(mu, nn::mul(nn::exp_floor(ls, config_.sigma_floor), g.constant(zeta)));
  nn::Var w_col = nn::transpose(g.bind(params_, "scm.w"));
  nn::Var beta_col = nn::transpose(beta);

  auto gate = [&](nn::Var x, nn::Var h, const char* W, const char* U, const char* b) {
    return nn::add_row(nn::add(nn::matmul(x, g.bind(params_, W)), nn::matmul(h, g.bind(params_, U))),
                       g.bind(params_, b));
  };

  std::map<std::size_t, std::pair<std::vector<nn::Var>, std::vector<std::size_t>>> rows_by_width;
  std::size_t steps = 0;
  for (const auto& inter : batch) {
    nn::Var h = g.bind(params_, "scm.h0");
    for (const auto& step : inter.steps) {
      if (step.slate.size() != step.clicks.size()) {
        throw DataError("scm: slate of " + std::to_string(step.slate.size()) + " items with " +
                        std::to_string(step.clicks.size()) + " responses");
      }
      if (step.slate.empty()) throw DataError("scm: empty slate");
      std::vector<std::size_t> idx;
      std::vector<std::size_t> clicked;
      for (std::size_t n = 0; n < step.slate.size(); ++n) {
        check_item(step.slate[n]);
        idx.push_back(static_cast<std::size_t>(step.slate[n]));
        if (step.clicks[n]) clicked.push_back(n);
      }
      nn::Var ui = nn::matmul_nt(h, nn::gather_rows(V, idx));
      nn::Var conf = nn::transpose(nn::mul(nn::gather_rows(w_col, idx), nn::gather_rows(beta_col, idx)));
      nn::Var logits = nn::concat_cols({nn::add(ui, conf), b0});
      auto& group = rows_by_width[idx.size()];
      if (clicked.empty()) {
        group.first.push_back(logits);
        group.second.push_back(idx.size());
      }
      for (std::size_t n : clicked) {
        group.first.push_back(logits);
        group.second.push_back(n);
      }
      ++steps;
      if (!clicked.empty()) {
        std::vector<std::size_t> items;
        for (std::size_t n : clicked) items.push_back(idx[n]);
        nn::Var x = nn::mean_rows(nn::gather_rows(V, items));
        nn::Var z = nn::sigmoid(gate(x, h, "scm.Wz", "scm.Uz", "scm.bz"));
        nn::Var r = nn::sigmoid(gate(x, h, "scm.Wr", "scm.Ur", "scm.br"));
        nn::Var c = gate(x, nn::mul(r, h), "scm.Wh", "scm.Uh", "scm.bh");
        if (config_.candidate == Candidate::tanh) c = nn::tanh(c);
        h = nn::add(nn::mul(nn::affine_scalar(z, -1.0, 1.0), h), nn::mul(z, c));
      }
    }
  }
  if (steps == 0) throw DataError("scm: batch without steps");

  std::vector<nn::Var> parts;
  for (auto& [width, group] : rows_by_width) {
    parts.push_back(nn::cross_entropy_rows(nn::concat_rows(group.first), group.second));
  }
  nn::Var nll = parts.size() == 1 ? parts[0] : nn::sum_all(nn::concat_rows(parts));

  // KL(q || N(0, 1)) with sigma = max(exp(log_sigma), floor).
  const double kl_value = kl();
  const double log_floor = std::log(config_.sigma_floor);
  const std::size_t mu_id = mu.id, ls_id = ls.id;
  nn::Var kl_var = g.record(nn::Tensor({1, 1}, kl_value), [mu_id, ls_id, log_floor](nn::Graph& gr, std::size_t self) {
    const double up = gr.grad_buffer(self)[0];
    const nn::Tensor& muv = gr.value(mu_id);
    const nn::Tensor& lsv = gr.value(ls_id);
    nn::Tensor& gmu = gr.grad_buffer(mu_id);
    nn::Tensor& gls = gr.grad_buffer(ls_id);
    for (std::size_t i = 0; i < muv.size(); ++i) {
      gmu[i] += up * muv[i];
      if (lsv[i] > log_floor) gls[i] += up * (std::exp(2.0 * lsv[i]) - 1.0);
    }
  });
  nn::Var loss = nn::add(nll, nn::scale(kl_var, kl_weight));
  if (grads) {
    g.backward(loss);
    nn::ParamStore bound = g.parameter_grads();
    *grads = params_.zeros_like();
    for (const auto& [name, t] : bound) grads->at(name) = t;
  }
  return loss.value()[0];
}

nn::ParamStore ScmModel::checkpoint() const {
  nn::ParamStore out = params_;
  out.set("meta.scm", nn::Tensor::vector({static_cast<double>(config_.n_items), static_cast<double>(config_.dim),
                                           config_.candidate == Candidate::linear ? 1.0 : 0.0, config_.sigma_floor}));
  return out;
}

ScmModel ScmModel::from_checkpoint(const nn::ParamStore& store) {
  if (!store.contains("meta.scm") || store.at("meta.scm").size() != 4) {
    throw FormatError("scm checkpoint: missing or malformed meta.scm");
  }
  const auto& m = store.at("meta.scm");
  ScmConfig c;
  c.n_items = static_cast<std::size_t>(m[0]);
  c.dim = static_cast<std::size_t>(m[1]);
  c.candidate = m[2] != 0.0 ? Candidate::linear : Candidate::tanh;
  c.sigma_floor = m[3];
  nn::ParamStore params = store;
  params.erase("meta.scm");
  return ScmModel(c, std::move(params));
}

ScmModel train_scm(const std::vector<data::SlateInteraction>& log, const ScmConfig& config,
                   const ScmTrainConfig& tc, std::uint64_t seed, ScmTrainReport* report) {
  std::vector<std::size_t> usable;
  std::size_t total_steps = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (!log[i].steps.empty()) {
      usable.push_back(i);
      total_steps += log[i].steps.size();
    }
  }
  if (usable.empty()) throw EmptyDatasetError("train_scm: empty slate log");
  if (tc.batch_size < 1 || tc.epochs < 1) throw InvalidInputError("train_scm: batch size and epochs must be >= 1");
  const nn::Rng root(seed);
  ScmModel model(config, root.substream(0).next_u64());
  nn::AdamState adam;
  adam.config.lr = tc.lr;
  ScmTrainReport rep;
  std::vector<data::SlateInteraction> batch;
  nn::ParamStore grads;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    auto order = usable;
    nn::Rng epoch_rng = root.substream(epoch);
    epoch_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(log[order[i]]);
      const double weight = static_cast<double>(batch.size()) / static_cast<double>(usable.size());
      loss_sum += model.elbo_loss(batch, epoch_rng.next_u64(), weight, &grads);
      nn::adam_update(model.params(), grads, adam);
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(total_steps));
  }
  if (report) *report = rep;
  return model;
}

}  // namespace dcasr::scm
