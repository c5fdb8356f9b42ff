#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "dcasr/data/types.hpp"
#include "dcasr/nn/layers.hpp"
#include "dcasr/nn/param_store.hpp"
#include "dcasr/nn/rng.hpp"
#include "dcasr/sr/model.hpp"

namespace dcasr::diffusion {

using data::ItemId;

// Arrays are indexed 0..T; index 0 holds the conventions alpha_bar[0] = 1,
// beta[0] = 0 and beta_tilde[0] = 0.
struct Schedule {
  std::size_t T = 0;
  double beta_1 = 0.0;
  double beta_T = 0.0;
  std::vector<double> beta, alpha, alpha_bar, beta_tilde;
};

Schedule make_schedule(std::size_t T, double beta_1, double beta_T);

std::vector<double> forward_diffuse(std::span<const double> e0, std::size_t t, std::span<const double> eps,
                                    const Schedule& s);
// (1 + w) * f_cond - w * f_uncond
std::vector<double> cfg_combine(std::span<const double> f_cond, std::span<const double> f_uncond, double w);

struct ReverseCoefficients {
  double on_f;
  double on_e;
  double noise;
};
ReverseCoefficients reverse_coefficients(std::size_t t, const Schedule& s);
std::vector<double> reverse_step(std::span<const double> e_t, std::span<const double> f, std::size_t t,
                                 const Schedule& s, std::span<const double> z);

// K items nearest to `query` in Euclidean distance; ties go to the smaller id.
std::vector<ItemId> retrieve_slate(std::span<const double> query, const nn::Tensor& table, std::size_t k,
                                   const std::set<ItemId>& exclude = {});

// Sinusoidal timestep table, rows 0..T.
nn::Tensor timestep_table(std::size_t T, std::size_t dim);

struct DiffusionConfig {
  std::size_t n_items = 0;
  std::size_t dim = 32;
  std::size_t T = 500;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  std::size_t max_len = 50;  // longer prefixes keep their last max_len items
  std::size_t heads = 1;
};

// Item table E_d (rows used at norm sqrt(d)), transformer guidance encoder,
// learned null condition phi, and an x0-predicting MLP on
// [e_t | c | time(t)] with two SiLU hidden layers of width 4d.
class DiffusionModel {
 public:
  DiffusionModel(const DiffusionConfig& config, std::uint64_t seed);
  DiffusionModel(const DiffusionConfig& config, nn::ParamStore params);

  const DiffusionConfig& config() const noexcept { return config_; }
  const Schedule& schedule() const noexcept { return schedule_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::AttentionConfig& encoder_config() const noexcept { return encoder_; }

  // Embeddings as seen by the sampler and the retrieval index.
  nn::Tensor item_embeddings() const;
  std::vector<double> null_condition() const;
  // Encoder output for the prefix; the null condition when it is empty.
  std::vector<double> encode_guidance(std::span<const ItemId> prefix) const;
  std::vector<double> denoise(std::span<const double> e_t, std::span<const double> c, std::size_t t) const;

  std::vector<double> sample(std::span<const ItemId> prefix, double w, nn::Rng& rng) const;
  std::vector<ItemId> retrieve(std::span<const double> e0, std::size_t k, const std::set<ItemId>& exclude = {}) const;

  // Mean over the batch of ||f(e_t, c, t) - e0||^2, plus item_ce_weight
  // times the cross-entropy of the target among all items with logits
  // -||f - E_j||^2 / 2. Without that term the jointly trained table can
  // collapse onto one direction. Timesteps, noise and condition dropout come
  // from noise_seed, so the loss is a deterministic function of the parameters.
  double loss_and_grad(std::span<const sr::Example> batch, std::uint64_t noise_seed, double p_uncond,
                       nn::ParamStore* grads, double item_ce_weight = 0.0) const;

  nn::ParamStore checkpoint() const;
  static DiffusionModel from_checkpoint(const nn::ParamStore& store);

 private:
  void validate() const;
  std::vector<ItemId> clip(std::span<const ItemId> prefix) const;

  DiffusionConfig config_;
  Schedule schedule_;
  nn::AttentionConfig encoder_;
  nn::Tensor time_table_;
  nn::ParamStore params_;
};

struct DiffusionTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double p_uncond = 0.1;
  double item_ce_weight = 0.1;
};

struct DiffusionTrainReport {
  std::vector<double> epoch_loss;
};

DiffusionModel train_diffusion(const std::vector<data::ClickSession>& sessions, const DiffusionConfig& config,
                               const DiffusionTrainConfig& train_config, std::uint64_t seed,
                               DiffusionTrainReport* report = nullptr);

}  // namespace dcasr::diffusion
