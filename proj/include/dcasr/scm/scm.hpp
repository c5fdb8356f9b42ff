#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcasr/data/types.hpp"
#include "dcasr/nn/param_store.hpp"
#include "dcasr/nn/rng.hpp"

namespace dcasr::scm {

using data::ItemId;

enum class Candidate { tanh, linear };

struct ScmConfig {
  std::size_t n_items = 0;
  std::size_t dim = 16;
  Candidate candidate = Candidate::tanh;
  double sigma_floor = 1e-6;
};

// Parameters: scm.V [m x d'], scm.h0 [d'], gated update scm.{Wz,Uz,bz,Wr,Ur,br,Wh,Uh,bh},
// confounder weights scm.w [m], no-click bias scm.b0 [1], posterior scm.mu [m]
// and scm.log_sigma [m].
class ScmModel {
 public:
  ScmModel(const ScmConfig& config, std::uint64_t seed);
  ScmModel(const ScmConfig& config, nn::ParamStore params);

  const ScmConfig& config() const noexcept { return config_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params() noexcept { return params_; }

  std::vector<double> initial_state() const;
  // Unchanged for an empty click set; otherwise a gated update driven by the
  // mean V embedding of the clicked items.
  std::vector<double> update_interest(std::span<const double> h, std::span<const ItemId> clicked) const;

  std::vector<double> sigma() const;
  std::vector<double> sample_confounder(nn::Rng& rng) const;

  // K item outcomes followed by the no-click outcome.
  std::vector<double> response_logits(std::span<const double> h, std::span<const ItemId> slate,
                                      std::span<const double> beta_hat) const;
  std::vector<double> response_probabilities(std::span<const double> h, std::span<const ItemId> slate,
                                             std::span<const double> beta_hat) const;
  std::vector<std::uint8_t> generate_response(std::span<const double> h, std::span<const ItemId> slate,
                                              std::span<const double> beta_hat, std::size_t budget) const;

  double kl() const;

  // Negative log-likelihood of the observed outcomes plus kl_weight * KL, with
  // one reparameterized confounder draw from noise_seed.
  double elbo_loss(std::span<const data::SlateInteraction> batch, std::uint64_t noise_seed, double kl_weight,
                   nn::ParamStore* grads) const;

  nn::ParamStore checkpoint() const;
  static ScmModel from_checkpoint(const nn::ParamStore& store);

 private:
  void validate() const;
  void check_item(ItemId i) const;

  ScmConfig config_;
  nn::ParamStore params_;
};

// Outcome selection from K+1 probabilities (or logits; only the order is
// used): all-false when no-click is at least as likely as every item,
// otherwise the min(budget, K) most likely items (ties by slate position).
std::vector<std::uint8_t> select_response(std::span<const double> probabilities, std::size_t budget);

struct ScmTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;  // interactions per batch
  double lr = 5e-3;
};

struct ScmTrainReport {
  std::vector<double> epoch_loss;  // full-epoch negative ELBO per step
};

ScmModel train_scm(const std::vector<data::SlateInteraction>& log, const ScmConfig& config,
                   const ScmTrainConfig& train_config, std::uint64_t seed, ScmTrainReport* report = nullptr);

}  // namespace dcasr::scm
