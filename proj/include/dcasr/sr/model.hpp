#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "dcasr/data/types.hpp"
#include "dcasr/nn/param_store.hpp"
#include "dcasr/nn/rng.hpp"

namespace dcasr::sr {

using data::ItemId;

enum class Variant { plain, normalized };

struct SrConfig {
  std::size_t n_items = 0;
  std::size_t dim = 64;
  Variant variant = Variant::plain;
  double scale = 16.0;       // normalized variant only
  double norm_floor = 1e-8;  // norms are floored before the cosine
  double init_std = 0.1;
};

struct Example {
  std::vector<ItemId> prefix;
  ItemId target = 0;
};

// Every (prefix, next item) pair of every session.
std::vector<Example> make_examples(const std::vector<data::ClickSession>& sessions);

// Attention readout with the last item as query; the global vector and the
// last item embedding are concatenated and projected back to d dimensions.
// Parameters: sr.E [m x d], sr.Wq, sr.Wk, sr.Wv [d x d], sr.Wo [2d x d], sr.bo [d].
class SrModel {
 public:
  SrModel(const SrConfig& config, std::uint64_t seed);
  SrModel(const SrConfig& config, nn::ParamStore params);

  const SrConfig& config() const noexcept { return config_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params() noexcept { return params_; }

  std::vector<double> encode(std::span<const ItemId> prefix) const;
  // Attention weights of the readout, one per prefix position.
  std::vector<double> attention(std::span<const ItemId> prefix) const;
  std::vector<double> score_items(std::span<const double> session_vec) const;
  std::vector<double> scores(std::span<const ItemId> prefix) const { return score_items(encode(prefix)); }
  std::vector<double> probabilities(std::span<const ItemId> prefix) const;
  std::vector<ItemId> recommend_topk(std::span<const ItemId> prefix, std::size_t k,
                                     const std::set<ItemId>& exclude = {}) const;

  // Mean cross-entropy over the batch; gradient with the parameter names.
  double loss_and_grad(std::span<const Example> batch, nn::ParamStore* grads) const;
  double mean_loss(std::span<const Example> examples) const { return loss_and_grad(examples, nullptr); }

  // Parameters plus a meta.sr entry describing the configuration.
  nn::ParamStore checkpoint() const;
  static SrModel from_checkpoint(const nn::ParamStore& store);

 private:
  void check_prefix(std::span<const ItemId> prefix) const;

  SrConfig config_;
  nn::ParamStore params_;
};

// K highest scores outside `exclude`; ties go to the smaller id.
std::vector<ItemId> topk_from_scores(std::span<const double> scores, std::size_t k,
                                     const std::set<ItemId>& exclude = {});

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;  // early stopping on validation Recall@1
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::vector<double> valid_recall1;
  std::size_t best_epoch = 0;  // 1-based; 0 when no validation set was used
};

// Minibatch Adam on all prefix -> next pairs. With a non-empty validation set
// the parameters of the best validation Recall@1 epoch are returned.
SrModel train_sr(const std::vector<data::ClickSession>& train, const std::vector<data::ClickSession>& valid,
                 const SrConfig& config, const TrainConfig& train_config, std::uint64_t seed,
                 TrainReport* report = nullptr);

// Fraction of sessions whose last item is the top-1 recommendation for the rest.
double recall_at_1(const SrModel& model, const std::vector<data::ClickSession>& sessions);

}  // namespace dcasr::sr
