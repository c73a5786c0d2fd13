#pragma once

// Optimisation loops: the denoising, contrastive and classification pretexts
// and the downstream completion task.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deco/config.hpp"
#include "deco/data.hpp"
#include "deco/models.hpp"
#include "deco/parameters.hpp"

namespace deco::train {

/// base * 0.5^floor(epoch / period).
double lr_at(std::size_t epoch, double base, std::size_t period);

/// Global L2 norm of the gradients before clipping; rescales them to at most max_norm.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Bias-corrected update from the current gradients. A non-finite gradient
  /// aborts before any parameter changes.
  void step(double lr);

  std::uint64_t steps() const { return step_; }
  const std::vector<Parameter*>& params() const { return params_; }

  /// Moments as named tensors ("m.<param>", "v.<param>") for persistence.
  std::vector<model::NamedTensor> export_state() const;
  void import_state(std::span<const model::NamedTensor> tensors, std::uint64_t steps);

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
  double beta1_, beta2_, eps_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss_total = 0.0;
  std::optional<double> loss_missing;
  std::optional<double> loss_frame;
  double lr_encoder = 0.0;
  double lr_decoder = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::uint64_t seed = 0;
  std::string config_text;
  double wall_seconds = 0.0;

  /// epoch,split,loss_total,loss_missing,loss_frame,lr_encoder,lr_decoder
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  std::vector<double> losses(const std::string& split = "train") const;
};

// ---------------------------------------------------------------------------
// Pretexts. Each trains the relevant parameters of `model` in place.

/// Denoising: perturb with N(0, sigma^2) noise, predict the clean cloud, MSE.
RunRecord pretrain_denoise(model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                           const TrainConfig& cfg, std::uint64_t seed,
                           const std::vector<data::PointCloud>* held_out = nullptr);

/// Held-out denoising MSE with noise drawn from `seed`.
double evaluate_denoise(const model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                        double sigma, std::uint64_t seed);

/// Mean squared displacement of the noisy input itself, the do-nothing baseline.
double noisy_input_mse(const std::vector<data::PointCloud>& clouds, double sigma, std::uint64_t seed);

/// Contrastive: groups of `cfg.group_size` augmented crops per cloud, grouped NT-Xent.
RunRecord pretrain_contrastive(model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                               const TrainConfig& cfg, std::uint64_t seed);

/// Mean cosine similarity of positive pairs minus that of negative pairs,
/// measured on the projection head over augmented groups of `clouds`.
double contrastive_margin(const model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                          std::size_t group_size, std::uint64_t seed);

/// Supervised classification through the global encoder.
RunRecord pretrain_classify(model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                            const TrainConfig& cfg, std::uint64_t seed, bool head_only = false);

double classification_accuracy(const model::ModelBundle& model, const std::vector<data::PointCloud>& clouds);

// ---------------------------------------------------------------------------
// Completion

enum class HoleProtocol { SingleHole, LargeHole, TwoHoles };

std::string_view to_string(HoleProtocol protocol);

/// Cuts a training or evaluation sample for the protocol implied by cfg.
data::PartialSample make_sample(const data::PointCloud& cloud, const ModelConfig& cfg, HoleProtocol protocol,
                                Rng& rng);

HoleProtocol protocol_for(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

struct CompletionStep {
  double total = 0.0;
  double missing = 0.0;
  std::optional<double> frame;
};

/// Two-group optimiser (encoders + fusion, decoder) with separate halving periods.
class CompletionTrainer {
 public:
  CompletionTrainer(model::ModelBundle& model, const TrainConfig& cfg, std::uint64_t seed);

  /// Runs epoch `next_epoch()` over `clouds` and advances the epoch counter.
  EpochRecord run_epoch(const std::vector<data::PointCloud>& clouds);

  /// Forward/backward for one sample without stepping; gradients accumulate scaled by `weight`.
  CompletionStep accumulate(const data::PartialSample& sample, double weight);

  std::size_t next_epoch() const { return epoch_; }

  /// Writes <dir>/completion_epochN.deco and .adam for the last finished epoch.
  std::filesystem::path save(const std::filesystem::path& dir) const;
  /// Restores model, optimiser moments and epoch counter from a checkpoint written by save().
  void resume(const std::filesystem::path& checkpoint);

 private:
  model::ModelBundle& model_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  HoleProtocol protocol_;
  Adam encoder_opt_;
  Adam decoder_opt_;
  std::size_t epoch_ = 0;
};

/// Trains for cfg.epochs (from the trainer's current epoch). Writes
/// checkpoints every cfg.checkpoint_interval epochs when `checkpoint_dir` is set.
RunRecord train_completion(model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                           const TrainConfig& cfg, std::uint64_t seed,
                           const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                           const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Parameters updated during completion training, grouped.
std::vector<Parameter*> encoder_parameters(model::ModelBundle& model);
std::vector<Parameter*> decoder_parameters(model::ModelBundle& model);

}  // namespace deco::train
