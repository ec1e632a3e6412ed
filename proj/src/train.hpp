#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loss.hpp"
#include "net.hpp"
#include "speckle.hpp"
#include "train_state.hpp"

namespace despeckler {

/// Every field is addressable as `key=value` (see keys()).
struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t epochs = 400;
  std::size_t batch_size = 8;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;  // epochs between latest.ckpt writes
  std::size_t validate_every = 1;    // epochs between validation passes
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string manifest;
  std::string out_dir = "run";
  std::string model = "full";  // model preset: full | desk
  double dropout = 0.0;         // applied to every stage's MLP
  bool normalize_loss = false;  // per-pixel means instead of sums
  bool log_wall_time = true;    // wall_time_s column in the metrics log

  // 5 stages, lr 2e-4, 400 epochs, batch 8.
  static TrainConfig full();
  // 3 stages, lr 1e-3, 30 epochs, batch 2.
  static TrainConfig desk();
  static TrainConfig preset(const std::string& name);

  static const std::vector<std::string>& keys();

  // Throws an argument error for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  // Applies `key=value` lines ('#' comments allowed) and returns every
  // problem found instead of stopping at the first.
  std::vector<std::string> apply_text(const std::string& text);
  std::vector<std::string> validate() const;
  std::string to_text() const;

  ModelConfig model_config() const;
};

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update using the parameters' accumulated
// gradients; increments state.step. Throws on a non-finite gradient, naming
// the parameter.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, TrainState<T>& state, const AdamOptions& opts);

// Forward, composite loss, backward, Adam update and gradient reset over one
// batch. Returns the mean per-image loss of the batch.
template <typename T>
double train_step(DespeckleNet<T>& model, std::span<const ImagePair* const> batch,
                  const TrainConfig& cfg, TrainState<T>& state);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_psnr;
  std::optional<double> val_ssim;
  double wall_time_s = 0.0;
};

struct FitReport {
  std::size_t epochs_completed = 0;
  std::uint64_t steps = 0;
  double final_train_loss = 0.0;
  double final_val_psnr = 0.0;
  double final_val_ssim = 0.0;
  double best_val_psnr = 0.0;
  double baseline_val_psnr = 0.0;  // speckled input vs clean, validation split
  double baseline_val_ssim = 0.0;
  std::filesystem::path latest_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_path;
};

struct ValidationResult {
  double psnr = 0.0;
  double ssim = 0.0;
};

template <typename T>
ValidationResult validate_model(const DespeckleNet<T>& model, const std::vector<ImagePair>& pairs);

/// Trains on the manifest's train split, validating on its val split.
/// Writes metrics.tsv, latest.ckpt (with optimizer state), best.ckpt and
/// resolved_config.txt into cfg.out_dir. With `resume`, continues from a
/// latest.ckpt so that the remaining trajectory matches an uninterrupted run.
template <typename T>
FitReport fit(DespeckleNet<T>& model, const TrainConfig& cfg,
              const std::optional<std::filesystem::path>& resume = std::nullopt,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace despeckler
