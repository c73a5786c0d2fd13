#pragma once

// Model and run configuration with a plain key=value text form. Unknown keys
// are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace deco {

struct ModelConfig {
  std::size_t k_local = 8;
  double denoise_sigma = 0.02;
  std::size_t k_global = 24;
  double crop_fraction = 0.25;
  double tau = 0.5;
  std::size_t k_dec1 = 16;
  std::size_t k_pool1 = 16;
  std::size_t k_pool2 = 6;
  std::size_t n1 = 1280;
  std::size_t n2 = 512;
  std::size_t missing = 512;  // M
  std::size_t frame = 512;    // F
  std::size_t fused_dim = 256;
  std::size_t proj_dim = 128;
  std::size_t local_blocks = 3;
  std::size_t local_width = 96;
  std::vector<std::size_t> global_widths{64, 64, 128, 256};
  std::size_t global_feature_dim = 1024;
  std::vector<std::size_t> proj_hidden{512, 256};
  std::size_t decoder_width = 256;
  std::vector<std::size_t> head_hidden{128, 64};
  std::size_t num_classes = 5;
  bool large_hole_mode = false;

  /// Switches to the single large hole setting: M = 1024, no frame, no pooling.
  static ModelConfig large_hole();

  void validate() const;
  /// Returns false when the key is not a model key.
  bool set(std::string_view key, std::string_view value);
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 0.001;
  std::size_t encoder_halving = 25;
  std::size_t decoder_halving = 40;
  std::size_t pretext_epochs = 60;
  std::size_t pretext_batch = 8;
  std::size_t group_size = 4;
  double grad_clip = 10.0;
  double divergence_factor = 10.0;
  std::size_t checkpoint_interval = 0;  // epochs; 0 disables
  std::size_t points_per_cloud = 2048;
  std::size_t corpus_size = 200;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool use_frame = true;
  bool two_holes = false;

  /// 240 epochs with batch 30, as in the full-scale setup.
  static TrainConfig full();

  void validate() const;
  bool set(std::string_view key, std::string_view value);
  std::string to_text() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Splits key=value lines, skipping blanks and '#' comments.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

std::uint64_t config_hash(std::string_view text);

}  // namespace deco
