#pragma once

// The completion network: local denoising encoder, global contrastive
// encoder, split-sum fusion and the two-headed graph decoder, plus the
// pretext-only heads.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deco/autodiff.hpp"
#include "deco/config.hpp"
#include "deco/parameters.hpp"
#include "deco/rng.hpp"

namespace deco::model {

struct ModelBundle {
  ModelConfig config;
  ParameterStore params;

  /// Builds every parameter with Xavier-uniform weights and zero biases.
  static ModelBundle create(const ModelConfig& config, std::uint64_t seed);

  /// Heads that only exist for pretext training and are dropped afterwards.
  static bool is_pretrain_only(const std::string& name);

  /// Parameters of the completion network, excluding pretrain-only heads.
  std::size_t completion_parameter_count() const;
};

/// Features [P x local_width], or denoised points [P x 3] when with_projection.
ad::Tensor local_encoder_forward(const ad::Tensor& points, const ModelBundle& model, bool with_projection);

/// Global shape vector [global_feature_dim], or the projection [proj_dim] when with_head.
ad::Tensor global_encoder_forward(const ad::Tensor& points, const ModelBundle& model, bool with_head);

/// W_local local_i + W_global global + b, i.e. a linear map over
/// concat(local_i, global) with the global half computed once.
ad::Tensor fuse(const ad::Tensor& local, const ad::Tensor& global, const ModelBundle& model);

struct DecoderOutput {
  ad::Tensor frame_missing;  // Y_fm [N1 x 3]; undefined in large-hole mode
  ad::Tensor missing;        // Y_m  [N2 x 3]
};

DecoderOutput decoder_forward(const ad::Tensor& fused, const ModelBundle& model);

/// Logits [num_classes] from a global vector.
ad::Tensor classify_head(const ad::Tensor& global, const ModelBundle& model);

/// Partial cloud [P x 3] to decoder outputs through both encoders.
DecoderOutput complete(const ad::Tensor& partial, const ModelBundle& model);

// ---------------------------------------------------------------------------
// Checkpoints: "DECO", u32 version, u32-length-prefixed config text, then
// per-parameter records (u32 name length, name, u32 rank, u64 extents,
// little-endian f64 values) until end of file.

struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct TensorFile {
  std::string config_text;
  std::vector<NamedTensor> tensors;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

/// Copies the values of every checkpoint parameter whose name starts with
/// `prefix` into `model`. Returns the number of tensors copied.
std::size_t load_parameters(ModelBundle& model, const std::filesystem::path& path, const std::string& prefix);
std::size_t copy_parameters(ModelBundle& into, const ModelBundle& from, const std::string& prefix);

}  // namespace deco::model
