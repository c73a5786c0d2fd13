#pragma once

// Missing-region evaluation, ablation orchestration and point-cloud export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deco/config.hpp"
#include "deco/data.hpp"
#include "deco/models.hpp"
#include "deco/training.hpp"

namespace deco::eval {

struct ClassStats {
  std::string name;
  std::size_t samples = 0;
  double cd_x1e4 = 0.0;
};

struct EvalReport {
  std::string protocol;
  std::vector<ClassStats> classes;  // ascending label order
  std::size_t samples = 0;
  double overall_cd_x1e4 = 0.0;
  std::uint64_t config_hash = 0;

  /// protocol,class,n_samples,cd_x1e4 with a final "overall" row.
  std::string to_csv() const;
};

/// Predicts Y_m [M x 3] for one partial sample.
using Predictor = std::function<ad::Tensor(const data::PartialSample&)>;

/// The crop applied to test cloud `index`; fixed by (seed, source id).
data::PartialSample test_sample(const data::PointCloud& cloud, std::size_t index, const ModelConfig& cfg,
                                train::HoleProtocol protocol, std::uint64_t seed);

EvalReport eval_missing_region(const Predictor& predict, const std::vector<data::PointCloud>& test,
                               const ModelConfig& cfg, train::HoleProtocol protocol, std::uint64_t seed,
                               std::uint64_t config_hash = 0);
EvalReport eval_missing_region(const model::ModelBundle& model, const std::vector<data::PointCloud>& test,
                               train::HoleProtocol protocol, std::uint64_t seed);

/// The M points nearest to `centroid`, ties by index, in ascending distance.
data::Points select_near_centroid(const data::Points& prediction, const data::Point3& centroid, std::size_t count);

// ---------------------------------------------------------------------------
// Ablation

struct Toggles {
  bool denoise = false;
  bool classify = false;
  bool contrastive = false;
  bool frame = false;

  /// Four 0/1 characters in denoise, classify, contrastive, frame order.
  static Toggles parse(std::string_view code);
  std::string code() const;
  void validate() const;
};

/// Every row of the standard ablation grid: frame off/on for the denoise x contrastive
/// pretexts, then the classification substitutes.
std::vector<Toggles> full_grid();

struct AblationRow {
  Toggles toggles;
  EvalReport test;
  double train_cd_x1e4 = 0.0;
};

/// Pretext weights reused across rows that share a seed.
struct PretextCache {
  std::optional<model::ModelBundle> denoise, contrastive, classify;
};

/// Fresh model from `seed` with the enabled pretexts applied on `train`.
model::ModelBundle initialized_model(const RunConfig& cfg, const Toggles& toggles,
                                     const std::vector<data::PointCloud>& train, std::uint64_t seed,
                                     PretextCache* cache = nullptr);

/// Trains and evaluates each grid row in order with the same seed.
std::vector<AblationRow> run_ablation(const std::vector<Toggles>& grid, const std::vector<data::PointCloud>& train,
                                      const std::vector<data::PointCloud>& test, const RunConfig& cfg,
                                      std::uint64_t seed);

/// denoise,classify,contrastive,frame,overall_cd_x1e4
std::string ablation_csv(const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------------------
// Export

enum class ExportFormat { XyzAscii, XyzBinary, PlyAscii };

ExportFormat parse_export_format(std::string_view name);
void export_cloud(const data::Points& points, const std::filesystem::path& path, ExportFormat format);

}  // namespace deco::eval
