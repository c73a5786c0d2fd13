#pragma once

// Point-cloud ingestion, normalisation, viewpoint cropping, augmentation,
// synthetic primitives and dataset splits.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deco/autodiff.hpp"
#include "deco/rng.hpp"

namespace deco::data {

using Point3 = std::array<double, 3>;
using Points = std::vector<Point3>;

struct PointCloud {
  Points points;
  std::optional<std::size_t> label;
  std::string source_id;
};

/// One completion instance cut from a complete cloud.
struct PartialSample {
  Points partial;                        // X_p, original index order
  Points missing;                        // X_m, ascending distance to the viewpoint
  Points frame_missing;                  // X_fm = missing followed by the frame points
  std::vector<Point3> viewpoints;        // one per hole
  std::vector<std::size_t> sorted_order; // first hole: permutation by ascending distance
  std::optional<std::size_t> label;
  std::string source_id;
};

struct AugmentedGroup {
  std::vector<PointCloud> variants;
  std::string group_id;
};

enum class CloudFormat { XyzAscii, XyzBinary };
enum class PrimitiveKind { Sphere, CubeSurface, Cylinder, Torus, PlaneWithHole };

inline constexpr std::size_t kPrimitiveKindCount = 5;

std::string_view to_string(PrimitiveKind kind);
PrimitiveKind parse_primitive_kind(std::string_view name);
CloudFormat parse_cloud_format(std::string_view name);

// ---------------------------------------------------------------------------
// I/O

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
void save_cloud(const Points& points, const std::filesystem::path& path, CloudFormat format);

struct ManifestEntry {
  std::filesystem::path path;
  std::size_t label = 0;
};

/// One "path,label" per line; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries);
/// Loads every manifest entry, guessing the format from the extension (.pcxb binary, otherwise ascii).
std::vector<PointCloud> load_manifest(const std::filesystem::path& manifest);

// ---------------------------------------------------------------------------
// Geometry

/// Centre at the origin, then scale uniformly so max |coordinate| == 1.
PointCloud normalize(const PointCloud& cloud);

double squared_distance(const Point3& a, const Point3& b);

/// Drops the M points closest to the viewpoint; the next F in the same
/// ordering form the frame. Ties in distance resolve by index.
PartialSample crop_by_viewpoint(const PointCloud& cloud, const Point3& viewpoint, std::size_t missing_count,
                                std::size_t frame_count);

/// Uniform direction on the unit sphere.
Point3 sample_viewpoint(Rng& rng);

/// Two sequential viewpoint crops, the second taken on the remaining points.
/// The frame budget is split between the holes (all of it to the first hole
/// when the second is empty).
PartialSample two_hole_crop(const PointCloud& cloud, const Point3& first_view, const Point3& second_view,
                            std::size_t first_missing, std::size_t second_missing, std::size_t frame_count);
PartialSample two_hole_crop(const PointCloud& cloud, std::size_t first_missing, std::size_t second_missing,
                            std::size_t frame_count, Rng& rng);

struct AugmentConfig {
  double scale_min = 0.8;
  double scale_max = 1.2;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
  double crop_fraction = 0.25;
};

/// Rotation about the y axis by `angle` radians.
Point3 rotate_y(const Point3& p, double angle);

/// G variants: random y rotation, uniform scaling, clipped Gaussian jitter,
/// then a random viewpoint crop removing crop_fraction of the points.
AugmentedGroup augment_group(const PointCloud& cloud, std::size_t group_size, Rng& rng,
                             const AugmentConfig& config = {});

struct ShapeParams {
  double a = 1.0;  // sphere radius | cube half extent | cylinder radius | torus ring radius | plane half extent
  double b = 1.0;  // cylinder half height | torus tube radius | plane hole radius
};

ShapeParams draw_shape_params(PrimitiveKind kind, Rng& rng);

/// Area-uniform surface samples in raw (unnormalised) coordinates.
Points sample_surface(PrimitiveKind kind, std::size_t n_points, const ShapeParams& params, Rng& rng);

/// Labeled (by kind), normalised primitive with randomised proportions.
PointCloud generate_primitive(PrimitiveKind kind, std::size_t n_points, Rng& rng);

/// Balanced synthetic corpus cycling through the primitive kinds.
std::vector<PointCloud> generate_corpus(std::size_t count, std::size_t n_points, std::uint64_t seed);

struct Split {
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
};

/// Seeded, class-stratified split when labels are present.
Split make_split(const std::vector<PointCloud>& clouds, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tensor bridges

ad::Tensor to_tensor(const Points& points);
Points to_points(const ad::Tensor& tensor);

}  // namespace deco::data
