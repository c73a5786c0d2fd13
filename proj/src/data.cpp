#include "deco/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "deco/error.hpp"

namespace deco::data {

namespace {

constexpr char kBinaryMagic[4] = {'P', 'C', 'X', 'B'};
constexpr std::uint32_t kBinaryVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw ParseError(path.string() + ": truncated binary cloud");
    bits |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

PointCloud load_ascii(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PointCloud cloud;
  cloud.source_id = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream fields(t);
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      double v = 0.0;
      const char* end = token.data() + token.size();
      auto [ptr, ec] = std::from_chars(token.data(), end, v);
      if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + token + "' as a real");
      }
      values.push_back(v);
    }
    if (values.size() != 3) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 3 values, found " +
                       std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-finite coordinate");
    }
    cloud.points.push_back({values[0], values[1], values[2]});
  }
  if (cloud.points.empty()) throw ParseError(path.string() + ": no points");
  return cloud;
}

PointCloud load_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kBinaryMagic)) {
    throw ParseError(path.string() + ": missing PCXB magic");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kBinaryVersion) throw ParseError(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(in, path);
  if (count == 0) throw ParseError(path.string() + ": no points");
  PointCloud cloud;
  cloud.source_id = path.stem().string();
  cloud.points.resize(count);
  for (auto& p : cloud.points) {
    for (auto& c : p) c = get_le<double>(in, path);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes after points");
  return cloud;
}

Point3 centroid(const Points& pts) {
  Point3 c{0, 0, 0};
  for (const auto& p : pts) {
    for (int d = 0; d < 3; ++d) c[d] += p[d];
  }
  for (auto& v : c) v /= static_cast<double>(pts.size());
  return c;
}

std::vector<std::size_t> distance_order(const Points& pts, const Point3& viewpoint) {
  std::vector<double> dist(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) dist[i] = squared_distance(pts[i], viewpoint);
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
  return order;
}

}  // namespace

std::string_view to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::CubeSurface: return "cube-surface";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Torus: return "torus";
    case PrimitiveKind::PlaneWithHole: return "plane-with-hole";
  }
  return "unknown";
}

PrimitiveKind parse_primitive_kind(std::string_view name) {
  for (std::size_t i = 0; i < kPrimitiveKindCount; ++i) {
    auto kind = static_cast<PrimitiveKind>(i);
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown primitive kind '" + std::string(name) + "'");
}

CloudFormat parse_cloud_format(std::string_view name) {
  if (name == "xyz-ascii") return CloudFormat::XyzAscii;
  if (name == "xyz-binary") return CloudFormat::XyzBinary;
  throw ConfigError("unknown cloud format '" + std::string(name) + "'");
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  return format == CloudFormat::XyzAscii ? load_ascii(path) : load_binary(path);
}

void save_cloud(const Points& points, const std::filesystem::path& path, CloudFormat format) {
  if (points.empty()) throw IoError("refusing to write an empty cloud to " + path.string());
  if (format == CloudFormat::XyzBinary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kBinaryMagic, 4);
    put_le(out, kBinaryVersion);
    put_le(out, static_cast<std::uint64_t>(points.size()));
    for (const auto& p : points) {
      for (double c : p) put_le(out, c);
    }
    if (!out) throw IoError("write failed for " + path.string());
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  const auto base = manifest.parent_path();
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto comma = t.rfind(',');
    if (comma == std::string::npos) {
      throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": expected 'path,label'");
    }
    ManifestEntry e;
    e.path = trim(std::string_view(t).substr(0, comma));
    if (e.path.is_relative()) e.path = base / e.path;
    const auto label = trim(std::string_view(t).substr(comma + 1));
    try {
      std::size_t used = 0;
      const auto v = std::stoll(label, &used);
      if (used != label.size() || v < 0) throw std::invalid_argument(label);
      e.label = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries) {
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  for (const auto& e : entries) out << e.path.string() << ',' << e.label << '\n';
}

std::vector<PointCloud> load_manifest(const std::filesystem::path& manifest) {
  std::vector<PointCloud> clouds;
  for (const auto& e : read_manifest(manifest)) {
    auto fmt = e.path.extension() == ".pcxb" ? CloudFormat::XyzBinary : CloudFormat::XyzAscii;
    auto cloud = load_cloud(e.path, fmt);
    cloud.label = e.label;
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

PointCloud normalize(const PointCloud& cloud) {
  if (cloud.points.size() < 2) throw ShapeError("normalize: need at least 2 points");
  const auto c = centroid(cloud.points);
  PointCloud out = cloud;
  double max_abs = 0.0;
  for (auto& p : out.points) {
    for (int d = 0; d < 3; ++d) {
      p[d] -= c[d];
      max_abs = std::max(max_abs, std::abs(p[d]));
    }
  }
  if (max_abs == 0.0) throw ShapeError("normalize: degenerate cloud, all points identical");
  for (auto& p : out.points) {
    for (auto& v : p) v /= max_abs;
  }
  return out;
}

PartialSample crop_by_viewpoint(const PointCloud& cloud, const Point3& viewpoint, std::size_t missing_count,
                                std::size_t frame_count) {
  const auto n = cloud.points.size();
  if (missing_count < 1) throw ShapeError("crop_by_viewpoint: missing count must be at least 1");
  if (missing_count + frame_count > n) {
    throw ShapeError("crop_by_viewpoint: M + F = " + std::to_string(missing_count + frame_count) +
                     " exceeds cloud size " + std::to_string(n));
  }
  PartialSample s;
  s.sorted_order = distance_order(cloud.points, viewpoint);
  s.viewpoints = {viewpoint};
  s.label = cloud.label;
  s.source_id = cloud.source_id;
  std::vector<bool> dropped(n, false);
  for (std::size_t r = 0; r < missing_count; ++r) {
    const auto idx = s.sorted_order[r];
    dropped[idx] = true;
    s.missing.push_back(cloud.points[idx]);
  }
  s.frame_missing = s.missing;
  for (std::size_t r = missing_count; r < missing_count + frame_count; ++r) {
    s.frame_missing.push_back(cloud.points[s.sorted_order[r]]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!dropped[i]) s.partial.push_back(cloud.points[i]);
  }
  return s;
}

Point3 sample_viewpoint(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Point3 v{normal(rng), normal(rng), normal(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len < 1e-12) continue;
    for (auto& c : v) c /= len;
    return v;
  }
}

PartialSample two_hole_crop(const PointCloud& cloud, const Point3& first_view, const Point3& second_view,
                            std::size_t first_missing, std::size_t second_missing, std::size_t frame_count) {
  const std::size_t first_frame = second_missing == 0 ? frame_count : frame_count - frame_count / 2;
  const std::size_t second_frame = frame_count - first_frame;
  if (first_missing + second_missing + frame_count > cloud.points.size()) {
    throw ShapeError("two_hole_crop: holes and frames (" + std::to_string(first_missing + second_missing + frame_count) +
                     " points) exceed cloud size " + std::to_string(cloud.points.size()));
  }
  auto first = crop_by_viewpoint(cloud, first_view, first_missing, first_frame);
  if (second_missing == 0) return first;
  PointCloud remainder{first.partial, cloud.label, cloud.source_id};
  auto second = crop_by_viewpoint(remainder, second_view, second_missing, second_frame);
  PartialSample out = std::move(first);
  out.partial = std::move(second.partial);
  out.missing.insert(out.missing.end(), second.missing.begin(), second.missing.end());
  out.frame_missing.insert(out.frame_missing.end(), second.frame_missing.begin(), second.frame_missing.end());
  out.viewpoints.push_back(second_view);
  return out;
}

PartialSample two_hole_crop(const PointCloud& cloud, std::size_t first_missing, std::size_t second_missing,
                            std::size_t frame_count, Rng& rng) {
  const auto v1 = sample_viewpoint(rng);
  const auto v2 = sample_viewpoint(rng);
  return two_hole_crop(cloud, v1, v2, first_missing, second_missing, frame_count);
}

Point3 rotate_y(const Point3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]};
}

AugmentedGroup augment_group(const PointCloud& cloud, std::size_t group_size, Rng& rng, const AugmentConfig& config) {
  AugmentedGroup group;
  group.group_id = cloud.source_id;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> scale(config.scale_min, config.scale_max);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto n = cloud.points.size();
  const auto drop = static_cast<std::size_t>(std::llround(config.crop_fraction * static_cast<double>(n)));
  for (std::size_t g = 0; g < group_size; ++g) {
    const double theta = angle(rng);
    const double s = config.scale_min == config.scale_max ? config.scale_min : scale(rng);
    PointCloud variant{{}, cloud.label, cloud.source_id};
    variant.points.reserve(n);
    for (const auto& p : cloud.points) {
      auto q = rotate_y(p, theta);
      for (auto& c : q) {
        c *= s;
        if (config.jitter_sigma > 0.0) {
          c += std::clamp(config.jitter_sigma * noise(rng), -config.jitter_clip, config.jitter_clip);
        }
      }
      variant.points.push_back(q);
    }
    if (drop > 0) {
      auto crop = crop_by_viewpoint(variant, sample_viewpoint(rng), drop, 0);
      variant.points = std::move(crop.partial);
    }
    group.variants.push_back(std::move(variant));
  }
  return group;
}

ShapeParams draw_shape_params(PrimitiveKind kind, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (kind) {
    case PrimitiveKind::Sphere:
    case PrimitiveKind::CubeSurface:
      return {1.0, 1.0};
    case PrimitiveKind::Cylinder:
      return {0.4 + 0.6 * u(rng), 0.4 + 0.6 * u(rng)};
    case PrimitiveKind::Torus:
      return {1.0, 0.2 + 0.25 * u(rng)};
    case PrimitiveKind::PlaneWithHole:
      return {1.0, 0.2 + 0.3 * u(rng)};
  }
  throw ConfigError("unknown primitive kind");
}

Points sample_surface(PrimitiveKind kind, std::size_t n_points, const ShapeParams& params, Rng& rng) {
  if (n_points < 8) throw ShapeError("sample_surface: need at least 8 points");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Points pts;
  pts.reserve(n_points);
  switch (kind) {
    case PrimitiveKind::Sphere:
      while (pts.size() < n_points) {
        auto d = sample_viewpoint(rng);
        pts.push_back({params.a * d[0], params.a * d[1], params.a * d[2]});
      }
      break;
    case PrimitiveKind::CubeSurface:
      while (pts.size() < n_points) {
        const auto face = std::min<std::size_t>(5, static_cast<std::size_t>(u(rng) * 6.0));
        const double s = params.a * (2.0 * u(rng) - 1.0), t = params.a * (2.0 * u(rng) - 1.0);
        const double side = face % 2 == 0 ? params.a : -params.a;
        const auto axis = face / 2;
        Point3 p{};
        p[axis] = side;
        p[(axis + 1) % 3] = s;
        p[(axis + 2) % 3] = t;
        pts.push_back(p);
      }
      break;
    case PrimitiveKind::Cylinder: {
      const double r = params.a, h = params.b;
      const double lateral = two_pi * r * 2.0 * h, caps = 2.0 * std::numbers::pi * r * r;
      while (pts.size() < n_points) {
        const double theta = two_pi * u(rng);
        if (u(rng) * (lateral + caps) < lateral) {
          pts.push_back({r * std::cos(theta), h * (2.0 * u(rng) - 1.0), r * std::sin(theta)});
        } else {
          const double rho = r * std::sqrt(u(rng));
          pts.push_back({rho * std::cos(theta), u(rng) < 0.5 ? h : -h, rho * std::sin(theta)});
        }
      }
      break;
    }
    case PrimitiveKind::Torus: {
      const double ring = params.a, tube = params.b;
      while (pts.size() < n_points) {
        const double around = two_pi * u(rng), v = two_pi * u(rng);
        // Area element is proportional to the distance from the axis.
        if (u(rng) * (ring + tube) > ring + tube * std::cos(v)) continue;
        const double rho = ring + tube * std::cos(v);
        pts.push_back({rho * std::cos(around), tube * std::sin(v), rho * std::sin(around)});
      }
      break;
    }
    case PrimitiveKind::PlaneWithHole: {
      const double half = params.a, hole = params.b;
      while (pts.size() < n_points) {
        const double x = half * (2.0 * u(rng) - 1.0), z = half * (2.0 * u(rng) - 1.0);
        if (x * x + z * z < hole * hole) continue;
        pts.push_back({x, 0.0, z});
      }
      break;
    }
  }
  return pts;
}

PointCloud generate_primitive(PrimitiveKind kind, std::size_t n_points, Rng& rng) {
  const auto params = draw_shape_params(kind, rng);
  PointCloud cloud{sample_surface(kind, n_points, params, rng), static_cast<std::size_t>(kind),
                   std::string(to_string(kind))};
  return normalize(cloud);
}

std::vector<PointCloud> generate_corpus(std::size_t count, std::size_t n_points, std::uint64_t seed) {
  std::vector<PointCloud> clouds;
  clouds.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    auto kind = static_cast<PrimitiveKind>(i % kPrimitiveKindCount);
    auto cloud = generate_primitive(kind, n_points, rng);
    cloud.source_id = "prim" + std::to_string(i) + "-" + std::string(to_string(kind));
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

Split make_split(const std::vector<PointCloud>& clouds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("make_split: fraction must be in (0, 1)");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  const bool labeled = std::all_of(clouds.begin(), clouds.end(), [](const auto& c) { return c.label.has_value(); });
  for (std::size_t i = 0; i < clouds.size(); ++i) groups[labeled ? *clouds[i].label : 0].push_back(i);
  std::vector<bool> in_train(clouds.size(), false);
  for (auto& [label, idx] : groups) {
    if (idx.size() < 2) {
      throw ConfigError("make_split: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                        " sample(s); need at least 2");
    }
    Rng rng(derive_seed(seed, label, 0x5917));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t j = 0; j < n_train; ++j) in_train[idx[j]] = true;
  }
  Split split;
  for (std::size_t i = 0; i < clouds.size(); ++i) (in_train[i] ? split.train : split.test).push_back(clouds[i]);
  return split;
}

ad::Tensor to_tensor(const Points& points) {
  std::vector<double> v;
  v.reserve(points.size() * 3);
  for (const auto& p : points) v.insert(v.end(), p.begin(), p.end());
  return ad::Tensor::from({points.size(), 3}, std::move(v));
}

Points to_points(const ad::Tensor& tensor) {
  if (tensor.rank() != 2 || tensor.dim(1) != 3) {
    throw ShapeError("to_points: expected [N x 3], got " + ad::to_string(tensor.shape()));
  }
  Points pts(tensor.dim(0));
  auto v = tensor.values();
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return pts;
}

}  // namespace deco::data
