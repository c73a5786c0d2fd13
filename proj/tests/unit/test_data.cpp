#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "deco/data.hpp"
#include "oracles.hpp"

using namespace deco;
using data::Point3;
using data::Points;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "deco_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

data::PointCloud cloud_of(Points pts) {
  data::PointCloud c;
  c.points = std::move(pts);
  return c;
}

std::multiset<std::array<double, 3>> as_set(const Points& p) { return {p.begin(), p.end()}; }

// Checks the partition and prefix properties of one crop against a full sort.
void check_crop(const data::PointCloud& cloud, const Point3& view, std::size_t m, std::size_t f) {
  auto s = data::crop_by_viewpoint(cloud, view, m, f);
  const auto order = oracle::sorted_by_distance(cloud.points, view);
  REQUIRE(s.missing.size() == m);
  REQUIRE(s.frame_missing.size() == m + f);
  REQUIRE(s.partial.size() == cloud.points.size() - m);
  CHECK(s.sorted_order == order);
  for (std::size_t i = 0; i < m + f; ++i) CHECK(s.frame_missing[i] == cloud.points[order[i]]);
  for (std::size_t i = 0; i < m; ++i) CHECK(s.missing[i] == cloud.points[order[i]]);
  std::set<std::size_t> dropped(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  Points rest;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (!dropped.contains(i)) rest.push_back(cloud.points[i]);
  }
  CHECK(s.partial == rest);
  double max_missing = 0.0, min_partial = 1e300;
  for (const auto& p : s.missing) max_missing = std::max(max_missing, data::squared_distance(p, view));
  for (const auto& p : s.partial) min_partial = std::min(min_partial, data::squared_distance(p, view));
  CHECK(max_missing <= min_partial);
}

}  // namespace

TEST_CASE("ascii loading") {
  const auto p = scratch("three.xyz");
  write_text(p, "0 0 0\n1 0 0\n# comment\n0 1 0\n");
  auto c = data::load_cloud(p, data::CloudFormat::XyzAscii);
  CHECK(c.points.size() == 3);
  CHECK(c.points[2] == Point3{0, 1, 0});

  write_text(p, "");
  CHECK_THROWS_AS(data::load_cloud(p, data::CloudFormat::XyzAscii), ParseError);
  write_text(p, "0 0 0\n1 2\n");
  try {
    data::load_cloud(p, data::CloudFormat::XyzAscii);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  write_text(p, "0 0 x\n");
  CHECK_THROWS_AS(data::load_cloud(p, data::CloudFormat::XyzAscii), ParseError);
  CHECK_THROWS_AS(data::load_cloud(scratch("absent.xyz"), data::CloudFormat::XyzAscii), IoError);
}

TEST_CASE("round trips") {
  std::mt19937_64 rng(1);
  auto pts = oracle::random_points(257, rng, 3.0);
  pts[0] = {1e-310, -0.0, 1.0 / 3.0};
  const auto bin = scratch("cloud.pcxb");
  data::save_cloud(pts, bin, data::CloudFormat::XyzBinary);
  CHECK(data::load_cloud(bin, data::CloudFormat::XyzBinary).points == pts);
  const auto txt = scratch("cloud.xyz");
  data::save_cloud(pts, txt, data::CloudFormat::XyzAscii);
  auto back = data::load_cloud(txt, data::CloudFormat::XyzAscii).points;
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(back[i][c] - pts[i][c]) <= 1e-6);
  }
  // Truncated binary.
  std::filesystem::resize_file(bin, std::filesystem::file_size(bin) - 4);
  CHECK_THROWS_AS(data::load_cloud(bin, data::CloudFormat::XyzBinary), ParseError);
}

TEST_CASE("manifests resolve relative paths and labels") {
  std::mt19937_64 rng(2);
  const auto dir = scratch("manifest_dir");
  std::filesystem::create_directories(dir);
  data::save_cloud(oracle::random_points(5, rng), dir / "a.xyz", data::CloudFormat::XyzAscii);
  data::save_cloud(oracle::random_points(6, rng), dir / "b.pcxb", data::CloudFormat::XyzBinary);
  std::vector<data::ManifestEntry> entries{{"a.xyz", 3}, {"b.pcxb", 1}};
  data::write_manifest(dir / "m.csv", entries);
  auto clouds = data::load_manifest(dir / "m.csv");
  REQUIRE(clouds.size() == 2);
  CHECK(clouds[0].points.size() == 5);
  CHECK(clouds[1].points.size() == 6);
  CHECK(clouds[0].label == 3u);
  CHECK(clouds[1].label == 1u);
  write_text(dir / "bad.csv", "a.xyz\n");
  CHECK_THROWS_AS(data::read_manifest(dir / "bad.csv"), ParseError);
}

TEST_CASE("normalize") {
  SUBCASE("cube corners") {
    Points corners;
    for (int a : {0, 2})
      for (int b : {0, 2})
        for (int c : {0, 2}) corners.push_back({double(a), double(b), double(c)});
    auto n = data::normalize(cloud_of(corners));
    for (const auto& p : n.points) {
      for (double v : p) CHECK(std::abs(v) == 1.0);
    }
  }
  SUBCASE("statistics and idempotence") {
    std::mt19937_64 rng(3);
    auto n = data::normalize(cloud_of(oracle::random_points(100, rng, 7.0)));
    double mx = 0.0;
    std::array<double, 3> mean{};
    for (const auto& p : n.points) {
      for (int c = 0; c < 3; ++c) {
        mean[c] += p[c] / 100.0;
        mx = std::max(mx, std::abs(p[c]));
      }
    }
    for (double m : mean) CHECK(std::abs(m) < 1e-12);
    CHECK(mx == doctest::Approx(1.0).epsilon(1e-15));
    auto twice = data::normalize(n);
    for (std::size_t i = 0; i < n.points.size(); ++i) {
      for (int c = 0; c < 3; ++c) CHECK(std::abs(twice.points[i][c] - n.points[i][c]) < 1e-12);
    }
  }
  SUBCASE("degenerate") {
    CHECK_THROWS(data::normalize(cloud_of({{1, 1, 1}, {1, 1, 1}})));
  }
}

TEST_CASE("crop examples") {
  auto line = cloud_of({{1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}});
  auto s = data::crop_by_viewpoint(line, {10, 0, 0}, 2, 1);
  CHECK(s.missing == Points{{4, 0, 0}, {3, 0, 0}});
  CHECK(s.frame_missing == Points{{4, 0, 0}, {3, 0, 0}, {2, 0, 0}});
  CHECK(s.partial == Points{{1, 0, 0}, {2, 0, 0}});

  auto edge = data::crop_by_viewpoint(line, {10, 0, 0}, 3, 1);
  CHECK(edge.partial == Points{{1, 0, 0}});
  CHECK_THROWS(data::crop_by_viewpoint(line, {10, 0, 0}, 3, 2));
  CHECK_THROWS(data::crop_by_viewpoint(line, {10, 0, 0}, 0, 1));
}

TEST_CASE("crop matches the full-sort oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    std::mt19937_64 r2(seed);
    auto cloud = cloud_of(oracle::random_points(64, r2));
    check_crop(cloud, data::sample_viewpoint(rng), 16, 8);
  }
  // Exact ties on a lattice.
  Points grid;
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b) grid.push_back({double(a), double(b), 0});
  check_crop(cloud_of(grid), {0, 0, 5}, 7, 6);
}

TEST_CASE("viewpoints") {
  Rng a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    auto v = data::sample_viewpoint(a);
    CHECK(v == data::sample_viewpoint(b));
    CHECK(std::abs(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) - 1.0) < 1e-12);
  }
  std::array<double, 3> mean{};
  Rng r(9);
  for (int i = 0; i < 10000; ++i) {
    auto v = data::sample_viewpoint(r);
    for (int c = 0; c < 3; ++c) mean[c] += v[c] / 10000.0;
  }
  for (double m : mean) CHECK(std::abs(m) < 0.05);
}

TEST_CASE("two-hole crops") {
  Rng rng(4);
  auto cloud = data::generate_primitive(data::PrimitiveKind::Sphere, 2048, rng);
  auto s = data::two_hole_crop(cloud, 256, 256, 512, rng);
  CHECK(s.missing.size() == 512);
  CHECK(s.partial.size() == 1536);
  CHECK(s.viewpoints.size() == 2);
  auto together = s.missing;
  together.insert(together.end(), s.partial.begin(), s.partial.end());
  CHECK(as_set(together) == as_set(cloud.points));

  // Second hole is a viewpoint crop of the remainder.
  const Point3 v1{1, 0, 0}, v2{0, 1, 0};
  auto t = data::two_hole_crop(cloud, v1, v2, 100, 60, 40);
  auto first = data::crop_by_viewpoint(cloud, v1, 100, 20);
  auto rest = cloud;
  rest.points = first.partial;
  auto second = data::crop_by_viewpoint(rest, v2, 60, 20);
  Points expect_missing = first.missing;
  expect_missing.insert(expect_missing.end(), second.missing.begin(), second.missing.end());
  CHECK(t.missing == expect_missing);
  CHECK(t.partial == second.partial);
  CHECK(t.frame_missing.size() == 200);

  auto single = data::two_hole_crop(cloud, v1, v2, 100, 0, 40);
  auto ref = data::crop_by_viewpoint(cloud, v1, 100, 40);
  CHECK(single.missing == ref.missing);
  CHECK(single.partial == ref.partial);
  CHECK(single.frame_missing == ref.frame_missing);
  CHECK_THROWS(data::two_hole_crop(cloud, v1, v2, 1500, 500, 100));
}

TEST_CASE("augmentation") {
  CHECK(std::abs(data::rotate_y({1, 0, 0}, M_PI)[0] + 1.0) < 1e-15);
  CHECK(std::abs(data::rotate_y({1, 0, 0}, M_PI)[2]) < 1e-15);
  Rng rng(6);
  auto cloud = data::generate_primitive(data::PrimitiveKind::Torus, 2048, rng);
  cloud.source_id = "torus-7";
  auto g = data::augment_group(cloud, 4, rng);
  REQUIRE(g.variants.size() == 4);
  for (const auto& v : g.variants) {
    CHECK(v.points.size() == 1536);
    CHECK(v.source_id == "torus-7");
  }
  CHECK(g.group_id == "torus-7");
  CHECK(g.variants[0].points != g.variants[1].points);

  data::AugmentConfig rigid;
  rigid.scale_min = rigid.scale_max = 1.0;
  rigid.jitter_sigma = 0.0;
  auto r = data::augment_group(cloud, 2, rng, rigid);
  // Rotation about y preserves y and the distance to the y axis.
  std::multiset<std::pair<double, double>> keys;
  for (const auto& p : cloud.points) keys.insert({p[1], std::hypot(p[0], p[2])});
  for (const auto& p : r.variants[0].points) {
    auto it = keys.lower_bound({p[1], std::hypot(p[0], p[2]) - 1e-12});
    REQUIRE(it != keys.end());
    CHECK(it->first == p[1]);
    CHECK(std::abs(it->second - std::hypot(p[0], p[2])) < 1e-12);
  }
}

TEST_CASE("primitives") {
  Rng rng(7);
  SUBCASE("sphere radii are constant before normalisation") {
    auto params = data::draw_shape_params(data::PrimitiveKind::Sphere, rng);
    for (const auto& p : data::sample_surface(data::PrimitiveKind::Sphere, 2048, params, rng)) {
      CHECK(std::abs(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - params.a) < 1e-9);
    }
  }
  SUBCASE("cube points lie on a face") {
    auto params = data::draw_shape_params(data::PrimitiveKind::CubeSurface, rng);
    for (const auto& p : data::sample_surface(data::PrimitiveKind::CubeSurface, 2048, params, rng)) {
      const double m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
      CHECK(std::abs(m - params.a) < 1e-12);
    }
  }
  SUBCASE("torus axis distance matches the ring radius") {
    auto params = data::draw_shape_params(data::PrimitiveKind::Torus, rng);
    double mean = 0.0;
    const auto pts = data::sample_surface(data::PrimitiveKind::Torus, 20000, params, rng);
    for (const auto& p : pts) mean += std::hypot(p[0], p[2]) / static_cast<double>(pts.size());
    // Area-uniform sampling weights the outer rim: E[rho] = R + r^2 / (2R).
    const double expect = params.a + params.b * params.b / (2.0 * params.a);
    CHECK(std::abs(mean - expect) / expect < 0.02);
  }
  SUBCASE("plane hole is empty") {
    auto params = data::draw_shape_params(data::PrimitiveKind::PlaneWithHole, rng);
    for (const auto& p : data::sample_surface(data::PrimitiveKind::PlaneWithHole, 2048, params, rng)) {
      CHECK(std::hypot(p[0], p[2]) >= params.b);
      CHECK(p[1] == 0.0);
    }
  }
  SUBCASE("generated clouds are labeled and normalised") {
    for (std::size_t k = 0; k < data::kPrimitiveKindCount; ++k) {
      auto kind = static_cast<data::PrimitiveKind>(k);
      auto c = data::generate_primitive(kind, 512, rng);
      CHECK(c.points.size() == 512);
      CHECK(c.label == k);
      double mx = 0.0;
      for (const auto& p : c.points)
        for (double v : p) mx = std::max(mx, std::abs(v));
      CHECK(mx == doctest::Approx(1.0));
      CHECK(data::parse_primitive_kind(data::to_string(kind)) == kind);
    }
    CHECK_THROWS(data::parse_primitive_kind("dodecahedron"));
    CHECK_THROWS(data::generate_primitive(data::PrimitiveKind::Sphere, 4, rng));
  }
}

TEST_CASE("corpus is reproducible and balanced") {
  auto a = data::generate_corpus(20, 64, 3);
  auto b = data::generate_corpus(20, 64, 3);
  REQUIRE(a.size() == 20);
  std::array<int, 5> counts{};
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(a[i].points == b[i].points);
    counts[*a[i].label]++;
  }
  for (int c : counts) CHECK(c == 4);
}

TEST_CASE("splits") {
  auto clouds = data::generate_corpus(10, 16, 1);
  for (auto& c : clouds) c.label.reset();
  auto s = data::make_split(clouds, 0.8, 4);
  CHECK(s.train.size() == 8);
  CHECK(s.test.size() == 2);
  auto again = data::make_split(clouds, 0.8, 4);
  for (std::size_t i = 0; i < 8; ++i) CHECK(s.train[i].source_id == again.train[i].source_id);

  std::vector<data::PointCloud> two;
  for (std::size_t i = 0; i < 20; ++i) {
    data::PointCloud c;
    c.points = {{0, 0, 0}};
    c.label = i % 2;
    c.source_id = "s" + std::to_string(i);
    two.push_back(c);
  }
  auto st = data::make_split(two, 0.8, 9);
  CHECK(st.train.size() == 16);
  CHECK(st.test.size() == 4);
  int test_zero = 0;
  for (const auto& c : st.test) test_zero += *c.label == 0;
  CHECK(test_zero == 2);
  std::set<std::string> ids;
  for (const auto& c : st.train) ids.insert(c.source_id);
  for (const auto& c : st.test) ids.insert(c.source_id);
  CHECK(ids.size() == 20);

  CHECK_THROWS(data::make_split(two, 1.0, 1));
  CHECK_THROWS(data::make_split(std::vector<data::PointCloud>(two.begin(), two.begin() + 3), 0.5, 1));
}
