#include "deco/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "deco/error.hpp"
#include "deco/losses.hpp"

namespace deco::eval {

namespace {

constexpr std::uint64_t kTestCropStream = 0xE1;

std::string format_real(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "protocol,class,n_samples,cd_x1e4\n";
  for (const auto& c : classes) os << protocol << ',' << c.name << ',' << c.samples << ',' << format_real(c.cd_x1e4) << '\n';
  os << protocol << ",overall," << samples << ',' << format_real(overall_cd_x1e4) << '\n';
  return os.str();
}

data::PartialSample test_sample(const data::PointCloud& cloud, std::size_t index, const ModelConfig& cfg,
                                train::HoleProtocol protocol, std::uint64_t seed) {
  const std::uint64_t id = cloud.source_id.empty() ? index : hash_string(cloud.source_id);
  Rng rng(derive_seed(seed, kTestCropStream, id));
  return train::make_sample(cloud, cfg, protocol, rng);
}

EvalReport eval_missing_region(const Predictor& predict, const std::vector<data::PointCloud>& test,
                               const ModelConfig& cfg, train::HoleProtocol protocol, std::uint64_t seed,
                               std::uint64_t config_hash) {
  if (test.empty()) throw ConfigError("eval_missing_region: empty test set");
  // Unlabeled clouds sort after every label.
  std::map<std::size_t, std::pair<std::size_t, double>> per_class;
  constexpr std::size_t kUnlabeled = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto sample = test_sample(test[i], i, cfg, protocol, seed);
    auto pred = predict(sample);
    auto cd = loss::chamfer(pred, data::to_tensor(sample.missing), sample.missing.size()).value.item();
    auto& slot = per_class[test[i].label.value_or(kUnlabeled)];
    ++slot.first;
    slot.second += cd;
  }
  EvalReport report;
  report.protocol = std::string(train::to_string(protocol));
  report.config_hash = config_hash;
  double total = 0.0;
  for (const auto& [label, stats] : per_class) {
    const auto& [count, sum] = stats;
    report.classes.push_back(
        {label == kUnlabeled ? "unlabeled" : std::to_string(label), count, 1e4 * sum / static_cast<double>(count)});
    report.samples += count;
    total += sum;
  }
  report.overall_cd_x1e4 = 1e4 * total / static_cast<double>(report.samples);
  return report;
}

EvalReport eval_missing_region(const model::ModelBundle& m, const std::vector<data::PointCloud>& test,
                               train::HoleProtocol protocol, std::uint64_t seed) {
  auto predict = [&](const data::PartialSample& s) { return model::complete(data::to_tensor(s.partial), m).missing; };
  return eval_missing_region(predict, test, m.config, protocol, seed, config_hash(m.config.to_text()));
}

data::Points select_near_centroid(const data::Points& prediction, const data::Point3& centroid, std::size_t count) {
  if (count > prediction.size()) {
    throw ShapeError("select_near_centroid: asked for " + std::to_string(count) + " of " +
                     std::to_string(prediction.size()) + " points");
  }
  std::vector<std::pair<double, std::size_t>> keyed(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) keyed[i] = {data::squared_distance(prediction[i], centroid), i};
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(count), keyed.end());
  data::Points out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(prediction[keyed[i].second]);
  return out;
}

// ---------------------------------------------------------------------------

Toggles Toggles::parse(std::string_view code) {
  if (code.size() != 4 || code.find_first_not_of("01") != std::string_view::npos) {
    throw ConfigError("ablation row '" + std::string(code) +
                      "' must be four 0/1 flags: denoise, classify, contrastive, frame");
  }
  Toggles t{code[0] == '1', code[1] == '1', code[2] == '1', code[3] == '1'};
  t.validate();
  return t;
}

std::string Toggles::code() const {
  return std::string{denoise ? '1' : '0', classify ? '1' : '0', contrastive ? '1' : '0', frame ? '1' : '0'};
}

void Toggles::validate() const {
  if (classify && contrastive) throw ConfigError("ablation: classification and contrastive pretexts are exclusive");
}

std::vector<Toggles> full_grid() {
  std::vector<Toggles> grid;
  for (const char* code : {"0000", "1000", "0010", "1010", "0001", "1001", "0011", "1011", "0100", "1100", "0101",
                           "1101"}) {
    grid.push_back(Toggles::parse(code));
  }
  return grid;
}

model::ModelBundle initialized_model(const RunConfig& cfg, const Toggles& toggles,
                                     const std::vector<data::PointCloud>& train, std::uint64_t seed,
                                     PretextCache* cache) {
  toggles.validate();
  auto m = model::ModelBundle::create(cfg.model, seed);
  PretextCache local;
  auto& slots = cache != nullptr ? *cache : local;
  auto pretext = [&](std::optional<model::ModelBundle>& slot, auto&& run) -> const model::ModelBundle& {
    if (!slot) {
      slot = model::ModelBundle::create(cfg.model, seed);
      run(*slot);
    }
    return *slot;
  };
  if (toggles.denoise) {
    const auto& src = pretext(slots.denoise, [&](model::ModelBundle& b) {
      train::pretrain_denoise(b, train, cfg.train, seed);
    });
    model::copy_parameters(m, src, "local.");
  }
  if (toggles.contrastive) {
    const auto& src = pretext(slots.contrastive, [&](model::ModelBundle& b) {
      train::pretrain_contrastive(b, train, cfg.train, seed);
    });
    model::copy_parameters(m, src, "global.");
  }
  if (toggles.classify) {
    const auto& src = pretext(slots.classify, [&](model::ModelBundle& b) {
      train::pretrain_classify(b, train, cfg.train, seed);
    });
    model::copy_parameters(m, src, "global.");
  }
  return m;
}

std::vector<AblationRow> run_ablation(const std::vector<Toggles>& grid, const std::vector<data::PointCloud>& train,
                                      const std::vector<data::PointCloud>& test, const RunConfig& cfg,
                                      std::uint64_t seed) {
  for (const auto& t : grid) t.validate();
  if (grid.empty()) throw ConfigError("ablation: empty grid");
  PretextCache cache;
  std::vector<AblationRow> rows;
  const auto protocol = train::protocol_for(cfg.model, cfg.train);
  for (const auto& t : grid) {
    auto m = initialized_model(cfg, t, train, seed, &cache);
    auto tc = cfg.train;
    tc.use_frame = t.frame;
    train::train_completion(m, train, tc, seed);
    AblationRow row;
    row.toggles = t;
    row.test = eval_missing_region(m, test, protocol, seed);
    row.train_cd_x1e4 = eval_missing_region(m, train, protocol, seed).overall_cd_x1e4;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "denoise,classify,contrastive,frame,overall_cd_x1e4\n";
  for (const auto& r : rows) {
    os << r.toggles.denoise << ',' << r.toggles.classify << ',' << r.toggles.contrastive << ',' << r.toggles.frame
       << ',' << format_real(r.test.overall_cd_x1e4) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

ExportFormat parse_export_format(std::string_view name) {
  if (name == "xyz-ascii") return ExportFormat::XyzAscii;
  if (name == "xyz-binary") return ExportFormat::XyzBinary;
  if (name == "ply-ascii") return ExportFormat::PlyAscii;
  throw ConfigError("unknown export format '" + std::string(name) + "' (xyz-ascii, xyz-binary, ply-ascii)");
}

void export_cloud(const data::Points& points, const std::filesystem::path& path, ExportFormat format) {
  if (points.empty()) throw IoError("export_cloud: refusing to write an empty cloud to " + path.string());
  switch (format) {
    case ExportFormat::XyzAscii: data::save_cloud(points, path, data::CloudFormat::XyzAscii); return;
    case ExportFormat::XyzBinary: data::save_cloud(points, path, data::CloudFormat::XyzBinary); return;
    case ExportFormat::PlyAscii: break;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace deco::eval
