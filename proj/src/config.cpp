#include "deco/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deco/error.hpp"
#include "deco/rng.hpp"

namespace deco {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    std::string s(v);
    double out = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "': expected a real, got '" + std::string(v) + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto end = v.find(',', start);
    if (end == std::string_view::npos) end = v.size();
    out.push_back(parse_count(key, trim(v.substr(start, end - start))));
    start = end + 1;
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string list_text(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
    }
    out.emplace_back(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

std::uint64_t config_hash(std::string_view text) { return mix64(hash_string(text)); }

// ---------------------------------------------------------------------------

ModelConfig ModelConfig::large_hole() {
  ModelConfig c;
  c.large_hole_mode = true;
  c.missing = 1024;
  c.n2 = 1024;
  c.frame = 0;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(k_local, "k_local");
  positive(k_global, "k_global");
  positive(k_dec1, "k_dec1");
  positive(missing, "missing");
  positive(fused_dim, "fused_dim");
  positive(proj_dim, "proj_dim");
  positive(local_width, "local_width");
  positive(global_feature_dim, "global_feature_dim");
  positive(decoder_width, "decoder_width");
  positive(num_classes, "num_classes");
  if (global_widths.empty()) throw ConfigError("model config: global_widths must not be empty");
  for (auto w : global_widths) positive(w, "global_widths entry");
  for (auto w : head_hidden) positive(w, "head_hidden entry");
  for (auto w : proj_hidden) positive(w, "proj_hidden entry");
  if (!(tau > 0.0)) throw ConfigError("model config: tau must be positive");
  if (denoise_sigma < 0.0) throw ConfigError("model config: denoise_sigma must be non-negative");
  if (!(crop_fraction >= 0.0 && crop_fraction < 1.0)) throw ConfigError("model config: crop_fraction must be in [0, 1)");
  if (!large_hole_mode) {
    positive(k_pool1, "k_pool1");
    positive(k_pool2, "k_pool2");
    positive(n1, "n1");
    if (n1 < missing + frame) {
      throw ConfigError("model config: n1 (" + std::to_string(n1) + ") must be at least missing + frame (" +
                        std::to_string(missing + frame) + ")");
    }
    if (n2 != missing) {
      throw ConfigError("model config: n2 (" + std::to_string(n2) + ") must equal missing (" + std::to_string(missing) + ")");
    }
  }
}

bool ModelConfig::set(std::string_view key, std::string_view value) {
  if (key == "k_local") k_local = parse_count(key, value);
  else if (key == "denoise_sigma") denoise_sigma = parse_real(key, value);
  else if (key == "k_global") k_global = parse_count(key, value);
  else if (key == "crop_fraction") crop_fraction = parse_real(key, value);
  else if (key == "tau") tau = parse_real(key, value);
  else if (key == "k_dec1") k_dec1 = parse_count(key, value);
  else if (key == "k_pool1") k_pool1 = parse_count(key, value);
  else if (key == "k_pool2") k_pool2 = parse_count(key, value);
  else if (key == "n1") n1 = parse_count(key, value);
  else if (key == "n2") n2 = parse_count(key, value);
  else if (key == "missing") missing = parse_count(key, value);
  else if (key == "frame") frame = parse_count(key, value);
  else if (key == "fused_dim") fused_dim = parse_count(key, value);
  else if (key == "proj_dim") proj_dim = parse_count(key, value);
  else if (key == "local_blocks") local_blocks = parse_count(key, value);
  else if (key == "local_width") local_width = parse_count(key, value);
  else if (key == "global_widths") global_widths = parse_list(key, value);
  else if (key == "global_feature_dim") global_feature_dim = parse_count(key, value);
  else if (key == "proj_hidden") proj_hidden = parse_list(key, value);
  else if (key == "decoder_width") decoder_width = parse_count(key, value);
  else if (key == "head_hidden") head_hidden = parse_list(key, value);
  else if (key == "num_classes") num_classes = parse_count(key, value);
  else if (key == "large_hole_mode") large_hole_mode = parse_bool(key, value);
  else return false;
  return true;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "k_local=" << k_local << '\n'
     << "denoise_sigma=" << real_text(denoise_sigma) << '\n'
     << "k_global=" << k_global << '\n'
     << "crop_fraction=" << real_text(crop_fraction) << '\n'
     << "tau=" << real_text(tau) << '\n'
     << "k_dec1=" << k_dec1 << '\n'
     << "k_pool1=" << k_pool1 << '\n'
     << "k_pool2=" << k_pool2 << '\n'
     << "n1=" << n1 << '\n'
     << "n2=" << n2 << '\n'
     << "missing=" << missing << '\n'
     << "frame=" << frame << '\n'
     << "fused_dim=" << fused_dim << '\n'
     << "proj_dim=" << proj_dim << '\n'
     << "local_blocks=" << local_blocks << '\n'
     << "local_width=" << local_width << '\n'
     << "global_widths=" << list_text(global_widths) << '\n'
     << "global_feature_dim=" << global_feature_dim << '\n'
     << "proj_hidden=" << list_text(proj_hidden) << '\n'
     << "decoder_width=" << decoder_width << '\n'
     << "head_hidden=" << list_text(head_hidden) << '\n'
     << "num_classes=" << num_classes << '\n'
     << "large_hole_mode=" << (large_hole_mode ? "true" : "false") << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!c.set(k, v)) throw ConfigError("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::full() {
  TrainConfig t;
  t.epochs = 240;
  t.batch_size = 30;
  return t;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (encoder_halving == 0 || decoder_halving == 0) throw ConfigError("train config: halving periods must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
  if (group_size != 2 && group_size != 4) throw ConfigError("train config: group_size must be 2 or 4");
  if (pretext_batch < 2) throw ConfigError("train config: pretext_batch must be at least 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train config: train_fraction must be in (0, 1)");
}

bool TrainConfig::set(std::string_view key, std::string_view value) {
  if (key == "schedule") {
    if (value == "full") {
      epochs = 240;
      batch_size = 30;
    } else if (value == "desk") {
      epochs = 30;
      batch_size = 8;
    } else {
      throw ConfigError("config key 'schedule': expected full or desk, got '" + std::string(value) + "'");
    }
  } else if (key == "epochs") epochs = parse_count(key, value);
  else if (key == "batch_size") batch_size = parse_count(key, value);
  else if (key == "learning_rate") learning_rate = parse_real(key, value);
  else if (key == "encoder_halving") encoder_halving = parse_count(key, value);
  else if (key == "decoder_halving") decoder_halving = parse_count(key, value);
  else if (key == "pretext_epochs") pretext_epochs = parse_count(key, value);
  else if (key == "pretext_batch") pretext_batch = parse_count(key, value);
  else if (key == "group_size") group_size = parse_count(key, value);
  else if (key == "grad_clip") grad_clip = parse_real(key, value);
  else if (key == "divergence_factor") divergence_factor = parse_real(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_count(key, value);
  else if (key == "points_per_cloud") points_per_cloud = parse_count(key, value);
  else if (key == "corpus_size") corpus_size = parse_count(key, value);
  else if (key == "train_fraction") train_fraction = parse_real(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "deterministic") deterministic = parse_bool(key, value);
  else if (key == "use_frame") use_frame = parse_bool(key, value);
  else if (key == "two_holes") two_holes = parse_bool(key, value);
  else return false;
  return true;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "epochs=" << epochs << '\n'
     << "batch_size=" << batch_size << '\n'
     << "learning_rate=" << real_text(learning_rate) << '\n'
     << "encoder_halving=" << encoder_halving << '\n'
     << "decoder_halving=" << decoder_halving << '\n'
     << "pretext_epochs=" << pretext_epochs << '\n'
     << "pretext_batch=" << pretext_batch << '\n'
     << "group_size=" << group_size << '\n'
     << "grad_clip=" << real_text(grad_clip) << '\n'
     << "divergence_factor=" << real_text(divergence_factor) << '\n'
     << "checkpoint_interval=" << checkpoint_interval << '\n'
     << "points_per_cloud=" << points_per_cloud << '\n'
     << "corpus_size=" << corpus_size << '\n'
     << "train_fraction=" << real_text(train_fraction) << '\n'
     << "seed=" << seed << '\n'
     << "deterministic=" << (deterministic ? "true" : "false") << '\n'
     << "use_frame=" << (use_frame ? "true" : "false") << '\n'
     << "two_holes=" << (two_holes ? "true" : "false") << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig rc;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "preset") {
      if (v == "large_hole") {
        rc.model = ModelConfig::large_hole();
      } else if (v != "default") {
        throw ConfigError("config key 'preset': expected default or large_hole, got '" + v + "'");
      }
      continue;
    }
    if (rc.model.set(k, v)) continue;
    if (rc.train.set(k, v)) continue;
    throw ConfigError("unknown config key '" + k + "'");
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const { return model.to_text() + train.to_text(); }

}  // namespace deco
