#include "deco/models.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "deco/error.hpp"
#include "deco/graph_ops.hpp"

namespace deco::model {

namespace {

constexpr char kMagic[4] = {'D', 'E', 'C', 'O'};
constexpr std::uint32_t kVersion = 1;

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  void weight(ParameterStore& store, const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = u(rng_);
    store.add(name, ad::Tensor::from({fan_in, fan_out}, std::move(v), true));
  }

  void bias(ParameterStore& store, const std::string& name, std::size_t width) { store.add(name, {width}); }

  void mlp(ParameterStore& store, const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden,
           std::size_t out) {
    std::size_t width = in;
    std::size_t layer = 0;
    auto add_layer = [&](std::size_t next) {
      const auto base = prefix + ".fc" + std::to_string(layer++);
      weight(store, base + ".weight", width, next);
      bias(store, base + ".bias", next);
      width = next;
    };
    for (auto h : hidden) add_layer(h);
    add_layer(out);
  }

 private:
  Rng rng_;
};

std::size_t mlp_depth(const ParameterStore& store, const std::string& prefix) {
  std::size_t n = 0;
  while (store.contains(prefix + ".fc" + std::to_string(n) + ".weight")) ++n;
  return n;
}

// Hidden layers use `hidden_relu` (true: relu, false: leaky_relu 0.2); the last layer is linear.
ad::Tensor run_mlp(const ad::Tensor& x, const ParameterStore& store, const std::string& prefix, bool hidden_relu) {
  const auto depth = mlp_depth(store, prefix);
  auto h = x;
  for (std::size_t i = 0; i < depth; ++i) {
    const auto base = prefix + ".fc" + std::to_string(i);
    h = ad::linear(h, store.at(base + ".weight"), store.at(base + ".bias"));
    if (i + 1 < depth) h = hidden_relu ? ad::relu(h) : ad::leaky_relu(h, 0.2);
  }
  return h;
}

void require_points(const char* op, const ad::Tensor& points, std::size_t k) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ShapeError(std::string(op) + ": expected [P x 3] points, got " + ad::to_string(points.shape()));
  }
  if (points.dim(0) <= k) {
    throw ShapeError(std::string(op) + ": need more than " + std::to_string(k) + " points, got " +
                     std::to_string(points.dim(0)));
  }
}

ad::Tensor decoder_edge_conv(const ad::Tensor& x, const ModelBundle& m, std::size_t stage) {
  const auto base = "decoder.edgeconv" + std::to_string(stage);
  auto g = graph::knn_graph(x, m.config.k_dec1);
  return graph::edge_conv(x, g, m.params.at(base + ".weight"), m.params.at(base + ".bias"));
}

ad::Tensor pool(const ad::Tensor& x, const ModelBundle& m, std::size_t stage, std::size_t k, std::size_t target) {
  const auto base = "decoder.pool" + std::to_string(stage);
  auto g = graph::knn_graph(x, k);
  return graph::sag_pool(x, g, target, m.params.at(base + ".w_self"), m.params.at(base + ".w_nbr")).pooled;
}

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
    if (c == std::char_traits<char>::eof()) throw ParseError(path.string() + ": truncated checkpoint");
    bits |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::string read_bytes(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ParseError(path.string() + ": truncated checkpoint");
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

ModelBundle ModelBundle::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle m;
  m.config = config;
  auto& p = m.params;
  Initializer init(seed);
  const auto lw = config.local_width;

  init.weight(p, "local.lift.weight", 3, lw);
  init.bias(p, "local.lift.bias", lw);
  for (std::size_t b = 0; b < config.local_blocks; ++b) {
    const auto base = "local.block" + std::to_string(b);
    init.weight(p, base + ".w_self", lw, lw);
    init.weight(p, base + ".w_nbr", lw, lw);
  }
  // Zero offsets: an untrained denoiser returns its input unchanged.
  p.add("local.proj.w_self", {lw, 3});
  p.add("local.proj.w_nbr", {lw, 3});
  init.bias(p, "local.proj.bias", 3);

  std::size_t in = 3, concat_width = 0;
  for (std::size_t s = 0; s < config.global_widths.size(); ++s) {
    const auto base = "global.edgeconv" + std::to_string(s);
    const auto out = config.global_widths[s];
    init.weight(p, base + ".weight", 2 * in, out);
    init.bias(p, base + ".bias", out);
    concat_width += out;
    in = out;
  }
  init.weight(p, "global.mlp.weight", concat_width, config.global_feature_dim);
  init.bias(p, "global.mlp.bias", config.global_feature_dim);
  init.mlp(p, "global.head", config.global_feature_dim, config.proj_hidden, config.proj_dim);

  init.weight(p, "fusion.w_local", lw, config.fused_dim);
  init.weight(p, "fusion.w_global", config.global_feature_dim, config.fused_dim);
  init.bias(p, "fusion.bias", config.fused_dim);

  const auto dw = config.decoder_width;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto base = "decoder.edgeconv" + std::to_string(s);
    init.weight(p, base + ".weight", 2 * (s == 0 ? config.fused_dim : dw), dw);
    init.bias(p, base + ".bias", dw);
  }
  if (!config.large_hole_mode) {
    for (std::size_t s = 0; s < 2; ++s) {
      const auto base = "decoder.pool" + std::to_string(s);
      init.weight(p, base + ".w_self", dw, 1);
      init.weight(p, base + ".w_nbr", dw, 1);
    }
    init.mlp(p, "decoder.mid_head", dw, config.head_hidden, 3);
  }
  init.mlp(p, "decoder.final_head", dw, config.head_hidden, 3);

  init.weight(p, "classify.weight", config.global_feature_dim, config.num_classes);
  init.bias(p, "classify.bias", config.num_classes);
  return m;
}

bool ModelBundle::is_pretrain_only(const std::string& name) {
  return name.starts_with("local.proj.") || name.starts_with("global.head.") || name.starts_with("classify.");
}

std::size_t ModelBundle::completion_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params.all()) {
    if (!is_pretrain_only(p.name)) n += p.tensor.numel();
  }
  return n;
}

// ---------------------------------------------------------------------------

ad::Tensor local_encoder_forward(const ad::Tensor& points, const ModelBundle& m, bool with_projection) {
  const auto& cfg = m.config;
  require_points("local_encoder_forward", points, cfg.k_local);
  auto h = ad::linear(points, m.params.at("local.lift.weight"), m.params.at("local.lift.bias"));
  for (std::size_t b = 0; b < cfg.local_blocks; ++b) {
    const auto base = "local.block" + std::to_string(b);
    auto g = graph::knn_graph(h, cfg.k_local);
    h = graph::residual_denoise_block(h, g, m.params.at(base + ".w_self"), m.params.at(base + ".w_nbr"));
  }
  if (!with_projection) return h;
  // The projection predicts a displacement of each input point.
  auto g = graph::knn_graph(h, cfg.k_local);
  auto offset = graph::graph_conv(h, g, m.params.at("local.proj.w_self"), m.params.at("local.proj.w_nbr"),
                                  m.params.at("local.proj.bias"));
  return ad::add(points, offset);
}

ad::Tensor global_encoder_forward(const ad::Tensor& points, const ModelBundle& m, bool with_head) {
  const auto& cfg = m.config;
  require_points("global_encoder_forward", points, cfg.k_global);
  std::vector<ad::Tensor> stages;
  auto h = points;
  for (std::size_t s = 0; s < cfg.global_widths.size(); ++s) {
    const auto base = "global.edgeconv" + std::to_string(s);
    auto g = graph::knn_graph(h, cfg.k_global);
    h = graph::edge_conv(h, g, m.params.at(base + ".weight"), m.params.at(base + ".bias"));
    stages.push_back(h);
  }
  auto cat = ad::concat(stages, 1);
  auto per_point = ad::leaky_relu(ad::linear(cat, m.params.at("global.mlp.weight"), m.params.at("global.mlp.bias")));
  auto global = ad::max_reduce(per_point, 0).values;
  if (!with_head) return global;
  auto z = run_mlp(ad::reshape(global, {1, cfg.global_feature_dim}), m.params, "global.head", true);
  return ad::reshape(z, {cfg.proj_dim});
}

ad::Tensor fuse(const ad::Tensor& local, const ad::Tensor& global, const ModelBundle& m) {
  const auto& w_local = m.params.at("fusion.w_local");
  const auto& w_global = m.params.at("fusion.w_global");
  if (local.rank() != 2 || local.dim(1) != w_local.dim(0)) {
    throw ShapeError("fuse: local features " + ad::to_string(local.shape()) + " do not match weight " +
                     ad::to_string(w_local.shape()));
  }
  if (global.numel() != w_global.dim(0)) {
    throw ShapeError("fuse: global vector " + ad::to_string(global.shape()) + " does not match weight " +
                     ad::to_string(w_global.shape()));
  }
  auto per_point = ad::matmul(local, w_local);
  auto shared = ad::linear(ad::reshape(global, {1, global.numel()}), w_global, m.params.at("fusion.bias"));
  return ad::add(per_point, ad::broadcast_to(shared, per_point.shape()));
}

DecoderOutput decoder_forward(const ad::Tensor& fused, const ModelBundle& m) {
  const auto& cfg = m.config;
  if (fused.rank() != 2 || fused.dim(1) != cfg.fused_dim) {
    throw ShapeError("decoder_forward: expected [P x " + std::to_string(cfg.fused_dim) + "], got " +
                     ad::to_string(fused.shape()));
  }
  const auto nodes = fused.dim(0);
  DecoderOutput out;
  if (cfg.large_hole_mode) {
    if (nodes != cfg.missing) {
      throw ShapeError("decoder_forward: large-hole mode decodes every node, so P (" + std::to_string(nodes) +
                       ") must equal missing (" + std::to_string(cfg.missing) + ")");
    }
    auto h = decoder_edge_conv(fused, m, 0);
    h = decoder_edge_conv(h, m, 1);
    h = decoder_edge_conv(h, m, 2);
    out.missing = run_mlp(h, m.params, "decoder.final_head", false);
    return out;
  }
  if (nodes < cfg.n1) {
    throw ShapeError("decoder_forward: P (" + std::to_string(nodes) + ") must be at least n1 (" +
                     std::to_string(cfg.n1) + ")");
  }
  auto h = decoder_edge_conv(fused, m, 0);
  h = pool(h, m, 0, cfg.k_pool1, cfg.n1);
  h = decoder_edge_conv(h, m, 1);
  out.frame_missing = run_mlp(h, m.params, "decoder.mid_head", false);
  h = pool(h, m, 1, cfg.k_pool2, cfg.n2);
  h = decoder_edge_conv(h, m, 2);
  out.missing = run_mlp(h, m.params, "decoder.final_head", false);
  return out;
}

ad::Tensor classify_head(const ad::Tensor& global, const ModelBundle& m) {
  const auto& w = m.params.at("classify.weight");
  if (global.numel() != w.dim(0)) {
    throw ShapeError("classify_head: global vector " + ad::to_string(global.shape()) + " does not match weight " +
                     ad::to_string(w.shape()));
  }
  auto logits = ad::linear(ad::reshape(global, {1, global.numel()}), w, m.params.at("classify.bias"));
  return ad::reshape(logits, {m.config.num_classes});
}

DecoderOutput complete(const ad::Tensor& partial, const ModelBundle& m) {
  auto local = local_encoder_forward(partial, m, false);
  auto global = global_encoder_forward(partial, m, false);
  return decoder_forward(fuse(local, global, m), m);
}

// ---------------------------------------------------------------------------

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint32_t>(file.config_text.size()));
  out.write(file.config_text.data(), static_cast<std::streamsize>(file.config_text.size()));
  for (const auto& t : file.tensors) {
    put_le(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_le(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) put_le(out, static_cast<std::uint64_t>(e));
    for (double v : t.values) put_le(out, v);
  }
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw ParseError(path.string() + ": missing DECO magic");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kVersion) throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  TensorFile file;
  file.config_text = read_bytes(in, get_le<std::uint32_t>(in, path), path);
  while (in.peek() != std::char_traits<char>::eof()) {
    NamedTensor t;
    t.name = read_bytes(in, get_le<std::uint32_t>(in, path), path);
    const auto rank = get_le<std::uint32_t>(in, path);
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(in, path)));
      count *= t.shape.back();
    }
    t.values.resize(count);
    for (auto& v : t.values) v = get_le<double>(in, path);
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void save_checkpoint(const ModelBundle& model, const std::filesystem::path& path) {
  TensorFile file;
  file.config_text = model.config.to_text();
  for (const auto& p : model.params.all()) {
    file.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  }
  write_tensor_file(path, file);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  auto file = read_tensor_file(path);
  ModelBundle m;
  m.config = ModelConfig::from_text(file.config_text);
  for (auto& t : file.tensors) {
    m.params.add(t.name, ad::Tensor::from(t.shape, std::move(t.values), true));
  }
  // Every parameter the architecture needs must be present.
  auto reference = ModelBundle::create(m.config, 0);
  for (const auto& p : reference.params.all()) {
    if (!m.params.contains(p.name)) throw ParseError(path.string() + ": missing parameter '" + p.name + "'");
    if (m.params.at(p.name).shape() != p.tensor.shape()) {
      throw ParseError(path.string() + ": parameter '" + p.name + "' has shape " +
                       ad::to_string(m.params.at(p.name).shape()) + ", expected " + ad::to_string(p.tensor.shape()));
    }
  }
  return m;
}

std::size_t copy_parameters(ModelBundle& into, const ModelBundle& from, const std::string& prefix) {
  std::size_t copied = 0;
  for (const auto& p : from.params.all()) {
    if (!p.name.starts_with(prefix) || !into.params.contains(p.name)) continue;
    auto& dst = into.params.at(p.name);
    if (dst.shape() != p.tensor.shape()) {
      throw ShapeError("copy_parameters: '" + p.name + "' has shape " + ad::to_string(p.tensor.shape()) +
                       ", expected " + ad::to_string(dst.shape()));
    }
    std::copy(p.tensor.values().begin(), p.tensor.values().end(), dst.mutable_values().begin());
    ++copied;
  }
  return copied;
}

std::size_t load_parameters(ModelBundle& model, const std::filesystem::path& path, const std::string& prefix) {
  return copy_parameters(model, load_checkpoint(path), prefix);
}

}  // namespace deco::model
