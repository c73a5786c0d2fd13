#include "deco/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deco/error.hpp"
#include "deco/losses.hpp"

namespace deco::train {

namespace {

// Seed streams; distinct constants keep the draws of different phases apart.
constexpr std::uint64_t kNoiseStream = 0xD1;
constexpr std::uint64_t kShuffleStream = 0xD2;
constexpr std::uint64_t kAugmentStream = 0xD3;
constexpr std::uint64_t kCropStream = 0xD4;
constexpr std::uint64_t kEvalNoiseStream = 0xD5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kShuffleStream, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Consecutive chunks of `batch`; a trailing chunk smaller than `min_size` is
// folded into the previous one.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch,
                                                   std::size_t min_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  }
  if (out.size() > 1 && out.back().size() < min_size) {
    auto tail = std::move(out.back());
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

std::vector<Parameter*> select(model::ModelBundle& m, std::initializer_list<const char*> prefixes,
                               bool include_pretrain_heads) {
  std::vector<Parameter*> out;
  for (auto& p : m.params.all()) {
    if (!include_pretrain_heads && model::ModelBundle::is_pretrain_only(p.name)) continue;
    for (const char* prefix : prefixes) {
      if (p.name.starts_with(prefix)) {
        out.push_back(&p);
        break;
      }
    }
  }
  return out;
}

void zero(std::span<Parameter* const> params) {
  for (auto* p : params) {
    auto g = p->tensor.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

ad::Tensor noisy_copy(const data::PointCloud& cloud, double sigma, Rng& rng) {
  auto t = data::to_tensor(cloud.points);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : t.mutable_values()) v += noise(rng);
  }
  return t;
}

void guard_divergence(double loss, double initial, double factor, const char* phase) {
  if (!std::isfinite(loss) || loss > factor * initial) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s diverged: loss %.6g exceeds %.3g x initial %.6g", phase, loss, factor, initial);
    throw DivergenceError(buf);
  }
}

ad::Tensor embed_batch(const model::ModelBundle& m, const std::vector<data::PointCloud>& variants) {
  std::vector<ad::Tensor> rows;
  rows.reserve(variants.size());
  for (const auto& v : variants) {
    auto z = model::global_encoder_forward(data::to_tensor(v.points), m, true);
    rows.push_back(ad::reshape(z, {1, z.numel()}));
  }
  return ad::concat(rows, 0);
}

std::vector<data::PointCloud> augmented_variants(std::span<const data::PointCloud* const> clouds,
                                                 std::size_t group_size, double crop_fraction, std::uint64_t seed,
                                                 std::size_t epoch, std::span<const std::size_t> ids) {
  std::vector<data::PointCloud> variants;
  data::AugmentConfig aug;
  aug.crop_fraction = crop_fraction;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    Rng rng(derive_seed(seed, kAugmentStream, epoch, ids[i]));
    auto group = data::augment_group(*clouds[i], group_size, rng, aug);
    for (auto& v : group.variants) variants.push_back(std::move(v));
  }
  return variants;
}

}  // namespace

// ---------------------------------------------------------------------------

double lr_at(std::size_t epoch, double base, std::size_t period) {
  if (period == 0) throw ConfigError("lr_at: period must be at least 1");
  return std::ldexp(base, -static_cast<int>(epoch / period));
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (double g : p->tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params) {
      for (auto& g : p->tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

Adam::Adam(std::vector<Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    m_.emplace_back(p->tensor.numel(), 0.0);
    v_.emplace_back(p->tensor.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const auto* p : params_) {
    for (double g : p->tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("adam: non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i]->tensor.mutable_values();
    auto g = params_[i]->tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

std::vector<model::NamedTensor> Adam::export_state() const {
  std::vector<model::NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"m." + params_[i]->name, params_[i]->tensor.shape(), m_[i]});
    out.push_back({"v." + params_[i]->name, params_[i]->tensor.shape(), v_[i]});
  }
  return out;
}

void Adam::import_state(std::span<const model::NamedTensor> tensors, std::uint64_t steps) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    bool found_m = false, found_v = false;
    for (const auto& t : tensors) {
      if (t.values.size() != m_[i].size()) continue;
      if (t.name == "m." + params_[i]->name) {
        m_[i] = t.values;
        found_m = true;
      } else if (t.name == "v." + params_[i]->name) {
        v_[i] = t.values;
        found_v = true;
      }
    }
    if (!found_m || !found_v) throw ParseError("optimizer state missing moments for '" + params_[i]->name + "'");
  }
  step_ = steps;
}

// ---------------------------------------------------------------------------

std::string RunRecord::to_csv() const {
  std::ostringstream os;
  os << "epoch,split,loss_total,loss_missing,loss_frame,lr_encoder,lr_decoder\n";
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.split << ',' << real(e.loss_total) << ','
       << (e.loss_missing ? real(*e.loss_missing) : "") << ',' << (e.loss_frame ? real(*e.loss_frame) : "") << ','
       << real(e.lr_encoder) << ',' << real(e.lr_decoder) << '\n';
  }
  return os.str();
}

void RunRecord::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv();
}

std::vector<double> RunRecord::losses(const std::string& split) const {
  std::vector<double> out;
  for (const auto& e : epochs) {
    if (e.split == split) out.push_back(e.loss_total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoising

RunRecord pretrain_denoise(model::ModelBundle& m, const std::vector<data::PointCloud>& clouds, const TrainConfig& cfg,
                           std::uint64_t seed, const std::vector<data::PointCloud>* held_out) {
  if (clouds.empty()) throw ConfigError("pretrain_denoise: empty dataset");
  const auto start = Clock::now();
  RunRecord record;
  record.seed = seed;
  record.config_text = m.config.to_text() + cfg.to_text();
  auto params = select(m, {"local."}, true);
  Adam opt(params);
  const double sigma = m.config.denoise_sigma;
  std::optional<double> initial;

  for (std::size_t epoch = 0; epoch < cfg.pretext_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.learning_rate, cfg.encoder_halving);
    double epoch_loss = 0.0;
    for (const auto& batch : make_batches(shuffled_indices(clouds.size(), seed, epoch), cfg.batch_size, 1)) {
      zero(params);
      const double weight = 1.0 / static_cast<double>(batch.size());
      double batch_loss = 0.0;
      for (auto idx : batch) {
        Rng rng(derive_seed(seed, kNoiseStream, epoch, idx));
        ad::Tape tape;
        auto noisy = noisy_copy(clouds[idx], sigma, rng);
        auto denoised = model::local_encoder_forward(noisy, m, true);
        auto loss = loss::mse_denoise(denoised, data::to_tensor(clouds[idx].points));
        batch_loss += loss.value.item();
        tape.backward(ad::scale(loss.value, weight));
      }
      batch_loss *= weight;
      if (!initial) initial = batch_loss;
      guard_divergence(batch_loss, *initial, cfg.divergence_factor, "pretrain_denoise");
      clip_grad_norm(params, cfg.grad_clip);
      opt.step(lr);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
    }
    epoch_loss /= static_cast<double>(clouds.size());
    record.epochs.push_back({epoch, "train", epoch_loss, std::nullopt, std::nullopt, lr, 0.0});
    if (held_out != nullptr && !held_out->empty()) {
      record.epochs.push_back({epoch, "test", evaluate_denoise(m, *held_out, sigma, seed), std::nullopt, std::nullopt,
                               lr, 0.0});
    }
  }
  record.wall_seconds = seconds_since(start);
  return record;
}

double evaluate_denoise(const model::ModelBundle& m, const std::vector<data::PointCloud>& clouds, double sigma,
                        std::uint64_t seed) {
  if (clouds.empty()) throw ConfigError("evaluate_denoise: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    Rng rng(derive_seed(seed, kEvalNoiseStream, i));
    auto denoised = model::local_encoder_forward(noisy_copy(clouds[i], sigma, rng), m, true);
    total += loss::mse_denoise(denoised, data::to_tensor(clouds[i].points)).value.item();
  }
  return total / static_cast<double>(clouds.size());
}

double noisy_input_mse(const std::vector<data::PointCloud>& clouds, double sigma, std::uint64_t seed) {
  if (clouds.empty()) throw ConfigError("noisy_input_mse: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    Rng rng(derive_seed(seed, kEvalNoiseStream, i));
    total += loss::mse_denoise(noisy_copy(clouds[i], sigma, rng), data::to_tensor(clouds[i].points)).value.item();
  }
  return total / static_cast<double>(clouds.size());
}

// ---------------------------------------------------------------------------
// Contrastive

RunRecord pretrain_contrastive(model::ModelBundle& m, const std::vector<data::PointCloud>& clouds,
                               const TrainConfig& cfg, std::uint64_t seed) {
  if (cfg.group_size != 2 && cfg.group_size != 4) throw ConfigError("pretrain_contrastive: group size must be 2 or 4");
  if (clouds.size() < 2) throw ConfigError("pretrain_contrastive: a batch needs at least 2 groups");
  const auto start = Clock::now();
  RunRecord record;
  record.seed = seed;
  record.config_text = m.config.to_text() + cfg.to_text();
  auto params = select(m, {"global."}, true);
  Adam opt(params);
  std::optional<double> initial;

  for (std::size_t epoch = 0; epoch < cfg.pretext_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.learning_rate, cfg.encoder_halving);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : make_batches(shuffled_indices(clouds.size(), seed, epoch), cfg.pretext_batch, 2)) {
      std::vector<const data::PointCloud*> members;
      for (auto idx : batch) members.push_back(&clouds[idx]);
      auto variants = augmented_variants(members, cfg.group_size, m.config.crop_fraction, seed, epoch, batch);
      zero(params);
      double value = 0.0;
      {
        ad::Tape tape;
        auto loss = loss::nt_xent_grouped(embed_batch(m, variants), cfg.group_size, m.config.tau);
        value = loss.value.item();
        tape.backward(loss.value);
      }
      if (!initial) initial = value;
      guard_divergence(value, *initial, cfg.divergence_factor, "pretrain_contrastive");
      clip_grad_norm(params, cfg.grad_clip);
      opt.step(lr);
      epoch_loss += value;
      ++batches;
    }
    record.epochs.push_back({epoch, "train", epoch_loss / static_cast<double>(batches), std::nullopt, std::nullopt,
                             lr, 0.0});
  }
  record.wall_seconds = seconds_since(start);
  return record;
}

double contrastive_margin(const model::ModelBundle& m, const std::vector<data::PointCloud>& clouds,
                          std::size_t group_size, std::uint64_t seed) {
  if (clouds.size() < 2) throw ConfigError("contrastive_margin: need at least 2 clouds");
  std::vector<const data::PointCloud*> members;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    members.push_back(&clouds[i]);
    ids.push_back(i);
  }
  auto variants = augmented_variants(members, group_size, m.config.crop_fraction, seed, 0x77E5, ids);
  auto z = embed_batch(m, variants);
  const auto b = z.dim(0), e = z.dim(1);
  std::vector<double> unit(z.values().begin(), z.values().end());
  for (std::size_t i = 0; i < b; ++i) {
    double n = 0.0;
    for (std::size_t c = 0; c < e; ++c) n += unit[i * e + c] * unit[i * e + c];
    n = std::sqrt(n);
    if (n == 0.0) throw Error("contrastive_margin: zero embedding");
    for (std::size_t c = 0; c < e; ++c) unit[i * e + c] /= n;
  }
  double pos = 0.0, neg = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < e; ++c) s += unit[i * e + c] * unit[j * e + c];
      if (i / group_size == j / group_size) {
        pos += s;
        ++n_pos;
      } else {
        neg += s;
        ++n_neg;
      }
    }
  }
  return pos / static_cast<double>(n_pos) - neg / static_cast<double>(n_neg);
}

// ---------------------------------------------------------------------------
// Classification

RunRecord pretrain_classify(model::ModelBundle& m, const std::vector<data::PointCloud>& clouds, const TrainConfig& cfg,
                            std::uint64_t seed, bool head_only) {
  if (clouds.empty()) throw ConfigError("pretrain_classify: empty dataset");
  std::vector<std::size_t> labels;
  for (const auto& c : clouds) {
    if (!c.label) throw ConfigError("pretrain_classify: cloud '" + c.source_id + "' has no label");
    if (*c.label >= m.config.num_classes) {
      throw ConfigError("pretrain_classify: label " + std::to_string(*c.label) + " exceeds num_classes");
    }
    labels.push_back(*c.label);
  }
  if (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels[0]; })) {
    throw ConfigError("pretrain_classify: dataset has a single class");
  }
  const auto start = Clock::now();
  RunRecord record;
  record.seed = seed;
  record.config_text = m.config.to_text() + cfg.to_text();
  auto params = head_only ? select(m, {"classify."}, true) : select(m, {"global."}, false);
  if (!head_only) {
    for (auto* p : select(m, {"classify."}, true)) params.push_back(p);
  }
  Adam opt(params);
  std::optional<double> initial;

  for (std::size_t epoch = 0; epoch < cfg.pretext_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.learning_rate, cfg.encoder_halving);
    double epoch_loss = 0.0;
    for (const auto& batch : make_batches(shuffled_indices(clouds.size(), seed, epoch), cfg.pretext_batch, 1)) {
      zero(params);
      double value = 0.0;
      {
        ad::Tape tape;
        std::vector<ad::Tensor> rows;
        std::vector<std::size_t> batch_labels;
        for (auto idx : batch) {
          auto global = model::global_encoder_forward(data::to_tensor(clouds[idx].points), m, false);
          if (head_only) global = global.detach();
          rows.push_back(ad::reshape(model::classify_head(global, m), {1, m.config.num_classes}));
          batch_labels.push_back(labels[idx]);
        }
        auto loss = loss::cross_entropy(ad::concat(rows, 0), batch_labels);
        value = loss.value.item();
        tape.backward(loss.value);
      }
      if (!initial) initial = value;
      guard_divergence(value, *initial, cfg.divergence_factor, "pretrain_classify");
      clip_grad_norm(params, cfg.grad_clip);
      opt.step(lr);
      epoch_loss += value * static_cast<double>(batch.size());
    }
    record.epochs.push_back({epoch, "train", epoch_loss / static_cast<double>(clouds.size()), std::nullopt,
                             std::nullopt, lr, 0.0});
  }
  record.wall_seconds = seconds_since(start);
  return record;
}

double classification_accuracy(const model::ModelBundle& m, const std::vector<data::PointCloud>& clouds) {
  if (clouds.empty()) throw ConfigError("classification_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& c : clouds) {
    auto logits = model::classify_head(model::global_encoder_forward(data::to_tensor(c.points), m, false), m);
    auto v = logits.values();
    const auto pred = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    if (c.label && *c.label == pred) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clouds.size());
}

// ---------------------------------------------------------------------------
// Completion

std::string_view to_string(HoleProtocol protocol) {
  switch (protocol) {
    case HoleProtocol::SingleHole: return "single-hole";
    case HoleProtocol::LargeHole: return "large-hole";
    case HoleProtocol::TwoHoles: return "two-hole";
  }
  return "unknown";
}

HoleProtocol protocol_for(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  if (model_cfg.large_hole_mode) return HoleProtocol::LargeHole;
  return train_cfg.two_holes ? HoleProtocol::TwoHoles : HoleProtocol::SingleHole;
}

data::PartialSample make_sample(const data::PointCloud& cloud, const ModelConfig& cfg, HoleProtocol protocol,
                                Rng& rng) {
  switch (protocol) {
    case HoleProtocol::SingleHole:
      return data::crop_by_viewpoint(cloud, data::sample_viewpoint(rng), cfg.missing, cfg.frame);
    case HoleProtocol::LargeHole:
      return data::crop_by_viewpoint(cloud, data::sample_viewpoint(rng), cfg.missing, 0);
    case HoleProtocol::TwoHoles: {
      const auto first = cfg.missing - cfg.missing / 2;
      return data::two_hole_crop(cloud, first, cfg.missing / 2, cfg.frame, rng);
    }
  }
  throw ConfigError("unknown hole protocol");
}

std::vector<Parameter*> encoder_parameters(model::ModelBundle& m) {
  return select(m, {"local.", "global.", "fusion."}, false);
}

std::vector<Parameter*> decoder_parameters(model::ModelBundle& m) { return select(m, {"decoder."}, false); }

CompletionTrainer::CompletionTrainer(model::ModelBundle& model, const TrainConfig& cfg, std::uint64_t seed)
    : model_(model),
      cfg_(cfg),
      seed_(seed),
      protocol_(protocol_for(model.config, cfg)),
      encoder_opt_(encoder_parameters(model)),
      decoder_opt_(decoder_parameters(model)) {
  cfg_.validate();
  model_.config.validate();
}

CompletionStep CompletionTrainer::accumulate(const data::PartialSample& sample, double weight) {
  const bool frame = cfg_.use_frame && protocol_ != HoleProtocol::LargeHole;
  ad::Tape tape;
  auto out = model::complete(data::to_tensor(sample.partial), model_);
  auto loss = frame ? loss::completion_loss(out.missing, data::to_tensor(sample.missing), out.frame_missing,
                                            data::to_tensor(sample.frame_missing))
                    : loss::completion_loss(out.missing, data::to_tensor(sample.missing));
  tape.backward(ad::scale(loss.value, weight));
  CompletionStep step;
  step.total = loss.value.item();
  step.missing = loss.diagnostics.at("missing");
  if (frame) step.frame = loss.diagnostics.at("frame");
  return step;
}

EpochRecord CompletionTrainer::run_epoch(const std::vector<data::PointCloud>& clouds) {
  if (clouds.empty()) throw ConfigError("train_completion: empty dataset");
  const double lr_enc = lr_at(epoch_, cfg_.learning_rate, cfg_.encoder_halving);
  const double lr_dec = lr_at(epoch_, cfg_.learning_rate, cfg_.decoder_halving);
  std::vector<Parameter*> all = encoder_opt_.params();
  all.insert(all.end(), decoder_opt_.params().begin(), decoder_opt_.params().end());

  double total = 0.0, missing = 0.0, frame = 0.0;
  bool has_frame = false;
  for (const auto& batch : make_batches(shuffled_indices(clouds.size(), seed_, epoch_), cfg_.batch_size, 1)) {
    zero(all);
    const double weight = 1.0 / static_cast<double>(batch.size());
    for (auto idx : batch) {
      Rng rng(derive_seed(seed_, kCropStream, epoch_, idx));
      auto sample = make_sample(clouds[idx], model_.config, protocol_, rng);
      auto step = accumulate(sample, weight);
      total += step.total;
      missing += step.missing;
      if (step.frame) {
        frame += *step.frame;
        has_frame = true;
      }
    }
    clip_grad_norm(all, cfg_.grad_clip);
    encoder_opt_.step(lr_enc);
    decoder_opt_.step(lr_dec);
  }
  const double n = static_cast<double>(clouds.size());
  EpochRecord rec{epoch_, "train", total / n, missing / n, std::nullopt, lr_enc, lr_dec};
  if (has_frame) rec.loss_frame = frame / n;
  ++epoch_;
  return rec;
}

std::filesystem::path CompletionTrainer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto stem = dir / ("completion_epoch" + std::to_string(epoch_));
  auto model_path = stem;
  model_path += ".deco";
  model::save_checkpoint(model_, model_path);
  model::TensorFile state;
  state.config_text = "epoch=" + std::to_string(epoch_) + "\nencoder_steps=" + std::to_string(encoder_opt_.steps()) +
                      "\ndecoder_steps=" + std::to_string(decoder_opt_.steps()) + "\n";
  for (auto& t : encoder_opt_.export_state()) state.tensors.push_back(std::move(t));
  for (auto& t : decoder_opt_.export_state()) state.tensors.push_back(std::move(t));
  auto state_path = stem;
  state_path += ".adam";
  model::write_tensor_file(state_path, state);
  return model_path;
}

void CompletionTrainer::resume(const std::filesystem::path& checkpoint) {
  auto state_path = checkpoint;
  state_path.replace_extension(".adam");
  if (!std::filesystem::exists(checkpoint) || !std::filesystem::exists(state_path)) {
    throw IoError("missing checkpoint on resume: " + checkpoint.string());
  }
  auto loaded = model::load_checkpoint(checkpoint);
  if (loaded.config.to_text() != model_.config.to_text()) {
    throw ConfigError("resume: checkpoint configuration differs from the current model");
  }
  model::copy_parameters(model_, loaded, "");
  auto state = model::read_tensor_file(state_path);
  std::size_t epoch = 0;
  std::uint64_t enc = 0, dec = 0;
  for (const auto& [k, v] : parse_key_values(state.config_text)) {
    if (k == "epoch") epoch = std::stoull(v);
    else if (k == "encoder_steps") enc = std::stoull(v);
    else if (k == "decoder_steps") dec = std::stoull(v);
  }
  encoder_opt_.import_state(state.tensors, enc);
  decoder_opt_.import_state(state.tensors, dec);
  epoch_ = epoch;
}

RunRecord train_completion(model::ModelBundle& model, const std::vector<data::PointCloud>& clouds,
                           const TrainConfig& cfg, std::uint64_t seed,
                           const std::optional<std::filesystem::path>& checkpoint_dir,
                           const std::optional<std::filesystem::path>& resume_from) {
  const auto start = Clock::now();
  CompletionTrainer trainer(model, cfg, seed);
  if (resume_from) trainer.resume(*resume_from);
  RunRecord record;
  record.seed = seed;
  record.config_text = model.config.to_text() + cfg.to_text();
  std::optional<double> initial;
  while (trainer.next_epoch() < cfg.epochs) {
    auto rec = trainer.run_epoch(clouds);
    if (!initial) initial = rec.loss_total;
    guard_divergence(rec.loss_total, *initial, cfg.divergence_factor, "train_completion");
    record.epochs.push_back(rec);
    if (checkpoint_dir && cfg.checkpoint_interval > 0 && trainer.next_epoch() % cfg.checkpoint_interval == 0) {
      trainer.save(*checkpoint_dir);
    }
  }
  record.wall_seconds = seconds_since(start);
  return record;
}

}  // namespace deco::train
