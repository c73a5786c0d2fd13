#include "deco/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <ostream>

#include "deco/error.hpp"
#include "deco/eval.hpp"
#include "deco/training.hpp"

namespace deco::cli {

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir = ".";
};

RunConfig load_config(const Globals& g) {
  std::string text;
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw UsageError("cannot open config file " + g.config_path);
    text.assign(std::istreambuf_iterator<char>(in), {});
    text += '\n';
  }
  for (const auto& kv : g.overrides) {
    if (kv.find('=') == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
    text += kv + '\n';
  }
  auto cfg = RunConfig::parse(text);
  if (g.seed) cfg.train.seed = *g.seed;
  if (g.deterministic) cfg.train.deterministic = true;
  return cfg;
}

std::filesystem::path out_path(const Globals& g, const std::string& name) {
  std::filesystem::create_directories(g.out_dir);
  return std::filesystem::path(g.out_dir) / name;
}

// Clouds from a manifest, or a synthetic corpus sized by the config.
std::vector<data::PointCloud> load_clouds(const std::string& manifest, const RunConfig& cfg) {
  if (!manifest.empty()) return data::load_manifest(manifest);
  return data::generate_corpus(cfg.train.corpus_size, cfg.train.points_per_cloud, cfg.train.seed);
}

data::Split split_clouds(const std::vector<data::PointCloud>& clouds, const RunConfig& cfg) {
  return data::make_split(clouds, cfg.train.train_fraction, cfg.train.seed);
}

void apply_large_hole(ModelConfig& m) {
  m.large_hole_mode = true;
  m.missing = 1024;
  m.n2 = 1024;
  m.frame = 0;
  m.validate();
}

std::string real(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-cloud completion with denoising and contrastive pretexts", "deco"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key=value run configuration file");
  app.add_option("--set", g.overrides, "override one config key (KEY=VALUE, repeatable)");
  app.add_option("--seed", g.seed, "run seed");
  app.add_flag("--deterministic", g.deterministic, "bit-reproducible execution");
  app.add_option("--out", g.out_dir, "output directory");

  std::string manifest;
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", manifest, "manifest of path,label lines (default: synthetic corpus)");
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic primitive corpus and manifest");
  std::optional<std::size_t> gen_count, gen_points;
  std::string gen_format = "xyz-ascii";
  gen->add_option("--count", gen_count, "number of shapes");
  gen->add_option("--points", gen_points, "points per shape");
  gen->add_option("--format", gen_format, "xyz-ascii or xyz-binary");

  auto* pden = app.add_subcommand("pretrain-denoise", "pretrain the local encoder");
  auto* pcon = app.add_subcommand("pretrain-contrastive", "pretrain the global encoder");
  auto* pcla = app.add_subcommand("pretrain-classify", "supervised pretraining of the global encoder");
  for (auto* s : {pden, pcon, pcla}) add_data(s);

  auto* trn = app.add_subcommand("train", "train the completion network");
  add_data(trn);
  bool no_frame = false, no_denoise = false, no_contrastive = false, classify_init = false, large_hole = false,
       two_holes = false;
  std::string denoise_ckpt, contrastive_ckpt, classify_ckpt, resume;
  trn->add_flag("--no-frame", no_frame, "drop the frame loss term");
  trn->add_flag("--no-denoise-init", no_denoise, "skip the denoising pretext");
  trn->add_flag("--no-contrastive-init", no_contrastive, "skip the contrastive pretext");
  trn->add_flag("--classify-init", classify_init, "use the classification pretext for the global encoder");
  trn->add_flag("--large-hole", large_hole, "single hole of 1024 points, no frame");
  trn->add_flag("--two-holes", two_holes, "two sequential viewpoint holes");
  trn->add_option("--denoise-ckpt", denoise_ckpt, "pretrained local encoder");
  trn->add_option("--contrastive-ckpt", contrastive_ckpt, "pretrained global encoder");
  trn->add_option("--classify-ckpt", classify_ckpt, "classification-pretrained global encoder");
  trn->add_option("--resume", resume, "completion checkpoint to continue from");

  auto* evl = app.add_subcommand("eval", "missing-region Chamfer distance report");
  add_data(evl);
  std::string eval_ckpt, eval_split = "test";
  evl->add_option("--checkpoint", eval_ckpt, "completion checkpoint")->required();
  evl->add_option("--split", eval_split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
  evl->add_flag("--two-holes", two_holes, "evaluate with two holes");

  auto* abl = app.add_subcommand("ablate", "train and evaluate a grid of pretext/frame toggles");
  add_data(abl);
  std::vector<std::string> rows;
  abl->add_option("--rows", rows, "rows as 4-flag codes (denoise,classify,contrastive,frame); default full grid")
      ->delimiter(',');

  auto* exp = app.add_subcommand("export", "convert a cloud, or export a completion from a checkpoint");
  add_data(exp);
  std::string exp_input, exp_output, exp_format = "ply-ascii", exp_ckpt;
  std::size_t exp_index = 0;
  exp->add_option("--input", exp_input, "cloud file to convert");
  exp->add_option("--output", exp_output, "destination file (conversion mode)");
  exp->add_option("--format", exp_format, "xyz-ascii, xyz-binary or ply-ascii");
  exp->add_option("--checkpoint", exp_ckpt, "completion checkpoint (completion mode)");
  exp->add_option("--index", exp_index, "test-set sample to complete");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    auto cfg = load_config(g);
    const auto seed = cfg.train.seed;

    if (gen->parsed()) {
      const auto format = data::parse_cloud_format(gen_format);
      const auto count = gen_count.value_or(cfg.train.corpus_size);
      const auto clouds = data::generate_corpus(count, gen_points.value_or(cfg.train.points_per_cloud), seed);
      const auto dir = out_path(g, "clouds");
      std::filesystem::create_directories(dir);
      std::vector<data::ManifestEntry> entries;
      for (const auto& c : clouds) {
        auto path = dir / (c.source_id + (format == data::CloudFormat::XyzBinary ? ".pcxb" : ".xyz"));
        data::save_cloud(c.points, path, format);
        entries.push_back({std::filesystem::path("clouds") / path.filename(), *c.label});
      }
      const auto man = out_path(g, "manifest.csv");
      data::write_manifest(man, entries);
      out << man.string() << '\n';
      return 0;
    }

    if (pden->parsed() || pcon->parsed() || pcla->parsed()) {
      const auto split = split_clouds(load_clouds(manifest, cfg), cfg);
      auto m = model::ModelBundle::create(cfg.model, seed);
      train::RunRecord record;
      std::string name;
      if (pden->parsed()) {
        name = "denoise";
        record = train::pretrain_denoise(m, split.train, cfg.train, seed, &split.test);
        out << "held_out_mse," << real(train::evaluate_denoise(m, split.test, cfg.model.denoise_sigma, seed)) << '\n'
            << "noisy_input_mse," << real(train::noisy_input_mse(split.test, cfg.model.denoise_sigma, seed)) << '\n';
      } else if (pcon->parsed()) {
        name = "contrastive";
        record = train::pretrain_contrastive(m, split.train, cfg.train, seed);
        out << "held_out_margin," << real(train::contrastive_margin(m, split.test, cfg.train.group_size, seed))
            << '\n';
      } else {
        name = "classify";
        record = train::pretrain_classify(m, split.train, cfg.train, seed);
        out << "held_out_accuracy," << real(train::classification_accuracy(m, split.test)) << '\n';
      }
      model::save_checkpoint(m, out_path(g, name + ".deco"));
      record.write_csv(out_path(g, name + "_log.csv"));
      return 0;
    }

    if (trn->parsed()) {
      if (large_hole) apply_large_hole(cfg.model);
      cfg.train.two_holes = two_holes;
      cfg.train.use_frame = !no_frame;
      if (large_hole && two_holes) throw UsageError("--large-hole and --two-holes are exclusive");
      if (classify_init && !contrastive_ckpt.empty()) {
        throw UsageError("--classify-init replaces the contrastive pretext; drop --contrastive-ckpt");
      }
      if (classify_init) no_contrastive = true;
      const auto split = split_clouds(load_clouds(manifest, cfg), cfg);
      eval::Toggles toggles;
      toggles.denoise = !no_denoise && denoise_ckpt.empty();
      toggles.contrastive = !no_contrastive && contrastive_ckpt.empty();
      toggles.classify = classify_init && classify_ckpt.empty();
      auto m = eval::initialized_model(cfg, toggles, split.train, seed);
      if (!no_denoise && !denoise_ckpt.empty()) model::load_parameters(m, denoise_ckpt, "local.");
      if (!no_contrastive && !contrastive_ckpt.empty()) model::load_parameters(m, contrastive_ckpt, "global.");
      if (classify_init && !classify_ckpt.empty()) model::load_parameters(m, classify_ckpt, "global.");
      std::optional<std::filesystem::path> ckpt_dir, resume_from;
      if (cfg.train.checkpoint_interval > 0) ckpt_dir = out_path(g, "checkpoints");
      if (!resume.empty()) resume_from = resume;
      auto record = train::train_completion(m, split.train, cfg.train, seed, ckpt_dir, resume_from);
      model::save_checkpoint(m, out_path(g, "completion.deco"));
      record.write_csv(out_path(g, "train_log.csv"));
      out << out_path(g, "completion.deco").string() << '\n';
      return 0;
    }

    if (evl->parsed()) {
      auto m = model::load_checkpoint(eval_ckpt);
      cfg.train.two_holes = two_holes;
      const auto clouds = load_clouds(manifest, cfg);
      std::vector<data::PointCloud> test;
      if (eval_split == "all") {
        test = clouds;
      } else {
        auto split = split_clouds(clouds, cfg);
        test = eval_split == "test" ? split.test : split.train;
      }
      auto report = eval::eval_missing_region(m, test, train::protocol_for(m.config, cfg.train), seed);
      out << report.to_csv();
      char hash[32];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(report.config_hash));
      err << "config_hash " << hash << '\n';
      return 0;
    }

    if (abl->parsed()) {
      std::vector<eval::Toggles> grid;
      for (const auto& r : rows) grid.push_back(eval::Toggles::parse(r));
      if (grid.empty()) grid = eval::full_grid();
      const auto split = split_clouds(load_clouds(manifest, cfg), cfg);
      const auto csv = eval::ablation_csv(eval::run_ablation(grid, split.train, split.test, cfg, seed));
      std::ofstream(out_path(g, "ablation.csv")) << csv;
      out << csv;
      return 0;
    }

    if (exp->parsed()) {
      const auto format = eval::parse_export_format(exp_format);
      const char* ext = format == eval::ExportFormat::PlyAscii ? ".ply"
                        : format == eval::ExportFormat::XyzBinary ? ".pcxb"
                                                                   : ".xyz";
      if (!exp_input.empty()) {
        if (exp_output.empty()) throw UsageError("export --input needs --output");
        const auto fmt = std::filesystem::path(exp_input).extension() == ".pcxb" ? data::CloudFormat::XyzBinary
                                                                                  : data::CloudFormat::XyzAscii;
        eval::export_cloud(data::load_cloud(exp_input, fmt).points, exp_output, format);
        out << exp_output << '\n';
        return 0;
      }
      if (exp_ckpt.empty()) throw UsageError("export needs --input or --checkpoint");
      auto m = model::load_checkpoint(exp_ckpt);
      const auto split = split_clouds(load_clouds(manifest, cfg), cfg);
      if (exp_index >= split.test.size()) {
        throw UsageError("--index " + std::to_string(exp_index) + " exceeds the " + std::to_string(split.test.size()) +
                         " test samples");
      }
      const auto protocol = train::protocol_for(m.config, cfg.train);
      auto sample = eval::test_sample(split.test[exp_index], exp_index, m.config, protocol, seed);
      auto pred = model::complete(data::to_tensor(sample.partial), m).missing;
      const auto stem = "sample" + std::to_string(exp_index);
      for (const auto& [suffix, pts] : {std::pair{"_partial", sample.partial}, std::pair{"_missing", sample.missing},
                                        std::pair{"_predicted", data::to_points(pred)}}) {
        const auto path = out_path(g, stem + suffix + ext);
        eval::export_cloud(pts, path, format);
        out << path.string() << '\n';
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace deco::cli
