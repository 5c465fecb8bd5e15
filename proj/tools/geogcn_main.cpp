#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <geogcn/cloud_io.hpp>
#include <geogcn/errors.hpp>
#include <geogcn/pipeline.hpp>
#include <geogcn/runtime.hpp>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalidArgs = 2;
constexpr int kExitDataError = 3;
constexpr int kExitDivergence = 4;

struct FilterFlags {
  std::optional<std::size_t> iters;
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::optional<std::size_t> k;
  bool eq5_literal = false;

  void add_to(CLI::App* app) {
    app->add_option("--filter-iters", iters, "Final filter iterations");
    app->add_option("--filter-sigma", sigma, "Normal-similarity bandwidth");
    app->add_option("--filter-lambda", lambda, "Neighbour-normal projection weight");
    app->add_option("--filter-k", k, "Filter neighbourhood size");
    app->add_flag("--eq5-literal", eq5_literal, "Use the scalar-weight form of the filter update");
  }

  void apply(geogcn::FilterConfig& f) const {
    if (iters) f.iterations = *iters;
    if (sigma) f.sigma = *sigma;
    if (lambda) f.lambda = *lambda;
    if (k) f.k_neighbors = *k;
    if (eq5_literal) f.literal_scalar_form = true;
  }
};

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> train_mode;
  FilterFlags filter;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Pipeline config JSON")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "RNG seed override");
    app->add_option("--train-mode", train_mode, "joint or sequential")
        ->check(CLI::IsMember({"joint", "sequential"}));
    filter.add_to(app);
  }

  geogcn::PipelineConfig resolve() const {
    geogcn::PipelineConfig cfg = config.empty() ? geogcn::PipelineConfig{} : geogcn::load_config(config);
    if (seed) cfg.rng_seed = *seed;
    if (train_mode) cfg.train_mode = geogcn::parse_train_mode(*train_mode);
    filter.apply(cfg.filter);
    cfg.validate();
    return cfg;
  }
};

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

std::vector<geogcn::ShapeSpec> shapes_from_names(const std::vector<std::string>& names, std::size_t points,
                                                 std::uint64_t seed) {
  std::vector<geogcn::ShapeSpec> shapes;
  for (std::size_t i = 0; i < names.size(); ++i) {
    geogcn::ShapeSpec s;
    s.kind = geogcn::parse_shape_kind(names[i]);
    s.n_points = points;
    s.rng_seed = seed + i;
    s.name = names[i] + "_" + std::to_string(i);
    shapes.push_back(s);
  }
  return shapes;
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw geogcn::io_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  geogcn::configure_allocator();
  CLI::App app{"geogcn: graph-convolutional point cloud denoising"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic clean/noisy clouds and a manifest");
  std::string gen_out;
  std::vector<std::string> gen_shapes;
  std::vector<double> gen_scales = geogcn::kTrainingNoiseScales;
  std::vector<double> gen_test_scales{0.005};
  std::size_t gen_points = 5000;
  std::uint64_t gen_seed = 1;
  bool gen_no_test = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--shapes", gen_shapes, "Shape kinds (default: the built-in eight-shape training set)")
      ->delimiter(',');
  gen->add_option("--scales", gen_scales, "Noise scales as fractions of the bounding-box diagonal")->delimiter(',');
  gen->add_option("--test-scales", gen_test_scales, "Noise scales for the held-out shapes")->delimiter(',');
  gen->add_option("--points", gen_points, "Points per shape");
  gen->add_option("--seed", gen_seed, "Base seed for --shapes");
  gen->add_flag("--no-test", gen_no_test, "Skip the held-out test shapes");

  // train
  auto* tr = app.add_subcommand("train", "Train the networks on a manifest");
  std::string tr_manifest;
  std::string tr_out;
  std::string tr_report;
  std::string tr_dump_vn;
  CommonFlags tr_flags;
  tr->add_option("--manifest", tr_manifest, "Manifest JSON")->required();
  tr->add_option("--out", tr_out, "Output checkpoint")->required();
  tr->add_option("--report", tr_report, "Loss-curve report (default: <out>.report.json)");
  tr->add_option("--dump-vn-samples", tr_dump_vn, "Write the first batch's triangle samples as JSON lines");
  tr_flags.add_to(tr);

  // denoise
  auto* dn = app.add_subcommand("denoise", "Denoise a cloud with a trained checkpoint");
  std::string dn_in;
  std::string dn_ckpt;
  std::string dn_out;
  std::string dn_stage = "s3";
  std::string dn_report;
  CommonFlags dn_flags;
  dn->add_option("--in", dn_in, "Noisy cloud (.xyz or .ply)")->required();
  dn->add_option("--ckpt", dn_ckpt, "Checkpoint JSON")->required();
  dn->add_option("--out", dn_out, "Output cloud")->required();
  dn->add_option("--stage", dn_stage, "s1, s2 or s3");
  dn->add_option("--report", dn_report, "Coverage report JSON");
  dn_flags.add_to(dn);

  // eval
  auto* ev = app.add_subcommand("eval", "Score denoised clouds against clean references");
  std::vector<std::string> ev_denoised;
  std::vector<std::string> ev_clean;
  ev->add_option("--denoised", ev_denoised, "Denoised cloud(s)")->required();
  ev->add_option("--clean", ev_clean, "Clean reference(s), paired with --denoised")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and score the S1/S2/S3 ablation");
  std::string ab_manifest;
  std::string ab_out;
  std::string ab_markdown;
  std::vector<std::uint64_t> ab_seeds{1, 2, 3};
  CommonFlags ab_flags;
  ab->add_option("--manifest", ab_manifest, "Manifest JSON")->required();
  ab->add_option("--out", ab_out, "Report JSON")->required();
  ab->add_option("--markdown", ab_markdown, "Also write the table as markdown");
  ab->add_option("--seeds", ab_seeds, "Training seeds")->delimiter(',');
  ab_flags.add_to(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalidArgs;
  }

  try {
    if (gen->parsed()) {
      std::vector<geogcn::ShapeSpec> shapes = gen_shapes.empty() ? geogcn::desk_training_shapes(gen_points)
                                                                 : shapes_from_names(gen_shapes, gen_points, gen_seed);
      std::vector<geogcn::ShapeSpec> tests;
      if (!gen_no_test) tests = geogcn::desk_test_shapes(gen_points);
      const auto manifest = geogcn::build_manifest(shapes, gen_scales, gen_out, tests, gen_test_scales);
      std::cout << nlohmann::json{{"manifest", (fs::path(gen_out) / "manifest.json").string()},
                                  {"entries", manifest.entries.size()}}
                       .dump()
                << '\n';
    } else if (tr->parsed()) {
      const auto cfg = tr_flags.resolve();
      geogcn::TrainOptions options;
      options.log = log_line;
      if (!tr_dump_vn.empty()) options.dump_vn_samples = tr_dump_vn;
      const auto report = geogcn::train(tr_manifest, cfg, tr_out, options);
      write_json_file(report.to_json(), tr_report.empty() ? fs::path(tr_out + ".report.json") : fs::path(tr_report));
    } else if (dn->parsed()) {
      const auto cfg = dn_flags.resolve();
      const auto result = geogcn::denoise(dn_in, dn_ckpt, cfg, geogcn::parse_stage(dn_stage), dn_out);
      if (!dn_report.empty()) write_json_file(result.report(), dn_report);
      std::cout << result.report().dump() << '\n';
    } else if (ev->parsed()) {
      if (ev_denoised.size() != ev_clean.size()) {
        std::cerr << "eval: --denoised and --clean must be given the same number of times\n";
        return kExitInvalidArgs;
      }
      for (std::size_t i = 0; i < ev_denoised.size(); ++i) {
        const auto m = geogcn::evaluate(ev_denoised[i], ev_clean[i]);
        std::cout << nlohmann::json{{"model", fs::path(ev_denoised[i]).stem().string()}, {"cd", m.cd}, {"mse", m.mse}}
                         .dump()
                  << '\n';
      }
    } else if (ab->parsed()) {
      const auto cfg = ab_flags.resolve();
      geogcn::TrainOptions options;
      options.log = log_line;
      const auto report = geogcn::ablate(geogcn::read_manifest(ab_manifest), cfg, ab_seeds, options);
      write_json_file(report.to_json(), ab_out);
      if (!ab_markdown.empty()) {
        std::ofstream md(ab_markdown);
        if (!md) throw geogcn::io_error("cannot open '" + ab_markdown + "' for writing");
        md << report.to_markdown();
      }
      std::cout << report.to_markdown();
    }
  } catch (const geogcn::invalid_argument_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalidArgs;
  } catch (const geogcn::training_divergence_error& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const geogcn::data_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const geogcn::coverage_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const geogcn::degenerate_input_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
