#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <geogcn/cloud_io.hpp>
#include <geogcn/errors.hpp>
#include <geogcn/pipeline.hpp>

#include "test_support.hpp"

#include <unistd.h>

using namespace geogcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("geogcn_pipeline_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Architecture tiny_arch() {
  Architecture a;
  a.sgcn_channels = {3, 16, 16};
  a.ngcn_channels = {6, 16, 16};
  return a;
}

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.patch_size = 32;
  cfg.patches_per_model = 4;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.graph_k = 8;
  cfg.pca_k = 8;
  cfg.vn_count = 20;
  cfg.arch = tiny_arch();
  return cfg;
}

TrainingModel make_model(ShapeKind kind, std::size_t n, std::uint64_t seed, std::vector<double> scales) {
  ShapeSpec s;
  s.kind = kind;
  s.n_points = n;
  s.rng_seed = seed;
  const PointCloud clean = generate_shape(s);
  std::vector<PointCloud> noisy;
  for (std::size_t i = 0; i < scales.size(); ++i) noisy.push_back(corrupt(clean, scales[i], seed * 10 + i).noisy);
  return TrainingModel{to_string(kind), kind, clean, noisy};
}

PointCloud plane_cloud(std::size_t side, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j)
      pts.emplace_back(static_cast<double>(i) / side, static_cast<double>(j) / side, noise > 0 ? g(rng) : 0.0);
  return PointCloud(pts);
}

}  // namespace

TEST(PipelineConfig, DefaultsAndValidation) {
  const PipelineConfig cfg;
  EXPECT_EQ(cfg.patch_size, 128u);
  EXPECT_EQ(cfg.batch_size, 64u);
  EXPECT_EQ(cfg.epochs, 10u);
  EXPECT_DOUBLE_EQ(cfg.weights.alpha, 0.9);
  EXPECT_DOUBLE_EQ(cfg.weights.beta, 0.1);
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.graph_k = bad.patch_size;
  EXPECT_THROW(bad.validate(), invalid_argument_error);
  bad = cfg;
  bad.patch_size = 600;
  EXPECT_THROW(bad.validate(), invalid_argument_error);
  bad = cfg;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), invalid_argument_error);
}

TEST(PipelineConfig, JsonRoundTripAndStrictKeys) {
  auto cfg = tiny_config();
  cfg.train_mode = TrainMode::sequential;
  cfg.filter.literal_scalar_form = true;
  cfg.filter.sigma = 0.45;
  cfg.rng_seed = 99;
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  EXPECT_EQ(back.train_mode, TrainMode::sequential);
  EXPECT_TRUE(back.filter.literal_scalar_form);

  EXPECT_THROW(config_from_json(nlohmann::json{{"patch_szie", 64}}), invalid_argument_error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"filter", {{"sigmaa", 1.0}}}}), invalid_argument_error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"epochs", "ten"}}), invalid_argument_error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"train_mode", "alternating"}}), invalid_argument_error);
  EXPECT_EQ(config_from_json(nlohmann::json{{"epochs", 3}}).epochs, 3u);
}

TEST(Stages, Names) {
  EXPECT_EQ(parse_stage("s3"), AblationStage::s3);
  EXPECT_EQ(parse_stage("S1"), AblationStage::s1);
  EXPECT_EQ(to_string(AblationStage::s2), "s2");
  EXPECT_THROW(parse_stage("s4"), invalid_argument_error);
  EXPECT_EQ(parse_train_mode("joint"), TrainMode::joint);
}

TEST(Stages, Weights) {
  const LossWeights full{0.9, 0.1};
  const auto s1 = stage_weights(AblationStage::s1, full);
  const auto s2 = stage_weights(AblationStage::s2, full);
  const auto s3 = stage_weights(AblationStage::s3, full);
  EXPECT_EQ(s1.alpha, 1.0);
  EXPECT_EQ(s1.beta, 0.0);
  EXPECT_EQ(s2.alpha, 0.9);
  EXPECT_EQ(s2.beta, 0.0);
  EXPECT_EQ(s3.alpha, 0.9);
  EXPECT_EQ(s3.beta, 0.1);
}

TEST(TrainingPatch, IndexAlignedAndNormalized) {
  const auto model = make_model(ShapeKind::sphere, 400, 1, {0.01});
  const KdTree tree(model.noisy[0].positions());
  const auto cfg = tiny_config();
  const auto patch = make_training_patch(model.noisy[0], tree, model.clean, 17, cfg, 5);
  ASSERT_EQ(patch.noisy.size(), cfg.patch_size);
  ASSERT_EQ(patch.clean.size(), cfg.patch_size);
  ASSERT_EQ(patch.clean_normals.size(), cfg.patch_size);
  EXPECT_EQ(patch.noisy[0], Vec3::Zero());
  double reach = 0.0;
  for (const auto& p : patch.noisy) reach = std::max(reach, p.norm());
  EXPECT_NEAR(reach, 1.0, 1e-12);
  for (const auto& n : patch.clean_normals) EXPECT_NEAR(n.norm(), 1.0, 1e-12);
  ASSERT_TRUE(patch.vn.has_value());
  EXPECT_EQ(patch.vn->size(), cfg.vn_count);
  for (const auto& s : patch.vn->samples) {
    EXPECT_TRUE(triangle_is_valid(patch.clean[s.indices[0]], patch.clean[s.indices[1]], patch.clean[s.indices[2]],
                                  patch.vn->edge_threshold));
  }
}

TEST(TrainingPatch, NoVnSetWithoutVnWeight) {
  const auto model = make_model(ShapeKind::cube, 300, 2, {0.01});
  const KdTree tree(model.noisy[0].positions());
  auto cfg = tiny_config();
  cfg.weights = {1.0, 0.0};
  EXPECT_FALSE(make_training_patch(model.noisy[0], tree, model.clean, 0, cfg, 1).vn.has_value());
}

TEST(PatchLoss, IdentityNetworkOnCleanPatchHasZeroSpatialLoss) {
  const auto model = make_model(ShapeKind::sphere, 300, 3, {0.01});
  const KdTree clean_tree(model.clean.positions());
  const auto cfg = tiny_config();
  const auto params = NetworkParams::initialize(cfg.arch, 4);
  const auto patch = make_training_patch(model.clean, clean_tree, model.clean, 7, cfg, 8);
  const auto loss = patch_loss(params, patch, cfg, cfg.weights, {true, true});
  EXPECT_NEAR(loss.emd.item(), 0.0, 1e-15);
  EXPECT_NEAR(loss.vn.item(), 0.0, 1e-12);
  EXPECT_GE(loss.rn.item(), 0.0);
  EXPECT_NEAR(loss.total.item(), 0.1 * loss.rn.item(), 1e-12);
}

TEST(PatchLoss, TermsSelectWhichNetworksReceiveGradients) {
  const auto model = make_model(ShapeKind::torus, 400, 5, {0.01});
  const KdTree tree(model.noisy[0].positions());
  const auto cfg = tiny_config();
  auto params = NetworkParams::initialize(cfg.arch, 6);
  const auto patch = make_training_patch(model.noisy[0], tree, model.clean, 3, cfg, 9);

  ad::backward(patch_loss(params, patch, cfg, cfg.weights, {true, false}).total);
  EXPECT_TRUE(params.sgcn.head_w.has_grad());
  EXPECT_FALSE(params.ngcn.head_w.has_grad());
  params.zero_grad();

  const auto only_normal = patch_loss(params, patch, cfg, cfg.weights, {false, true});
  EXPECT_EQ(only_normal.emd.item(), 0.0);
  ad::backward(only_normal.total);
  EXPECT_FALSE(params.sgcn.head_w.has_grad());
  EXPECT_TRUE(params.ngcn.head_w.has_grad());
}

TEST(PatchLoss, CompositeGradientMatchesFiniteDifferences) {
  const auto model = make_model(ShapeKind::sphere, 300, 7, {0.01});
  const KdTree tree(model.noisy[0].positions());
  auto cfg = tiny_config();
  cfg.patch_size = 16;
  cfg.graph_k = 6;
  cfg.pca_k = 6;
  cfg.vn_count = 8;
  cfg.arch.sgcn_channels = {3, 8, 8};
  cfg.arch.ngcn_channels = {6, 8, 8};
  auto params = NetworkParams::initialize(cfg.arch, 8);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& [name, p] : params.named_parameters())
    for (Eigen::Index i = 0; i < p.value().size(); ++i) p.mutable_value().data()[i] = u(rng);
  const auto patch = make_training_patch(model.noisy[0], tree, model.clean, 11, cfg, 12);
  ASSERT_TRUE(patch.vn.has_value());
  // The N-GCN input (positions and PCA normals) is a stop-gradient, so S-GCN
  // parameters see only the spatial terms and N-GCN parameters see the full objective.
  std::vector<ad::DiffArray> sgcn, ngcn;
  for (auto& [name, p] : params.named_parameters(ParamGroup::sgcn)) sgcn.push_back(p);
  for (auto& [name, p] : params.named_parameters(ParamGroup::ngcn)) ngcn.push_back(p);
  const auto spatial = geogcn::testing::check_gradients(
      [&] { return patch_loss(params, patch, cfg, cfg.weights, {true, false}).total; }, sgcn);
  const auto full = geogcn::testing::check_gradients(
      [&] { return patch_loss(params, patch, cfg, cfg.weights, {true, true}).total; }, ngcn);
  EXPECT_LT(spatial.max_relative_error, 1e-4);
  EXPECT_LT(full.max_relative_error, 1e-4);

  params.zero_grad();
  ad::backward(patch_loss(params, patch, cfg, cfg.weights, {true, true}).total);
  std::vector<ad::Matrix> with_rn;
  for (const auto& p : sgcn) with_rn.push_back(p.grad());
  params.zero_grad();
  ad::backward(patch_loss(params, patch, cfg, cfg.weights, {true, false}).total);
  for (std::size_t i = 0; i < sgcn.size(); ++i) EXPECT_EQ(sgcn[i].grad(), with_rn[i]);
  params.zero_grad();
}

TEST(Train, BookkeepingForTinyRun) {
  const std::vector<TrainingModel> models{make_model(ShapeKind::sphere, 300, 10, {0.005})};
  TrainingReport report;
  const auto params = train(models, tiny_config(), report);
  ASSERT_EQ(report.batches.size(), 1u);
  EXPECT_EQ(report.batches[0].patches, 4u);
  EXPECT_EQ(report.epoch_total.size(), 1u);
  EXPECT_TRUE(std::isfinite(report.batches[0].total));
  EXPECT_TRUE(std::isfinite(report.batches[0].emd));
  EXPECT_EQ(params.epoch, 1u);
  const auto j = report.to_json();
  EXPECT_EQ(j.at("batches").size(), 1u);
}

TEST(Train, BatchLargerThanAvailablePatchesIsRejected) {
  const std::vector<TrainingModel> models{make_model(ShapeKind::sphere, 300, 10, {0.005})};
  auto cfg = tiny_config();
  cfg.batch_size = 64;
  TrainingReport report;
  EXPECT_THROW(train(models, cfg, report), invalid_argument_error);
}

TEST(Train, MissingCleanNormalsIsInvalidManifest) {
  auto model = make_model(ShapeKind::sphere, 300, 10, {0.005});
  model.clean = model.clean.without_normals();
  TrainingReport report;
  EXPECT_THROW(train({model}, tiny_config(), report), invalid_manifest_error);
}

TEST(Train, EqualSeedsGiveIdenticalCurvesAndParameters) {
  const std::vector<TrainingModel> models{make_model(ShapeKind::cube, 300, 11, {0.005, 0.01}),
                                          make_model(ShapeKind::torus, 300, 12, {0.005})};
  auto cfg = tiny_config();
  cfg.epochs = 2;
  cfg.batch_size = 3;
  TrainingReport a, b;
  const auto pa = train(models, cfg, a);
  const auto pb = train(models, cfg, b);
  ASSERT_EQ(a.batches.size(), b.batches.size());
  EXPECT_EQ(a.batches.size(), 2u * 3u);
  for (std::size_t i = 0; i < a.batches.size(); ++i) {
    EXPECT_EQ(a.batches[i].total, b.batches[i].total);
    EXPECT_EQ(a.batches[i].lr, b.batches[i].lr);
  }
  EXPECT_EQ(checkpoint_to_json(pa).dump(), checkpoint_to_json(pb).dump());
  cfg.rng_seed = 2;
  TrainingReport c;
  train(models, cfg, c);
  EXPECT_NE(c.batches[0].total, a.batches[0].total);
}

TEST(Train, SequentialModeRunsTwoPhases) {
  const std::vector<TrainingModel> models{make_model(ShapeKind::sphere, 300, 13, {0.005})};
  auto cfg = tiny_config();
  cfg.train_mode = TrainMode::sequential;
  TrainingReport report;
  train(models, cfg, report);
  ASSERT_EQ(report.batches.size(), 2u);
  EXPECT_EQ(report.batches[0].phase, 0u);
  EXPECT_EQ(report.batches[1].phase, 1u);
  EXPECT_EQ(report.batches[1].emd, 0.0);
  EXPECT_GT(report.batches[1].rn, 0.0);
}

TEST(Train, DumpsVnSamples) {
  const auto dir = scratch("vn_dump");
  const std::vector<TrainingModel> models{make_model(ShapeKind::sphere, 300, 14, {0.005})};
  TrainOptions opts;
  opts.dump_vn_samples = dir / "vn.jsonl";
  TrainingReport report;
  train(models, tiny_config(), report, opts);
  std::ifstream in(dir / "vn.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("samples").size(), 20u);
  }
  EXPECT_EQ(lines, 4u);
  fs::remove_all(dir);
}

TEST(Denoise, ZeroHeadStageOneIsIdentity) {
  const auto cfg = tiny_config();
  const auto params = NetworkParams::initialize(cfg.arch, 15);
  const auto noisy = make_model(ShapeKind::torus, 500, 16, {0.01}).noisy[0];
  const auto result = denoise(noisy, params, cfg, AblationStage::s1);
  EXPECT_EQ(result.cloud.positions(), noisy.positions());
  EXPECT_GE(result.min_coverage, 1u);
  EXPECT_TRUE(result.report().at("covered").get<bool>());
  EXPECT_TRUE(result.cloud.has_normals());
}

TEST(Denoise, CoversEveryPointAndIsDeterministic) {
  auto cfg = tiny_config();
  auto params = NetworkParams::initialize(cfg.arch, 17);
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& [name, p] : params.named_parameters())
    for (Eigen::Index i = 0; i < p.value().size(); ++i) p.mutable_value().data()[i] += u(rng);
  const auto noisy = make_model(ShapeKind::cube, 700, 19, {0.01}).noisy[0];
  const auto a = denoise(noisy, params, cfg, AblationStage::s3);
  const auto b = denoise(noisy, params, cfg, AblationStage::s3);
  EXPECT_GE(a.min_coverage, 1u);
  EXPECT_GE(a.patches, noisy.size() / cfg.patch_size);
  EXPECT_EQ(a.cloud.positions(), b.cloud.positions());
  EXPECT_EQ(a.cloud.normals(), b.cloud.normals());
  for (const auto& n : a.cloud.normals()) EXPECT_NEAR(n.norm(), 1.0, 1e-9);
}

TEST(Denoise, StageThreeReducesErrorOnPlane) {
  const auto cfg = tiny_config();
  const auto params = NetworkParams::initialize(cfg.arch, 20);
  const auto clean = plane_cloud(30, 0.0, 0);
  const auto noisy = plane_cloud(30, 0.01, 21);
  const auto out = denoise(noisy, params, cfg, AblationStage::s3);
  EXPECT_LT(mse_to_reference(out.cloud, clean), mse_to_reference(noisy, clean));
}

TEST(Denoise, ArchitectureMismatchIsRejected) {
  const auto cfg = tiny_config();
  const auto params = NetworkParams::initialize(Architecture{}, 22);
  const auto noisy = plane_cloud(10, 0.01, 23);
  EXPECT_THROW(denoise(noisy, params, cfg, AblationStage::s1), invalid_argument_error);
}

TEST(FilePipeline, TrainDenoiseEvaluateAreByteReproducible) {
  const auto dir = scratch("files");
  ShapeSpec s;
  s.kind = ShapeKind::sphere;
  s.n_points = 300;
  s.rng_seed = 24;
  s.name = "ball";
  build_manifest({s}, {0.005}, dir);
  const auto cfg = tiny_config();
  train(dir / "manifest.json", cfg, dir / "a.ckpt");
  train(dir / "manifest.json", cfg, dir / "b.ckpt");
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  denoise(dir / "ball_noisy_0.0050.xyz", dir / "a.ckpt", cfg, AblationStage::s3, dir / "a.xyz");
  denoise(dir / "ball_noisy_0.0050.xyz", dir / "b.ckpt", cfg, AblationStage::s3, dir / "b.xyz");
  EXPECT_EQ(slurp(dir / "a.xyz"), slurp(dir / "b.xyz"));
  EXPECT_TRUE(read_cloud(dir / "a.xyz").has_normals());

  const auto same = evaluate(dir / "ball_clean.xyz", dir / "ball_clean.xyz");
  EXPECT_EQ(same.cd, 0.0);
  EXPECT_EQ(same.mse, 0.0);
  fs::remove_all(dir);
}

TEST(Evaluate, NoisySphereMatchesGaussianExpectation) {
  const auto dir = scratch("eval");
  ShapeSpec s;
  s.kind = ShapeKind::sphere;
  s.n_points = 5000;
  s.rng_seed = 25;
  s.name = "ball";
  build_manifest({s}, {0.005}, dir);
  const auto m = evaluate(dir / "ball_noisy_0.0050.xyz", dir / "ball_clean.xyz");
  const auto r = evaluate(dir / "ball_clean.xyz", dir / "ball_noisy_0.0050.xyz");
  EXPECT_GT(m.cd, 0.0);
  EXPECT_GT(m.mse, 0.0);
  // Per-axis std is 0.005 of the diagonal, which is about unit length after normalisation.
  const double var = 3.0 * 0.005 * 0.005;
  EXPECT_LE(m.mse, 3.0 * var);
  EXPECT_GE(m.mse, var / 3.0);
  EXPECT_NEAR(m.cd, r.cd, 1e-15);
  EXPECT_NE(m.mse, r.mse);
  fs::remove_all(dir);
}

TEST(Ablate, ReportShapeAndInputRow) {
  const auto dir = scratch("ablate");
  ShapeSpec cube;
  cube.kind = ShapeKind::cube;
  cube.n_points = 200;
  cube.rng_seed = 26;
  cube.name = "box";
  ShapeSpec ball = cube;
  ball.kind = ShapeKind::sphere;
  ball.name = "ball";
  ShapeSpec test_cube = cube;
  test_cube.rng_seed = 27;
  test_cube.name = "tbox";
  ShapeSpec test_ball = ball;
  test_ball.rng_seed = 28;
  test_ball.name = "tball";
  const auto manifest = build_manifest({cube, ball}, {0.005}, dir, {test_cube, test_ball}, {0.005});
  auto cfg = tiny_config();
  cfg.batch_size = 2;
  const auto report = ablate(manifest, cfg, {1, 2});
  ASSERT_EQ(report.runs.size(), 2u);
  const auto j = report.to_json();
  ASSERT_EQ(j.at("table").size(), 4u);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(j["table"][r]["row"], AblationReport::kRows[r]);
    EXPECT_TRUE(j["table"][r].contains("CAD"));
    EXPECT_TRUE(j["table"][r].contains("non-CAD"));
  }
  const auto in_cad = evaluate(dir / "tbox_noisy_0.0050.xyz", dir / "tbox_clean.xyz");
  const auto in_smooth = evaluate(dir / "tball_noisy_0.0050.xyz", dir / "tball_clean.xyz");
  EXPECT_NEAR(report.median[0][0].mse, in_cad.mse, 1e-15);
  EXPECT_NEAR(report.median[0][1].mse, in_smooth.mse, 1e-15);
  EXPECT_NEAR(report.median[0][2].mse, 0.5 * (in_cad.mse + in_smooth.mse), 1e-15);
  const auto md = report.to_markdown();
  EXPECT_NE(md.find("| S3 |"), std::string::npos);
  fs::remove_all(dir);
}
