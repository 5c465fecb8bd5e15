#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include <geogcn/bilateral_filter.hpp>
#include <geogcn/dataset.hpp>
#include <geogcn/kd_tree.hpp>
#include <geogcn/losses.hpp>
#include <geogcn/metrics.hpp>
#include <geogcn/network.hpp>
#include <geogcn/virtual_normal.hpp>

namespace geogcn {

enum class TrainMode { joint, sequential };
enum class AblationStage { s1, s2, s3 };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& s);
std::string to_string(AblationStage stage);
AblationStage parse_stage(const std::string& s);

struct PipelineConfig {
  std::size_t patch_size = 128;
  std::size_t patches_per_model = 256;  // per clean shape and epoch
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  LossWeights weights;
  std::size_t vn_count = 100;            // triangles per patch
  double edge_threshold_fraction = 0.1;  // of the clean patch's bounding-box diagonal
  FilterConfig filter;
  std::uint64_t rng_seed = 1;
  TrainMode train_mode = TrainMode::joint;

  std::size_t graph_k = 16;  // EdgeConv neighbourhood
  std::size_t pca_k = 16;    // initial normal neighbourhood
  // Desk-scale runs take about 1% of the optimiser steps of a full run, so the
  // schedule starts higher and keeps the same 1000x decay.
  double lr_start = 5e-2;
  double lr_end = 5e-5;
  double momentum = 0.9;
  Architecture arch;
  std::size_t max_exact_assignment = kDefaultMaxExactAssignment;

  void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

struct BatchRecord {
  std::size_t phase = 0;  // 0 for joint training; 0/1 for the two sequential phases
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::size_t patches = 0;
  double lr = 0.0;
  double emd = 0.0;  // means over the batch's patches
  double vn = 0.0;
  double rn = 0.0;
  double total = 0.0;
};

struct TrainingReport {
  std::vector<BatchRecord> batches;
  std::vector<double> epoch_total;  // mean patch total per epoch (phase 0)
  std::size_t vn_skipped = 0;       // patches without enough valid triangles
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::function<void(const std::string&)> log;
  std::optional<std::filesystem::path> dump_vn_samples;  // JSON lines, first batch
};

/// A paired noisy/clean training model kept in memory.
struct TrainingModel {
  std::string name;
  ShapeKind kind = ShapeKind::sphere;
  PointCloud clean;
  std::vector<PointCloud> noisy;  // noise variants, index-aligned with clean
};

std::vector<TrainingModel> load_training_models(const Manifest& manifest, const std::string& split = "train");

/// Loss terms of one patch under the given parameters.
struct PatchLoss {
  ad::DiffArray emd;
  ad::DiffArray vn;
  ad::DiffArray rn;
  ad::DiffArray total;
};

/// Training example in patch coordinates: noisy input, index-aligned clean targets.
struct TrainingPatch {
  std::vector<Vec3> noisy;
  std::vector<Vec3> clean;
  std::vector<Vec3> clean_normals;
  EdgeList edges;
  std::optional<VnSampleSet> vn;
};

TrainingPatch make_training_patch(const PointCloud& noisy, const KdTree& noisy_tree, const PointCloud& clean,
                                  Index seed, const PipelineConfig& cfg, std::uint64_t vn_seed);

/// Initial normals of the (detached) S-GCN output via PCA over its kNN.
std::vector<Vec3> initial_normals(std::span<const Vec3> points, std::size_t pca_k);

/// Which halves of the objective a forward pass evaluates.
struct LossTerms {
  bool spatial = true;  // S-GCN with EMD and VN
  bool normal = true;   // N-GCN with RN on PCA normals of the detached S-GCN output
};

/// Per-patch objective alpha*EMD + (1-alpha)*VN + beta*RN restricted to `terms`.
/// Terms that are not evaluated are zero constants.
PatchLoss patch_loss(const NetworkParams& params, const TrainingPatch& patch, const PipelineConfig& cfg,
                     const LossWeights& weights, LossTerms terms);

NetworkParams train(const std::vector<TrainingModel>& models, const PipelineConfig& cfg, TrainingReport& report,
                    const TrainOptions& options = {});
TrainingReport train(const std::filesystem::path& manifest, const PipelineConfig& cfg,
                     const std::filesystem::path& out_checkpoint, const TrainOptions& options = {});

struct DenoiseResult {
  PointCloud cloud;
  std::size_t patches = 0;
  std::size_t min_coverage = 0;
  std::size_t max_coverage = 0;

  nlohmann::json report() const;
};

/// Covers the cloud with patches seeded by farthest-point sampling, runs the
/// networks per patch, averages overlapping predictions and, for S3, applies
/// the normal-guided filter to the merged cloud.
DenoiseResult denoise(const PointCloud& noisy, const NetworkParams& params, const PipelineConfig& cfg,
                      AblationStage stage);
DenoiseResult denoise(const std::filesystem::path& cloud_path, const std::filesystem::path& checkpoint,
                      const PipelineConfig& cfg, AblationStage stage, const std::filesystem::path& out_path);

Metrics evaluate(const std::filesystem::path& denoised, const std::filesystem::path& clean);

/// Weights used to train each ablation stage.
LossWeights stage_weights(AblationStage stage, const LossWeights& full);

struct AblationCell {
  double mse = 0.0;
  double cd = 0.0;
};

struct AblationRun {
  std::uint64_t seed = 0;
  // rows Input, S1, S2, S3; columns CAD, non-CAD, all
  std::array<std::array<AblationCell, 3>, 4> cells{};
  std::array<double, 3> seconds{};  // train + denoise wall time per stage S1..S3
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::array<std::array<AblationCell, 3>, 4> median{};

  static constexpr std::array<const char*, 4> kRows{"Input", "S1", "S2", "S3"};
  static constexpr std::array<const char*, 3> kColumns{"CAD", "non-CAD", "all"};

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

/// Trains one model per stage and seed on the training split and scores MSE on
/// the test split (the training split when no test entries exist).
AblationReport ablate(const Manifest& manifest, const PipelineConfig& cfg, const std::vector<std::uint64_t>& seeds,
                      const TrainOptions& options = {});

}  // namespace geogcn
