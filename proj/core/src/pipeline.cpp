#include <geogcn/pipeline.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include <geogcn/cloud_io.hpp>
#include <geogcn/errors.hpp>
#include <geogcn/random.hpp>

namespace geogcn {

using nlohmann::json;

std::string to_string(TrainMode mode) { return mode == TrainMode::joint ? "joint" : "sequential"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "joint") return TrainMode::joint;
  if (s == "sequential") return TrainMode::sequential;
  throw invalid_argument_error("unknown train mode '" + s + "' (expected joint or sequential)");
}

std::string to_string(AblationStage stage) {
  switch (stage) {
    case AblationStage::s1:
      return "s1";
    case AblationStage::s2:
      return "s2";
    case AblationStage::s3:
      return "s3";
  }
  return "s3";
}

AblationStage parse_stage(const std::string& s) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "s1") return AblationStage::s1;
  if (lower == "s2") return AblationStage::s2;
  if (lower == "s3") return AblationStage::s3;
  throw invalid_argument_error("unknown stage '" + s + "' (expected s1, s2 or s3)");
}

void PipelineConfig::validate() const {
  if (patch_size < 3) throw invalid_argument_error("patch_size must be at least 3");
  if (patches_per_model == 0 || batch_size == 0 || epochs == 0) {
    throw invalid_argument_error("patches_per_model, batch_size and epochs must be positive");
  }
  if (graph_k == 0 || graph_k >= patch_size) throw invalid_argument_error("graph_k must lie in [1, patch_size)");
  if (pca_k < 2) throw invalid_argument_error("pca_k must be at least 2");
  if (!(edge_threshold_fraction >= 0.0)) throw invalid_argument_error("edge_threshold_fraction must be non-negative");
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw invalid_argument_error("learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw invalid_argument_error("momentum must lie in [0, 1)");
  if (patch_size > max_exact_assignment) {
    throw invalid_argument_error("patch_size " + std::to_string(patch_size) + " exceeds the exact assignment limit " +
                                 std::to_string(max_exact_assignment) + "; reduce the patch size");
  }
  weights.validate();
  filter.validate();
}

json config_to_json(const PipelineConfig& cfg) {
  return {
      {"patch_size", cfg.patch_size},
      {"patches_per_model", cfg.patches_per_model},
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"alpha", cfg.weights.alpha},
      {"beta", cfg.weights.beta},
      {"vn_count", cfg.vn_count},
      {"edge_threshold_fraction", cfg.edge_threshold_fraction},
      {"filter",
       {{"lambda", cfg.filter.lambda},
        {"sigma", cfg.filter.sigma},
        {"iterations", cfg.filter.iterations},
        {"k_neighbors", cfg.filter.k_neighbors},
        {"eq5_literal", cfg.filter.literal_scalar_form}}},
      {"rng_seed", cfg.rng_seed},
      {"train_mode", to_string(cfg.train_mode)},
      {"graph_k", cfg.graph_k},
      {"pca_k", cfg.pca_k},
      {"lr_start", cfg.lr_start},
      {"lr_end", cfg.lr_end},
      {"momentum", cfg.momentum},
      {"architecture",
       {{"sgcn_channels", cfg.arch.sgcn_channels},
        {"ngcn_channels", cfg.arch.ngcn_channels},
        {"leaky_slope", cfg.arch.leaky_slope}}},
      {"max_exact_assignment", cfg.max_exact_assignment},
  };
}

PipelineConfig config_from_json(const json& j) {
  if (!j.is_object()) throw invalid_argument_error("config must be a JSON object");
  PipelineConfig cfg;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "patch_size") {
        cfg.patch_size = v.get<std::size_t>();
      } else if (key == "patches_per_model") {
        cfg.patches_per_model = v.get<std::size_t>();
      } else if (key == "batch_size") {
        cfg.batch_size = v.get<std::size_t>();
      } else if (key == "epochs") {
        cfg.epochs = v.get<std::size_t>();
      } else if (key == "alpha") {
        cfg.weights.alpha = v.get<double>();
      } else if (key == "beta") {
        cfg.weights.beta = v.get<double>();
      } else if (key == "vn_count") {
        cfg.vn_count = v.get<std::size_t>();
      } else if (key == "edge_threshold_fraction") {
        cfg.edge_threshold_fraction = v.get<double>();
      } else if (key == "filter") {
        for (const auto& [fk, fv] : v.items()) {
          if (fk == "lambda") {
            cfg.filter.lambda = fv.get<double>();
          } else if (fk == "sigma") {
            cfg.filter.sigma = fv.get<double>();
          } else if (fk == "iterations") {
            cfg.filter.iterations = fv.get<std::size_t>();
          } else if (fk == "k_neighbors") {
            cfg.filter.k_neighbors = fv.get<std::size_t>();
          } else if (fk == "eq5_literal") {
            cfg.filter.literal_scalar_form = fv.get<bool>();
          } else {
            throw invalid_argument_error("unknown filter config key '" + fk + "'");
          }
        }
      } else if (key == "rng_seed") {
        cfg.rng_seed = v.get<std::uint64_t>();
      } else if (key == "train_mode") {
        cfg.train_mode = parse_train_mode(v.get<std::string>());
      } else if (key == "graph_k") {
        cfg.graph_k = v.get<std::size_t>();
      } else if (key == "pca_k") {
        cfg.pca_k = v.get<std::size_t>();
      } else if (key == "lr_start") {
        cfg.lr_start = v.get<double>();
      } else if (key == "lr_end") {
        cfg.lr_end = v.get<double>();
      } else if (key == "momentum") {
        cfg.momentum = v.get<double>();
      } else if (key == "architecture") {
        cfg.arch.sgcn_channels = v.at("sgcn_channels").get<std::vector<std::size_t>>();
        cfg.arch.ngcn_channels = v.at("ngcn_channels").get<std::vector<std::size_t>>();
        cfg.arch.leaky_slope = v.value("leaky_slope", cfg.arch.leaky_slope);
      } else if (key == "max_exact_assignment") {
        cfg.max_exact_assignment = v.get<std::size_t>();
      } else {
        throw invalid_argument_error("unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw invalid_argument_error(std::string("malformed config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw invalid_argument_error("cannot parse config '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

json TrainingReport::to_json() const {
  json b = json::array();
  for (const auto& r : batches) {
    b.push_back({{"phase", r.phase},
                 {"epoch", r.epoch},
                 {"batch", r.batch},
                 {"patches", r.patches},
                 {"lr", r.lr},
                 {"emd", r.emd},
                 {"vn", r.vn},
                 {"rn", r.rn},
                 {"total", r.total}});
  }
  return {{"batches", b}, {"epoch_total", epoch_total}, {"vn_skipped", vn_skipped}, {"seconds", seconds}};
}

std::vector<TrainingModel> load_training_models(const Manifest& manifest, const std::string& split) {
  std::vector<TrainingModel> models;
  std::map<std::string, std::size_t> by_clean;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    const std::string key = e.clean.lexically_normal().string();
    auto it = by_clean.find(key);
    if (it == by_clean.end()) {
      PointCloud clean = read_cloud(e.clean);
      if (!clean.has_normals()) {
        throw invalid_manifest_error("clean cloud '" + e.clean.string() + "' carries no normals");
      }
      it = by_clean.emplace(key, models.size()).first;
      models.push_back({e.clean.stem().string(), e.kind, std::move(clean), {}});
    }
    TrainingModel& m = models[it->second];
    PointCloud noisy = read_cloud(e.noisy);
    if (noisy.size() != m.clean.size()) {
      throw invalid_manifest_error("noisy cloud '" + e.noisy.string() + "' is not index-aligned with its clean cloud");
    }
    m.noisy.push_back(std::move(noisy));
  }
  if (models.empty()) throw invalid_manifest_error("manifest has no '" + split + "' entries");
  return models;
}

std::vector<Vec3> initial_normals(std::span<const Vec3> points, std::size_t pca_k) {
  const std::size_t k = std::min(pca_k, points.size() - 1);
  return estimate_all_normals(points, build_knn_graph(points, k));
}

TrainingPatch make_training_patch(const PointCloud& noisy, const KdTree& noisy_tree, const PointCloud& clean,
                                  Index seed, const PipelineConfig& cfg, std::uint64_t vn_seed) {
  const std::size_t k = std::min(cfg.patch_size, noisy.size());
  const Patch patch = extract_patch(noisy_tree, seed, k);

  TrainingPatch out;
  out.noisy = patch.normalized_positions(noisy.positions());
  out.clean = patch.normalized_positions(clean.positions());
  out.clean_normals.reserve(k);
  for (Index i : patch.member_indices) out.clean_normals.push_back(clean.normals()[i]);
  out.edges = EdgeList::from_graph(build_knn_graph(out.noisy, std::min(cfg.graph_k, k - 1)));

  if (cfg.vn_count > 0 && cfg.weights.alpha < 1.0) {
    Vec3 lo = out.clean.front();
    Vec3 hi = lo;
    for (const auto& p : out.clean) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double threshold = cfg.edge_threshold_fraction * (hi - lo).norm();
    try {
      out.vn = sample_vn_set(out.clean, cfg.vn_count, threshold, vn_seed);
    } catch (const sampling_exhausted_error&) {
      out.vn.reset();
    }
  }
  return out;
}

PatchLoss patch_loss(const NetworkParams& params, const TrainingPatch& patch, const PipelineConfig& cfg,
                     const LossWeights& weights, LossTerms terms) {
  PatchLoss loss;
  loss.emd = ad::DiffArray::scalar(0.0);
  loss.vn = ad::DiffArray::scalar(0.0);
  loss.rn = ad::DiffArray::scalar(0.0);

  const auto input = ad::DiffArray::from_rows(patch.noisy);
  ad::DiffArray pred;
  if (terms.spatial) {
    pred = forward_sgcn(params, input, patch.edges);
  } else {
    ad::NoGradGuard frozen;
    pred = forward_sgcn(params, input, patch.edges);
  }
  if (!std::isfinite(pred.value().squaredNorm())) throw training_divergence_error("patch_loss: S-GCN output is not finite");
  ad::DiffArray total = ad::DiffArray::scalar(0.0);
  if (terms.spatial) {
    loss.emd = emd_loss(pred, patch.clean, cfg.max_exact_assignment);
    total = total + loss.emd * weights.alpha;
    if (weights.alpha < 1.0 && patch.vn) {
      loss.vn = vn_loss(pred, patch.clean, *patch.vn);
      total = total + loss.vn * (1.0 - weights.alpha);
    }
  }
  if (terms.normal) {
    std::vector<Vec3> points(patch.noisy.size());
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = pred.row3(static_cast<Eigen::Index>(i));
    const auto rn0 = initial_normals(points, cfg.pca_k);
    const auto features = ad::concat_cols(ad::DiffArray::from_rows(points), ad::DiffArray::from_rows(rn0));
    const auto fine = forward_ngcn(params, features, patch.edges);
    loss.rn = rn_loss(fine, patch.clean_normals);
    total = total + loss.rn * weights.beta;
  }
  loss.total = total;
  return loss;
}

namespace {

struct Phase {
  LossWeights weights;
  LossTerms terms;
  ParamGroup group;
};

struct PatchJob {
  std::size_t model;
  std::size_t variant;
  Index seed;
  std::uint64_t vn_seed;
};

std::vector<PatchJob> epoch_jobs(const std::vector<TrainingModel>& models, const PipelineConfig& cfg,
                                 std::mt19937_64& rng) {
  std::vector<PatchJob> jobs;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const std::size_t n = models[m].clean.size();
    const std::size_t take = std::min(cfg.patches_per_model, n);
    // Partial Fisher-Yates: seeds without replacement.
    std::vector<Index> idx(n);
    std::iota(idx.begin(), idx.end(), Index{0});
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::uniform_int_distribution<std::size_t> variant(0, models[m].noisy.size() - 1);
    for (std::size_t i = 0; i < take; ++i) jobs.push_back({m, variant(rng), idx[i], rng()});
  }
  std::shuffle(jobs.begin(), jobs.end(), rng);
  return jobs;
}

void emit(const TrainOptions& options, const std::string& msg) {
  if (options.log) options.log(msg);
}

}  // namespace

NetworkParams train(const std::vector<TrainingModel>& models, const PipelineConfig& cfg, TrainingReport& report,
                    const TrainOptions& options) {
  cfg.validate();
  if (models.empty()) throw invalid_argument_error("train: no training models");
  std::size_t total_patches = 0;
  for (const auto& m : models) {
    if (m.noisy.empty()) throw invalid_manifest_error("model '" + m.name + "' has no noisy variants");
    if (!m.clean.has_normals()) throw invalid_manifest_error("model '" + m.name + "' has no clean normals");
    total_patches += std::min(cfg.patches_per_model, m.clean.size());
  }
  if (cfg.batch_size > cfg.patches_per_model * models.size()) {
    throw invalid_argument_error("batch_size exceeds patches_per_model x number of models");
  }

  const auto start = std::chrono::steady_clock::now();
  NetworkParams params = NetworkParams::initialize(cfg.arch, cfg.rng_seed);

  std::vector<std::vector<KdTree>> trees(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (const auto& noisy : models[m].noisy) trees[m].emplace_back(noisy.positions());
  }

  const bool use_normals = cfg.weights.beta > 0.0;
  std::vector<Phase> phases;
  if (cfg.train_mode == TrainMode::joint) {
    phases.push_back({cfg.weights, {true, use_normals}, ParamGroup::all});
  } else {
    phases.push_back({cfg.weights, {true, false}, ParamGroup::sgcn});
    if (use_normals) phases.push_back({cfg.weights, {false, true}, ParamGroup::ngcn});
  }

  std::ofstream vn_dump;
  if (options.dump_vn_samples) {
    vn_dump.open(*options.dump_vn_samples, std::ios::binary | std::ios::trunc);
    if (!vn_dump) throw io_error("cannot open '" + options.dump_vn_samples->string() + "' for writing");
  }

  report = TrainingReport{};
  for (std::size_t ph = 0; ph < phases.size(); ++ph) {
    const Phase& phase = phases[ph];
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double lr = lr_schedule(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
      std::mt19937_64 rng(derive_seed(cfg.rng_seed, {0x7472616eULL, ph, epoch}));
      const auto jobs = epoch_jobs(models, cfg, rng);

      double epoch_sum = 0.0;
      std::size_t batch_index = 0;
      for (std::size_t b0 = 0; b0 < jobs.size(); b0 += cfg.batch_size, ++batch_index) {
        const std::size_t b1 = std::min(jobs.size(), b0 + cfg.batch_size);
        const double inv = 1.0 / static_cast<double>(b1 - b0);
        BatchRecord rec;
        rec.phase = ph;
        rec.epoch = epoch;
        rec.batch = batch_index;
        rec.patches = b1 - b0;
        rec.lr = lr;
        for (std::size_t j = b0; j < b1; ++j) {
          const PatchJob& job = jobs[j];
          const TrainingModel& model = models[job.model];
          const TrainingPatch patch = make_training_patch(model.noisy[job.variant], trees[job.model][job.variant],
                                                          model.clean, job.seed, cfg, job.vn_seed);
          if (phase.terms.spatial && cfg.weights.alpha < 1.0 && cfg.vn_count > 0 && !patch.vn) ++report.vn_skipped;
          if (vn_dump.is_open() && ph == 0 && epoch == 0 && batch_index == 0 && patch.vn) {
            vn_dump << patch.vn->to_json() << '\n';
          }

          const PatchLoss loss = patch_loss(params, patch, cfg, phase.weights, phase.terms);
          const double total = loss.total.item();
          if (!std::isfinite(total)) {
            std::ostringstream msg;
            msg << "non-finite loss at phase " << ph << " epoch " << epoch << " batch " << batch_index << " (model '"
                << model.name << "', seed point " << job.seed << "): emd=" << loss.emd.item()
                << " vn=" << loss.vn.item() << " rn=" << loss.rn.item();
            throw training_divergence_error(msg.str());
          }
          ad::backward(loss.total * inv);
          rec.emd += loss.emd.item() * inv;
          rec.vn += loss.vn.item() * inv;
          rec.rn += loss.rn.item() * inv;
          rec.total += total * inv;
        }
        sgd_step(params, lr, cfg.momentum, phase.group);
        epoch_sum += rec.total * static_cast<double>(rec.patches);
        report.batches.push_back(rec);
      }
      const double epoch_mean = epoch_sum / static_cast<double>(jobs.size());
      if (ph == 0) report.epoch_total.push_back(epoch_mean);
      std::ostringstream msg;
      msg << "phase " << ph << " epoch " << epoch + 1 << "/" << cfg.epochs << " lr " << lr << " mean loss "
          << epoch_mean;
      emit(options, msg.str());
    }
  }
  (void)total_patches;
  params.epoch = cfg.epochs;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return params;
}

TrainingReport train(const std::filesystem::path& manifest, const PipelineConfig& cfg,
                     const std::filesystem::path& out_checkpoint, const TrainOptions& options) {
  const auto models = load_training_models(read_manifest(manifest));
  TrainingReport report;
  const NetworkParams params = train(models, cfg, report, options);
  save_checkpoint(params, out_checkpoint);
  return report;
}

json DenoiseResult::report() const {
  return {{"points", cloud.size()},
          {"patches", patches},
          {"min_coverage", min_coverage},
          {"max_coverage", max_coverage},
          {"covered", min_coverage >= 1}};
}

DenoiseResult denoise(const PointCloud& noisy, const NetworkParams& params, const PipelineConfig& cfg,
                      AblationStage stage) {
  cfg.validate();
  if (!(params.arch == cfg.arch)) throw invalid_argument_error("denoise: checkpoint architecture does not match config");
  const std::size_t n = noisy.size();
  if (n < 3) throw invalid_argument_error("denoise: cloud needs at least 3 points");

  ad::NoGradGuard no_grad;
  const auto& pos = noisy.positions();
  const std::size_t k = std::min(cfg.patch_size, n);
  const KdTree tree(pos);
  const bool s3 = stage == AblationStage::s3;

  std::vector<Vec3> disp(n, Vec3::Zero());
  std::vector<Vec3> normal_acc(n, Vec3::Zero());
  std::vector<std::size_t> count(n, 0);
  std::vector<double> seed_dist(n, std::numeric_limits<double>::infinity());
  std::size_t uncovered = n;
  std::size_t patches = 0;
  Index next = 0;

  while (uncovered > 0) {
    if (patches >= n) throw coverage_error("denoise: points remain uncovered after " + std::to_string(n) + " patches");
    const Patch patch = extract_patch(tree, next, k);
    const auto local = patch.normalized_positions(pos);
    const auto edges = EdgeList::from_graph(build_knn_graph(local, std::min(cfg.graph_k, k - 1)));
    const auto input = ad::DiffArray::from_rows(local);
    const auto pred = forward_sgcn(params, input, edges);

    std::vector<Vec3> pred_rows(k);
    for (std::size_t r = 0; r < k; ++r) {
      pred_rows[r] = pred.row3(static_cast<Eigen::Index>(r));
      const Index idx = patch.member_indices[r];
      disp[idx] += (pred_rows[r] - local[r]) * patch.scale;
      if (count[idx]++ == 0) --uncovered;
    }
    if (s3) {
      const auto rn0 = initial_normals(pred_rows, cfg.pca_k);
      const auto features = ad::concat_cols(ad::DiffArray::from_rows(pred_rows), ad::DiffArray::from_rows(rn0));
      const auto fine = forward_ngcn(params, features, edges);
      for (std::size_t r = 0; r < k; ++r) {
        const Index idx = patch.member_indices[r];
        const Vec3 nr = fine.row3(static_cast<Eigen::Index>(r));
        normal_acc[idx] += normal_acc[idx].dot(nr) < 0.0 ? Vec3(-nr) : nr;
      }
    }
    ++patches;

    const Vec3 seed = pos[next];
    double best = -1.0;
    for (Index i = 0; i < n; ++i) {
      seed_dist[i] = std::min(seed_dist[i], (pos[i] - seed).squaredNorm());
      if (count[i] == 0 && seed_dist[i] > best) {
        best = seed_dist[i];
        next = i;
      }
    }
  }

  std::vector<Vec3> merged(n);
  for (Index i = 0; i < n; ++i) merged[i] = pos[i] + disp[i] / static_cast<double>(count[i]);

  DenoiseResult result{noisy.with_positions(merged), patches, 0, 0};
  const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
  result.min_coverage = *lo;
  result.max_coverage = *hi;

  if (s3) {
    std::optional<std::vector<Vec3>> fallback;
    std::vector<Vec3> normals(n);
    for (Index i = 0; i < n; ++i) {
      const double len = normal_acc[i].norm();
      if (len > kNormalEpsilon) {
        normals[i] = normal_acc[i] / len;
      } else {
        if (!fallback) fallback = initial_normals(merged, cfg.pca_k);
        normals[i] = (*fallback)[i];
      }
    }
    result.cloud = final_denoise(PointCloud(merged, normals, noisy.name()), cfg.filter);
  } else {
    result.cloud = PointCloud(merged, initial_normals(merged, cfg.pca_k), noisy.name());
  }
  return result;
}

DenoiseResult denoise(const std::filesystem::path& cloud_path, const std::filesystem::path& checkpoint,
                      const PipelineConfig& cfg, AblationStage stage, const std::filesystem::path& out_path) {
  const PointCloud cloud = read_cloud(cloud_path);
  const NetworkParams params = load_checkpoint(checkpoint);
  DenoiseResult result = denoise(cloud, params, cfg, stage);
  write_cloud(result.cloud, out_path);
  return result;
}

Metrics evaluate(const std::filesystem::path& denoised, const std::filesystem::path& clean) {
  return evaluate_clouds(read_cloud(denoised), read_cloud(clean));
}

LossWeights stage_weights(AblationStage stage, const LossWeights& full) {
  switch (stage) {
    case AblationStage::s1:
      return {1.0, 0.0};
    case AblationStage::s2:
      return {full.alpha, 0.0};
    case AblationStage::s3:
      return full;
  }
  return full;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct TestCase {
  PointCloud noisy;
  PointCloud clean;
  bool sharp;
};

// Mean metrics per column (CAD, non-CAD, all).
std::array<AblationCell, 3> column_means(const std::vector<TestCase>& cases, const std::vector<Metrics>& metrics) {
  std::array<AblationCell, 3> cells{};
  std::array<std::size_t, 3> counts{};
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (std::size_t col : {cases[i].sharp ? std::size_t{0} : std::size_t{1}, std::size_t{2}}) {
      cells[col].mse += metrics[i].mse;
      cells[col].cd += metrics[i].cd;
      ++counts[col];
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (counts[c] > 0) {
      cells[c].mse /= static_cast<double>(counts[c]);
      cells[c].cd /= static_cast<double>(counts[c]);
    } else {
      cells[c].mse = cells[c].cd = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return cells;
}

}  // namespace

AblationReport ablate(const Manifest& manifest, const PipelineConfig& cfg, const std::vector<std::uint64_t>& seeds,
                      const TrainOptions& options) {
  if (seeds.empty()) throw invalid_argument_error("ablate: at least one seed required");
  const auto models = load_training_models(manifest, "train");
  auto test_entries = manifest.split("test");
  if (test_entries.empty()) test_entries = manifest.split("train");

  std::vector<TestCase> cases;
  for (const auto& e : test_entries) cases.push_back({read_cloud(e.noisy), read_cloud(e.clean), is_sharp(e.kind)});

  std::vector<Metrics> input_metrics;
  for (const auto& c : cases) input_metrics.push_back(evaluate_clouds(c.noisy, c.clean));

  AblationReport report;
  for (std::uint64_t seed : seeds) {
    AblationRun run;
    run.seed = seed;
    run.cells[0] = column_means(cases, input_metrics);
    for (auto stage : {AblationStage::s1, AblationStage::s2, AblationStage::s3}) {
      PipelineConfig stage_cfg = cfg;
      stage_cfg.rng_seed = seed;
      stage_cfg.weights = stage_weights(stage, cfg.weights);
      emit(options, "seed " + std::to_string(seed) + ": training stage " + to_string(stage));
      const auto started = std::chrono::steady_clock::now();
      TrainingReport train_report;
      const NetworkParams params = train(models, stage_cfg, train_report, options);
      std::vector<Metrics> metrics;
      for (const auto& c : cases) metrics.push_back(evaluate_clouds(denoise(c.noisy, params, stage_cfg, stage).cloud, c.clean));
      run.cells[static_cast<std::size_t>(stage) + 1] = column_means(cases, metrics);
      run.seconds[static_cast<std::size_t>(stage)] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    report.runs.push_back(run);
  }

  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> mse;
      std::vector<double> cd;
      for (const auto& run : report.runs) {
        mse.push_back(run.cells[r][c].mse);
        cd.push_back(run.cells[r][c].cd);
      }
      report.median[r][c] = {median(mse), median(cd)};
    }
  }
  return report;
}

json AblationReport::to_json() const {
  auto table = [](const std::array<std::array<AblationCell, 3>, 4>& cells) {
    json rows = json::array();
    for (std::size_t r = 0; r < 4; ++r) {
      rows.push_back({{"row", kRows[r]}, {"CAD", cells[r][0].mse}, {"non-CAD", cells[r][1].mse}});
    }
    return rows;
  };
  auto overall = [](const std::array<std::array<AblationCell, 3>, 4>& cells) {
    json rows = json::array();
    for (std::size_t r = 0; r < 4; ++r) {
      rows.push_back({{"row", kRows[r]}, {"mse", cells[r][2].mse}, {"cd", cells[r][2].cd}});
    }
    return rows;
  };
  json per_seed = json::array();
  for (const auto& run : runs) per_seed.push_back({{"seed", run.seed},
                        {"mse", table(run.cells)},
                        {"all", overall(run.cells)},
                        {"seconds", run.seconds}});
  return {{"metric", "mse"}, {"table", table(median)}, {"all", overall(median)}, {"runs", per_seed}};
}

std::string AblationReport::to_markdown() const {
  std::ostringstream out;
  out << "| MSE (1e-3) | CAD | non-CAD |\n|---|---|---|\n";
  out << std::fixed << std::setprecision(4);
  for (std::size_t r = 0; r < 4; ++r) {
    out << "| " << kRows[r] << " | " << median[r][0].mse * 1e3 << " | " << median[r][1].mse * 1e3 << " |\n";
  }
  return out.str();
}

}  // namespace geogcn
