#pragma once

#include "nerfpose/diff/params.hpp"
#include "nerfpose/encoders.hpp"
#include "nerfpose/evaluator.hpp"
#include "nerfpose/manifest.hpp"
#include "nerfpose/objectives.hpp"
#include "nerfpose/renderer.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace nerfpose::train {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 8;       // image pairs per optimizer step
  int pairs_per_epoch = 0;  // 0: one pass over the training views
  int full_res = 64;
  int hyp_res = 16;
  int samples_full = 64;
  int samples_hyp = 32;
  double lr_decoder = 1e-3;
  double lr_encoder = 1e-4;
  int hypotheses = 8;  // K_h
  loss::RegularizationConfig reg;
  enc::PoseMode mode = enc::PoseMode::Constrained;
  uint64_t seed = 0;
  int threads = 0;            // 0: all hardware threads
  bool deterministic = false;  // force the single-threaded reproducible path
  int checkpoint_every = 1;   // epochs

  void validate() const;
  int effective_threads() const;
};

struct LossBreakdown {
  double reconstruction = 0;
  double regularization = 0;
  double student = 0;
  double constraint = 0;
  double total = 0;
};

struct TrainState {
  diff::ParameterStore<float> decoder;      // includes the conditioning maps
  diff::ParameterStore<float> pose_encoder;
  diff::ParameterStore<float> appearance_encoder;
  render::DecoderConfig decoder_cfg;
  enc::EncoderConfig encoder_cfg;
  loss::FeatureExtractorParams<float> extractor{7771};
  scene::CameraConfig cam;
  int epoch = 0;
  int64_t steps = 0;
  int64_t skipped_steps = 0;

  camera::Pose scene_default_pose() const;
};

TrainState init_state(const TrainConfig& cfg, const scene::CameraConfig& cam);

void save_state(const TrainState& state, const std::filesystem::path& path);
/// Loads parameters into a state prepared by init_state; shapes must match.
void load_state(TrainState& state, const std::filesystem::path& path);

struct StepResult {
  LossBreakdown losses;
  bool skipped = false;
  std::vector<int> selected;                        // winning hypothesis per pair
  std::vector<std::vector<double>> hypothesis_losses;  // per pair, per hypothesis
};

/// One optimizer step over a batch of image pairs: appearance code from the
/// source, multi-hypothesis prediction and low-res selection on the target,
/// full-res render of the winner, perceptual + regularization + student +
/// constraint losses, one Adam update per store. Gradients flow through the
/// full-resolution branch and the encoders, never through the selection.
StepResult training_step(TrainState& state, const std::vector<scene::ImagePair>& batch,
                         const TrainConfig& cfg, uint64_t step_seed);

struct EpochMetrics {
  int epoch = 0;
  int steps = 0;
  LossBreakdown mean;
  double seconds = 0;
};

/// Full training loop: shuffled pair batches per epoch, checkpoints and an
/// NDJSON metrics log under `out_dir` (pass empty to keep everything in
/// memory).
std::vector<EpochMetrics> train(TrainState& state, const scene::PairSampler& data,
                                const TrainConfig& cfg, const std::filesystem::path& out_dir);

/// Single forward pass through the pose encoder's student head.
camera::Pose infer_pose(const TrainState& state, const Image& image);

/// Decoder render at dataset intrinsics scaled to `resolution`.
Image render_view(const TrainState& state, const diff::Tensor32& code, const camera::Pose& pose,
                  int resolution, int samples, uint64_t seed, int threads);

struct EvalOptions {
  std::string split = "test";
  double accuracy_threshold_deg = 10.0;
  bool reconstruction = true;
  int threads = 0;
};

struct EvalResult {
  metrics::PoseMetricsReport pose;
  metrics::ReconMetricsReport recon;
  std::vector<camera::Pose> predicted;
  std::vector<camera::Pose> ground_truth;
};

/// Runs infer_pose over a split, aligns and scores against the manifest's
/// ground truth; optionally renders at the inferred poses for PSNR/SSIM.
EvalResult evaluate_on_split(const TrainState& state, const scene::DatasetManifest& manifest,
                             const EvalOptions& opts);

}  // namespace nerfpose::train
