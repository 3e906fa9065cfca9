#pragma once

#include "nerfpose/camera.hpp"
#include "nerfpose/diff/graph.hpp"
#include "nerfpose/diff/params.hpp"
#include "nerfpose/encoders.hpp"
#include "nerfpose/image.hpp"

#include <array>
#include <span>
#include <vector>

namespace nerfpose::loss {

// ---- reconstruction: pixel MSE + frozen feature pyramid ---------------------

inline constexpr int kPyramidWidths[3] = {16, 32, 64};
inline constexpr double kPixelTermWeight = 10.0;  // feature terms weigh 1 each

/// A fixed convolutional pyramid standing in for pretrained perceptual
/// features: 3 stages of two 3x3 convs + ReLU with 2x downsampling between
/// stages. Weights are drawn once from the seed and never trained.
template <typename T>
struct FeatureExtractorParams {
  diff::ParameterStore<T> weights;
  uint64_t seed = 0;

  explicit FeatureExtractorParams(uint64_t seed_value = 7771) : seed(seed_value) {
    diff::Rng rng(seed);
    int cin = 3;
    for (int s = 0; s < 3; ++s) {
      const int w = kPyramidWidths[s];
      weights.create(stage_name(s, 0) + ".w",
                     diff::he_init<T>({w, static_cast<int64_t>(cin) * 9}, rng, cin * 9));
      weights.create(stage_name(s, 0) + ".b", diff::Tensor<T>::zeros({1, w}));
      weights.create(stage_name(s, 1) + ".w",
                     diff::he_init<T>({w, static_cast<int64_t>(w) * 9}, rng, w * 9));
      weights.create(stage_name(s, 1) + ".b", diff::Tensor<T>::zeros({1, w}));
      cin = w;
    }
  }

  static std::string stage_name(int stage, int conv) {
    return "pyr.s" + std::to_string(stage) + ".c" + std::to_string(conv);
  }
};

/// Stage features for one [3,H,W] image node (before each downsampling).
template <typename T>
std::array<diff::Value<T>, 3> build_pyramid(diff::Graph<T>& g,
                                            const FeatureExtractorParams<T>& ext,
                                            diff::Value<T> image) {
  std::array<diff::Value<T>, 3> features;
  diff::Value<T> h = image;
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 2; ++c) {
      const std::string base = FeatureExtractorParams<T>::stage_name(s, c);
      h = g.conv2d(h, g.constant(ext.weights.value(base + ".w")),
                   g.constant(ext.weights.value(base + ".b")), 3, 1, 1, diff::Act::Relu);
    }
    features[static_cast<size_t>(s)] = h;
    if (s < 2) h = g.avg_pool2(h);
  }
  return features;
}

template <typename T>
diff::Value<T> build_mse(diff::Graph<T>& g, diff::Value<T> a, diff::Value<T> b) {
  auto d = g.sub(a, b);
  return g.mean(g.mul(d, d));
}

/// 10*MSE(pixels) + sum of per-stage feature MSEs.
template <typename T>
diff::Value<T> build_perceptual_loss(diff::Graph<T>& g, const FeatureExtractorParams<T>& ext,
                                     diff::Value<T> reconstruction, diff::Value<T> target) {
  auto total = g.scale(build_mse(g, reconstruction, target), static_cast<T>(kPixelTermWeight));
  auto fa = build_pyramid(g, ext, reconstruction);
  auto fb = build_pyramid(g, ext, target);
  for (int s = 0; s < 3; ++s)
    total = g.add(total, build_mse(g, fa[static_cast<size_t>(s)], fb[static_cast<size_t>(s)]));
  return total;
}

template <typename T>
double perceptual_loss(const FeatureExtractorParams<T>& ext, const Image& reconstruction,
                       const Image& target) {
  if (reconstruction.height != target.height || reconstruction.width != target.width)
    throw std::invalid_argument("perceptual_loss: resolution mismatch");
  diff::Graph<T> g;
  auto a = g.constant(enc::image_tensor<T>(reconstruction));
  auto b = g.constant(enc::image_tensor<T>(target));
  return static_cast<double>(g.value(build_perceptual_loss(g, ext, a, b))[0]);
}

// ---- pose-distribution regularization ---------------------------------------

struct RegularizationConfig {
  int pseudo_targets = 0;  // K_r; 0 means "use the batch size"
  camera::PosePrior prior;
  double lambda0 = 1.0;
  double decay = 0.1;       // multiplied in every `decay_interval` epochs
  int decay_interval = 10;
  int cutoff_epoch = 30;    // turned off from here on
  double tau = 1.0;         // soft-min temperature
};

inline double lambda_schedule(int epoch, const RegularizationConfig& cfg = {}) {
  if (epoch >= cfg.cutoff_epoch) return 0.0;
  return cfg.lambda0 * std::pow(cfg.decay, epoch / cfg.decay_interval);
}

/// Pose flattened to the regularizer metric space: direction only in
/// constrained mode, (direction|distance|target|up) in extended mode.
template <typename T>
diff::Tensor<T> flatten_pose(const camera::Pose& p, enc::PoseMode mode) {
  if (mode == enc::PoseMode::Constrained)
    return diff::Tensor<T>({1, 3}, {static_cast<T>(p.direction.x()),
                                    static_cast<T>(p.direction.y()),
                                    static_cast<T>(p.direction.z())});
  return diff::Tensor<T>(
      {1, 10},
      {static_cast<T>(p.direction.x()), static_cast<T>(p.direction.y()),
       static_cast<T>(p.direction.z()), static_cast<T>(p.distance),
       static_cast<T>(p.target.x()), static_cast<T>(p.target.y()), static_cast<T>(p.target.z()),
       static_cast<T>(p.up_hint.x()), static_cast<T>(p.up_hint.y()),
       static_cast<T>(p.up_hint.z())});
}

template <typename T>
std::vector<diff::Tensor<T>> sample_pseudo_targets(const RegularizationConfig& cfg,
                                                   enc::PoseMode mode, int count,
                                                   diff::Rng& rng) {
  std::vector<diff::Tensor<T>> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(flatten_pose<T>(cfg.prior.sample(rng), mode));
  return out;
}

/// Soft minimum of batch distances per pseudo-target, averaged over targets:
/// for each p'_i, weights = softmax(-d_ij / tau) over the batch j and the
/// contribution is sum_j w_j * d_ij.
template <typename T>
diff::Value<T> build_pose_regularization(diff::Graph<T>& g,
                                         std::span<const diff::Value<T>> batch_flat,
                                         std::span<const diff::Tensor<T>> pseudo_targets,
                                         double tau) {
  if (batch_flat.empty()) throw std::invalid_argument("pose_regularization: empty batch");
  diff::Value<T> total = g.scalar(T(0));
  for (const diff::Tensor<T>& pt : pseudo_targets) {
    auto target = g.constant(pt);
    std::vector<diff::Value<T>> dists;
    dists.reserve(batch_flat.size());
    for (diff::Value<T> p : batch_flat) {
      auto d = g.sub(p, target);
      dists.push_back(g.sqrt(g.row_sum(g.mul(d, d))));
    }
    auto dcol = g.concat_rows(std::span<const diff::Value<T>>(dists));
    auto e = g.exp(g.scale(dcol, static_cast<T>(-1.0 / tau)));
    auto weights = g.div(e, g.sum(e));
    total = g.add(total, g.sum(g.mul(weights, dcol)));
  }
  return g.scale(total, T(1) / static_cast<T>(pseudo_targets.size()));
}

/// Plain evaluation over a batch of poses, drawing K_r pseudo-targets from
/// the configured prior.
inline double pose_regularization(const std::vector<camera::Pose>& batch, enc::PoseMode mode,
                                  const RegularizationConfig& cfg, uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("pose_regularization: empty batch");
  const int k = cfg.pseudo_targets > 0 ? cfg.pseudo_targets : static_cast<int>(batch.size());
  diff::Rng rng(seed);
  auto targets = sample_pseudo_targets<double>(cfg, mode, k, rng);
  diff::Graph<double> g;
  std::vector<diff::Value<double>> flat;
  flat.reserve(batch.size());
  for (const auto& p : batch) flat.push_back(g.constant(flatten_pose<double>(p, mode)));
  auto node = build_pose_regularization<double>(g, flat, targets, cfg.tau);
  return g.value(node)[0];
}

/// Hard-minimum counterpart (oracle for the soft >= hard invariant).
inline double pose_regularization_hard(const std::vector<camera::Pose>& batch,
                                       enc::PoseMode mode, const RegularizationConfig& cfg,
                                       uint64_t seed) {
  const int k = cfg.pseudo_targets > 0 ? cfg.pseudo_targets : static_cast<int>(batch.size());
  diff::Rng rng(seed);
  auto targets = sample_pseudo_targets<double>(cfg, mode, k, rng);
  double total = 0.0;
  for (const auto& t : targets) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : batch) {
      auto f = flatten_pose<double>(p, mode);
      double d2 = 0.0;
      for (int64_t i = 0; i < f.numel(); ++i) {
        const double d = f[i] - t[i];
        d2 += d * d;
      }
      best = std::min(best, std::sqrt(d2));
    }
    total += best;
  }
  return total / static_cast<double>(k);
}

// ---- soft pose constraints (extended mode) -----------------------------------

inline constexpr int kSoftConstraintEpochs = 10;

/// Squared deviation of distance/target/up from the scene defaults for the
/// first 10 epochs; zero afterwards.
inline double soft_pose_constraints(const camera::Pose& pose, int epoch,
                                    const camera::Pose& defaults) {
  if (epoch >= kSoftConstraintEpochs) return 0.0;
  const double dd = pose.distance - defaults.distance;
  return dd * dd + (pose.target - defaults.target).squaredNorm() +
         (pose.up_hint - defaults.up_hint).squaredNorm();
}

template <typename T>
diff::Value<T> build_soft_constraints(diff::Graph<T>& g, const render::PoseNodes<T>& pose,
                                      int epoch, const camera::Pose& defaults) {
  if (epoch >= kSoftConstraintEpochs) return g.scalar(T(0));
  auto dist0 = g.constant(diff::Tensor<T>({1, 1}, {static_cast<T>(defaults.distance)}));
  auto tgt0 = g.constant(diff::Tensor<T>(
      {1, 3}, {static_cast<T>(defaults.target.x()), static_cast<T>(defaults.target.y()),
               static_cast<T>(defaults.target.z())}));
  auto up0 = g.constant(diff::Tensor<T>(
      {1, 3}, {static_cast<T>(defaults.up_hint.x()), static_cast<T>(defaults.up_hint.y()),
               static_cast<T>(defaults.up_hint.z())}));
  auto dd = g.sub(pose.distance, dist0);
  auto dt = g.sub(pose.target, tgt0);
  auto du = g.sub(pose.up, up0);
  return g.add(g.sum(g.mul(dd, dd)), g.add(g.sum(g.mul(dt, dt)), g.sum(g.mul(du, du))));
}

}  // namespace nerfpose::loss
