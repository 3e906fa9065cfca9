#pragma once

#include "nerfpose/camera.hpp"
#include "nerfpose/diff/graph.hpp"
#include "nerfpose/diff/params.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/renderer.hpp"

#include <span>
#include <string>
#include <vector>

namespace nerfpose::enc {

enum class PoseMode { Constrained, Extended };

inline PoseMode pose_mode_from_string(const std::string& s) {
  if (s == "constrained") return PoseMode::Constrained;
  if (s == "extended") return PoseMode::Extended;
  throw std::invalid_argument("unknown pose mode: " + s);
}
inline const char* to_string(PoseMode m) {
  return m == PoseMode::Constrained ? "constrained" : "extended";
}

/// Per-head raw output width: direction, plus distance/target/up in extended mode.
inline int pose_head_dim(PoseMode mode) { return mode == PoseMode::Constrained ? 3 : 10; }

/// Raw direction vectors below this norm take the fixed fallback (0,0,1)
/// instead of failing, keeping training robust at initialization.
inline constexpr double kDegenerateDirectionNorm = 1e-8;

struct EncoderConfig {
  int input_size = 64;  // square RGB input, >= 32
  int code_dim = 64;
  int hypotheses = 8;  // K_h; a student head is added on top
  PoseMode mode = PoseMode::Constrained;
};

// Backbone: 4 blocks of (3x3 conv, stride 2, ReLU) at widths 32/64/128/256,
// then global average pooling to a 256-vector.
inline constexpr int kBackboneWidths[4] = {32, 64, 128, 256};
inline constexpr int kFeatureDim = 256;

template <typename T>
void init_backbone_params(diff::ParameterStore<T>& store, const std::string& prefix,
                          diff::Rng& rng) {
  int cin = 3;
  for (int i = 0; i < 4; ++i) {
    const int cout = kBackboneWidths[i];
    store.create(prefix + ".conv" + std::to_string(i) + ".w",
                 diff::he_init<T>({cout, static_cast<int64_t>(cin) * 9}, rng, cin * 9));
    store.create(prefix + ".conv" + std::to_string(i) + ".b",
                 diff::Tensor<T>::zeros({1, cout}));
    cin = cout;
  }
}

template <typename T>
void init_appearance_params(diff::ParameterStore<T>& store, const EncoderConfig& cfg,
                            diff::Rng& rng) {
  init_backbone_params(store, "app", rng);
  store.create("app.head.w", diff::he_init<T>({kFeatureDim, cfg.code_dim}, rng, kFeatureDim));
  store.create("app.head.b", diff::Tensor<T>::zeros({1, cfg.code_dim}));
}

/// One weight tensor per head so the student inference path never touches
/// the hypothesis heads.
template <typename T>
void init_pose_params(diff::ParameterStore<T>& store, const EncoderConfig& cfg, diff::Rng& rng) {
  init_backbone_params(store, "pose", rng);
  const int d = pose_head_dim(cfg.mode);
  for (int k = 0; k < cfg.hypotheses; ++k) {
    store.create("pose.head" + std::to_string(k) + ".w",
                 diff::randn<T>({kFeatureDim, d}, rng, 0.1));
    store.create("pose.head" + std::to_string(k) + ".b", diff::randn<T>({1, d}, rng, 0.5));
  }
  store.create("pose.student.w", diff::randn<T>({kFeatureDim, d}, rng, 0.1));
  store.create("pose.student.b", diff::randn<T>({1, d}, rng, 0.5));
}

template <typename T>
diff::Tensor<T> image_tensor(const Image& img) {
  if (img.channels < 3) throw std::invalid_argument("encoder: expected RGB input");
  diff::Tensor<T> t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at3(c, y, x) = static_cast<T>(img.at(c, y, x));
  return t;
}

template <typename T>
void check_encoder_input(const diff::Tensor<T>& img) {
  if (img.rank() != 3 || img.shape[0] != 3 || img.shape[1] != img.shape[2] || img.shape[1] < 32)
    throw std::invalid_argument("encoder: input must be square RGB, at least 32x32");
  if (!img.all_finite()) throw std::invalid_argument("encoder: non-finite pixels");
}

/// Shared feature vector [1,256] for one image.
template <typename T>
diff::Value<T> build_backbone(diff::Graph<T>& g, const diff::ParameterStore<T>& store,
                              const std::string& prefix, diff::Value<T> image, bool trainable) {
  auto rec = [&](const std::string& name) {
    return trainable ? g.param(store.value(name), name) : g.constant(store.value(name), name);
  };
  diff::Value<T> h = image;
  for (int i = 0; i < 4; ++i) {
    const std::string base = prefix + ".conv" + std::to_string(i);
    h = g.conv2d(h, rec(base + ".w"), rec(base + ".b"), 3, 2, 1, diff::Act::Relu);
  }
  return g.global_avg_pool(h);
}

// ---- appearance encoder f_a -------------------------------------------------

template <typename T>
diff::Value<T> build_appearance(diff::Graph<T>& g, const diff::ParameterStore<T>& store,
                                diff::Value<T> image, bool trainable) {
  auto rec = [&](const char* name) {
    return trainable ? g.param(store.value(name), name) : g.constant(store.value(name), name);
  };
  auto feat = build_backbone(g, store, "app", image, trainable);
  return g.linear(feat, rec("app.head.w"), rec("app.head.b"), diff::Act::Identity);
}

/// Fixed-length appearance code for one image (single forward pass).
template <typename T>
diff::Tensor<T> encode_appearance(const diff::ParameterStore<T>& store, const Image& img) {
  diff::Tensor<T> t = image_tensor<T>(img);
  check_encoder_input(t);
  diff::Graph<T> g;
  auto code = build_appearance(g, store, g.constant(std::move(t), "image"), false);
  return g.value(code);
}

// ---- pose estimator f_p -----------------------------------------------------

struct PoseHypothesisSet {
  std::vector<camera::Pose> hypotheses;  // K_h entries
  camera::Pose student;
};

/// Graph handles for one predicted pose head.
template <typename T>
struct PoseHeadNodes {
  render::PoseNodes<T> pose;
  diff::Value<T> flat;  // [1,D] regularizer/student metric vector
};

namespace detail {

/// Normalize a [1,3] row with the deterministic degenerate fallback,
/// branch decided on the recorded value.
template <typename T>
diff::Value<T> normalize_or_fallback(diff::Graph<T>& g, diff::Value<T> raw) {
  const auto& v = g.value(raw);
  const double n = std::sqrt(static_cast<double>(v[0]) * v[0] + static_cast<double>(v[1]) * v[1] +
                             static_cast<double>(v[2]) * v[2]);
  if (n < kDegenerateDirectionNorm)
    return g.constant(diff::Tensor<T>({1, 3}, {T(0), T(0), T(1)}), "dir_fallback");
  return render::normalize_row(g, raw);
}

template <typename T>
PoseHeadNodes<T> assemble_head(diff::Graph<T>& g, diff::Value<T> raw, PoseMode mode,
                               const camera::Pose& defaults) {
  PoseHeadNodes<T> out;
  auto dir_raw = g.slice_cols(raw, 0, 3);
  out.pose.direction = normalize_or_fallback(g, dir_raw);
  if (mode == PoseMode::Constrained) {
    out.pose.distance = g.constant(diff::Tensor<T>({1, 1}, {static_cast<T>(defaults.distance)}));
    out.pose.target = g.constant(diff::Tensor<T>(
        {1, 3}, {static_cast<T>(defaults.target.x()), static_cast<T>(defaults.target.y()),
                 static_cast<T>(defaults.target.z())}));
    out.pose.up = g.constant(diff::Tensor<T>(
        {1, 3}, {static_cast<T>(defaults.up_hint.x()), static_cast<T>(defaults.up_hint.y()),
                 static_cast<T>(defaults.up_hint.z())}));
    out.flat = out.pose.direction;
    return out;
  }
  // extended: softplus distance with an offset placing raw zero at the scene
  // default, free target, normalized up
  const T offset = static_cast<T>(defaults.distance - std::log(2.0));
  out.pose.distance = g.add(g.softplus(g.slice_cols(raw, 3, 4)),
                            g.constant(diff::Tensor<T>({1, 1}, {offset})));
  out.pose.target = g.slice_cols(raw, 4, 7);
  out.pose.up = normalize_or_fallback(g, g.slice_cols(raw, 7, 10));
  out.flat = g.concat_cols({out.pose.direction, out.pose.distance, out.pose.target, out.pose.up});
  return out;
}

}  // namespace detail

/// All K_h hypothesis heads plus the student head (last entry).
template <typename T>
std::vector<PoseHeadNodes<T>> build_pose_heads(diff::Graph<T>& g,
                                               const diff::ParameterStore<T>& store,
                                               const EncoderConfig& cfg, diff::Value<T> image,
                                               const camera::Pose& defaults, bool trainable) {
  auto rec = [&](const std::string& name) {
    return trainable ? g.param(store.value(name), name) : g.constant(store.value(name), name);
  };
  auto feat = build_backbone(g, store, "pose", image, trainable);
  std::vector<PoseHeadNodes<T>> heads;
  heads.reserve(static_cast<size_t>(cfg.hypotheses) + 1);
  for (int k = 0; k <= cfg.hypotheses; ++k) {
    const std::string base =
        k == cfg.hypotheses ? "pose.student" : "pose.head" + std::to_string(k);
    auto raw = g.linear(feat, rec(base + ".w"), rec(base + ".b"), diff::Act::Identity);
    heads.push_back(detail::assemble_head(g, raw, cfg.mode, defaults));
  }
  return heads;
}

/// Student-only path: records no hypothesis-head parameters, so its runtime
/// does not depend on K_h.
template <typename T>
render::PoseNodes<T> build_pose_student(diff::Graph<T>& g, const diff::ParameterStore<T>& store,
                                        const EncoderConfig& cfg, diff::Value<T> image,
                                        const camera::Pose& defaults) {
  auto feat = build_backbone(g, store, "pose", image, false);
  auto raw = g.linear(feat, g.constant(store.value("pose.student.w")),
                      g.constant(store.value("pose.student.b")), diff::Act::Identity);
  return detail::assemble_head(g, raw, cfg.mode, defaults).pose;
}

template <typename T>
camera::Pose pose_from_nodes(const diff::Graph<T>& g, const render::PoseNodes<T>& n) {
  camera::Pose p;
  const auto& d = g.value(n.direction);
  const auto& up = g.value(n.up);
  const auto& tg = g.value(n.target);
  p.direction = camera::Vec3(d[0], d[1], d[2]);
  p.distance = static_cast<double>(g.value(n.distance)[0]);
  p.target = camera::Vec3(tg[0], tg[1], tg[2]);
  p.up_hint = camera::Vec3(up[0], up[1], up[2]);
  return p;
}

/// Multi-hypothesis prediction plus student, single forward pass.
template <typename T>
PoseHypothesisSet predict_pose_hypotheses(const diff::ParameterStore<T>& store,
                                          const EncoderConfig& cfg, const Image& img,
                                          const camera::Pose& defaults) {
  diff::Tensor<T> t = image_tensor<T>(img);
  check_encoder_input(t);
  diff::Graph<T> g;
  auto heads = build_pose_heads(g, store, cfg, g.constant(std::move(t), "image"), defaults, false);
  PoseHypothesisSet out;
  for (int k = 0; k < cfg.hypotheses; ++k)
    out.hypotheses.push_back(pose_from_nodes(g, heads[static_cast<size_t>(k)].pose));
  out.student = pose_from_nodes(g, heads.back().pose);
  return out;
}

/// Index of the hypothesis whose render best matches the target under `loss`;
/// ties break to the lowest index.
template <typename LossFn>
std::pair<int, camera::Pose> select_best_hypothesis(const Image& target,
                                                    std::span<const Image> candidate_renders,
                                                    const PoseHypothesisSet& hyps,
                                                    LossFn&& loss) {
  if (candidate_renders.empty())
    throw std::invalid_argument("select_best_hypothesis: need at least one render");
  if (candidate_renders.size() != hyps.hypotheses.size())
    throw std::invalid_argument("select_best_hypothesis: render/hypothesis count mismatch");
  int best = 0;
  double best_loss = loss(candidate_renders[0], target);
  for (size_t k = 1; k < candidate_renders.size(); ++k) {
    const double l = loss(candidate_renders[k], target);
    if (l < best_loss) {
      best = static_cast<int>(k);
      best_loss = l;
    }
  }
  return {best, hyps.hypotheses[static_cast<size_t>(best)]};
}

}  // namespace nerfpose::enc
