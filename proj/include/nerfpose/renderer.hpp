#pragma once

#include "nerfpose/camera.hpp"
#include "nerfpose/diff/graph.hpp"
#include "nerfpose/diff/params.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/parallel.hpp"

#include <array>
#include <cstdint>

namespace nerfpose::render {

struct EncodingConfig {
  int position_octaves = 8;   // cosine embedding sizes
  int direction_octaves = 1;
};

struct SamplingConfig {
  int samples = 64;  // coarse samples per ray (no hierarchical fine pass)
  bool stratified = true;
  std::array<float, 3> background = {1.f, 1.f, 1.f};
};

/// Decoder: input projection for the encoded position, two 128-wide hidden
/// layers with the appearance code injected additively at each, a softplus
/// density head on the position pathway only, and a sigmoid color head that
/// mixes in the encoded view direction.
struct DecoderConfig {
  EncodingConfig encoding;
  int hidden = 128;
  int code_dim = 64;
};

template <typename T>
void init_decoder_params(diff::ParameterStore<T>& store, const DecoderConfig& cfg,
                         diff::Rng& rng) {
  using diff::he_init;
  using diff::randn;
  const int64_t pe = 3 * cfg.encoding.position_octaves;
  const int64_t de = 3 * cfg.encoding.direction_octaves;
  const int64_t h = cfg.hidden, a = cfg.code_dim;
  store.create("dec.w0", he_init<T>({pe, h}, rng, pe));
  store.create("dec.b0", diff::Tensor<T>::zeros({1, h}));
  store.create("dec.w1", he_init<T>({h, h}, rng, h));
  store.create("dec.b1", diff::Tensor<T>::zeros({1, h}));
  store.create("dec.w2", he_init<T>({h, h}, rng, h));
  store.create("dec.b2", diff::Tensor<T>::zeros({1, h}));
  store.create("dec.a1", randn<T>({a, h}, rng, 0.05));
  store.create("dec.a2", randn<T>({a, h}, rng, 0.05));
  store.create("dec.sigma_w", he_init<T>({h, 1}, rng, h));
  store.create("dec.sigma_b", diff::Tensor<T>::full({1, 1}, T(-1)));
  store.create("dec.color_w", he_init<T>({h, 3}, rng, h));
  store.create("dec.color_b", diff::Tensor<T>::zeros({1, 3}));
  store.create("dec.dir_w", randn<T>({de, 3}, rng, 0.1));
}

/// Handles to the decoder parameters recorded in one graph.
template <typename T>
struct DecoderNet {
  DecoderConfig cfg;
  diff::Value<T> w0, b0, w1, b1, w2, b2, a1, a2, sigma_w, sigma_b, color_w, color_b, dir_w;
};

/// Record decoder parameters into `g`, either as trainable params or as
/// frozen constants (inference path).
template <typename T>
DecoderNet<T> record_decoder(diff::Graph<T>& g, const diff::ParameterStore<T>& store,
                             const DecoderConfig& cfg, bool trainable) {
  auto rec = [&](const char* name) {
    return trainable ? g.param(store.value(name), name) : g.constant(store.value(name), name);
  };
  DecoderNet<T> net;
  net.cfg = cfg;
  net.w0 = rec("dec.w0");
  net.b0 = rec("dec.b0");
  net.w1 = rec("dec.w1");
  net.b1 = rec("dec.b1");
  net.w2 = rec("dec.w2");
  net.b2 = rec("dec.b2");
  net.a1 = rec("dec.a1");
  net.a2 = rec("dec.a2");
  net.sigma_w = rec("dec.sigma_w");
  net.sigma_b = rec("dec.sigma_b");
  net.color_w = rec("dec.color_w");
  net.color_b = rec("dec.color_b");
  net.dir_w = rec("dec.dir_w");
  return net;
}

template <typename T>
struct DecodeNodes {
  diff::Value<T> sigma;  // [M,1], softplus
  diff::Value<T> rgb;    // [M,3], sigmoid
};

/// Radiance for M = R*S sample points, one shared direction per ray.
/// The density pathway never touches `ray_dirs`.
/// Softplus trunk: keeps the radiance field smooth so camera-pose gradients
/// stay well conditioned (and finite-difference checkable at fixed step).
template <typename T>
DecodeNodes<T> decode_batch(diff::Graph<T>& g, const DecoderNet<T>& net, diff::Value<T> code,
                            diff::Value<T> points, diff::Value<T> ray_dirs, int64_t samples) {
  using diff::Act;
  auto px = g.positional_encode(points, net.cfg.encoding.position_octaves);
  auto h0 = g.linear(px, net.w0, net.b0, Act::Softplus);
  auto inj1 = g.matmul(code, net.a1);
  auto h1 = g.linear(h0, net.w1, net.b1, inj1, Act::Softplus);
  auto inj2 = g.matmul(code, net.a2);
  auto h2 = g.linear(h1, net.w2, net.b2, inj2, Act::Softplus);
  DecodeNodes<T> out;
  out.sigma = g.linear(h2, net.sigma_w, net.sigma_b, Act::Softplus);
  auto pd = g.positional_encode(ray_dirs, net.cfg.encoding.direction_octaves);
  auto dir_term = g.repeat_rows(g.matmul(pd, net.dir_w), samples);
  out.rgb = g.sigmoid(g.add(g.linear(h2, net.color_w, net.color_b, Act::Identity), dir_term));
  return out;
}

// ---- camera assembled inside the graph (differentiable w.r.t. the pose) ----

template <typename T>
struct PoseNodes {
  diff::Value<T> direction;  // [1,3] unit
  diff::Value<T> distance;   // [1,1]
  diff::Value<T> target;     // [1,3]
  diff::Value<T> up;         // [1,3] unit
};

template <typename T>
struct CameraNodes {
  diff::Value<T> rotation;  // [3,3], rows right/up/forward (world-to-camera)
  diff::Value<T> center;    // [1,3]
};

template <typename T>
diff::Value<T> normalize_row(diff::Graph<T>& g, diff::Value<T> v) {
  return g.div(v, g.sqrt(g.row_sum(g.mul(v, v))));
}

/// Gram-Schmidt camera construction recorded as graph ops. The degenerate
/// parallel-up branch is resolved on the current values (deterministic
/// world-x fallback), matching the plain camera module.
template <typename T>
CameraNodes<T> build_camera(diff::Graph<T>& g, const PoseNodes<T>& pose) {
  CameraNodes<T> cam;
  cam.center = g.add(g.mul(pose.direction, pose.distance), pose.target);
  auto forward = normalize_row(g, g.sub(pose.target, cam.center));
  const auto& fv = g.value(forward);
  const auto& uv = g.value(pose.up);
  const double dot = static_cast<double>(fv[0] * uv[0] + fv[1] * uv[1] + fv[2] * uv[2]);
  diff::Value<T> up_hint = pose.up;
  if (std::abs(dot) > 1.0 - camera::kDegenerateUpThreshold)
    up_hint = g.constant(diff::Tensor<T>({1, 3}, {T(1), T(0), T(0)}), "up_fallback");
  auto right = normalize_row(g, g.cross3(up_hint, forward));
  auto up = g.cross3(forward, right);
  cam.rotation = g.concat_rows({right, up, forward});
  return cam;
}

// ---- ray bundles -------------------------------------------------------------

/// Precomputed constants for rendering a contiguous row-major pixel range:
/// camera-space pixel directions plus stratified depths and intervals.
/// Jitter is keyed by global pixel index so results are independent of how
/// the image is split into slabs.
template <typename T>
struct RaySlab {
  int64_t ray_count = 0;
  int64_t samples = 0;
  diff::Tensor<T> dirs_cam;  // [R,3] unit, camera space
  diff::Tensor<T> t;         // [R*S,1] depths
  diff::Tensor<T> delta;     // [R,S] intervals, last = far - t_S
};

template <typename T>
RaySlab<T> make_ray_slab(const camera::Intrinsics& K, int64_t pixel_begin, int64_t pixel_end,
                         double near, double far, const SamplingConfig& sampling, uint64_t seed) {
  if (sampling.samples < 2) throw std::invalid_argument("sampling: need at least 2 samples");
  if (!(near > 0.0) || !(near < far))
    throw std::invalid_argument("sampling: need 0 < near < far");
  RaySlab<T> slab;
  const int64_t r = pixel_end - pixel_begin;
  const int64_t s = sampling.samples;
  slab.ray_count = r;
  slab.samples = s;
  slab.dirs_cam = diff::Tensor<T>({r, 3});
  slab.t = diff::Tensor<T>({r * s, 1});
  slab.delta = diff::Tensor<T>({r, s});
  const double bin = (far - near) / static_cast<double>(s);
  for (int64_t i = 0; i < r; ++i) {
    const int64_t pix = pixel_begin + i;
    const camera::Vec3 d = camera::pixel_ray_cam(K, static_cast<double>(pix % K.width),
                                                 static_cast<double>(pix / K.width));
    slab.dirs_cam[3 * i + 0] = static_cast<T>(d.x());
    slab.dirs_cam[3 * i + 1] = static_cast<T>(d.y());
    slab.dirs_cam[3 * i + 2] = static_cast<T>(d.z());
    for (int64_t k = 0; k < s; ++k) {
      double u = 0.5;
      if (sampling.stratified) {
        const uint64_t h = diff::hash_combine(seed, static_cast<uint64_t>(pix) * s + k);
        u = static_cast<double>(h >> 11) * 0x1.0p-53;
      }
      slab.t[i * s + k] = static_cast<T>(near + (static_cast<double>(k) + u) * bin);
    }
    for (int64_t k = 0; k + 1 < s; ++k)
      slab.delta[i * s + k] = slab.t[i * s + k + 1] - slab.t[i * s + k];
    slab.delta[i * s + s - 1] = static_cast<T>(far) - slab.t[i * s + s - 1];
  }
  return slab;
}

/// Full differentiable render of one slab: rotation/center may come from
/// build_camera (pose gradients) or from constants (frozen camera).
/// Returns the [R,4] RGBA node plus the per-sample weight node.
template <typename T>
struct RenderNodes {
  diff::Value<T> rgba;     // [R,4]: composited color + accumulated opacity
  diff::Value<T> weights;  // [R,S]
  diff::Value<T> sigma;    // [M,1]
};

template <typename T>
RenderNodes<T> build_render(diff::Graph<T>& g, const DecoderNet<T>& net, diff::Value<T> code,
                            diff::Value<T> rotation, diff::Value<T> center,
                            const RaySlab<T>& slab, const std::array<float, 3>& background) {
  auto dirs_cam = g.constant(slab.dirs_cam, "dirs_cam");
  auto dirs = g.matmul(dirs_cam, rotation);  // rows: world-space unit dirs
  auto t = g.constant(slab.t, "t");
  auto points = g.ray_points(dirs, center, t, slab.samples);
  DecodeNodes<T> dec = decode_batch(g, net, code, points, dirs, slab.samples);
  auto sigma_rs = g.reshape(dec.sigma, {slab.ray_count, slab.samples});
  auto optical = g.mul(sigma_rs, g.constant(slab.delta, "delta"));
  RenderNodes<T> out;
  out.weights = g.volume_weights(optical);
  auto bg = g.constant(diff::Tensor<T>({1, 3}, {static_cast<T>(background[0]),
                                                static_cast<T>(background[1]),
                                                static_cast<T>(background[2])}), "background");
  out.rgba = g.volume_blend(out.weights, dec.rgb, bg);
  out.sigma = dec.sigma;
  return out;
}

// ---- plain rendering APIs ------------------------------------------------------

struct RadianceSample {
  std::array<double, 3> rgb;
  double sigma;
};

/// Query the decoder at one point/direction. Density is produced by a
/// pathway that never consumes the direction.
template <typename T>
RadianceSample decode_radiance(const diff::ParameterStore<T>& store, const DecoderConfig& cfg,
                               const diff::Tensor<T>& code, const std::array<double, 3>& x,
                               const std::array<double, 3>& dir) {
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("decode_radiance: non-finite position");
  for (double v : dir)
    if (!std::isfinite(v)) throw std::invalid_argument("decode_radiance: non-finite direction");
  const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  if (std::abs(n - 1.0) > 1e-4)
    throw std::invalid_argument("decode_radiance: direction must be unit length");
  diff::Graph<T> g;
  DecoderNet<T> net = record_decoder(g, store, cfg, false);
  auto code_v = g.constant(code, "code");
  auto pts = g.constant(diff::Tensor<T>({1, 3}, {static_cast<T>(x[0]), static_cast<T>(x[1]),
                                                 static_cast<T>(x[2])}));
  auto dirs = g.constant(diff::Tensor<T>({1, 3}, {static_cast<T>(dir[0]), static_cast<T>(dir[1]),
                                                  static_cast<T>(dir[2])}));
  DecodeNodes<T> dec = decode_batch(g, net, code_v, pts, dirs, 1);
  RadianceSample out;
  out.sigma = static_cast<double>(g.value(dec.sigma)[0]);
  for (int c = 0; c < 3; ++c) out.rgb[static_cast<size_t>(c)] = static_cast<double>(g.value(dec.rgb)[c]);
  return out;
}

/// Render a single ray; returns composited rgb plus accumulated alpha.
template <typename T>
std::pair<std::array<double, 3>, double> render_ray(const diff::ParameterStore<T>& store,
                                                    const DecoderConfig& cfg,
                                                    const diff::Tensor<T>& code,
                                                    const camera::Ray& ray,
                                                    const SamplingConfig& sampling,
                                                    uint64_t seed = 0) {
  camera::Intrinsics k1;  // single principal pixel
  k1.width = k1.height = 1;
  k1.focal = 1.0;
  k1.cx = k1.cy = 0.5;
  RaySlab<T> slab = make_ray_slab<T>(k1, 0, 1, ray.near, ray.far, sampling, seed);
  // overwrite the principal direction with the requested world-space ray
  slab.dirs_cam[0] = static_cast<T>(ray.direction.x());
  slab.dirs_cam[1] = static_cast<T>(ray.direction.y());
  slab.dirs_cam[2] = static_cast<T>(ray.direction.z());
  diff::Graph<T> g;
  DecoderNet<T> net = record_decoder(g, store, cfg, false);
  auto code_v = g.constant(code, "code");
  auto ident = g.constant(diff::Tensor<T>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto center = g.constant(diff::Tensor<T>({1, 3}, {static_cast<T>(ray.origin.x()),
                                                    static_cast<T>(ray.origin.y()),
                                                    static_cast<T>(ray.origin.z())}));
  RenderNodes<T> nodes = build_render(g, net, code_v, ident, center, slab, sampling.background);
  const diff::Tensor<T>& rgba = g.value(nodes.rgba);
  return {{static_cast<double>(rgba[0]), static_cast<double>(rgba[1]),
           static_cast<double>(rgba[2])},
          static_cast<double>(rgba[3])};
}

/// Render the same pixel grid from several cameras in one batched graph
/// (the hypothesis-selection path). All cameras share one stratified jitter
/// draw so loss differences between renders reflect pose only.
template <typename T>
std::vector<Image> render_hypotheses_batch(const diff::ParameterStore<T>& store,
                                           const DecoderConfig& cfg, const diff::Tensor<T>& code,
                                           const std::vector<camera::Extrinsics>& cameras,
                                           const camera::Intrinsics& K, double near, double far,
                                           const SamplingConfig& sampling, uint64_t seed) {
  const int64_t rays = static_cast<int64_t>(K.width) * K.height;
  const int64_t s = sampling.samples;
  RaySlab<T> slab = make_ray_slab<T>(K, 0, rays, near, far, sampling, seed);
  const int64_t kcount = static_cast<int64_t>(cameras.size());

  diff::Graph<T> g;
  DecoderNet<T> net = record_decoder(g, store, cfg, false);
  auto code_v = g.constant(code, "code");
  auto dirs_cam = g.constant(slab.dirs_cam, "dirs_cam");
  auto t = g.constant(slab.t, "t");
  std::vector<diff::Value<T>> dir_blocks, point_blocks;
  for (const camera::Extrinsics& ext : cameras) {
    diff::Tensor<T> rot({3, 3}), ctr({1, 3});
    for (int i = 0; i < 3; ++i) {
      ctr[i] = static_cast<T>(ext.center(i));
      for (int j = 0; j < 3; ++j) rot[3 * i + j] = static_cast<T>(ext.rotation(i, j));
    }
    auto dirs = g.matmul(dirs_cam, g.constant(rot));
    dir_blocks.push_back(dirs);
    point_blocks.push_back(g.ray_points(dirs, g.constant(ctr), t, s));
  }
  auto all_dirs = g.concat_rows(std::span<const diff::Value<T>>(dir_blocks));
  auto all_points = g.concat_rows(std::span<const diff::Value<T>>(point_blocks));
  DecodeNodes<T> dec = decode_batch(g, net, code_v, all_points, all_dirs, s);
  diff::Tensor<T> delta_tiled({kcount * rays, s});
  for (int64_t k = 0; k < kcount; ++k)
    std::copy(slab.delta.data.begin(), slab.delta.data.end(),
              delta_tiled.data.begin() + static_cast<std::ptrdiff_t>(k * rays * s));
  auto optical = g.mul(g.reshape(dec.sigma, {kcount * rays, s}), g.constant(delta_tiled));
  auto weights = g.volume_weights(optical);
  auto bg = g.constant(diff::Tensor<T>({1, 3}, {static_cast<T>(sampling.background[0]),
                                                static_cast<T>(sampling.background[1]),
                                                static_cast<T>(sampling.background[2])}));
  auto rgba = g.volume_blend(weights, dec.rgb, bg);
  const diff::Tensor<T>& out = g.value(rgba);
  std::vector<Image> images;
  images.reserve(cameras.size());
  for (int64_t k = 0; k < kcount; ++k) {
    Image img(4, K.height, K.width);
    for (int64_t p = 0; p < rays; ++p)
      for (int ch = 0; ch < 4; ++ch)
        img.at(ch, static_cast<int>(p / K.width), static_cast<int>(p % K.width)) =
            static_cast<float>(out[(k * rays + p) * 4 + ch]);
    images.push_back(std::move(img));
  }
  return images;
}

/// Render a full image (RGBA, alpha = accumulated opacity). Deterministic for
/// a fixed seed regardless of the number of threads.
template <typename T>
Image render_image(const diff::ParameterStore<T>& store, const DecoderConfig& cfg,
                   const diff::Tensor<T>& code, const camera::Extrinsics& ext,
                   const camera::Intrinsics& K, double near, double far,
                   const SamplingConfig& sampling, uint64_t seed, int threads) {
  const int64_t total = static_cast<int64_t>(K.width) * K.height;
  Image img(4, K.height, K.width);
  diff::Tensor<T> rot({3, 3}), ctr({1, 3});
  for (int i = 0; i < 3; ++i) {
    ctr[i] = static_cast<T>(ext.center(i));
    for (int j = 0; j < 3; ++j) rot[3 * i + j] = static_cast<T>(ext.rotation(i, j));
  }
  const int64_t chunk = 1024;
  const int64_t nchunks = (total + chunk - 1) / chunk;
  parallel_for(nchunks, threads, [&](int64_t c) {
    const int64_t p0 = c * chunk, p1 = std::min(total, p0 + chunk);
    RaySlab<T> slab = make_ray_slab<T>(K, p0, p1, near, far, sampling, seed);
    diff::Graph<T> g;
    DecoderNet<T> net = record_decoder(g, store, cfg, false);
    auto code_v = g.constant(code, "code");
    RenderNodes<T> nodes = build_render(g, net, code_v, g.constant(rot), g.constant(ctr), slab,
                                        sampling.background);
    const diff::Tensor<T>& rgba = g.value(nodes.rgba);
    for (int64_t i = 0; i < p1 - p0; ++i) {
      const int64_t pix = p0 + i;
      const int y = static_cast<int>(pix / K.width), x = static_cast<int>(pix % K.width);
      for (int ch = 0; ch < 4; ++ch)
        img.at(ch, y, x) = static_cast<float>(rgba[4 * i + ch]);
    }
  });
  return img;
}

}  // namespace nerfpose::render
