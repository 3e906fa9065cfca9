#include "nerfpose/renderer.hpp"

#include "nerfpose/diff/finite_diff.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace nerfpose;
using namespace nerfpose::render;
using diff::Graph;
using diff::Tensor64;
using diff::Value;

namespace {

DecoderConfig small_cfg() {
  DecoderConfig cfg;
  return cfg;
}

template <typename T>
diff::ParameterStore<T> random_decoder(uint64_t seed, const DecoderConfig& cfg) {
  diff::ParameterStore<T> store;
  diff::Rng rng(seed);
  init_decoder_params(store, cfg, rng);
  return store;
}

template <typename T>
diff::Tensor<T> random_code(uint64_t seed, int dim) {
  diff::Rng rng(seed);
  return testutil::random_tensor<T>({1, dim}, rng);
}

}  // namespace

TEST_CASE("positional encoding matches its closed-form examples") {
  Graph<double> g;
  auto zero = g.constant(Tensor64::zeros({1, 3}));
  auto enc0 = g.positional_encode(zero, 8);
  REQUIRE(g.value(enc0).numel() == 24);
  for (int i = 0; i < 24; ++i) CHECK(g.value(enc0)[i] == doctest::Approx(1.0).epsilon(1e-12));

  auto x = g.constant(Tensor64({1, 3}, {1.0, 0.0, 0.0}));
  auto enc1 = g.positional_encode(x, 1);
  CHECK(g.value(enc1)[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(g.value(enc1)[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.value(enc1)[2] == doctest::Approx(1.0).epsilon(1e-12));

  diff::Rng rng(3);
  auto big = g.constant(testutil::random_tensor<double>({16, 3}, rng, -20.0, 20.0));
  auto enc = g.positional_encode(big, 8);
  CHECK(g.value(enc).arr().abs().maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("density is bit-identical across viewing directions") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(11, cfg);
  auto code = random_code<double>(12, cfg.code_dim);
  diff::Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    std::array<double, 3> x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto unit = [&] {
      camera::Vec3 v(rng.normal(), rng.normal(), rng.normal());
      v.normalize();
      return std::array<double, 3>{v.x(), v.y(), v.z()};
    };
    RadianceSample a = decode_radiance(store, cfg, code, x, unit());
    RadianceSample b = decode_radiance(store, cfg, code, x, unit());
    CHECK(a.sigma == b.sigma);  // bitwise
    CHECK(a.sigma >= 0.0);
    for (double c : a.rgb) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
}

TEST_CASE("density pathway is structurally independent of the direction input") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(21, cfg);
  Graph<double> g;
  auto net = record_decoder(g, store, cfg, false);
  auto code = g.constant(random_code<double>(22, cfg.code_dim));
  auto pts = g.leaf(Tensor64::zeros({4, 3}), "pts", true);
  auto dirs = g.leaf(Tensor64({2, 3}, {1, 0, 0, 0, 1, 0}), "dirs", true);
  auto dec = decode_batch(g, net, code, pts, dirs, 2);
  CHECK_FALSE(g.depends_on(dec.sigma, dirs));
  CHECK(g.depends_on(dec.rgb, dirs));
  CHECK(g.depends_on(dec.sigma, pts));
}

TEST_CASE("appearance conditioning reaches the color output") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(31, cfg);
  std::array<double, 3> x = {0.2, -0.1, 0.3};
  std::array<double, 3> d = {0.0, 0.0, 1.0};
  RadianceSample a = decode_radiance(store, cfg, random_code<double>(1, cfg.code_dim), x, d);
  RadianceSample b = decode_radiance(store, cfg, random_code<double>(2, cfg.code_dim), x, d);
  CHECK(std::abs(a.rgb[0] - b.rgb[0]) + std::abs(a.rgb[1] - b.rgb[1]) +
            std::abs(a.rgb[2] - b.rgb[2]) >
        1e-6);
}

TEST_CASE("zeroed color head emits mid-gray") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(41, cfg);
  store.value("dec.color_w").arr() = 0.0;
  store.value("dec.color_b").arr() = 0.0;
  store.value("dec.dir_w").arr() = 0.0;
  RadianceSample s = decode_radiance(store, cfg, random_code<double>(3, cfg.code_dim),
                                     {0.1, 0.2, 0.3}, {0, 0, 1});
  for (double c : s.rgb) CHECK(c == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("decode_radiance rejects invalid inputs") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(51, cfg);
  auto code = random_code<double>(4, cfg.code_dim);
  CHECK_THROWS_AS(decode_radiance(store, cfg, code, {std::nan(""), 0, 0}, {0, 0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(decode_radiance(store, cfg, code, {0, 0, 0}, {0, 0, 2.0}),
                  std::invalid_argument);
}

TEST_CASE("volume quadrature closed forms") {
  SUBCASE("zero density gives the background and zero alpha, exactly") {
    Graph<double> g;
    auto s = g.constant(Tensor64::zeros({1, 8}));
    auto w = g.volume_weights(s);
    auto rgb = g.constant(diff::Tensor<double>::full({8, 3}, 0.25));
    auto bg = g.constant(Tensor64({1, 3}, {1.0, 0.9, 0.8}));
    auto out = g.volume_blend(w, rgb, bg);
    CHECK(g.value(out)[0] == 1.0);
    CHECK(g.value(out)[1] == 0.9);
    CHECK(g.value(out)[2] == 0.8);
    CHECK(g.value(out)[3] == 0.0);
  }
  SUBCASE("single sample with optical depth ln 2 blends half and half") {
    Graph<double> g;
    auto s = g.constant(Tensor64({1, 1}, {std::log(2.0)}));
    auto w = g.volume_weights(s);
    CHECK(g.value(w)[0] == doctest::Approx(0.5).epsilon(1e-12));
    auto rgb = g.constant(Tensor64({1, 3}, {0.2, 0.4, 0.6}));
    auto bg = g.constant(Tensor64({1, 3}, {1.0, 1.0, 1.0}));
    auto out = g.volume_blend(w, rgb, bg);
    CHECK(g.value(out)[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(g.value(out)[1] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(g.value(out)[2] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(g.value(out)[3] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("weight normalization identity holds per ray") {
  diff::Rng rng(61);
  Graph<double> g;
  auto s = g.constant(testutil::random_tensor<double>({256, 16}, rng, 0.0, 1.5));
  auto w = g.volume_weights(s);
  const Tensor64& sv = g.value(s);
  const Tensor64& wv = g.value(w);
  for (int r = 0; r < 256; ++r) {
    double wsum = 0.0, prod = 1.0;
    for (int i = 0; i < 16; ++i) {
      wsum += wv[r * 16 + i];
      prod *= 1.0 - (1.0 - std::exp(-sv[r * 16 + i]));
    }
    CHECK(std::abs(wsum - (1.0 - prod)) < 1e-6);
  }
}

TEST_CASE("increasing one sample's density never decreases its weight") {
  diff::Rng rng(71);
  for (int t = 0; t < 200; ++t) {
    Tensor64 s = testutil::random_tensor<double>({1, 12}, rng, 0.0, 1.0);
    const int k = static_cast<int>(rng.index(12));
    Graph<double> g;
    auto w0 = g.volume_weights(g.constant(s));
    const double before = g.value(w0)[k];
    s[k] += rng.uniform(0.0, 1.0);
    Graph<double> g2;
    auto w1 = g2.volume_weights(g2.constant(s));
    CHECK(g2.value(w1)[k] >= before - 1e-12);
  }
}

TEST_CASE("constant density alpha matches the closed form against a dense oracle") {
  const double sigma = 0.5, near = 1.0, far = 3.0;
  auto alpha_at = [&](int samples) {
    SamplingConfig sc;
    sc.samples = samples;
    sc.stratified = true;
    camera::Intrinsics k1;
    k1.width = k1.height = 1;
    RaySlab<double> slab = make_ray_slab<double>(k1, 0, 1, near, far, sc, 99);
    Graph<double> g;
    Tensor64 s({1, samples});
    for (int i = 0; i < samples; ++i) s[i] = sigma * slab.delta[i];
    auto w = g.volume_weights(g.constant(s));
    return g.value(w).arr().sum();
  };
  const double closed = 1.0 - std::exp(-sigma * (far - near));
  const double dense = alpha_at(100000);  // quadrature oracle
  CHECK(std::abs(dense - closed) < 1e-4);
  CHECK(std::abs(alpha_at(256) - closed) < 1e-3);
}

TEST_CASE("in-graph camera agrees with the plain Gram-Schmidt construction") {
  diff::Rng rng(81);
  for (int t = 0; t < 50; ++t) {
    camera::Pose p;
    const double z = rng.uniform(-1.0, 1.0), phi = rng.uniform(0.0, 2 * M_PI);
    const double sq = std::sqrt(1.0 - z * z);
    p.direction = camera::Vec3(sq * std::cos(phi), sq * std::sin(phi), z);
    p.distance = rng.uniform(0.5, 3.0);
    camera::Extrinsics plain = camera::gram_schmidt_camera(p);

    Graph<double> g;
    PoseNodes<double> pn;
    pn.direction = g.leaf(Tensor64({1, 3}, {p.direction.x(), p.direction.y(), p.direction.z()}),
                          "dir", true);
    pn.distance = g.constant(Tensor64({1, 1}, {p.distance}));
    pn.target = g.constant(Tensor64({1, 3}, {0, 0, 0}));
    pn.up = g.constant(Tensor64({1, 3}, {0, 0, 1}));
    CameraNodes<double> cam = build_camera(g, pn);
    const Tensor64& rot = g.value(cam.rotation);
    const Tensor64& ctr = g.value(cam.center);
    for (int i = 0; i < 3; ++i) {
      CHECK(ctr[i] == doctest::Approx(plain.center(i)).epsilon(1e-10));
      for (int j = 0; j < 3; ++j)
        CHECK(rot[3 * i + j] == doctest::Approx(plain.rotation(i, j)).epsilon(1e-10));
    }
  }
}

TEST_CASE("render_image: 1x1 equals render_ray on the principal ray") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(91, cfg);
  auto code = random_code<double>(5, cfg.code_dim);
  camera::Pose p;
  p.direction = camera::Vec3(1, 0, 0);
  p.distance = 2.0;
  camera::Extrinsics ext = camera::gram_schmidt_camera(p);
  camera::Intrinsics k1;
  k1.width = k1.height = 1;
  k1.cx = k1.cy = 0.5;
  k1.focal = 1.0;
  SamplingConfig sc;
  sc.samples = 16;
  Image img = render_image(store, cfg, code, ext, k1, 1.0, 3.0, sc, 7, 1);
  camera::Ray principal;
  principal.origin = ext.center;
  principal.direction = ext.rotation.row(2).transpose();
  principal.near = 1.0;
  principal.far = 3.0;
  auto [rgb, alpha] = render_ray(store, cfg, code, principal, sc, 7);
  CHECK(img.at(0, 0, 0) == doctest::Approx(rgb[0]).epsilon(1e-6));
  CHECK(img.at(1, 0, 0) == doctest::Approx(rgb[1]).epsilon(1e-6));
  CHECK(img.at(2, 0, 0) == doctest::Approx(rgb[2]).epsilon(1e-6));
  CHECK(img.at(3, 0, 0) == doctest::Approx(alpha).epsilon(1e-6));
}

TEST_CASE("render_image: suppressed density yields the background everywhere") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(92, cfg);
  store.value("dec.sigma_b").arr() = -200.0;  // softplus underflows to zero alpha
  auto code = random_code<double>(6, cfg.code_dim);
  camera::Extrinsics ext = camera::gram_schmidt_camera({});
  camera::Intrinsics k;
  k.width = k.height = 4;
  k.cx = k.cy = 2.0;
  k.focal = 3.0;
  SamplingConfig sc;
  sc.samples = 8;
  Image img = render_image(store, cfg, code, ext, k, 0.5, 1.5, sc, 1, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(img.at(0, y, x) == 1.0f);
      CHECK(img.at(3, y, x) == 0.0f);
    }
}

TEST_CASE("render_image is bit-identical for a fixed seed, any thread count") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<float>(93, cfg);
  auto code = random_code<float>(7, cfg.code_dim);
  camera::Extrinsics ext = camera::gram_schmidt_camera({});
  camera::Intrinsics k;
  k.width = k.height = 8;
  k.cx = k.cy = 4.0;
  k.focal = 6.0;
  SamplingConfig sc;
  sc.samples = 12;
  Image a = render_image(store, cfg, code, ext, k, 0.5, 1.5, sc, 42, 1);
  Image b = render_image(store, cfg, code, ext, k, 0.5, 1.5, sc, 42, 2);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

TEST_CASE("rendered pixel gradients match finite differences (weights and pose)") {
  DecoderConfig cfg = small_cfg();
  auto store = random_decoder<double>(94, cfg);
  auto code = random_code<double>(8, cfg.code_dim);
  camera::Pose pose;
  pose.direction = camera::Vec3(std::sqrt(0.5), 0.0, std::sqrt(0.5));
  pose.distance = 2.0;
  camera::Intrinsics k;
  k.width = k.height = 2;
  k.cx = k.cy = 1.0;
  k.focal = 2.0;
  SamplingConfig sc;
  sc.samples = 8;
  RaySlab<double> slab = make_ray_slab<double>(k, 0, 4, 1.0, 3.0, sc, 5);

  Graph<double> g;
  auto net = record_decoder(g, store, cfg, true);
  auto code_v = g.constant(code);
  PoseNodes<double> pn;
  pn.direction = g.leaf(
      Tensor64({1, 3}, {pose.direction.x(), pose.direction.y(), pose.direction.z()}), "dir", true);
  pn.distance = g.constant(Tensor64({1, 1}, {pose.distance}));
  pn.target = g.constant(Tensor64({1, 3}, {0, 0, 0}));
  pn.up = g.constant(Tensor64({1, 3}, {0, 0, 1}));
  auto cam = build_camera(g, pn);
  auto nodes = build_render(g, net, code_v, cam.rotation, cam.center, slab, {1, 1, 1});
  auto loss = g.mean(nodes.rgba);
  g.backward(loss);

  Tensor64 dir_grad = g.grad(pn.direction);
  auto f = [&](const Tensor64& d) {
    g.bind(pn.direction, d);
    g.replay();
    return g.value(loss)[0];
  };
  Tensor64 point({1, 3}, {pose.direction.x(), pose.direction.y(), pose.direction.z()});
  Tensor64 fd = diff::finite_difference_gradient<double>(f, point, 1e-5);
  CHECK(testutil::max_rel_err(dir_grad, fd) < 1e-3);
  f(point);  // restore

  // a couple of decoder weights
  auto grads = g.param_grads();
  diff::Rng rng(95);
  for (const char* name : {"dec.w1", "dec.sigma_w", "dec.color_w"}) {
    Tensor64& theta = store.value(name);
    const int64_t idx = rng.index(theta.numel());
    const double saved = theta[idx];
    const double h = 1e-5;
    auto eval_loss = [&]() {
      Graph<double> gg;
      auto nn = record_decoder(gg, store, cfg, false);
      auto cc = gg.constant(code);
      auto rr = gg.constant(g.value(cam.rotation));
      auto ee = gg.constant(g.value(cam.center));
      auto out = build_render(gg, nn, cc, rr, ee, slab, {1, 1, 1});
      return gg.value(gg.mean(out.rgba))[0];
    };
    theta[idx] = saved + h;
    const double hi = eval_loss();
    theta[idx] = saved - h;
    const double lo = eval_loss();
    theta[idx] = saved;
    const double fd_w = (hi - lo) / (2 * h);
    INFO(name);
    CHECK(testutil::rel_err(grads[name][idx], fd_w) < 1e-3);
  }
}
