#include "nerfpose/camera.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

using namespace nerfpose;
using namespace nerfpose::camera;

namespace {

Mat3 random_rotation(diff::Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

Pose random_pose(diff::Rng& rng) {
  Pose p;
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2 * M_PI);
  const double s = std::sqrt(1.0 - z * z);
  p.direction = Vec3(s * std::cos(phi), s * std::sin(phi), z);
  p.distance = rng.uniform(0.5, 4.0);
  p.target = Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
  p.up_hint = Vec3(0, 0, 1);
  return p;
}

}  // namespace

TEST_CASE("gram_schmidt_camera matches the hand-worked example") {
  Pose p;
  p.direction = Vec3(1, 0, 0);
  p.distance = 2.0;
  Extrinsics e = gram_schmidt_camera(p);
  CHECK(e.center.isApprox(Vec3(2, 0, 0), 1e-12));
  CHECK(e.rotation.row(2).transpose().isApprox(Vec3(-1, 0, 0), 1e-12));  // forward
  CHECK(e.rotation.row(0).transpose().isApprox(Vec3(0, -1, 0), 1e-12));  // right
  CHECK(e.rotation.row(1).transpose().isApprox(Vec3(0, 0, 1), 1e-12));   // up
}

TEST_CASE("gram_schmidt_camera takes the deterministic fallback on parallel up") {
  Pose p;
  p.direction = Vec3(0, 0, 1);
  p.distance = 1.0;
  Extrinsics e = gram_schmidt_camera(p);
  CHECK(e.rotation.row(2).transpose().isApprox(Vec3(0, 0, -1), 1e-12));
  CHECK((e.rotation.transpose() * e.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(e.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gram_schmidt_camera is orthonormal over many random poses") {
  diff::Rng rng(101);
  double worst = 0.0, worst_det = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Extrinsics e = gram_schmidt_camera(random_pose(rng));
    worst = std::max(worst, (e.rotation.transpose() * e.rotation - Mat3::Identity()).norm());
    worst_det = std::max(worst_det, std::abs(e.rotation.determinant() - 1.0));
  }
  CHECK(worst < 1e-6);
  CHECK(worst_det < 1e-6);
}

TEST_CASE("generate_rays: principal pixel looks along forward, shared origin") {
  diff::Rng rng(7);
  Pose p = random_pose(rng);
  Extrinsics e = gram_schmidt_camera(p);
  Intrinsics k;
  k.width = k.height = 5;
  k.cx = k.cy = 2.5;
  k.focal = 4.0;
  auto rays = generate_rays(e, k, 0.5, 2.0);
  REQUIRE(rays.size() == 25);
  // pixel (2,2) center is the principal point
  CHECK(rays[12].direction.isApprox(e.rotation.row(2).transpose(), 1e-9));
  for (const auto& r : rays) {
    CHECK(r.origin.isApprox(e.center, 1e-12));
    CHECK(r.direction.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.near < r.far);
  }

  Intrinsics k1;
  k1.width = k1.height = 1;
  k1.cx = k1.cy = 0.5;
  k1.focal = 2.0;
  auto single = generate_rays(e, k1, 0.5, 2.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0].direction.isApprox(e.rotation.row(2).transpose(), 1e-9));
}

TEST_CASE("ray directions survive uniform 2x upscaling of resolution and intrinsics") {
  Intrinsics k;
  k.width = 8;
  k.height = 6;
  k.focal = 7.0;
  k.cx = 4.1;
  k.cy = 2.9;
  Intrinsics k2 = k;
  k2.width *= 2;
  k2.height *= 2;
  k2.focal *= 2;
  k2.cx *= 2;
  k2.cy *= 2;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      Vec3 a = pixel_ray_cam(k, x, y);
      Vec3 b = pixel_ray_cam(k2, 2 * x + 0.5, 2 * y + 0.5);
      CHECK((a - b).norm() < 1e-12);
    }
}

TEST_CASE("procrustes_align recovers planted rotations") {
  diff::Rng rng(13);
  std::vector<Vec3> truth;
  for (int i = 0; i < 20; ++i) truth.push_back(random_pose(rng).direction * 2.0);

  SUBCASE("identity on equal sets") {
    Mat3 r = procrustes_align(truth, truth);
    CHECK((r - Mat3::Identity()).norm() < 1e-9);
  }
  SUBCASE("exact recovery of a known rotation") {
    Mat3 q = random_rotation(rng);
    std::vector<Vec3> pred;
    for (const auto& t : truth) pred.push_back(q.transpose() * t);
    Mat3 r = procrustes_align(pred, truth);
    CHECK((r - q).norm() < 1e-6);
  }
  SUBCASE("degenerate collinear input names the rank") {
    std::vector<Vec3> line_p = {Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
    CHECK_THROWS_WITH_AS(procrustes_align(line_p, line_p), doctest::Contains("rank"),
                         std::invalid_argument);
  }
  SUBCASE("fewer than 3 samples is rejected") {
    std::vector<Vec3> two = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
    CHECK_THROWS_AS(procrustes_align(two, two), std::invalid_argument);
  }
}

TEST_CASE("geodesic_rotation_error endpoints and metric properties") {
  Mat3 i = Mat3::Identity();
  CHECK(geodesic_rotation_error(i, i) == doctest::Approx(0.0));
  Mat3 flip = Eigen::AngleAxisd(M_PI, Vec3::UnitZ()).toRotationMatrix();
  CHECK(geodesic_rotation_error(flip, i) == doctest::Approx(180.0).epsilon(1e-9));
  diff::Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    Vec3 axis = random_pose(rng).direction;
    Mat3 quarter = Eigen::AngleAxisd(M_PI / 2, axis).toRotationMatrix();
    CHECK(geodesic_rotation_error(quarter, i) == doctest::Approx(90.0).epsilon(1e-9));
    Mat3 a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng);
    const double ab = geodesic_rotation_error(a, b);
    const double ba = geodesic_rotation_error(b, a);
    CHECK(std::abs(ab - ba) < 1e-9);
    CHECK(ab <= geodesic_rotation_error(a, c) + geodesic_rotation_error(c, b) + 1e-9);
  }
}

TEST_CASE("translation error percentages") {
  CHECK(translation_error_pct(Vec3(1, 2, 3), Vec3(1, 2, 3)) == doctest::Approx(0.0));
  CHECK(translation_error_pct(Vec3(1.1, 2.2, 3.3), Vec3(1, 2, 3)) ==
        doctest::Approx(10.0).epsilon(1e-9));
  CHECK(translation_error_pct(Vec3(-1, -2, -3), Vec3(1, 2, 3)) ==
        doctest::Approx(200.0).epsilon(1e-9));
  CHECK_THROWS_AS(translation_error_pct(Vec3(1, 0, 0), Vec3(0, 0, 0)), std::invalid_argument);
}

TEST_CASE("pose priors emit valid poses from their stated support") {
  diff::Rng rng(19);
  PosePrior upper;
  upper.family = PriorFamily::UpperHemisphere;
  upper.distance = 2.0;
  for (int i = 0; i < 2000; ++i) {
    Pose p = upper.sample(rng);
    CHECK(p.valid());
    CHECK(p.direction.z() >= 0.0);
  }
  PosePrior ring;
  ring.family = PriorFamily::GroundRing;
  for (int i = 0; i < 2000; ++i) {
    Pose p = ring.sample(rng);
    CHECK(p.valid());
    CHECK(p.direction.z() >= ring.ring_z_min - 1e-12);
    CHECK(p.direction.z() <= ring.ring_z_max + 1e-12);
  }
  PosePrior sphere;
  sphere.family = PriorFamily::UniformSphere;
  int north = 0;
  for (int i = 0; i < 2000; ++i) north += sphere.sample(rng).direction.z() > 0;
  CHECK(north > 800);
  CHECK(north < 1200);
}
