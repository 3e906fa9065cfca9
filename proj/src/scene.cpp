#include "nerfpose/scene.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nerfpose::scene {

void ToySceneSpec::validate() const {
  if (spheres.empty() && boxes.empty())
    throw std::invalid_argument("scene '" + instance_id + "': needs at least one primitive");
  for (const auto& s : spheres)
    if (s.center.norm() + s.radius > 1.0)
      throw std::invalid_argument("scene '" + instance_id + "': sphere outside unit sphere");
  for (const auto& b : boxes)
    if (b.center.norm() + b.half_extents.norm() > 1.0)
      throw std::invalid_argument("scene '" + instance_id + "': box outside unit sphere");
}

CameraConfig default_camera(int resolution) {
  CameraConfig cam;
  cam.intrinsics.width = cam.intrinsics.height = resolution;
  cam.intrinsics.cx = cam.intrinsics.cy = resolution / 2.0;
  cam.intrinsics.focal = 1.5 * resolution;  // object of radius ~0.5 fills the frame from d=2
  cam.near = 1.0;
  cam.far = 3.0;
  cam.distance = 2.0;
  return cam;
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  Color albedo = {0, 0, 0};
  bool valid() const { return std::isfinite(t); }
};

void intersect_sphere(const Sphere& s, const Vec3& o, const Vec3& d, Hit& best) {
  const Vec3 oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0) return;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < 1e-6) t = -b + sq;
  if (t < 1e-6 || t >= best.t) return;
  best.t = t;
  best.normal = (o + t * d - s.center).normalized();
  best.albedo = s.albedo;
}

void intersect_box(const Box& box, const Vec3& o, const Vec3& d, Hit& best) {
  // slab method, tracking which axis bounds the entry point
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    const double lo = box.center(i) - box.half_extents(i);
    const double hi = box.center(i) + box.half_extents(i);
    if (std::abs(d(i)) < 1e-12) {
      if (o(i) < lo || o(i) > hi) return;
      continue;
    }
    double ta = (lo - o(i)) / d(i);
    double tb = (hi - o(i)) / d(i);
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = i;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return;
  }
  if (axis < 0 || t0 < 1e-6 || t0 >= best.t) return;
  best.t = t0;
  const Vec3 p = o + t0 * d;
  Vec3 n = Vec3::Zero();
  const bool positive_face = p(axis) > box.center(axis);
  n(axis) = positive_face ? 1.0 : -1.0;
  best.normal = n;
  best.albedo = box.face_albedo[static_cast<size_t>(2 * axis + (positive_face ? 1 : 0))];
}

}  // namespace

std::pair<Image, Image> render_ground_truth(const ToySceneSpec& spec, const camera::Pose& pose,
                                            const camera::Intrinsics& intrinsics) {
  spec.validate();
  const camera::Extrinsics ext = camera::gram_schmidt_camera(pose);
  Image rgb(3, intrinsics.height, intrinsics.width);
  Image mask(1, intrinsics.height, intrinsics.width);
  const camera::Mat3 cam_to_world = ext.rotation.transpose();
  for (int y = 0; y < intrinsics.height; ++y)
    for (int x = 0; x < intrinsics.width; ++x) {
      const Vec3 dir = (cam_to_world * camera::pixel_ray_cam(intrinsics, x, y)).normalized();
      Hit hit;
      for (const auto& s : spec.spheres) intersect_sphere(s, ext.center, dir, hit);
      for (const auto& b : spec.boxes) intersect_box(b, ext.center, dir, hit);
      if (!hit.valid()) {
        for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = 1.f;  // white background
        continue;
      }
      mask.at(0, y, x) = 1.f;
      const double lambert = std::max(0.0, hit.normal.dot(spec.light_dir));
      const double shade = lambert + spec.ambient;
      for (int c = 0; c < 3; ++c)
        rgb.at(c, y, x) = std::min(1.f, hit.albedo[static_cast<size_t>(c)] *
                                            static_cast<float>(shade));
    }
  return {std::move(rgb), std::move(mask)};
}

ToySceneSpec make_asymmetric_box(const std::string& instance_id, float hue_shift) {
  ToySceneSpec spec;
  spec.instance_id = instance_id;
  Box box;
  box.center = Vec3(0, 0, 0);
  box.half_extents = Vec3(0.42, 0.3, 0.2);
  auto shift = [hue_shift](float r, float g, float b) {
    return Color{std::clamp(r + hue_shift, 0.05f, 1.f), g,
                 std::clamp(b - hue_shift, 0.05f, 1.f)};
  };
  box.face_albedo = {shift(0.95f, 0.15f, 0.10f),   // -x  red
                     shift(0.10f, 0.55f, 0.95f),   // +x  blue
                     shift(0.15f, 0.85f, 0.25f),   // -y  green
                     shift(0.95f, 0.85f, 0.15f),   // +y  yellow
                     shift(0.60f, 0.20f, 0.85f),   // -z  violet
                     shift(0.90f, 0.90f, 0.90f)};  // +z  white
  spec.boxes.push_back(box);
  // small off-center sphere, extra asymmetry cue
  Sphere s;
  s.center = Vec3(0.32, 0.28, 0.32);
  s.radius = 0.14;
  s.albedo = shift(0.95f, 0.45f, 0.10f);
  spec.spheres.push_back(s);
  return spec;
}

ToySceneSpec make_near_symmetric_box(const std::string& instance_id) {
  // opposite faces nearly identical: a 2-fold near-symmetry about z
  ToySceneSpec spec;
  spec.instance_id = instance_id;
  Box box;
  box.center = Vec3(0, 0, 0);
  box.half_extents = Vec3(0.42, 0.26, 0.2);
  const Color side_a = {0.85f, 0.25f, 0.20f};
  const Color side_a2 = {0.75f, 0.28f, 0.22f};  // slightly dimmer twin
  const Color side_b = {0.20f, 0.45f, 0.85f};
  const Color side_b2 = {0.22f, 0.42f, 0.75f};
  box.face_albedo = {side_a, side_a2, side_b, side_b2,
                     Color{0.5f, 0.5f, 0.5f}, Color{0.6f, 0.6f, 0.6f}};
  spec.boxes.push_back(box);
  return spec;
}

}  // namespace nerfpose::scene
