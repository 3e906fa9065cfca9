#pragma once

#include "nerfpose/camera.hpp"
#include "nerfpose/image.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace nerfpose::scene {

using camera::Vec3;
using Color = std::array<float, 3>;

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
  Color albedo = {0.8f, 0.2f, 0.2f};
};

/// Axis-aligned box with per-face albedo, face order -x,+x,-y,+y,-z,+z.
struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3(0.3, 0.3, 0.3);
  std::array<Color, 6> face_albedo;
};

struct ToySceneSpec {
  std::string instance_id;
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  Vec3 light_dir = Vec3(0.4, -0.3, 0.85).normalized();  // toward the light
  double ambient = 0.35;

  /// At least one primitive, all inside the unit-radius bounding sphere.
  void validate() const;
};

/// Shared camera settings for a generated dataset.
struct CameraConfig {
  camera::Intrinsics intrinsics;
  double near = 1.0, far = 3.0;
  double distance = 2.0;  // constrained-mode camera distance
  Color background = {1.f, 1.f, 1.f};
};

CameraConfig default_camera(int resolution);

/// Exact ray-primitive intersection with Lambertian shading
/// (albedo * (max(0, n.l) + ambient), white background) plus the hit mask.
std::pair<Image, Image> render_ground_truth(const ToySceneSpec& spec, const camera::Pose& pose,
                                            const camera::Intrinsics& intrinsics);

// Canned instances used by configs and tests.
ToySceneSpec make_asymmetric_box(const std::string& instance_id, float hue_shift = 0.f);
ToySceneSpec make_near_symmetric_box(const std::string& instance_id);

}  // namespace nerfpose::scene
