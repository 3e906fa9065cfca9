#pragma once

#include "nerfpose/diff/rng.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nerfpose::camera {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Camera pose: a point on the unit sphere plus distance, target point and
/// up hint. In constrained mode target is the origin, up is world z and the
/// distance comes from the scene configuration.
struct Pose {
  Vec3 direction = Vec3(0, 0, 1);  // unit vector from target toward the camera
  double distance = 1.0;
  Vec3 target = Vec3::Zero();
  Vec3 up_hint = Vec3(0, 0, 1);

  bool valid(double tol = 1e-6) const {
    return std::abs(direction.norm() - 1.0) <= tol && std::abs(up_hint.norm() - 1.0) <= tol &&
           distance > 0.0;
  }
};

/// World-to-camera rotation (rows: right, up, forward) and camera center.
struct Extrinsics {
  Mat3 rotation = Mat3::Identity();
  Vec3 center = Vec3::Zero();
};

struct Intrinsics {
  double focal = 1.0;  // pixels
  double cx = 0.5, cy = 0.5;
  int width = 1, height = 1;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
  double near = 0.0, far = 1.0;
};

/// Fallback used when the up hint is (anti)parallel to the viewing direction.
inline constexpr double kDegenerateUpThreshold = 1e-6;

/// Build extrinsics from a pose by Gram-Schmidt orthogonalization.
/// Convention: right-handed, camera looks along +forward toward the target,
/// image y grows downward.
inline Extrinsics gram_schmidt_camera(const Pose& pose) {
  Extrinsics ext;
  ext.center = pose.target + pose.distance * pose.direction;
  const Vec3 forward = (pose.target - ext.center).normalized();
  Vec3 up_hint = pose.up_hint;
  if (std::abs(up_hint.dot(forward)) > 1.0 - kDegenerateUpThreshold)
    up_hint = Vec3(1, 0, 0);  // deterministic tie-break
  const Vec3 right = up_hint.cross(forward).normalized();
  const Vec3 up = forward.cross(right);
  ext.rotation.row(0) = right;
  ext.rotation.row(1) = up;
  ext.rotation.row(2) = forward;
  return ext;
}

/// Unit direction (camera space) of the pixel-center ray for pixel (px, py).
inline Vec3 pixel_ray_cam(const Intrinsics& K, double px, double py) {
  return Vec3((px + 0.5 - K.cx) / K.focal, -(py + 0.5 - K.cy) / K.focal, 1.0).normalized();
}

/// One ray per pixel through the pixel center, row-major over the image.
inline std::vector<Ray> generate_rays(const Extrinsics& ext, const Intrinsics& K, double near,
                                      double far) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(K.width) * static_cast<size_t>(K.height));
  const Mat3 cam_to_world = ext.rotation.transpose();
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      Ray r;
      r.origin = ext.center;
      r.direction = (cam_to_world * pixel_ray_cam(K, x, y)).normalized();
      r.near = near;
      r.far = far;
      rays.push_back(r);
    }
  return rays;
}

/// Best rotation (det +1) aligning unit-normalized predicted center directions
/// onto true ones, minimizing sum ||R p_hat - p||^2 via the cross-covariance
/// SVD. Throws on rank-deficient (collinear) configurations.
inline Mat3 procrustes_align(const std::vector<Vec3>& predicted_centers,
                             const std::vector<Vec3>& true_centers) {
  if (predicted_centers.size() != true_centers.size() || predicted_centers.size() < 3)
    throw std::invalid_argument("procrustes_align: need >= 3 paired centers");
  Mat3 cov = Mat3::Zero();
  for (size_t i = 0; i < predicted_centers.size(); ++i)
    cov += true_centers[i].normalized() * predicted_centers[i].normalized().transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const int rank = (svd.singularValues().array() > 1e-9 * svd.singularValues()(0)).count();
  if (rank < 2)
    throw std::invalid_argument("procrustes_align: degenerate configuration (rank " +
                                std::to_string(rank) + ")");
  Mat3 um = svd.matrixU(), vm = svd.matrixV();
  Mat3 r = um * vm.transpose();
  if (r.determinant() < 0) {
    um.col(2) *= -1.0;
    r = um * vm.transpose();
  }
  return r;
}

/// Relative rotation angle in degrees, in [0, 180].
inline double geodesic_rotation_error(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

/// Center error as a percentage of the true camera distance to the origin.
/// `predicted` is expected to be already alignment-rotated.
inline double translation_error_pct(const Vec3& predicted, const Vec3& truth) {
  const double denom = truth.norm();
  if (denom <= 0.0) throw std::invalid_argument("translation_error: zero-norm true center");
  return 100.0 * (predicted - truth).norm() / denom;
}

// ---- pose priors -------------------------------------------------------------

enum class PriorFamily { UniformSphere, UpperHemisphere, GroundRing };

inline PriorFamily prior_family_from_string(const std::string& s) {
  if (s == "uniform-sphere") return PriorFamily::UniformSphere;
  if (s == "upper-hemisphere") return PriorFamily::UpperHemisphere;
  if (s == "ground-ring") return PriorFamily::GroundRing;
  throw std::invalid_argument("unknown pose prior family: " + s);
}

inline std::string to_string(PriorFamily f) {
  switch (f) {
    case PriorFamily::UniformSphere: return "uniform-sphere";
    case PriorFamily::UpperHemisphere: return "upper-hemisphere";
    case PriorFamily::GroundRing: return "ground-ring";
  }
  return "?";
}

/// Sampler descriptor over pose space. Every drawn sample satisfies the Pose
/// invariants. Distance/target/up distributions are fixed values here, with
/// the ground ring drawing its elevation band uniformly.
struct PosePrior {
  PriorFamily family = PriorFamily::UniformSphere;
  double distance = 1.0;
  Vec3 target = Vec3::Zero();
  Vec3 up_hint = Vec3(0, 0, 1);
  double ring_z_min = 0.05, ring_z_max = 0.35;  // GroundRing elevation band

  Pose sample(diff::Rng& rng) const {
    double z;
    switch (family) {
      case PriorFamily::UniformSphere:
        z = rng.uniform(-1.0, 1.0);
        break;
      case PriorFamily::UpperHemisphere:
        z = rng.uniform(0.0, 1.0);
        break;
      case PriorFamily::GroundRing:
        z = rng.uniform(ring_z_min, ring_z_max);
        break;
      default:
        z = 0.0;
    }
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    Pose p;
    p.direction = Vec3(s * std::cos(phi), s * std::sin(phi), z);
    p.distance = distance;
    p.target = target;
    p.up_hint = up_hint;
    return p;
  }
};

}  // namespace nerfpose::camera
