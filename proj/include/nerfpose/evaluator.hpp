#pragma once

#include "nerfpose/camera.hpp"
#include "nerfpose/image.hpp"

#include <string>
#include <vector>

namespace nerfpose::metrics {

struct PoseMetricsReport {
  double threshold_deg = 10.0;
  double accuracy_pct = 0.0;  // fraction of per-image rotation errors <= threshold
  double median_rotation_deg = 0.0;
  double median_translation_pct = 0.0;
  camera::Mat3 alignment = camera::Mat3::Identity();
  struct PerImage {
    double rotation_deg;
    double translation_pct;
  };
  std::vector<PerImage> per_image;
};

struct ReconMetricsReport {
  double psnr_db = 0.0;  // mean over images
  double ssim = 0.0;     // mean over images
  int image_count = 0;
};

/// Procrustes-align predicted camera centers to ground truth, then report
/// per-image geodesic rotation and normalized translation errors.
PoseMetricsReport evaluate_poses(const std::vector<camera::Pose>& predicted,
                                 const std::vector<camera::Pose>& ground_truth,
                                 double threshold_deg = 10.0);

/// 10*log10(1/MSE) on [0,1] images; zero MSE reported as the 99 dB cap.
double psnr(const Image& a, const Image& b);
inline constexpr double kPsnrCap = 99.0;

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// stabilizers (0.01)^2 and (0.03)^2, averaged over channels and windows.
double ssim(const Image& a, const Image& b);

std::string pose_report_json(const PoseMetricsReport& r, bool per_image_table);
std::string recon_report_json(const ReconMetricsReport& r);

}  // namespace nerfpose::metrics
