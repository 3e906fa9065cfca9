#include "nerfpose/evaluator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nerfpose::metrics {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

}  // namespace

PoseMetricsReport evaluate_poses(const std::vector<camera::Pose>& predicted,
                                 const std::vector<camera::Pose>& ground_truth,
                                 double threshold_deg) {
  if (predicted.size() != ground_truth.size() || predicted.size() < 3)
    throw std::invalid_argument("evaluate_poses: need >= 3 paired poses");
  std::vector<camera::Extrinsics> pred_ext, true_ext;
  std::vector<camera::Vec3> pred_centers, true_centers;
  for (size_t i = 0; i < predicted.size(); ++i) {
    pred_ext.push_back(camera::gram_schmidt_camera(predicted[i]));
    true_ext.push_back(camera::gram_schmidt_camera(ground_truth[i]));
    pred_centers.push_back(pred_ext.back().center);
    true_centers.push_back(true_ext.back().center);
  }
  PoseMetricsReport r;
  r.threshold_deg = threshold_deg;
  r.alignment = camera::procrustes_align(pred_centers, true_centers);

  std::vector<double> rot, trans;
  int hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const camera::Mat3 aligned_rot = pred_ext[i].rotation * r.alignment.transpose();
    const double rerr = camera::geodesic_rotation_error(aligned_rot, true_ext[i].rotation);
    const double terr =
        camera::translation_error_pct(r.alignment * pred_centers[i], true_centers[i]);
    r.per_image.push_back({rerr, terr});
    rot.push_back(rerr);
    trans.push_back(terr);
    if (rerr <= threshold_deg) ++hits;
  }
  r.accuracy_pct = 100.0 * hits / static_cast<double>(predicted.size());
  r.median_rotation_deg = median(rot);
  r.median_translation_pct = median(trans);
  return r;
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_size(b)) throw std::invalid_argument("ssim: resolution mismatch");
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (a.height < kWindow || a.width < kWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  double kernel[kWindow][kWindow];
  double ksum = 0.0;
  for (int i = 0; i < kWindow; ++i)
    for (int j = 0; j < kWindow; ++j) {
      const double di = i - (kWindow - 1) / 2.0, dj = j - (kWindow - 1) / 2.0;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * kSigma * kSigma));
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= ksum;

  double total = 0.0;
  int64_t count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y + kWindow <= a.height; ++y)
      for (int x = 0; x + kWindow <= a.width; ++x) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < kWindow; ++i)
          for (int j = 0; j < kWindow; ++j) {
            const double w = kernel[i][j];
            const double va = a.at(c, y + i, x + j);
            const double vb = b.at(c, y + i, x + j);
            mx += w * va;
            my += w * vb;
            xx += w * va * va;
            yy += w * vb * vb;
            xy += w * va * vb;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

std::string pose_report_json(const PoseMetricsReport& r, bool per_image_table) {
  nlohmann::ordered_json j;
  j["accuracy_threshold_deg"] = r.threshold_deg;
  j["accuracy_pct"] = r.accuracy_pct;
  j["median_rotation_deg"] = r.median_rotation_deg;
  j["median_translation_pct"] = r.median_translation_pct;
  j["alignment_rotation"] = nlohmann::ordered_json::array();
  for (int i = 0; i < 3; ++i)
    j["alignment_rotation"].push_back({r.alignment(i, 0), r.alignment(i, 1), r.alignment(i, 2)});
  if (per_image_table) {
    j["per_image"] = nlohmann::ordered_json::array();
    for (const auto& pi : r.per_image)
      j["per_image"].push_back(
          {{"rotation_deg", pi.rotation_deg}, {"translation_pct", pi.translation_pct}});
  }
  return j.dump(2);
}

std::string recon_report_json(const ReconMetricsReport& r) {
  nlohmann::ordered_json j;
  j["psnr_db"] = r.psnr_db;
  j["ssim"] = r.ssim;
  j["image_count"] = r.image_count;
  return j.dump(2);
}

}  // namespace nerfpose::metrics
