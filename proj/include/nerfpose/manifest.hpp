#pragma once

#include "nerfpose/camera.hpp"
#include "nerfpose/diff/rng.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/scene.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nerfpose::scene {

struct ManifestRecord {
  std::string image_path;  // relative to the manifest directory
  std::string mask_path;   // empty when absent
  std::string instance_id;
  std::string split;  // train | val | test
  camera::Intrinsics intrinsics;
  std::optional<camera::Pose> pose;  // required for val/test
};

/// The single dataset interface: external data can be adapted by writing a
/// manifest, no loader changes.
struct DatasetManifest {
  std::filesystem::path root;  // directory containing manifest.json
  CameraConfig cam;
  std::vector<ManifestRecord> records;

  std::vector<size_t> split_indices(const std::string& split) const;
  std::map<std::string, std::vector<size_t>> instance_groups(const std::string& split) const;
  void validate() const;
};

DatasetManifest load_manifest(const std::filesystem::path& manifest_json);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& manifest_json);

/// Record image loaded and composited onto the dataset background via its mask.
Image load_composited(const DatasetManifest& m, size_t record_idx);

struct ImagePair {
  Image source;  // I'
  Image target;  // I
  std::string instance_id;
  size_t source_idx = 0, target_idx = 0;
};

/// Uniformly selects an instance, then two of its views with replacement
/// (single-view instances yield a degenerate I = I' pair).
ImagePair sample_pair(const DatasetManifest& m, diff::Rng& rng,
                      const std::string& split = "train");

struct GenerateConfig {
  int train_views = 16;
  int val_views = 0;
  int test_views = 0;
  camera::PosePrior prior;
  CameraConfig cam;
  uint64_t seed = 0;
};

/// Render every view of every instance, write PNGs plus manifest.json under
/// `output_dir`, and return the manifest. Byte-identical for a fixed seed.
DatasetManifest generate_dataset(const std::vector<ToySceneSpec>& specs,
                                 const GenerateConfig& cfg,
                                 const std::filesystem::path& output_dir);

/// Pose-blind view of the training split handed to the trainer: images and
/// instance grouping only, so no pose label can reach the training path.
class PairSampler {
 public:
  explicit PairSampler(const DatasetManifest& m, const std::string& split = "train");

  size_t view_count() const { return images_.size(); }
  const Image& image(size_t i) const { return images_[i]; }
  const std::string& instance_of(size_t i) const { return instance_ids_[i]; }

  /// Random view of the same instance (with replacement; may return `i`).
  size_t sample_source_for(size_t i, diff::Rng& rng) const;

 private:
  std::vector<Image> images_;
  std::vector<std::string> instance_ids_;
  std::map<std::string, std::vector<size_t>> groups_;
};

}  // namespace nerfpose::scene
