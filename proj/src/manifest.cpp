#include "nerfpose/manifest.hpp"

#include "nerfpose/io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace nerfpose::scene {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kFormatTag = "nerfpose-manifest-v1";

json pose_to_json(const camera::Pose& p) {
  return json{{"direction", {p.direction.x(), p.direction.y(), p.direction.z()}},
              {"distance", p.distance},
              {"target", {p.target.x(), p.target.y(), p.target.z()}},
              {"up", {p.up_hint.x(), p.up_hint.y(), p.up_hint.z()}}};
}

camera::Pose pose_from_json(const json& j) {
  camera::Pose p;
  p.direction = camera::Vec3(j.at("direction")[0], j.at("direction")[1], j.at("direction")[2]);
  p.distance = j.at("distance");
  p.target = camera::Vec3(j.at("target")[0], j.at("target")[1], j.at("target")[2]);
  p.up_hint = camera::Vec3(j.at("up")[0], j.at("up")[1], j.at("up")[2]);
  return p;
}

json intrinsics_to_json(const camera::Intrinsics& k) {
  return json{{"width", k.width}, {"height", k.height}, {"focal", k.focal},
              {"cx", k.cx},       {"cy", k.cy}};
}

camera::Intrinsics intrinsics_from_json(const json& j) {
  camera::Intrinsics k;
  k.width = j.at("width");
  k.height = j.at("height");
  k.focal = j.at("focal");
  k.cx = j.at("cx");
  k.cy = j.at("cy");
  return k;
}

}  // namespace

std::vector<size_t> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

std::map<std::string, std::vector<size_t>> DatasetManifest::instance_groups(
    const std::string& split) const {
  std::map<std::string, std::vector<size_t>> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out[records[i].instance_id].push_back(i);
  return out;
}

void DatasetManifest::validate() const {
  for (const auto& r : records) {
    if (!std::filesystem::exists(root / r.image_path))
      throw std::runtime_error("manifest: missing image " + r.image_path);
    if (!r.mask_path.empty() && !std::filesystem::exists(root / r.mask_path))
      throw std::runtime_error("manifest: missing mask " + r.mask_path);
    if ((r.split == "val" || r.split == "test") && !r.pose)
      throw std::runtime_error("manifest: " + r.split + " record without ground-truth pose: " +
                               r.image_path);
  }
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& manifest_json) {
  json j;
  j["format"] = kFormatTag;
  j["camera"] = {{"intrinsics", intrinsics_to_json(m.cam.intrinsics)},
                 {"near", m.cam.near},
                 {"far", m.cam.far},
                 {"distance", m.cam.distance},
                 {"background", {m.cam.background[0], m.cam.background[1], m.cam.background[2]}}};
  j["records"] = json::array();
  for (const auto& r : m.records) {
    json rec{{"image", r.image_path},
             {"instance", r.instance_id},
             {"split", r.split},
             {"intrinsics", intrinsics_to_json(r.intrinsics)}};
    if (!r.mask_path.empty()) rec["mask"] = r.mask_path;
    if (r.pose) rec["pose"] = pose_to_json(*r.pose);
    j["records"].push_back(std::move(rec));
  }
  atomic_write_text(manifest_json, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_json) {
  const json j = json::parse(read_file(manifest_json));
  if (j.at("format") != kFormatTag)
    throw std::runtime_error("manifest: unknown format tag " + j.at("format").dump());
  DatasetManifest m;
  m.root = manifest_json.parent_path();
  const json& cam = j.at("camera");
  m.cam.intrinsics = intrinsics_from_json(cam.at("intrinsics"));
  m.cam.near = cam.at("near");
  m.cam.far = cam.at("far");
  m.cam.distance = cam.at("distance");
  for (int c = 0; c < 3; ++c) m.cam.background[static_cast<size_t>(c)] = cam.at("background")[c];
  for (const json& rec : j.at("records")) {
    ManifestRecord r;
    r.image_path = rec.at("image");
    r.instance_id = rec.at("instance");
    r.split = rec.at("split");
    r.intrinsics = intrinsics_from_json(rec.at("intrinsics"));
    if (rec.contains("mask")) r.mask_path = rec.at("mask");
    if (rec.contains("pose")) r.pose = pose_from_json(rec.at("pose"));
    m.records.push_back(std::move(r));
  }
  return m;
}

Image load_composited(const DatasetManifest& m, size_t record_idx) {
  const ManifestRecord& r = m.records.at(record_idx);
  Image img = read_png(m.root / r.image_path);
  if (img.channels == 4) {  // fold alpha into the mask path below
    Image rgb(3, img.height, img.width);
    std::copy_n(img.data.begin(), rgb.data.size(), rgb.data.begin());
    img = std::move(rgb);
  }
  if (r.mask_path.empty()) return img;
  Image mask = read_png(m.root / r.mask_path);
  return composite(img, mask, m.cam.background.data());
}

ImagePair sample_pair(const DatasetManifest& m, diff::Rng& rng, const std::string& split) {
  auto groups = m.instance_groups(split);
  if (groups.empty()) throw std::runtime_error("sample_pair: no records in split " + split);
  const auto it = std::next(groups.begin(), rng.index(static_cast<int64_t>(groups.size())));
  const std::vector<size_t>& views = it->second;
  ImagePair pair;
  pair.instance_id = it->first;
  pair.target_idx = views[static_cast<size_t>(rng.index(static_cast<int64_t>(views.size())))];
  pair.source_idx = views[static_cast<size_t>(rng.index(static_cast<int64_t>(views.size())))];
  pair.target = load_composited(m, pair.target_idx);
  pair.source = load_composited(m, pair.source_idx);
  return pair;
}

DatasetManifest generate_dataset(const std::vector<ToySceneSpec>& specs,
                                 const GenerateConfig& cfg,
                                 const std::filesystem::path& output_dir) {
  if (specs.empty()) throw std::invalid_argument("generate_dataset: no scenes");
  if (cfg.train_views < 2)
    throw std::invalid_argument("generate_dataset: need at least 2 training views per instance");
  std::filesystem::create_directories(output_dir);
  DatasetManifest m;
  m.root = output_dir;
  m.cam = cfg.cam;
  diff::Rng rng(cfg.seed);
  const struct {
    const char* name;
    int count;
  } splits[] = {{"train", cfg.train_views}, {"val", cfg.val_views}, {"test", cfg.test_views}};
  for (const ToySceneSpec& spec : specs) {
    spec.validate();
    int view_idx = 0;
    for (const auto& split : splits) {
      for (int v = 0; v < split.count; ++v, ++view_idx) {
        camera::Pose pose = cfg.prior.sample(rng);
        pose.distance = cfg.cam.distance;
        auto [rgb, mask] = render_ground_truth(spec, pose, cfg.cam.intrinsics);
        std::ostringstream base;
        base << std::setfill('0') << std::setw(3) << view_idx;
        const std::string img_rel = spec.instance_id + "/" + base.str() + ".png";
        const std::string mask_rel = spec.instance_id + "/" + base.str() + "_mask.png";
        write_png(output_dir / img_rel, rgb);
        write_mask_png(output_dir / mask_rel, mask);
        ManifestRecord rec;
        rec.image_path = img_rel;
        rec.mask_path = mask_rel;
        rec.instance_id = spec.instance_id;
        rec.split = split.name;
        rec.intrinsics = cfg.cam.intrinsics;
        rec.pose = pose;
        m.records.push_back(std::move(rec));
      }
    }
  }
  save_manifest(m, output_dir / "manifest.json");
  return m;
}

PairSampler::PairSampler(const DatasetManifest& m, const std::string& split) {
  for (size_t idx : m.split_indices(split)) {
    groups_[m.records[idx].instance_id].push_back(images_.size());
    images_.push_back(load_composited(m, idx));
    instance_ids_.push_back(m.records[idx].instance_id);
  }
  if (images_.empty()) throw std::runtime_error("PairSampler: empty split " + split);
}

size_t PairSampler::sample_source_for(size_t i, diff::Rng& rng) const {
  const auto& views = groups_.at(instance_ids_.at(i));
  return views[static_cast<size_t>(rng.index(static_cast<int64_t>(views.size())))];
}

}  // namespace nerfpose::scene
