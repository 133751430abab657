#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "volmap/bki.hpp"
#include "volmap/cloud.hpp"
#include "volmap/error.hpp"
#include "volmap/geometry.hpp"
#include "volmap/io.hpp"
#include "volmap/metrics.hpp"

namespace volmap::synth {

/// Square ground patch z = height, |x|,|y| <= half_extent.
struct GroundPlane {
  double height = 0.1;
  double half_extent = 8.0;
  std::uint16_t label = 0;
};

/// Axis-aligned box. Face order: -x, +x, -y, +y, -z, +z.
struct Box {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Ones();
  std::array<std::uint16_t, 6> face_labels{};
};

struct CameraPath {
  enum class Kind { kCircle, kLine } kind = Kind::kCircle;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  ///< circle center (z = camera height)
  double radius = 6.0;
  Eigen::Vector3d start = Eigen::Vector3d::Zero();  ///< line endpoints
  Eigen::Vector3d end = Eigen::Vector3d::UnitX();
  Eigen::Vector3d target = Eigen::Vector3d::Zero();  ///< look-at point
  double frame_interval = 0.1;                        ///< seconds between frames
};

struct Noise {
  double depth_sigma = 0.0;
  double label_flip_probability = 0.0;
};

struct SyntheticScene {
  std::uint64_t seed = 1;
  CameraIntrinsics camera{160.0, 160.0, 160.0, 120.0, 0.0, 320, 240};
  double max_range = 50.0;
  std::uint32_t num_classes = 8;
  GroundPlane ground;
  std::vector<Box> boxes;
  CameraPath path;
  Noise noise;
  double voxel_resolution = 0.2;  ///< resolution of the ground-truth voxel file

  void validate() const {
    camera.validate();
    if (num_classes < 2 || num_classes > 65535) throw Error(Errc::kParameterDomain, "num_classes must be in [2, 65535]");
    const auto check_label = [&](std::uint32_t l) {
      if (l >= num_classes) throw Error(Errc::kClassOutOfRange, "scene label " + std::to_string(l) + " >= num_classes");
    };
    check_label(ground.label);
    if (!(ground.half_extent > 0.0)) throw Error(Errc::kParameterDomain, "ground half_extent must be > 0");
    for (const auto& b : boxes) {
      if (!((b.max.array() > b.min.array()).all())) throw Error(Errc::kParameterDomain, "box max must exceed min");
      for (const auto l : b.face_labels) check_label(l);
    }
    if (!(noise.depth_sigma >= 0.0)) throw Error(Errc::kParameterDomain, "depth_sigma must be >= 0");
    if (!(noise.label_flip_probability >= 0.0 && noise.label_flip_probability <= 1.0)) {
      throw Error(Errc::kParameterDomain, "label_flip_probability must be in [0, 1]");
    }
    if (!(voxel_resolution > 0.0)) throw Error(Errc::kParameterDomain, "voxel_resolution must be > 0");
    if (!(max_range > 0.0)) throw Error(Errc::kParameterDomain, "max_range must be > 0");
    if (path.kind == CameraPath::Kind::kCircle && !(path.radius > 0.0)) {
      throw Error(Errc::kParameterDomain, "circle radius must be > 0");
    }
  }

  /// Class id used for pixels that hit nothing.
  std::uint16_t unlabeled() const noexcept { return static_cast<std::uint16_t>(num_classes); }
};

/// Ground plane plus two boxes standing on it, circled by the camera.
inline SyntheticScene default_scene() {
  SyntheticScene s;
  s.boxes.push_back({{-2.9, -1.9, 0.1}, {-1.1, 0.3, 1.3}, {{1, 1, 2, 2, 1, 3}}});
  s.boxes.push_back({{0.9, 0.5, 0.1}, {2.5, 2.1, 1.9}, {{4, 5, 4, 5, 4, 6}}});
  s.path.center = {0.0, 0.0, 3.0};
  s.path.radius = 7.0;
  s.path.target = {0.0, 0.0, 0.3};
  return s;
}

namespace detail {

inline Eigen::Vector3d vec3(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw Error(Errc::kBadConfig, std::string("'") + key + "' must be a 3-array");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace detail

/// JSON scene description. Missing keys keep default_scene() values except
/// `boxes`, which replaces the default list when present.
inline SyntheticScene parse_scene(std::string_view content, const std::string& source = "<scene>") {
  SyntheticScene s = default_scene();
  try {
    const auto j = nlohmann::json::parse(content);
    if (!j.is_object()) throw Error(Errc::kBadConfig, source + ": scene must be a JSON object");
    static const std::vector<std::string> kKeys = {"seed", "camera", "max_range", "num_classes", "ground",
                                                   "boxes", "path", "noise", "voxel_resolution"};
    for (const auto& [key, value] : j.items()) {
      if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
        throw Error(Errc::kUnknownKey, source + ": unknown scene key '" + key + "'");
      }
    }
    s.seed = j.value("seed", s.seed);
    s.max_range = j.value("max_range", s.max_range);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.voxel_resolution = j.value("voxel_resolution", s.voxel_resolution);
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      s.camera.fx = c.value("fx", s.camera.fx);
      s.camera.fy = c.value("fy", s.camera.fy);
      s.camera.cx = c.value("cx", s.camera.cx);
      s.camera.cy = c.value("cy", s.camera.cy);
      s.camera.skew = c.value("skew", s.camera.skew);
      s.camera.width = c.value("width", s.camera.width);
      s.camera.height = c.value("height", s.camera.height);
    }
    if (j.contains("ground")) {
      const auto& g = j["ground"];
      s.ground.height = g.value("height", s.ground.height);
      s.ground.half_extent = g.value("half_extent", s.ground.half_extent);
      s.ground.label = g.value("class", s.ground.label);
    }
    if (j.contains("boxes")) {
      s.boxes.clear();
      for (const auto& b : j["boxes"]) {
        Box box;
        box.min = detail::vec3(b, "min");
        box.max = detail::vec3(b, "max");
        const auto& faces = b.at("face_classes");
        if (faces.is_number()) {
          box.face_labels.fill(faces.get<std::uint16_t>());
        } else {
          if (!faces.is_array() || faces.size() != 6) {
            throw Error(Errc::kBadConfig, source + ": face_classes must be a number or a 6-array");
          }
          for (std::size_t f = 0; f < 6; ++f) box.face_labels[f] = faces[f].get<std::uint16_t>();
        }
        s.boxes.push_back(box);
      }
    }
    if (j.contains("path")) {
      const auto& p = j["path"];
      const auto kind = p.value("type", std::string("circle"));
      if (kind == "circle") {
        s.path.kind = CameraPath::Kind::kCircle;
        if (p.contains("center")) s.path.center = detail::vec3(p, "center");
        s.path.radius = p.value("radius", s.path.radius);
      } else if (kind == "line") {
        s.path.kind = CameraPath::Kind::kLine;
        s.path.start = detail::vec3(p, "start");
        s.path.end = detail::vec3(p, "end");
      } else {
        throw Error(Errc::kBadConfig, source + ": path type must be 'circle' or 'line'");
      }
      if (p.contains("target")) s.path.target = detail::vec3(p, "target");
      s.path.frame_interval = p.value("frame_interval", s.path.frame_interval);
    }
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      s.noise.depth_sigma = n.value("depth_sigma", s.noise.depth_sigma);
      s.noise.label_flip_probability = n.value("label_flip_prob", s.noise.label_flip_probability);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kBadConfig, source + ": " + e.what());
  }
  s.validate();
  return s;
}

inline SyntheticScene read_scene(const std::string& path) { return parse_scene(text::read_file(path), path); }

/// Camera-to-world pose at `position` looking at `target`, optical axes
/// (x right, y down, z forward), world z up.
inline PoseSE3 look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - position).normalized();
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-9) throw Error(Errc::kDegenerateConfiguration, "camera looks straight up or down");
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return PoseSE3(r, position);
}

inline PoseSE3 camera_pose(const SyntheticScene& scene, std::size_t frame, std::size_t frame_count) {
  const auto& p = scene.path;
  Eigen::Vector3d position;
  if (p.kind == CameraPath::Kind::kCircle) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(frame) / static_cast<double>(std::max<std::size_t>(frame_count, 1));
    position = p.center + p.radius * Eigen::Vector3d(std::cos(theta), std::sin(theta), 0.0);
  } else {
    const double s = frame_count > 1 ? static_cast<double>(frame) / static_cast<double>(frame_count - 1) : 0.0;
    position = p.start + s * (p.end - p.start);
  }
  return look_at(position, p.target);
}

struct RayHit {
  double t = std::numeric_limits<double>::infinity();  ///< ray parameter = optical depth
  std::uint16_t label = 0;
  bool hit() const noexcept { return std::isfinite(t); }
};

/// Nearest intersection of origin + t * dir (t > 0) with the scene.
inline RayHit cast_ray(const SyntheticScene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  RayHit best;
  if (dir.z() != 0.0) {
    const double t = (scene.ground.height - origin.z()) / dir.z();
    if (t > 0.0) {
      const Eigen::Vector3d p = origin + t * dir;
      if (std::abs(p.x()) <= scene.ground.half_extent && std::abs(p.y()) <= scene.ground.half_extent) {
        best = {t, scene.ground.label};
      }
    }
  }
  for (const auto& box : scene.boxes) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int face = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (dir[a] == 0.0) {
        if (origin[a] < box.min[a] || origin[a] > box.max[a]) miss = true;
        continue;
      }
      double t0 = (box.min[a] - origin[a]) / dir[a];
      double t1 = (box.max[a] - origin[a]) / dir[a];
      int f0 = 2 * a;
      if (t0 > t1) {
        std::swap(t0, t1);
        f0 = 2 * a + 1;
      }
      if (t0 > t_near) {
        t_near = t0;
        face = f0;
      }
      t_far = std::min(t_far, t1);
    }
    if (miss || t_near > t_far || t_near <= 0.0 || face < 0) continue;
    if (t_near < best.t) best = {t_near, box.face_labels[static_cast<std::size_t>(face)]};
  }
  return best;
}

struct RenderedFrame {
  DepthMap depth;          ///< noisy depth, 0 where the ray hits nothing
  LabelMap labels;         ///< noisy labels, unlabeled where nothing is hit
  LabelMap true_labels;
  std::vector<Eigen::Vector3d> surface_points;  ///< exact hit points, row-major over hit pixels
  std::vector<std::uint16_t> surface_labels;
  std::size_t labelled_pixels = 0;
  std::size_t correct_labels = 0;
};

/// Renders one frame. Depth is the optical-axis distance of the ray hit.
/// Noise: additive Gaussian depth noise and label flips to a uniformly chosen
/// different class.
inline RenderedFrame render(const SyntheticScene& scene, const PoseSE3& pose, std::mt19937_64& rng) {
  const auto& k = scene.camera;
  const Eigen::Matrix4d k_inv = invert_intrinsics(k);
  RenderedFrame out;
  out.depth = DepthMap(k.width, k.height, 0.0);
  out.labels = LabelMap(k.width, k.height, scene.unlabeled());
  out.true_labels = out.labels;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> other(0, scene.num_classes - 2);
  std::normal_distribution<double> gaussian(0.0, 1.0);
  for (std::size_t v = 0; v < k.height; ++v) {
    for (std::size_t u = 0; u < k.width; ++u) {
      const Eigen::Vector3d ray_cam = (k_inv * Eigen::Vector4d(static_cast<double>(u), static_cast<double>(v), 1.0, 0.0)).head<3>();
      const Eigen::Vector3d dir = pose.rotation() * ray_cam;
      const auto hit = cast_ray(scene, pose.translation(), dir);
      if (!hit.hit() || hit.t > scene.max_range) continue;
      out.surface_points.push_back(pose.translation() + hit.t * dir);
      out.surface_labels.push_back(hit.label);
      out.true_labels(u, v) = hit.label;

      std::uint16_t label = hit.label;
      if (scene.noise.label_flip_probability > 0.0 && uniform(rng) < scene.noise.label_flip_probability) {
        const auto pick = other(rng);
        label = static_cast<std::uint16_t>(pick >= hit.label ? pick + 1 : pick);
      }
      double depth = hit.t;
      if (scene.noise.depth_sigma > 0.0) depth += scene.noise.depth_sigma * gaussian(rng);
      out.depth(u, v) = depth;
      out.labels(u, v) = label;
      ++out.labelled_pixels;
      if (label == hit.label) ++out.correct_labels;
    }
  }
  return out;
}

/// Majority-vote class of exact surface samples per voxel.
class GroundTruthAccumulator {
 public:
  GroundTruthAccumulator(double resolution, Eigen::Vector3d origin, std::uint32_t num_classes)
      : resolution_(resolution), origin_(std::move(origin)), num_classes_(num_classes) {}

  void add(const std::vector<Eigen::Vector3d>& points, const std::vector<std::uint16_t>& labels) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& counts = counts_[point_to_voxel(points[i], origin_, resolution_)];
      if (counts.empty()) counts.assign(num_classes_, 0);
      ++counts[labels[i]];
    }
  }

  io::VoxelMapFile result() const {
    io::VoxelMapFile out{resolution_, origin_, num_classes_, {}};
    for (const auto& [index, counts] : counts_) {
      const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
      std::uint64_t total = 0;
      for (const auto c : counts) total += c;
      out.records.push_back({index, static_cast<std::uint32_t>(best), static_cast<double>(total)});
    }
    return out;
  }

 private:
  double resolution_;
  Eigen::Vector3d origin_;
  std::uint32_t num_classes_;
  std::map<VoxelIndex, std::vector<std::uint64_t>> counts_;
};

struct SynthStats {
  std::size_t frames = 0;
  std::size_t labelled_pixels = 0;
  std::size_t correct_labels = 0;
  std::size_t ground_truth_voxels = 0;

  /// Fraction of labelled pixels whose (noisy) label equals the true label.
  double label_accuracy() const {
    return labelled_pixels == 0 ? 1.0 : static_cast<double>(correct_labels) / static_cast<double>(labelled_pixels);
  }
};

inline constexpr const char* kGroundTruthFile = "gt_voxels.txt";

/// Writes a dataset in the io formats plus a ground-truth voxel class file.
inline SynthStats write_dataset(const SyntheticScene& scene, const std::filesystem::path& out_dir,
                                std::size_t frame_count) {
  scene.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "depth", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec || !fs::is_directory(out_dir / "depth") || !fs::is_directory(out_dir / "labels")) {
    throw Error(Errc::kUnwritablePath, "cannot create dataset directories under '" + out_dir.string() + "'");
  }
  for (const auto* sub : {"depth", "labels"}) {
    for (const auto& stale : io::list_frames(out_dir / sub)) fs::remove(stale);
  }

  std::mt19937_64 rng(scene.seed);
  // Ground truth lives in the unlabeled-extended class space of the remap.
  GroundTruthAccumulator truth(scene.voxel_resolution, Eigen::Vector3d::Zero(), scene.num_classes + 1);
  SynthStats stats;
  std::vector<StampedPose> poses;
  for (std::size_t f = 0; f < frame_count; ++f) {
    const auto pose = camera_pose(scene, f, frame_count);
    const auto frame = render(scene, pose, rng);
    io::write_depth_frame(frame.depth, (out_dir / "depth" / io::frame_name(f)).string());
    io::write_label_frame(frame.labels, (out_dir / "labels" / io::frame_name(f)).string());
    truth.add(frame.surface_points, frame.surface_labels);
    poses.push_back({static_cast<double>(f) * scene.path.frame_interval, pose});
    stats.labelled_pixels += frame.labelled_pixels;
    stats.correct_labels += frame.correct_labels;
    ++stats.frames;
  }
  if (!poses.empty()) {
    io::write_trajectory(Trajectory(std::move(poses)), (out_dir / "trajectory.txt").string());
  } else {
    io::detail::write_bytes((out_dir / "trajectory.txt").string(), "");
  }
  io::detail::write_bytes((out_dir / "intrinsics.cfg").string(),
                          format_camera_config({scene.camera, scene.max_range, CameraConvention::kOptical, false}));
  io::detail::write_bytes((out_dir / "remap.txt").string(), format_label_remap(LabelRemap::identity(scene.num_classes)));
  const auto gt = truth.result();
  stats.ground_truth_voxels = gt.records.size();
  io::write_voxel_map(gt, (out_dir / kGroundTruthFile).string());
  return stats;
}

struct Agreement {
  std::size_t matched = 0;
  std::size_t total = 0;
  double ratio() const { return total == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(total); }
};

/// Fraction of ground-truth voxels whose mapped expected class matches.
/// Ground-truth voxels absent from the map count as mismatches.
inline Agreement score_map(const io::VoxelMapFile& map, const io::VoxelMapFile& truth) {
  std::map<VoxelIndex, std::uint32_t> mapped;
  for (const auto& r : map.records) mapped.emplace(r.index, r.expected_class);
  Agreement a;
  for (const auto& r : truth.records) {
    ++a.total;
    const auto it = mapped.find(r.index);
    if (it != mapped.end() && it->second == r.expected_class) ++a.matched;
  }
  return a;
}

}  // namespace volmap::synth
