#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "volmap/error.hpp"
#include "volmap/geometry.hpp"
#include "volmap/image.hpp"
#include "volmap/text.hpp"

namespace volmap {

/// One timestep of sensor data.
struct FrameBundle {
  double timestamp = 0.0;
  DepthMap depth;
  LabelMap labels;
  std::optional<ColorMap> color;

  void validate() const {
    if (!depth.same_shape(labels) || (color && !depth.same_shape(*color))) {
      throw Error(Errc::kDimensionMismatch, "depth, label and color maps differ in size");
    }
  }
};

/// Source-taxonomy to target-taxonomy class table. Ids missing from the
/// table map to `unlabeled_id`, which the map update ignores.
class LabelRemap {
 public:
  LabelRemap(std::uint32_t num_target_classes, std::uint32_t unlabeled_id,
             std::unordered_map<std::uint32_t, std::uint32_t> table = {})
      : num_target_classes_(num_target_classes), unlabeled_id_(unlabeled_id), table_(std::move(table)) {
    if (num_target_classes_ == 0 || num_target_classes_ > 65536) {
      throw Error(Errc::kParameterDomain, "num_target_classes must be in [1, 65536]");
    }
    if (unlabeled_id_ >= num_target_classes_) {
      throw Error(Errc::kParameterDomain, "unlabeled_id must be < num_target_classes");
    }
    for (const auto& [source, target] : table_) {
      if (target >= num_target_classes_) {
        throw Error(Errc::kClassOutOfRange, "remap target " + std::to_string(target) + " for source " +
                                                std::to_string(source) + " is >= num_target_classes");
      }
    }
  }

  /// Maps 0..n-1 onto themselves with an extra unlabeled class n.
  static LabelRemap identity(std::uint32_t n) {
    std::unordered_map<std::uint32_t, std::uint32_t> table;
    for (std::uint32_t i = 0; i < n; ++i) table[i] = i;
    return LabelRemap(n + 1, n, std::move(table));
  }

  std::uint32_t num_target_classes() const noexcept { return num_target_classes_; }
  std::uint32_t unlabeled_id() const noexcept { return unlabeled_id_; }
  const std::unordered_map<std::uint32_t, std::uint32_t>& table() const noexcept { return table_; }

  std::uint16_t operator()(std::uint32_t source) const {
    const auto it = table_.find(source);
    return static_cast<std::uint16_t>(it == table_.end() ? unlabeled_id_ : it->second);
  }

 private:
  std::uint32_t num_target_classes_;
  std::uint32_t unlabeled_id_;
  std::unordered_map<std::uint32_t, std::uint32_t> table_;
};

/// Remap file: `num_target_classes N`, `unlabeled_id U`, then `source target`
/// lines. `#` starts a comment.
inline LabelRemap parse_label_remap(std::string_view content, const std::string& source = "<remap>") {
  std::optional<std::uint32_t> num_classes;
  std::optional<std::uint32_t> unlabeled;
  std::unordered_map<std::uint32_t, std::uint32_t> table;
  for (const auto& [line_no, raw] : text::numbered_lines(content)) {
    const auto line = text::strip_comment(raw);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto fields = text::split_ws(line);
    if (fields.size() != 2) throw Error(Errc::kMalformedLine, where + "expected two fields");
    const auto value = text::parse_number<std::uint32_t>(fields[1]);
    if (!value) throw Error(Errc::kMalformedLine, where + "expected a non-negative integer");
    if (fields[0] == "num_target_classes") {
      num_classes = *value;
    } else if (fields[0] == "unlabeled_id") {
      unlabeled = *value;
    } else {
      const auto src = text::parse_number<std::uint32_t>(fields[0]);
      if (!src) throw Error(Errc::kMalformedLine, where + "expected 'source_id target_id'");
      if (!table.emplace(*src, *value).second) {
        throw Error(Errc::kMalformedLine, where + "duplicate source id " + std::to_string(*src));
      }
    }
  }
  if (!num_classes || !unlabeled) {
    throw Error(Errc::kMalformedHeader, source + ": missing num_target_classes or unlabeled_id");
  }
  return LabelRemap(*num_classes, *unlabeled, std::move(table));
}

inline LabelRemap read_label_remap(const std::string& path) {
  return parse_label_remap(text::read_file(path), path);
}

inline std::string format_label_remap(const LabelRemap& remap) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> rows(remap.table().begin(), remap.table().end());
  std::sort(rows.begin(), rows.end());
  std::string out = "num_target_classes " + std::to_string(remap.num_target_classes()) +
                    "\nunlabeled_id " + std::to_string(remap.unlabeled_id()) + "\n";
  for (const auto& [s, t] : rows) out += std::to_string(s) + " " + std::to_string(t) + "\n";
  return out;
}

inline LabelMap remap_labels(const LabelMap& labels, const LabelRemap& remap) {
  LabelMap out(labels.width(), labels.height());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = remap(labels[i]);
  return out;
}

/// World-frame labelled points. `unlabeled_id` marks points the map ignores.
struct SemanticPointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::uint16_t> classes;
  std::optional<std::vector<Rgb>> colors;
  std::uint32_t num_classes = 0;
  std::optional<std::uint16_t> unlabeled_id;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  void validate() const {
    if (classes.size() != points.size() || (colors && colors->size() != points.size())) {
      throw Error(Errc::kSizeMismatch, "point cloud arrays differ in length");
    }
    for (const auto c : classes) {
      if (c >= num_classes) {
        throw Error(Errc::kClassOutOfRange, "class " + std::to_string(c) + " >= " + std::to_string(num_classes));
      }
    }
  }
};

/// Back-projects every `stride`-th pixel in both axes and attaches remapped
/// labels (and colors when present) by source pixel.
inline SemanticPointCloud frame_to_cloud(const FrameBundle& frame, const PoseSE3& camera_to_world,
                                         const CameraIntrinsics& k, const LabelRemap& remap,
                                         std::size_t stride = 1, double max_range = 50.0,
                                         CameraConvention convention = CameraConvention::kOptical) {
  frame.validate();
  if (stride == 0) throw Error(Errc::kParameterDomain, "stride must be >= 1");
  const auto batch = backproject_frame(k, camera_to_world, frame.depth, {max_range, stride, convention});

  SemanticPointCloud cloud;
  cloud.num_classes = remap.num_target_classes();
  cloud.unlabeled_id = static_cast<std::uint16_t>(remap.unlabeled_id());
  cloud.points.resize(batch.size());
  cloud.classes.resize(batch.size());
  if (frame.color) cloud.colors.emplace(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto pixel = batch.pixel_index[i];
    cloud.points[i] = batch.point(i);
    cloud.classes[i] = remap(frame.labels[pixel]);
    if (frame.color) (*cloud.colors)[i] = (*frame.color)[pixel];
  }
  return cloud;
}

}  // namespace volmap
