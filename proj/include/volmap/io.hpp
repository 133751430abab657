#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "volmap/bki.hpp"
#include "volmap/cloud.hpp"
#include "volmap/error.hpp"
#include "volmap/geometry.hpp"
#include "volmap/image.hpp"
#include "volmap/metrics.hpp"
#include "volmap/text.hpp"

namespace volmap::io {

// ---------------------------------------------------------------------------
// Raw frames: "VDRD", u32 width, u32 height, u32 type tag, row-major payload.
// All integers and floats little-endian.

inline constexpr std::array<char, 4> kFrameMagic = {'V', 'D', 'R', 'D'};
inline constexpr std::size_t kFrameHeaderSize = 16;

enum class FrameType : std::uint32_t { kDepthF32 = 0, kLabelU16 = 1 };

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xffu));
  out.push_back(static_cast<char>(v >> 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline void write_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kUnwritablePath, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kUnwritablePath, "write to '" + path + "' failed");
}

struct FrameHeader {
  std::uint32_t width;
  std::uint32_t height;
  FrameType type;
};

inline FrameHeader parse_frame_header(const std::string& bytes, const std::string& path, FrameType expected) {
  if (bytes.size() < kFrameHeaderSize) {
    throw Error(Errc::kMalformedHeader, path + ": truncated header (" + std::to_string(bytes.size()) + " of " +
                                            std::to_string(kFrameHeaderSize) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kFrameMagic.data(), 4) != 0) {
    throw Error(Errc::kMalformedHeader, path + ": bad magic at offset 0");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  FrameHeader h{get_u32(p + 4), get_u32(p + 8), static_cast<FrameType>(get_u32(p + 12))};
  if (h.type != expected) {
    throw Error(Errc::kMalformedHeader, path + ": element type tag " + std::to_string(get_u32(p + 12)) +
                                            " at offset 12, expected " +
                                            std::to_string(static_cast<std::uint32_t>(expected)));
  }
  const std::size_t elem = expected == FrameType::kDepthF32 ? 4 : 2;
  const std::uint64_t want = static_cast<std::uint64_t>(h.width) * h.height * elem;
  const std::uint64_t have = bytes.size() - kFrameHeaderSize;
  if (want != have) {
    throw Error(Errc::kSizeMismatch, path + ": header declares " + std::to_string(h.width) + "x" +
                                         std::to_string(h.height) + " (" + std::to_string(want) +
                                         " payload bytes), file has " + std::to_string(have) + " at offset " +
                                         std::to_string(kFrameHeaderSize));
  }
  return h;
}

}  // namespace detail

inline std::string encode_depth_frame(const Image<float>& depth) {
  std::string out(kFrameMagic.begin(), kFrameMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(depth.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(depth.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(FrameType::kDepthF32));
  out.reserve(out.size() + 4 * depth.size());
  for (const float f : depth.pixels()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline std::string encode_label_frame(const LabelMap& labels) {
  std::string out(kFrameMagic.begin(), kFrameMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(labels.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(labels.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(FrameType::kLabelU16));
  out.reserve(out.size() + 2 * labels.size());
  for (const auto id : labels.pixels()) detail::put_u16(out, id);
  return out;
}

/// Narrows to 32-bit floats on write.
inline void write_depth_frame(const DepthMap& depth, const std::string& path) {
  std::vector<float> narrow(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) narrow[i] = static_cast<float>(depth[i]);
  detail::write_bytes(path, encode_depth_frame(Image<float>(depth.width(), depth.height(), std::move(narrow))));
}

inline void write_label_frame(const LabelMap& labels, const std::string& path) {
  detail::write_bytes(path, encode_label_frame(labels));
}

struct DepthReadOptions {
  bool inverse_depth = false;  ///< file stores 1/z; non-positive values become 0 (invalid)
};

inline DepthMap decode_depth_frame(const std::string& bytes, const std::string& path,
                                   const DepthReadOptions& options = {}) {
  const auto h = detail::parse_frame_header(bytes, path, FrameType::kDepthF32);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kFrameHeaderSize;
  DepthMap depth(h.width, h.height);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = static_cast<double>(std::bit_cast<float>(detail::get_u32(p + 4 * i)));
    if (options.inverse_depth) {
      depth[i] = (std::isfinite(d) && d > 0.0) ? 1.0 / d : 0.0;
    } else {
      depth[i] = d;
    }
  }
  return depth;
}

inline LabelMap decode_label_frame(const std::string& bytes, const std::string& path) {
  const auto h = detail::parse_frame_header(bytes, path, FrameType::kLabelU16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kFrameHeaderSize;
  LabelMap labels(h.width, h.height);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = detail::get_u16(p + 2 * i);
  return labels;
}

inline DepthMap read_depth_frame(const std::string& path, const DepthReadOptions& options = {}) {
  return decode_depth_frame(text::read_file(path), path, options);
}

inline LabelMap read_label_frame(const std::string& path) {
  return decode_label_frame(text::read_file(path), path);
}

// ---------------------------------------------------------------------------
// TUM trajectories: `timestamp tx ty tz qx qy qz qw` per line.

inline constexpr double kQuaternionNormTolerance = 1e-3;

inline Trajectory parse_trajectory(std::string_view content, const std::string& source = "<trajectory>") {
  std::vector<StampedPose> poses;
  for (const auto& [line_no, raw] : text::numbered_lines(content)) {
    const auto line = text::strip_comment(raw);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto fields = text::split_ws(line);
    if (fields.size() != 8) {
      throw Error(Errc::kMalformedLine, where + "expected 8 numeric fields, got " + std::to_string(fields.size()));
    }
    double v[8];
    for (std::size_t i = 0; i < 8; ++i) {
      const auto parsed = text::parse_number<double>(fields[i]);
      if (!parsed || !std::isfinite(*parsed)) {
        throw Error(Errc::kMalformedLine, where + "field " + std::to_string(i + 1) + " is not a finite number");
      }
      v[i] = *parsed;
    }
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    const double norm = q.norm();
    if (std::abs(norm - 1.0) > kQuaternionNormTolerance) {
      throw Error(Errc::kBadQuaternion, where + "quaternion norm " + std::to_string(norm) + " deviates from 1");
    }
    q.normalize();
    if (!poses.empty() && !(v[0] > poses.back().timestamp)) {
      throw Error(Errc::kNonMonotonicTimestamps, where + "timestamp does not increase");
    }
    poses.push_back({v[0], PoseSE3::from_quaternion(q, Eigen::Vector3d(v[1], v[2], v[3]))});
  }
  if (poses.empty()) throw Error(Errc::kInsufficientLength, source + ": no poses");
  return Trajectory(std::move(poses));
}

inline Trajectory read_trajectory(const std::string& path) {
  return parse_trajectory(text::read_file(path), path);
}

inline std::string format_trajectory(const Trajectory& traj) {
  std::string out;
  char buf[512];
  for (const auto& p : traj) {
    const auto q = p.pose.quaternion();
    const auto& t = p.pose.translation();
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", p.timestamp, t.x(), t.y(),
                  t.z(), q.x(), q.y(), q.z(), q.w());
    out += buf;
  }
  return out;
}

inline void write_trajectory(const Trajectory& traj, const std::string& path) {
  detail::write_bytes(path, format_trajectory(traj));
}

// ---------------------------------------------------------------------------
// PLY export.

/// Fixed 19-entry class palette (Cityscapes/KITTI ordering); ids wrap around.
inline constexpr std::array<Rgb, 19> kClassPalette = {{
    {128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156}, {190, 153, 153},
    {153, 153, 153}, {250, 170, 30}, {220, 220, 0},  {107, 142, 35},  {152, 251, 152},
    {70, 130, 180}, {220, 20, 60},  {255, 0, 0},    {0, 0, 142},     {0, 0, 70},
    {0, 60, 100},   {0, 80, 100},   {0, 0, 230},    {119, 11, 32},
}};

inline Rgb class_color(std::uint32_t c) { return kClassPalette[c % kClassPalette.size()]; }

enum class PlyMode { kAscii, kBinary };

inline PlyMode parse_ply_mode(std::string_view s) {
  if (s == "ascii") return PlyMode::kAscii;
  if (s == "binary") return PlyMode::kBinary;
  throw Error(Errc::kBadConfig, "PLY mode must be 'ascii' or 'binary'");
}

/// x y z as float, red green blue as uchar (palette colors when the cloud
/// has no RGB), class as ushort.
inline std::string encode_ply(const SemanticPointCloud& cloud, PlyMode mode) {
  if (cloud.classes.size() != cloud.points.size() || (cloud.colors && cloud.colors->size() != cloud.points.size())) {
    throw Error(Errc::kSizeMismatch, "point cloud arrays differ in length");
  }
  std::string out = "ply\nformat ";
  out += mode == PlyMode::kAscii ? "ascii 1.0\n" : "binary_little_endian 1.0\n";
  out += "comment volmap semantic cloud\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out +=
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "property ushort class\nend_header\n";
  char buf[256];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3f p = cloud.points[i].cast<float>();
    const Rgb c = cloud.colors ? (*cloud.colors)[i] : class_color(cloud.classes[i]);
    if (mode == PlyMode::kAscii) {
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %u %u %u %u\n", static_cast<double>(p.x()),
                    static_cast<double>(p.y()), static_cast<double>(p.z()), c.r, c.g, c.b,
                    static_cast<unsigned>(cloud.classes[i]));
      out += buf;
    } else {
      for (int k = 0; k < 3; ++k) detail::put_u32(out, std::bit_cast<std::uint32_t>(p[k]));
      out.push_back(static_cast<char>(c.r));
      out.push_back(static_cast<char>(c.g));
      out.push_back(static_cast<char>(c.b));
      detail::put_u16(out, cloud.classes[i]);
    }
  }
  return out;
}

inline void write_ply(const SemanticPointCloud& cloud, const std::string& path, PlyMode mode = PlyMode::kBinary) {
  detail::write_bytes(path, encode_ply(cloud, mode));
}

// ---------------------------------------------------------------------------
// Voxel map text: header `resolution`, `origin`, `classes`, then
// `i j k class confidence` per voxel.

struct VoxelMapFile {
  double resolution = 0.2;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::uint32_t classes = 0;
  std::vector<VoxelRecord> records;
};

inline std::string format_voxel_map(const VoxelMapFile& map) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "resolution %.17g\norigin %.17g %.17g %.17g\nclasses %u\n", map.resolution,
                map.origin.x(), map.origin.y(), map.origin.z(), map.classes);
  out += buf;
  for (const auto& r : map.records) {
    std::snprintf(buf, sizeof buf, "%d %d %d %u %.17g\n", r.index.x, r.index.y, r.index.z, r.expected_class,
                  r.confidence);
    out += buf;
  }
  return out;
}

inline void write_voxel_map(const std::vector<VoxelRecord>& records, const VoxelGrid& grid, const std::string& path) {
  detail::write_bytes(path, format_voxel_map({grid.resolution(), grid.origin(), grid.num_classes(), records}));
}

inline void write_voxel_map(const VoxelMapFile& map, const std::string& path) {
  detail::write_bytes(path, format_voxel_map(map));
}

inline VoxelMapFile parse_voxel_map(std::string_view content, const std::string& source = "<voxel map>") {
  VoxelMapFile map;
  int header = 0;
  for (const auto& [line_no, raw] : text::numbered_lines(content)) {
    const auto line = text::strip_comment(raw);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto f = text::split_ws(line);
    if (header < 3) {
      static constexpr const char* kKeys[3] = {"resolution", "origin", "classes"};
      static constexpr std::size_t kCounts[3] = {2, 4, 2};
      if (f.size() != kCounts[header] || f[0] != kKeys[header]) {
        throw Error(Errc::kMalformedHeader, where + "expected '" + kKeys[header] + "' header line");
      }
      if (header == 0) {
        const auto r = text::parse_number<double>(f[1]);
        if (!r || !(*r > 0.0)) throw Error(Errc::kMalformedHeader, where + "bad resolution");
        map.resolution = *r;
      } else if (header == 1) {
        for (int i = 0; i < 3; ++i) {
          const auto o = text::parse_number<double>(f[static_cast<std::size_t>(i) + 1]);
          if (!o || !std::isfinite(*o)) throw Error(Errc::kMalformedHeader, where + "bad origin");
          map.origin[i] = *o;
        }
      } else {
        const auto c = text::parse_number<std::uint32_t>(f[1]);
        if (!c) throw Error(Errc::kMalformedHeader, where + "bad class count");
        map.classes = *c;
      }
      ++header;
      continue;
    }
    if (f.size() != 5) throw Error(Errc::kMalformedLine, where + "expected 'i j k class confidence'");
    const auto i = text::parse_number<std::int32_t>(f[0]);
    const auto j = text::parse_number<std::int32_t>(f[1]);
    const auto k = text::parse_number<std::int32_t>(f[2]);
    const auto c = text::parse_number<std::uint32_t>(f[3]);
    const auto conf = text::parse_number<double>(f[4]);
    if (!i || !j || !k || !c || !conf) throw Error(Errc::kMalformedLine, where + "non-numeric field");
    if (*c >= map.classes) throw Error(Errc::kClassOutOfRange, where + "class id exceeds header class count");
    map.records.push_back({{*i, *j, *k}, *c, *conf});
  }
  if (header < 3) throw Error(Errc::kMalformedHeader, source + ": incomplete header");
  return map;
}

inline VoxelMapFile read_voxel_map(const std::string& path) {
  return parse_voxel_map(text::read_file(path), path);
}

/// Voxel centers as a class-colored cloud.
inline SemanticPointCloud voxel_map_to_cloud(const VoxelMapFile& map) {
  SemanticPointCloud cloud;
  cloud.num_classes = map.classes;
  cloud.points.reserve(map.records.size());
  cloud.classes.reserve(map.records.size());
  for (const auto& r : map.records) {
    cloud.points.push_back(voxel_center(r.index, map.origin, map.resolution));
    cloud.classes.push_back(static_cast<std::uint16_t>(r.expected_class));
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Dataset on disk.

/// Conventional layout under a root directory:
///   depth/*.vdr, labels/*.vdr, optional color/*.vdr (unused), trajectory.txt,
///   intrinsics.cfg, remap.txt
struct DatasetLayout {
  std::filesystem::path root;
  std::vector<std::filesystem::path> depth_frames;
  std::vector<std::filesystem::path> label_frames;
  std::filesystem::path trajectory;
  std::filesystem::path intrinsics;
  std::filesystem::path remap;

  std::size_t frame_count() const noexcept { return depth_frames.size(); }

  void validate() const {
    if (depth_frames.size() != label_frames.size()) {
      throw Error(Errc::kSizeMismatch, "dataset has " + std::to_string(depth_frames.size()) + " depth frames and " +
                                           std::to_string(label_frames.size()) + " label frames");
    }
  }
};

inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vdr") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline DatasetLayout discover_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    throw Error(Errc::kUnreadableFile, "dataset root '" + root.string() + "' is not a directory");
  }
  DatasetLayout layout;
  layout.root = root;
  layout.depth_frames = list_frames(root / "depth");
  layout.label_frames = list_frames(root / "labels");
  layout.trajectory = root / "trajectory.txt";
  layout.intrinsics = root / "intrinsics.cfg";
  layout.remap = root / "remap.txt";
  layout.validate();
  return layout;
}

inline std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.vdr", index);
  return buf;
}

}  // namespace volmap::io
