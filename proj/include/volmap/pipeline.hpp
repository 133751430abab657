#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "volmap/bki.hpp"
#include "volmap/cloud.hpp"
#include "volmap/error.hpp"
#include "volmap/geometry.hpp"
#include "volmap/io.hpp"
#include "volmap/metrics.hpp"

namespace volmap {

enum class FrameAssociation { kIndex, kTimestamp };

/// Everything build-map needs. Empty paths fall back to the dataset layout.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path intrinsics;
  std::filesystem::path trajectory;
  std::filesystem::path remap;
  std::filesystem::path frame_times;  ///< one timestamp per frame, for timestamp association
  double voxel_resolution = 0.2;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double kernel_length = 0.3;
  double kernel_sigma0 = 1.0;
  std::filesystem::path kernel_file;
  double prior_alpha = 0.001;
  std::size_t stride = 1;
  std::optional<double> max_range;  ///< overrides the intrinsics file
  std::optional<bool> inverse_depth;
  FrameAssociation association = FrameAssociation::kIndex;
  double max_dt = 0.01;
  double min_confidence = 0.0;
  std::filesystem::path out;      ///< voxel map output
  std::filesystem::path ply_dir;  ///< optional per-frame clouds
  io::PlyMode ply_mode = io::PlyMode::kBinary;
  bool overlap_stages = true;

  void validate() const {
    if (!(voxel_resolution > 0.0)) throw Error(Errc::kParameterDomain, "voxel resolution must be > 0");
    if (!(prior_alpha >= 0.0)) throw Error(Errc::kParameterDomain, "prior_alpha must be >= 0");
    if (stride == 0) throw Error(Errc::kParameterDomain, "stride must be >= 1");
    if (max_range && !(*max_range > 0.0)) throw Error(Errc::kParameterDomain, "max_range must be > 0");
    if (!(max_dt >= 0.0)) throw Error(Errc::kParameterDomain, "max_dt must be >= 0");
    if (!(min_confidence >= 0.0)) throw Error(Errc::kParameterDomain, "min_confidence must be >= 0");
    if (out.empty()) throw Error(Errc::kBadConfig, "an output path is required");
    for (const auto* p : {&intrinsics, &remap}) {
      if (!std::filesystem::exists(*p)) throw Error(Errc::kBadConfig, "missing file '" + p->string() + "'");
    }
    if (!kernel_file.empty() && !std::filesystem::exists(kernel_file)) {
      throw Error(Errc::kBadConfig, "missing kernel file '" + kernel_file.string() + "'");
    }
  }
};

struct BuildReport {
  std::size_t frames = 0;
  std::size_t points_used = 0;
  std::size_t voxels = 0;
  std::size_t exported = 0;
  double read_ms_per_frame = 0.0;
  double projection_ms_per_frame = 0.0;
  double update_ms_per_frame = 0.0;
  double wall_ms = 0.0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

/// Rethrows with the frame index prefixed, preserving the error kind.
[[noreturn]] inline void rethrow_for_frame(std::size_t frame, const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const Error& e) {
    throw Error(e.code(), "frame " + std::to_string(frame) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::kMalformedLine, "frame " + std::to_string(frame) + ": " + e.what());
  }
}

/// Single-producer single-consumer queue with a fixed capacity.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
};

}  // namespace detail

/// Fills unset paths from `dataset`.
inline RunConfig resolve_paths(RunConfig cfg) {
  if (!cfg.dataset.empty()) {
    if (cfg.intrinsics.empty()) cfg.intrinsics = cfg.dataset / "intrinsics.cfg";
    if (cfg.trajectory.empty()) cfg.trajectory = cfg.dataset / "trajectory.txt";
    if (cfg.remap.empty()) cfg.remap = cfg.dataset / "remap.txt";
  }
  return cfg;
}

/// Streams frames through read -> frame_to_cloud -> update_map and writes the
/// expected-class voxel map. Projection of frame t+1 may overlap the update of
/// frame t; updates are always applied in frame order by this thread.
inline BuildReport build_map(const RunConfig& input) {
  const auto start = detail::Clock::now();
  const RunConfig cfg = resolve_paths(input);
  cfg.validate();

  io::DatasetLayout layout;
  if (!cfg.dataset.empty()) layout = io::discover_dataset(cfg.dataset);
  const std::size_t frame_count = layout.frame_count();

  CameraConfig cam = read_camera_config(cfg.intrinsics.string());
  if (cfg.max_range) cam.max_range = *cfg.max_range;
  if (cfg.inverse_depth) cam.inverse_depth = *cfg.inverse_depth;
  const LabelRemap remap = read_label_remap(cfg.remap.string());
  const KernelFilter kernel = cfg.kernel_file.empty()
                                  ? build_kernel(cfg.kernel_length, cfg.kernel_sigma0, cfg.voxel_resolution)
                                  : read_kernel_file(cfg.kernel_file.string());
  VoxelGrid grid(cfg.voxel_resolution, cfg.origin, remap.num_target_classes(), cfg.prior_alpha);
  if (std::abs(kernel.resolution() - grid.resolution()) > 1e-9 * grid.resolution()) {
    throw Error(Errc::kParameterDomain, "kernel file resolution does not match --voxel-res");
  }

  // Frame poses.
  std::vector<StampedPose> frame_poses;
  if (frame_count > 0) {
    const auto traj = io::read_trajectory(cfg.trajectory.string());
    if (cfg.association == FrameAssociation::kIndex) {
      if (traj.size() < frame_count) {
        throw Error(Errc::kSizeMismatch, "trajectory has " + std::to_string(traj.size()) + " poses for " +
                                             std::to_string(frame_count) + " frames");
      }
      frame_poses.assign(traj.begin(), traj.begin() + static_cast<std::ptrdiff_t>(frame_count));
    } else {
      if (cfg.frame_times.empty()) throw Error(Errc::kBadConfig, "timestamp association needs --frame-times");
      std::vector<StampedPose> stamps;
      const std::string times = text::read_file(cfg.frame_times.string());
      for (const auto& [line_no, raw] : text::numbered_lines(times)) {
        const auto line = text::strip_comment(raw);
        if (line.empty()) continue;
        const auto t = text::parse_number<double>(line);
        if (!t) throw Error(Errc::kMalformedLine, cfg.frame_times.string() + ":" + std::to_string(line_no) + ": bad timestamp");
        stamps.push_back({*t, PoseSE3::identity()});
      }
      if (stamps.size() != frame_count) throw Error(Errc::kSizeMismatch, "frame_times count differs from frame count");
      const auto pairs = associate(Trajectory(stamps), traj, cfg.max_dt);
      if (pairs.size() != frame_count) {
        throw Error(Errc::kEmptyOverlap, "only " + std::to_string(pairs.size()) + " of " + std::to_string(frame_count) +
                                             " frames have a pose within max_dt");
      }
      for (const auto& p : pairs) frame_poses.push_back({p.est_time, p.ref});
    }
  }

  if (!cfg.ply_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.ply_dir, ec);
    if (!std::filesystem::is_directory(cfg.ply_dir)) {
      throw Error(Errc::kUnwritablePath, "cannot create '" + cfg.ply_dir.string() + "'");
    }
  }

  struct Projected {
    std::size_t index = 0;
    SemanticPointCloud cloud;
    std::exception_ptr error;
    double read_ms = 0.0;
    double projection_ms = 0.0;
  };

  const auto project = [&](std::size_t i) {
    Projected out;
    out.index = i;
    try {
      const auto t0 = detail::Clock::now();
      FrameBundle frame;
      frame.timestamp = frame_poses[i].timestamp;
      frame.depth = io::read_depth_frame(layout.depth_frames[i].string(), {cam.inverse_depth});
      frame.labels = io::read_label_frame(layout.label_frames[i].string());
      out.read_ms = detail::elapsed_ms(t0);
      const auto t1 = detail::Clock::now();
      out.cloud = frame_to_cloud(frame, frame_poses[i].pose, cam.intrinsics, remap, cfg.stride, cam.max_range,
                                 cam.convention);
      out.projection_ms = detail::elapsed_ms(t1);
    } catch (...) {
      out.error = std::current_exception();
    }
    return out;
  };

  BuildReport report;
  const auto consume = [&](Projected p) {
    if (p.error) detail::rethrow_for_frame(p.index, p.error);
    try {
      if (!cfg.ply_dir.empty()) {
        io::write_ply(p.cloud, (cfg.ply_dir / std::filesystem::path(io::frame_name(p.index)).replace_extension(".ply")).string(), cfg.ply_mode);
      }
      const auto t0 = detail::Clock::now();
      const auto stats = update_map(grid, p.cloud, kernel);
      report.update_ms_per_frame += detail::elapsed_ms(t0);
      report.points_used += stats.points_used;
    } catch (...) {
      detail::rethrow_for_frame(p.index, std::current_exception());
    }
    report.read_ms_per_frame += p.read_ms;
    report.projection_ms_per_frame += p.projection_ms;
    ++report.frames;
  };

  if (cfg.overlap_stages && frame_count > 1) {
    detail::BoundedQueue<Projected> queue(2);
    std::thread producer([&] {
      for (std::size_t i = 0; i < frame_count; ++i) {
        auto p = project(i);
        const bool failed = static_cast<bool>(p.error);
        queue.push(std::move(p));
        if (failed) break;
      }
      queue.close();
    });
    try {
      while (auto p = queue.pop()) consume(std::move(*p));
    } catch (...) {
      queue.close();
      producer.join();
      throw;
    }
    producer.join();
  } else {
    for (std::size_t i = 0; i < frame_count; ++i) consume(project(i));
  }

  const auto records = export_expected_map(grid, cfg.min_confidence);
  io::write_voxel_map(records, grid, cfg.out.string());

  report.voxels = grid.size();
  report.exported = records.size();
  if (report.frames > 0) {
    const auto n = static_cast<double>(report.frames);
    report.read_ms_per_frame /= n;
    report.projection_ms_per_frame /= n;
    report.update_ms_per_frame /= n;
  }
  report.wall_ms = detail::elapsed_ms(start);
  return report;
}

/// Converts a voxel map to a class-colored PLY of voxel centers or to voxel text.
enum class ExportFormat { kPly, kVoxelText };

inline void export_map(const std::filesystem::path& map_path, ExportFormat format, const std::filesystem::path& out,
                       io::PlyMode ply_mode = io::PlyMode::kBinary) {
  const auto map = io::read_voxel_map(map_path.string());
  if (format == ExportFormat::kPly) {
    io::write_ply(io::voxel_map_to_cloud(map), out.string(), ply_mode);
  } else {
    io::write_voxel_map(map, out.string());
  }
}

}  // namespace volmap
