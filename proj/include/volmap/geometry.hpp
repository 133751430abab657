#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "volmap/error.hpp"
#include "volmap/image.hpp"
#include "volmap/text.hpp"

namespace volmap {

/// Ideal pinhole camera, all quantities in pixels.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;

  /// Throws on fx/fy/width/height out of domain. A principal point outside
  /// the image only produces a warning.
  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
      throw Error(Errc::kDegenerateIntrinsics, "focal lengths must be finite and > 0");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(skew)) {
      throw Error(Errc::kDegenerateIntrinsics, "principal point and skew must be finite");
    }
    if (width == 0 || height == 0) {
      throw Error(Errc::kParameterDomain, "image width and height must be > 0");
    }
    if (cx < 0.0 || cx >= static_cast<double>(width) || cy < 0.0 ||
        cy >= static_cast<double>(height)) {
      std::cerr << "volmap: warning: principal point (" << cx << ", " << cy
                << ") lies outside the " << width << "x" << height << " image\n";
    }
  }

  std::size_t pixel_count() const noexcept { return width * height; }
};

/// Camera axis conventions. Back-projection works in the optical frame
/// (x right, y down, z forward); other conventions insert a fixed axis
/// permutation between the optical frame and the pose's camera frame.
enum class CameraConvention {
  kOptical,  ///< x right, y down, z forward (identity)
  kOpenGl,   ///< x right, y up, z backward
  kNed,      ///< x forward, y right, z down
};

inline CameraConvention parse_camera_convention(std::string_view name) {
  if (name == "optical" || name == "opencv") return CameraConvention::kOptical;
  if (name == "opengl") return CameraConvention::kOpenGl;
  if (name == "ned") return CameraConvention::kNed;
  throw Error(Errc::kBadConfig, "unknown camera_convention '" + std::string(name) + "'");
}

inline const char* to_string(CameraConvention c) noexcept {
  switch (c) {
    case CameraConvention::kOptical: return "optical";
    case CameraConvention::kOpenGl: return "opengl";
    case CameraConvention::kNed: return "ned";
  }
  return "optical";
}

/// Maps optical-frame coordinates into the pose's camera frame.
inline Eigen::Matrix4d convention_matrix(CameraConvention c) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(3, 3) = 1.0;
  switch (c) {
    case CameraConvention::kOptical:
      m.topLeftCorner<3, 3>().setIdentity();
      break;
    case CameraConvention::kOpenGl:
      m(0, 0) = 1.0;
      m(1, 1) = -1.0;
      m(2, 2) = -1.0;
      break;
    case CameraConvention::kNed:
      m(0, 2) = 1.0;  // forward <- optical z
      m(1, 0) = 1.0;  // right   <- optical x
      m(2, 1) = 1.0;  // down    <- optical y
      break;
  }
  return m;
}

/// Rigid transform, camera-to-world when used as a camera pose.
class PoseSE3 {
 public:
  static constexpr double kOrthonormalTolerance = 1e-9;

  PoseSE3() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

  PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {
    validate();
  }

  static PoseSE3 identity() { return {}; }

  static PoseSE3 from_translation(const Eigen::Vector3d& t) {
    return PoseSE3(Eigen::Matrix3d::Identity(), t);
  }

  /// The quaternion must already be unit length (within the rotation tolerance).
  static PoseSE3 from_quaternion(const Eigen::Quaterniond& q, const Eigen::Vector3d& t) {
    return PoseSE3(q.toRotationMatrix(), t);
  }

  static PoseSE3 from_matrix(const Eigen::Matrix4d& m) {
    return PoseSE3(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
  }

  const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  PoseSE3 inverse() const {
    PoseSE3 out;
    out.rotation_ = rotation_.transpose();
    out.translation_ = -(out.rotation_ * translation_);
    return out;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  PoseSE3 operator*(const PoseSE3& rhs) const {
    PoseSE3 out;
    out.rotation_ = rotation_ * rhs.rotation_;
    out.translation_ = rotation_ * rhs.translation_ + translation_;
    return out;
  }

 private:
  void validate() const {
    if (!rotation_.allFinite() || !translation_.allFinite()) {
      throw Error(Errc::kInvalidPose, "pose contains non-finite entries");
    }
    const Eigen::Matrix3d gram = rotation_.transpose() * rotation_;
    if (((gram - Eigen::Matrix3d::Identity()).cwiseAbs().array() > kOrthonormalTolerance).any()) {
      throw Error(Errc::kInvalidPose, "rotation is not orthonormal");
    }
    if (std::abs(rotation_.determinant() - 1.0) > kOrthonormalTolerance) {
      throw Error(Errc::kInvalidPose, "rotation determinant is not +1");
    }
  }

  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

/// Homogeneous 4x4 embedding K_h of the intrinsic matrix.
inline Eigen::Matrix4d intrinsics_matrix(const CameraIntrinsics& k) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = k.fx;
  m(0, 1) = k.skew;
  m(0, 2) = k.cx;
  m(1, 1) = k.fy;
  m(1, 2) = k.cy;
  return m;
}

/// Closed-form inverse of intrinsics_matrix(k).
inline Eigen::Matrix4d invert_intrinsics(const CameraIntrinsics& k) {
  constexpr double kMinFocal = 1e-12;
  if (!(std::abs(k.fx) >= kMinFocal) || !(std::abs(k.fy) >= kMinFocal)) {
    throw Error(Errc::kDegenerateIntrinsics, "focal length below 1e-12");
  }
  const double fxfy = k.fx * k.fy;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = 1.0 / k.fx;
  m(0, 1) = -k.skew / fxfy;
  m(0, 2) = (k.skew * k.cy - k.cx * k.fy) / fxfy;
  m(1, 1) = 1.0 / k.fy;
  m(1, 2) = -k.cy / k.fy;
  return m;
}

inline bool is_valid_depth(double z, double max_range) noexcept {
  return std::isfinite(z) && z > 0.0 && z <= max_range;
}

/// Per-pixel back-projection: z * T_wc * A * K_h^-1 * (u, v, 1, 1/z), where A is
/// the axis convention matrix. Evaluated one factor at a time.
inline Eigen::Vector3d backproject_pixel(const CameraIntrinsics& k, const PoseSE3& camera_to_world,
                                         double u, double v, double z,
                                         CameraConvention convention = CameraConvention::kOptical) {
  if (!std::isfinite(z) || !(z > 0.0)) {
    throw Error(Errc::kInvalidDepth, "depth must be finite and > 0, got " + std::to_string(z));
  }
  const Eigen::Vector4d pixel(u, v, 1.0, 1.0 / z);
  const Eigen::Vector4d camera = invert_intrinsics(k) * pixel;
  const Eigen::Vector4d body = convention_matrix(convention) * camera;
  const Eigen::Vector4d world = camera_to_world.matrix() * body;
  return z * world.head<3>();
}

struct BackprojectOptions {
  double max_range = 50.0;
  std::size_t stride = 1;
  CameraConvention convention = CameraConvention::kOptical;
};

/// Homogeneous world points, one column per retained pixel, in source-pixel
/// row-major order.
struct WorldPointBatch {
  Eigen::Matrix4Xd points;
  std::vector<std::uint32_t> pixel_index;
  std::size_t filtered = 0;  ///< sampled pixels dropped by the depth filter

  std::size_t size() const noexcept { return pixel_index.size(); }
  Eigen::Vector3d point(std::size_t i) const { return points.col(static_cast<Eigen::Index>(i)).head<3>(); }
};

/// Batch back-projection of a depth frame: builds the 4xN pixel batch
/// (u, v, 1, 1/z), multiplies it by T_wc * A * K_h^-1 and scales each column
/// by its depth. The batch is assembled and multiplied in cache-sized column
/// blocks; every column still goes through the same 4x4 product.
inline WorldPointBatch backproject_frame(const CameraIntrinsics& k, const PoseSE3& camera_to_world,
                                         const DepthMap& depth, const BackprojectOptions& options = {}) {
  if (depth.width() != k.width || depth.height() != k.height) {
    throw Error(Errc::kDimensionMismatch,
                "depth map is " + std::to_string(depth.width()) + "x" + std::to_string(depth.height()) +
                    ", intrinsics expect " + std::to_string(k.width) + "x" + std::to_string(k.height));
  }
  if (options.stride == 0) throw Error(Errc::kParameterDomain, "stride must be >= 1");

  const std::size_t stride = options.stride;
  std::size_t sampled = 0;
  std::size_t kept = 0;
  for (std::size_t v = 0; v < depth.height(); v += stride) {
    for (std::size_t u = 0; u < depth.width(); u += stride) {
      ++sampled;
      if (is_valid_depth(depth(u, v), options.max_range)) ++kept;
    }
  }

  const Eigen::Matrix4d projection =
      camera_to_world.matrix() * convention_matrix(options.convention) * invert_intrinsics(k);

  WorldPointBatch batch;
  batch.filtered = sampled - kept;
  batch.pixel_index.resize(kept);
  batch.points.resize(4, static_cast<Eigen::Index>(kept));

  constexpr Eigen::Index kBlock = 2048;
  Eigen::Matrix4Xd pixels(4, kBlock);
  Eigen::Array<double, 1, Eigen::Dynamic> z(kBlock);
  Eigen::Index filled = 0;
  Eigen::Index done = 0;
  const auto flush = [&] {
    auto out = batch.points.middleCols(done, filled);
    out.noalias() = projection * pixels.leftCols(filled);
    out.array().rowwise() *= z.head(filled);
    out.row(3).setOnes();
    done += filled;
    filled = 0;
  };
  for (std::size_t v = 0; v < depth.height(); v += stride) {
    const double* row = depth.pixels().data() + v * depth.width();
    for (std::size_t u = 0; u < depth.width(); u += stride) {
      const double d = row[u];
      if (!is_valid_depth(d, options.max_range)) continue;
      double* c = pixels.col(filled).data();
      c[0] = static_cast<double>(u);
      c[1] = static_cast<double>(v);
      c[2] = 1.0;
      c[3] = 1.0 / d;
      z(filled) = d;
      batch.pixel_index[static_cast<std::size_t>(done + filled)] = static_cast<std::uint32_t>(v * depth.width() + u);
      if (++filled == kBlock) flush();
    }
  }
  if (filled > 0) flush();
  return batch;
}

/// Camera description as read from an intrinsics config file.
struct CameraConfig {
  CameraIntrinsics intrinsics;
  double max_range = 50.0;
  CameraConvention convention = CameraConvention::kOptical;
  bool inverse_depth = false;
};

/// Parses `key = value` text. Required keys: fx fy cx cy width height.
/// Optional: skew (0), max_range (50), camera_convention (optical), inverse_depth (false).
inline CameraConfig parse_camera_config(std::string_view content, const std::string& source = "<intrinsics>") {
  CameraConfig cfg;
  bool seen[6] = {};
  const auto where = [&](const text::KeyValue& kv) { return source + ":" + std::to_string(kv.line) + ": "; };
  const auto number = [&](const text::KeyValue& kv) {
    const auto value = text::parse_number<double>(kv.value);
    if (!value) throw Error(Errc::kBadConfig, where(kv) + "'" + kv.key + "' is not a number");
    return *value;
  };
  const auto count = [&](const text::KeyValue& kv) -> std::size_t {
    const auto value = text::parse_number<std::uint64_t>(kv.value);
    if (!value) throw Error(Errc::kBadConfig, where(kv) + "'" + kv.key + "' is not a non-negative integer");
    return static_cast<std::size_t>(*value);
  };
  for (const auto& kv : text::parse_key_values(content, source)) {
    if (kv.key == "fx") { cfg.intrinsics.fx = number(kv); seen[0] = true; }
    else if (kv.key == "fy") { cfg.intrinsics.fy = number(kv); seen[1] = true; }
    else if (kv.key == "cx") { cfg.intrinsics.cx = number(kv); seen[2] = true; }
    else if (kv.key == "cy") { cfg.intrinsics.cy = number(kv); seen[3] = true; }
    else if (kv.key == "width") { cfg.intrinsics.width = count(kv); seen[4] = true; }
    else if (kv.key == "height") { cfg.intrinsics.height = count(kv); seen[5] = true; }
    else if (kv.key == "skew") cfg.intrinsics.skew = number(kv);
    else if (kv.key == "max_range") cfg.max_range = number(kv);
    else if (kv.key == "camera_convention") cfg.convention = parse_camera_convention(kv.value);
    else if (kv.key == "inverse_depth") {
      if (kv.value == "true" || kv.value == "1") cfg.inverse_depth = true;
      else if (kv.value == "false" || kv.value == "0") cfg.inverse_depth = false;
      else throw Error(Errc::kBadConfig, where(kv) + "inverse_depth must be true or false");
    } else {
      throw Error(Errc::kUnknownKey, where(kv) + "unknown key '" + kv.key + "'");
    }
  }
  static constexpr const char* kRequired[6] = {"fx", "fy", "cx", "cy", "width", "height"};
  for (int i = 0; i < 6; ++i) {
    if (!seen[i]) throw Error(Errc::kBadConfig, source + ": missing required key '" + kRequired[i] + "'");
  }
  if (!(cfg.max_range > 0.0)) throw Error(Errc::kParameterDomain, source + ": max_range must be > 0");
  cfg.intrinsics.validate();
  return cfg;
}

inline CameraConfig read_camera_config(const std::string& path) {
  return parse_camera_config(text::read_file(path), path);
}

inline std::string format_camera_config(const CameraConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  const auto& k = cfg.intrinsics;
  out << "fx = " << k.fx << "\nfy = " << k.fy << "\ncx = " << k.cx << "\ncy = " << k.cy
      << "\nskew = " << k.skew << "\nwidth = " << k.width << "\nheight = " << k.height
      << "\nmax_range = " << cfg.max_range << "\ncamera_convention = " << to_string(cfg.convention)
      << "\ninverse_depth = " << (cfg.inverse_depth ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace volmap
