#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "volmap/error.hpp"
#include "volmap/geometry.hpp"

namespace volmap {

struct StampedPose {
  double timestamp = 0.0;
  PoseSE3 pose;
};

/// Time-ordered pose sequence with strictly increasing timestamps.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<StampedPose> poses) : poses_(std::move(poses)) { validate(); }

  std::size_t size() const noexcept { return poses_.size(); }
  bool empty() const noexcept { return poses_.empty(); }
  const StampedPose& operator[](std::size_t i) const { return poses_[i]; }
  const std::vector<StampedPose>& poses() const noexcept { return poses_; }
  auto begin() const noexcept { return poses_.begin(); }
  auto end() const noexcept { return poses_.end(); }

  void validate() const {
    if (poses_.empty()) throw Error(Errc::kInsufficientLength, "trajectory has no poses");
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      if (!std::isfinite(poses_[i].timestamp)) {
        throw Error(Errc::kMalformedLine, "pose " + std::to_string(i) + " has a non-finite timestamp");
      }
      if (i > 0 && !(poses_[i].timestamp > poses_[i - 1].timestamp)) {
        throw Error(Errc::kNonMonotonicTimestamps,
                    "timestamp at pose " + std::to_string(i) + " does not increase");
      }
    }
  }

 private:
  std::vector<StampedPose> poses_;
};

struct PosePair {
  double est_time = 0.0;
  double ref_time = 0.0;
  PoseSE3 est;
  PoseSE3 ref;
};

/// Greedy nearest-timestamp matching: candidate pairs within max_dt are taken
/// in order of increasing |dt|, each pose at most once. Output follows est time.
inline std::vector<PosePair> associate(const Trajectory& est, const Trajectory& ref, double max_dt) {
  if (!(max_dt >= 0.0)) throw Error(Errc::kParameterDomain, "max_dt must be >= 0");
  struct Candidate {
    double dt;
    std::size_t e;
    std::size_t r;
  };
  std::vector<Candidate> candidates;
  for (std::size_t e = 0; e < est.size(); ++e) {
    const double t = est[e].timestamp;
    auto it = std::lower_bound(ref.begin(), ref.end(), t - max_dt,
                               [](const StampedPose& p, double v) { return p.timestamp < v; });
    for (; it != ref.end() && it->timestamp <= t + max_dt; ++it) {
      candidates.push_back({std::abs(it->timestamp - t), e, static_cast<std::size_t>(it - ref.begin())});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.dt, a.e, a.r) < std::tie(b.dt, b.e, b.r);
  });
  std::vector<char> est_used(est.size(), 0);
  std::vector<char> ref_used(ref.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> matched;
  for (const auto& c : candidates) {
    if (est_used[c.e] || ref_used[c.r]) continue;
    est_used[c.e] = ref_used[c.r] = 1;
    matched.emplace_back(c.e, c.r);
  }
  if (matched.empty()) throw Error(Errc::kEmptyOverlap, "no timestamp pairs within max_dt");
  std::sort(matched.begin(), matched.end());
  std::vector<PosePair> pairs;
  pairs.reserve(matched.size());
  for (const auto& [e, r] : matched) {
    pairs.push_back({est[e].timestamp, ref[r].timestamp, est[e].pose, ref[r].pose});
  }
  return pairs;
}

/// Pairs poses by index, for datasets without meaningful timestamps.
inline std::vector<PosePair> associate_by_index(const Trajectory& est, const Trajectory& ref) {
  const std::size_t n = std::min(est.size(), ref.size());
  if (n == 0) throw Error(Errc::kEmptyOverlap, "empty trajectory");
  std::vector<PosePair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({est[i].timestamp, ref[i].timestamp, est[i].pose, ref[i].pose});
  return pairs;
}

/// x -> scale * R x + t
struct Similarity {
  PoseSE3 rigid;
  double scale = 1.0;

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return scale * (rigid.rotation() * p) + rigid.translation();
  }
};

/// Closed-form least-squares alignment of est translations onto ref
/// translations (Umeyama). Requires >= 3 non-collinear points.
inline Similarity align_rigid(const std::vector<PosePair>& pairs, bool with_scale = false) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  if (n < 3) throw Error(Errc::kDegenerateConfiguration, "alignment needs at least 3 pose pairs");
  Eigen::Matrix3Xd src(3, n);
  Eigen::Matrix3Xd dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = pairs[static_cast<std::size_t>(i)].est.translation();
    dst.col(i) = pairs[static_cast<std::size_t>(i)].ref.translation();
  }
  const Eigen::Vector3d src_mean = src.rowwise().mean();
  const Eigen::Vector3d dst_mean = dst.rowwise().mean();
  const Eigen::Matrix3Xd src_c = src.colwise() - src_mean;
  const Eigen::Matrix3Xd dst_c = dst.colwise() - dst_mean;

  const Eigen::JacobiSVD<Eigen::Matrix3Xd> spread(src_c);
  const auto sv = spread.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0)) {
    throw Error(Errc::kDegenerateConfiguration, "estimated positions are coincident or collinear");
  }

  const Eigen::Matrix3d cov = dst_c * src_c.transpose() / static_cast<double>(n);
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  Eigen::Matrix3d rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  // Re-orthonormalize against roundoff.
  rotation = Eigen::Quaterniond(rotation).normalized().toRotationMatrix();

  double scale = 1.0;
  if (with_scale) {
    const double src_var = src_c.squaredNorm() / static_cast<double>(n);
    scale = svd.singularValues().dot(s) / src_var;
  }
  const Eigen::Vector3d translation = dst_mean - scale * rotation * src_mean;
  return {PoseSE3(rotation, translation), scale};
}

/// Rotation angle in radians. atan2 of the skew and symmetric parts instead of
/// a bare arccos((trace - 1) / 2): arccos loses half its digits near zero, so
/// an identity built from roundoff would read as ~1e-8 rad.
inline double rotation_angle(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
}

inline double ate_rmse(const std::vector<PosePair>& pairs, const Similarity& alignment) {
  double sum = 0.0;
  for (const auto& p : pairs) sum += (alignment * p.est.translation() - p.ref.translation()).squaredNorm();
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

struct EvalOptions {
  double max_dt = 0.01;
  std::size_t rpe_delta = 1;
  std::vector<double> kitti_lengths = {100, 200, 300, 400, 500, 600, 700, 800};
  bool scale_align = false;
};

inline double ate_rmse(const Trajectory& est, const Trajectory& ref, const EvalOptions& options = {}) {
  const auto pairs = associate(est, ref, options.max_dt);
  return ate_rmse(pairs, align_rigid(pairs, options.scale_align));
}

struct RelativeError {
  double translation = 0.0;
  double rotation = 0.0;
};

inline PoseSE3 relative_error(const PoseSE3& est_a, const PoseSE3& est_b, const PoseSE3& ref_a, const PoseSE3& ref_b) {
  return (ref_a.inverse() * ref_b).inverse() * (est_a.inverse() * est_b);
}

/// RMSE of the translational and rotational parts of
/// E_i = (ref_i^-1 ref_{i+delta})^-1 (est_i^-1 est_{i+delta}).
inline RelativeError rpe(const std::vector<PosePair>& pairs, std::size_t delta = 1) {
  if (delta == 0) throw Error(Errc::kParameterDomain, "rpe delta must be >= 1");
  if (pairs.size() < delta + 1) {
    throw Error(Errc::kInsufficientLength, "rpe needs at least delta+1 = " + std::to_string(delta + 1) +
                                               " paired poses, got " + std::to_string(pairs.size()));
  }
  double trans = 0.0;
  double rot = 0.0;
  const std::size_t count = pairs.size() - delta;
  for (std::size_t i = 0; i < count; ++i) {
    const auto e = relative_error(pairs[i].est, pairs[i + delta].est, pairs[i].ref, pairs[i + delta].ref);
    trans += e.translation().squaredNorm();
    const double a = rotation_angle(e.rotation());
    rot += a * a;
  }
  return {std::sqrt(trans / static_cast<double>(count)), std::sqrt(rot / static_cast<double>(count))};
}

inline RelativeError rpe(const Trajectory& est, const Trajectory& ref, std::size_t delta = 1,
                         const EvalOptions& options = {}) {
  return rpe(associate(est, ref, options.max_dt), delta);
}

struct KittiError {
  double translation = 0.0;  ///< mean ||t_err|| / L (ratio)
  double rotation = 0.0;     ///< mean angle / L (rad/m)
  std::size_t segments = 0;
};

/// Drift over every (start, length) subsequence the reference path covers.
/// The end of a subsequence is the first pose whose arc length from the start
/// reaches L.
inline KittiError kitti_errors(const std::vector<PosePair>& pairs, const std::vector<double>& lengths) {
  if (lengths.empty()) throw Error(Errc::kParameterDomain, "no KITTI segment lengths given");
  for (const double l : lengths) {
    if (!(l > 0.0) || !std::isfinite(l)) throw Error(Errc::kParameterDomain, "KITTI lengths must be > 0");
  }
  std::vector<double> dist(pairs.size(), 0.0);
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    dist[i] = dist[i - 1] + (pairs[i].ref.translation() - pairs[i - 1].ref.translation()).norm();
  }
  KittiError out;
  double trans = 0.0;
  double rot = 0.0;
  for (std::size_t first = 0; first < pairs.size(); ++first) {
    for (const double length : lengths) {
      const double target = dist[first] + length * (1.0 - 1e-12);
      const auto it = std::lower_bound(dist.begin() + static_cast<std::ptrdiff_t>(first), dist.end(), target);
      if (it == dist.end()) continue;
      const auto last = static_cast<std::size_t>(it - dist.begin());
      const auto e = relative_error(pairs[first].est, pairs[last].est, pairs[first].ref, pairs[last].ref);
      trans += e.translation().norm() / length;
      rot += rotation_angle(e.rotation()) / length;
      ++out.segments;
    }
  }
  if (out.segments == 0) {
    throw Error(Errc::kPathTooShort, "reference path (" + std::to_string(dist.empty() ? 0.0 : dist.back()) +
                                         " m) is shorter than every KITTI segment length");
  }
  out.translation = trans / static_cast<double>(out.segments);
  out.rotation = rot / static_cast<double>(out.segments);
  return out;
}

inline KittiError kitti_errors(const Trajectory& est, const Trajectory& ref, const std::vector<double>& lengths,
                               const EvalOptions& options = {}) {
  return kitti_errors(associate(est, ref, options.max_dt), lengths);
}

struct MetricsReport {
  double ate_rmse = 0.0;
  double rpe_trans = 0.0;
  double rpe_rot = 0.0;
  double kitti_trans = 0.0;
  double kitti_rot = 0.0;
  Similarity alignment;
  std::size_t pairs = 0;
  std::size_t kitti_segments = 0;
};

inline MetricsReport evaluate(const Trajectory& est, const Trajectory& ref, const EvalOptions& options = {}) {
  const auto pairs = associate(est, ref, options.max_dt);
  MetricsReport report;
  report.pairs = pairs.size();
  report.alignment = align_rigid(pairs, options.scale_align);
  report.ate_rmse = ate_rmse(pairs, report.alignment);
  const auto r = rpe(pairs, options.rpe_delta);
  report.rpe_trans = r.translation;
  report.rpe_rot = r.rotation;
  const auto k = kitti_errors(pairs, options.kitti_lengths);
  report.kitti_trans = k.translation;
  report.kitti_rot = k.rotation;
  report.kitti_segments = k.segments;
  return report;
}

}  // namespace volmap
