#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "volmap/cloud.hpp"
#include "volmap/error.hpp"
#include "volmap/text.hpp"

namespace volmap {

struct VoxelIndex {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
  VoxelIndex operator+(const VoxelIndex& o) const { return {x + o.x, y + o.y, z + o.z}; }
};

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const noexcept {
    return static_cast<std::size_t>(static_cast<std::uint32_t>(v.x) * 73856093u ^
                                    static_cast<std::uint32_t>(v.y) * 19349669u ^
                                    static_cast<std::uint32_t>(v.z) * 83492791u);
  }
};

/// Compactly supported sparse kernel, k(0) = sigma0 and k(d >= l) = 0.
inline double sparse_kernel(double distance, double length_scale, double sigma0) {
  if (distance >= length_scale) return 0.0;
  const double r = distance / length_scale;
  const double angle = 2.0 * std::numbers::pi * r;
  return sigma0 * ((2.0 + std::cos(angle)) / 3.0 * (1.0 - r) + std::sin(angle) / (2.0 * std::numbers::pi));
}

/// Depthwise 3D filter over voxel offsets in [-radius, radius]^3. Holds
/// either one shared channel or one channel per class.
class KernelFilter {
 public:
  KernelFilter(int radius, std::uint32_t channels, double resolution, std::vector<double> weights,
               double length_scale = 0.0, double sigma0 = 0.0)
      : radius_(radius), channels_(channels), resolution_(resolution), length_scale_(length_scale),
        sigma0_(sigma0), weights_(std::move(weights)) {
    if (radius_ < 0) throw Error(Errc::kParameterDomain, "kernel radius must be >= 0");
    if (channels_ == 0) throw Error(Errc::kParameterDomain, "kernel needs at least one channel");
    if (!(resolution_ > 0.0)) throw Error(Errc::kParameterDomain, "kernel resolution must be > 0");
    if (weights_.size() != channels_ * volume()) {
      throw Error(Errc::kSizeMismatch, "kernel weight count does not match (2r+1)^3 x channels");
    }
    for (const double w : weights_) {
      if (!std::isfinite(w) || w < 0.0) throw Error(Errc::kParameterDomain, "kernel weights must be finite and >= 0");
    }
  }

  int radius() const noexcept { return radius_; }
  int side() const noexcept { return 2 * radius_ + 1; }
  std::size_t volume() const noexcept {
    const auto s = static_cast<std::size_t>(side());
    return s * s * s;
  }
  std::uint32_t channels() const noexcept { return channels_; }
  bool tied() const noexcept { return channels_ == 1; }
  double resolution() const noexcept { return resolution_; }
  double length_scale() const noexcept { return length_scale_; }
  double sigma0() const noexcept { return sigma0_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  double weight(std::uint32_t channel, int i, int j, int k) const {
    if (std::abs(i) > radius_ || std::abs(j) > radius_ || std::abs(k) > radius_) return 0.0;
    return weights_[channel * volume() + offset_index(i, j, k)];
  }

  /// Channel used for class `c`.
  std::uint32_t channel_for(std::uint32_t c) const noexcept { return tied() ? 0 : c; }

  std::size_t offset_index(int i, int j, int k) const noexcept {
    const auto s = static_cast<std::size_t>(side());
    return (static_cast<std::size_t>(i + radius_) * s + static_cast<std::size_t>(j + radius_)) * s +
           static_cast<std::size_t>(k + radius_);
  }

 private:
  int radius_;
  std::uint32_t channels_;
  double resolution_;
  double length_scale_;
  double sigma0_;
  std::vector<double> weights_;
};

/// Samples sparse_kernel on the voxel lattice, radius = floor(l / resolution).
inline KernelFilter build_kernel(double length_scale, double sigma0, double resolution) {
  if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
    throw Error(Errc::kParameterDomain, "kernel length scale must be > 0");
  }
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw Error(Errc::kParameterDomain, "kernel sigma0 must be > 0");
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw Error(Errc::kParameterDomain, "voxel resolution must be > 0");
  }
  const double ratio = length_scale / resolution;
  if (ratio > 64.0) throw Error(Errc::kParameterDomain, "kernel support exceeds 64 voxels");
  const int radius = static_cast<int>(std::floor(ratio * (1.0 + 1e-12)));
  const int side = 2 * radius + 1;
  std::vector<double> weights(static_cast<std::size_t>(side) * side * side);
  std::size_t n = 0;
  for (int i = -radius; i <= radius; ++i) {
    for (int j = -radius; j <= radius; ++j) {
      for (int k = -radius; k <= radius; ++k) {
        const double d = resolution * std::sqrt(static_cast<double>(i * i + j * j + k * k));
        weights[n++] = sparse_kernel(d, length_scale, sigma0);
      }
    }
  }
  return KernelFilter(radius, 1, resolution, std::move(weights), length_scale, sigma0);
}

/// Kernel weight file: header `radius R classes C resolution RES`, then
/// `class i j k weight` lines. Offsets not listed have weight 0.
inline KernelFilter parse_kernel_file(std::string_view content, const std::string& source = "<kernel>") {
  std::vector<double> weights;
  int radius = 0;
  std::uint32_t channels = 0;
  double resolution = 0.0;
  for (const auto& [line_no, raw] : text::numbered_lines(content)) {
    const auto line = text::strip_comment(raw);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto f = text::split_ws(line);
    if (channels == 0) {
      if (f.size() != 6 || f[0] != "radius" || f[2] != "classes" || f[4] != "resolution") {
        throw Error(Errc::kMalformedHeader, where + "expected 'radius R classes C resolution RES'");
      }
      const auto r = text::parse_number<int>(f[1]);
      const auto c = text::parse_number<std::uint32_t>(f[3]);
      const auto res = text::parse_number<double>(f[5]);
      if (!r || !c || !res || *r < 0 || *r > 64 || *c == 0 || !(*res > 0.0)) {
        throw Error(Errc::kMalformedHeader, where + "bad kernel header values");
      }
      radius = *r;
      channels = *c;
      resolution = *res;
      const auto side = static_cast<std::size_t>(2 * radius + 1);
      weights.assign(channels * side * side * side, 0.0);
      continue;
    }
    if (f.size() != 5) throw Error(Errc::kMalformedLine, where + "expected 'class i j k weight'");
    const auto c = text::parse_number<std::uint32_t>(f[0]);
    const auto i = text::parse_number<int>(f[1]);
    const auto j = text::parse_number<int>(f[2]);
    const auto k = text::parse_number<int>(f[3]);
    const auto w = text::parse_number<double>(f[4]);
    if (!c || !i || !j || !k || !w) throw Error(Errc::kMalformedLine, where + "non-numeric field");
    if (*c >= channels || std::abs(*i) > radius || std::abs(*j) > radius || std::abs(*k) > radius) {
      throw Error(Errc::kMalformedLine, where + "class or offset out of range");
    }
    if (!std::isfinite(*w) || *w < 0.0) throw Error(Errc::kMalformedLine, where + "weight must be finite and >= 0");
    const auto side = static_cast<std::size_t>(2 * radius + 1);
    const std::size_t index = (static_cast<std::size_t>(*i + radius) * side + static_cast<std::size_t>(*j + radius)) * side +
                              static_cast<std::size_t>(*k + radius);
    weights[*c * side * side * side + index] = *w;
  }
  if (channels == 0) throw Error(Errc::kMalformedHeader, source + ": missing kernel header");
  return KernelFilter(radius, channels, resolution, std::move(weights));
}

inline KernelFilter read_kernel_file(const std::string& path) {
  return parse_kernel_file(text::read_file(path), path);
}

/// Evidence is accumulated as fixed-point integers in units of 2^-48 so that
/// summation is exact: map updates commute and split batches bit-exactly.
using EvidenceTicks = __int128;
inline constexpr int kEvidenceFractionBits = 48;

inline EvidenceTicks to_ticks(double weight) {
  const double scaled = std::ldexp(weight, kEvidenceFractionBits);
  if (!(scaled < 9.0e18)) throw Error(Errc::kParameterDomain, "kernel weight too large for evidence accumulator");
  return static_cast<EvidenceTicks>(std::llround(scaled));
}

inline double from_ticks(EvidenceTicks ticks) {
  return std::ldexp(static_cast<double>(ticks), -kEvidenceFractionBits);
}

/// Sparse semantic voxel map: per-voxel Dirichlet concentrations over
/// `num_classes` classes. The prior is added lazily at query time.
class VoxelGrid {
 public:
  VoxelGrid(double resolution, Eigen::Vector3d origin, std::uint32_t num_classes, double prior_alpha = 0.001)
      : resolution_(resolution), origin_(std::move(origin)), num_classes_(num_classes), prior_alpha_(prior_alpha) {
    if (!(resolution_ > 0.0) || !std::isfinite(resolution_)) {
      throw Error(Errc::kParameterDomain, "voxel resolution must be > 0");
    }
    if (!origin_.allFinite()) throw Error(Errc::kParameterDomain, "grid origin must be finite");
    if (num_classes_ == 0) throw Error(Errc::kParameterDomain, "grid needs at least one class");
    if (!(prior_alpha_ >= 0.0) || !std::isfinite(prior_alpha_)) {
      throw Error(Errc::kParameterDomain, "prior_alpha must be >= 0");
    }
  }

  double resolution() const noexcept { return resolution_; }
  const Eigen::Vector3d& origin() const noexcept { return origin_; }
  std::uint32_t num_classes() const noexcept { return num_classes_; }
  double prior_alpha() const noexcept { return prior_alpha_; }
  std::size_t size() const noexcept { return slots_.size(); }
  bool empty() const noexcept { return slots_.empty(); }

  bool contains(const VoxelIndex& v) const { return slots_.contains(v); }

  /// Stored (prior-free) concentration, 0 for unobserved voxels.
  double stored_alpha(const VoxelIndex& v, std::uint32_t c) const {
    const auto it = slots_.find(v);
    if (it == slots_.end() || c >= num_classes_) return 0.0;
    return from_ticks(evidence_[it->second * num_classes_ + c]);
  }

  EvidenceTicks stored_ticks(const VoxelIndex& v, std::uint32_t c) const {
    const auto it = slots_.find(v);
    if (it == slots_.end() || c >= num_classes_) return 0;
    return evidence_[it->second * num_classes_ + c];
  }

  /// Stored voxel indices in lexicographic order.
  std::vector<VoxelIndex> sorted_keys() const {
    std::vector<VoxelIndex> keys;
    keys.reserve(slots_.size());
    for (const auto& [key, slot] : slots_) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    return keys;
  }

  /// Adds `ticks` of evidence for class `c` at voxel `v`.
  void add_evidence(const VoxelIndex& v, std::uint32_t c, EvidenceTicks ticks) {
    auto [it, inserted] = slots_.try_emplace(v, slots_.size());
    if (inserted) evidence_.resize(evidence_.size() + num_classes_, 0);
    evidence_[it->second * num_classes_ + c] += ticks;
  }

  /// Grids are equal when they hold identical evidence for identical voxels.
  friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
    if (a.num_classes_ != b.num_classes_ || a.slots_.size() != b.slots_.size()) return false;
    for (const auto& [key, slot] : a.slots_) {
      const auto it = b.slots_.find(key);
      if (it == b.slots_.end()) return false;
      for (std::uint32_t c = 0; c < a.num_classes_; ++c) {
        if (a.evidence_[slot * a.num_classes_ + c] != b.evidence_[it->second * b.num_classes_ + c]) return false;
      }
    }
    return true;
  }

 private:
  double resolution_;
  Eigen::Vector3d origin_;
  std::uint32_t num_classes_;
  double prior_alpha_;
  std::unordered_map<VoxelIndex, std::size_t, VoxelIndexHash> slots_;
  std::vector<EvidenceTicks> evidence_;
};

inline VoxelIndex point_to_voxel(const Eigen::Vector3d& p, const Eigen::Vector3d& origin, double resolution) {
  if (!p.allFinite()) throw Error(Errc::kInvalidPoint, "point has non-finite coordinates");
  const Eigen::Vector3d scaled = ((p - origin) / resolution).array().floor();
  constexpr double lo = std::numeric_limits<std::int32_t>::min() + 128.0;
  constexpr double hi = std::numeric_limits<std::int32_t>::max() - 128.0;
  if ((scaled.array() < lo).any() || (scaled.array() > hi).any()) {
    throw Error(Errc::kInvalidPoint, "point lies outside the addressable voxel range");
  }
  return {static_cast<std::int32_t>(scaled.x()), static_cast<std::int32_t>(scaled.y()),
          static_cast<std::int32_t>(scaled.z())};
}

inline VoxelIndex point_to_voxel(const Eigen::Vector3d& p, const VoxelGrid& grid) {
  return point_to_voxel(p, grid.origin(), grid.resolution());
}

inline Eigen::Vector3d voxel_center(const VoxelIndex& v, const Eigen::Vector3d& origin, double resolution) {
  return origin + resolution * (Eigen::Vector3d(v.x, v.y, v.z).array() + 0.5).matrix();
}

struct UpdateStats {
  std::size_t points_used = 0;
  std::size_t voxels_touched = 0;
};

/// Histograms the cloud per voxel and class (the unlabeled class excluded),
/// then scatters each occupied cell through the depthwise kernel:
/// alpha[v + o][c] += w_c(o) * H[v][c].
inline UpdateStats update_map(VoxelGrid& grid, const SemanticPointCloud& cloud, const KernelFilter& kernel) {
  const std::uint32_t num_classes = grid.num_classes();
  if (std::abs(kernel.resolution() - grid.resolution()) > 1e-9 * grid.resolution()) {
    throw Error(Errc::kParameterDomain, "kernel resolution " + std::to_string(kernel.resolution()) +
                                            " does not match grid resolution " + std::to_string(grid.resolution()));
  }
  if (!kernel.tied() && kernel.channels() != num_classes) {
    throw Error(Errc::kParameterDomain, "per-class kernel has " + std::to_string(kernel.channels()) +
                                            " channels, grid has " + std::to_string(num_classes) + " classes");
  }
  if (cloud.classes.size() != cloud.points.size()) {
    throw Error(Errc::kSizeMismatch, "point cloud arrays differ in length");
  }
  for (const auto c : cloud.classes) {
    if (c >= num_classes) {
      throw Error(Errc::kClassOutOfRange, "class " + std::to_string(c) + " >= " + std::to_string(num_classes));
    }
  }

  UpdateStats stats;
  std::unordered_map<VoxelIndex, std::size_t, VoxelIndexHash> cell_slot;
  std::vector<VoxelIndex> cells;
  std::vector<std::uint64_t> counts;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto c = cloud.classes[i];
    if (cloud.unlabeled_id && c == *cloud.unlabeled_id) continue;
    const auto v = point_to_voxel(cloud.points[i], grid);
    auto [it, inserted] = cell_slot.try_emplace(v, cells.size());
    if (inserted) {
      cells.push_back(v);
      counts.resize(counts.size() + num_classes, 0);
    }
    ++counts[it->second * num_classes + c];
    ++stats.points_used;
  }
  if (cells.empty()) return stats;

  // Nonzero taps per channel.
  struct Tap {
    VoxelIndex offset;
    EvidenceTicks ticks;
  };
  std::vector<std::vector<Tap>> taps(kernel.channels());
  const int r = kernel.radius();
  for (std::uint32_t ch = 0; ch < kernel.channels(); ++ch) {
    for (int i = -r; i <= r; ++i) {
      for (int j = -r; j <= r; ++j) {
        for (int k = -r; k <= r; ++k) {
          const double w = kernel.weight(ch, i, j, k);
          if (w > 0.0) taps[ch].push_back({{i, j, k}, to_ticks(w)});
        }
      }
    }
  }

  std::unordered_map<VoxelIndex, char, VoxelIndexHash> touched;
  for (std::size_t s = 0; s < cells.size(); ++s) {
    for (std::uint32_t c = 0; c < num_classes; ++c) {
      const auto n = counts[s * num_classes + c];
      if (n == 0) continue;
      for (const auto& tap : taps[kernel.channel_for(c)]) {
        const auto target = cells[s] + tap.offset;
        grid.add_evidence(target, c, tap.ticks * static_cast<EvidenceTicks>(n));
        touched.try_emplace(target, 0);
      }
    }
  }
  stats.voxels_touched = touched.size();
  return stats;
}

struct VoxelQueryResult {
  std::uint32_t expected_class = 0;
  std::vector<double> probabilities;
  double confidence = 0.0;
  std::vector<double> variance;
};

/// Dirichlet posterior readout with effective alpha_c = prior + stored_c.
inline VoxelQueryResult query_voxel(const VoxelGrid& grid, const VoxelIndex& v) {
  const std::uint32_t n = grid.num_classes();
  std::vector<double> alpha(n);
  double total = 0.0;
  for (std::uint32_t c = 0; c < n; ++c) {
    alpha[c] = grid.prior_alpha() + grid.stored_alpha(v, c);
    total += alpha[c];
  }
  VoxelQueryResult out;
  out.confidence = total;
  out.probabilities.assign(n, 0.0);
  out.variance.assign(n, 0.0);
  if (total > 0.0) {
    for (std::uint32_t c = 0; c < n; ++c) {
      const double p = alpha[c] / total;
      out.probabilities[c] = p;
      out.variance[c] = p * (1.0 - p) / (total + 1.0);
    }
  } else {
    // Zero prior and no evidence: report the uniform distribution.
    for (std::uint32_t c = 0; c < n; ++c) {
      out.probabilities[c] = 1.0 / n;
      out.variance[c] = out.probabilities[c] * (1.0 - out.probabilities[c]);
    }
  }
  // Argmax on alphas; strict comparison keeps the lowest id on ties.
  for (std::uint32_t c = 1; c < n; ++c) {
    if (alpha[c] > alpha[out.expected_class]) out.expected_class = c;
  }
  return out;
}

struct VoxelRecord {
  VoxelIndex index;
  std::uint32_t expected_class = 0;
  double confidence = 0.0;
  friend bool operator==(const VoxelRecord&, const VoxelRecord&) = default;
};

/// One record per stored voxel with confidence > min_confidence, ordered by index.
inline std::vector<VoxelRecord> export_expected_map(const VoxelGrid& grid, double min_confidence = 0.0) {
  if (!(min_confidence >= 0.0)) throw Error(Errc::kParameterDomain, "min_confidence must be >= 0");
  std::vector<VoxelRecord> out;
  for (const auto& key : grid.sorted_keys()) {
    const auto q = query_voxel(grid, key);
    if (q.confidence > min_confidence) out.push_back({key, q.expected_class, q.confidence});
  }
  return out;
}

}  // namespace volmap
