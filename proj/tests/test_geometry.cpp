#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "volmap/geometry.hpp"

namespace volmap {
namespace {

using testing::per_pixel_oracle;
using testing::random_depth;
using testing::random_intrinsics;
using testing::random_pose;
using testing::rel_diff;

TEST(IntrinsicsMatrix, UnitCameraIsIdentity) {
  const CameraIntrinsics k{1, 1, 0, 0, 0, 1, 1};
  EXPECT_EQ(intrinsics_matrix(k), Eigen::Matrix4d::Identity());
  EXPECT_EQ(invert_intrinsics(k), Eigen::Matrix4d::Identity());
}

TEST(IntrinsicsMatrix, EntriesInHomogeneousLayout) {
  const CameraIntrinsics k{320, 320, 320, 240, 0, 640, 480};
  Eigen::Matrix4d expected;
  expected << 320, 0, 320, 0,  //
      0, 320, 240, 0,          //
      0, 0, 1, 0,              //
      0, 0, 0, 1;
  EXPECT_EQ(intrinsics_matrix(k), expected);
}

TEST(InvertIntrinsics, HandExpandedZeroSkew) {
  const CameraIntrinsics k{320, 240, 160, 120, 0, 640, 480};
  const auto inv = invert_intrinsics(k);
  EXPECT_DOUBLE_EQ(inv(0, 0), 1.0 / 320);
  EXPECT_DOUBLE_EQ(inv(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(inv(0, 2), -160.0 / 320);
  EXPECT_DOUBLE_EQ(inv(1, 1), 1.0 / 240);
  EXPECT_DOUBLE_EQ(inv(1, 2), -120.0 / 240);
  EXPECT_EQ(inv.bottomRows<2>(), Eigen::Matrix4d::Identity().bottomRows<2>());
}

TEST(InvertIntrinsics, MatchesNumericInverseAndComposesToIdentity) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto k = random_intrinsics(rng);
    const Eigen::Matrix4d closed = invert_intrinsics(k);
    const Eigen::Matrix4d numeric = intrinsics_matrix(k).inverse();
    EXPECT_LE((closed - numeric).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((intrinsics_matrix(k) * closed - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(InvertIntrinsics, DegenerateFocalLength) {
  CameraIntrinsics k{1e-13, 100, 0, 0, 0, 1, 1};
  EXPECT_THROW(invert_intrinsics(k), Error);
  k = {100, 0.0, 0, 0, 0, 1, 1};
  try {
    invert_intrinsics(k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDegenerateIntrinsics);
    EXPECT_EQ(e.exit_code(), 3);
  }
}

TEST(CameraIntrinsics, ValidationRejectsBadFocalAndSize) {
  EXPECT_THROW((CameraIntrinsics{-1, 1, 0, 0, 0, 4, 4}.validate()), Error);
  EXPECT_THROW((CameraIntrinsics{1, 1, 0, 0, 0, 0, 4}.validate()), Error);
  // Principal point outside the image warns only.
  EXPECT_NO_THROW((CameraIntrinsics{1, 1, 10, 10, 0, 4, 4}.validate()));
}

TEST(PoseSE3, RejectsNonOrthonormalRotation) {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 0) = 1.0 + 1e-6;
  EXPECT_THROW(PoseSE3(r, Eigen::Vector3d::Zero()), Error);
  EXPECT_THROW(PoseSE3(-Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()), Error);
}

TEST(PoseSE3, InverseAndComposition) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_pose(rng);
    const auto b = random_pose(rng);
    EXPECT_LE(((a * a.inverse()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(((a * b).matrix() - a.matrix() * b.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BackprojectPixel, PrincipalPointRay) {
  const CameraIntrinsics k{1, 1, 0, 0, 0, 1, 1};
  const auto p = backproject_pixel(k, PoseSE3::identity(), 0, 0, 5);
  EXPECT_EQ(p, Eigen::Vector3d(0, 0, 5));
}

TEST(BackprojectPixel, HandEvaluated) {
  const CameraIntrinsics k{100, 100, 50, 50, 0, 200, 100};
  const auto p = backproject_pixel(k, PoseSE3::identity(), 150, 50, 2);
  EXPECT_NEAR(p.x(), 2.0, 1e-15);
  EXPECT_NEAR(p.y(), 0.0, 1e-15);
  EXPECT_NEAR(p.z(), 2.0, 1e-15);
}

TEST(BackprojectPixel, PureTranslationAddsOffset) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pix(0, 639), depth(0.1, 40), off(-100, 100);
  for (int i = 0; i < 200; ++i) {
    const auto k = random_intrinsics(rng);
    const Eigen::Vector3d t(off(rng), off(rng), off(rng));
    const double u = pix(rng), v = pix(rng), z = depth(rng);
    const auto moved = backproject_pixel(k, PoseSE3::from_translation(t), u, v, z);
    const auto still = backproject_pixel(k, PoseSE3::identity(), u, v, z);
    EXPECT_LE((moved - (still + t)).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, t.cwiseAbs().maxCoeff()));
  }
}

TEST(BackprojectPixel, InvalidDepth) {
  const CameraIntrinsics k{1, 1, 0, 0, 0, 1, 1};
  for (const double z : {0.0, -1.0, std::nan(""), std::numeric_limits<double>::infinity()}) {
    try {
      backproject_pixel(k, PoseSE3::identity(), 0, 0, z);
      FAIL() << z;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::kInvalidDepth);
    }
  }
}

TEST(BackprojectFrame, ConstantDepthFullFrameIsAPlane) {
  const CameraIntrinsics k{320, 320, 320, 240, 0, 640, 480};
  const DepthMap depth(640, 480, 4.0);
  const auto batch = backproject_frame(k, PoseSE3::identity(), depth);
  ASSERT_EQ(batch.size(), 307200u);
  EXPECT_EQ(batch.filtered, 0u);
  EXPECT_EQ(batch.points.row(2).minCoeff(), 4.0);
  EXPECT_EQ(batch.points.row(2).maxCoeff(), 4.0);
}

TEST(BackprojectFrame, AllZeroDepthIsEmpty) {
  const CameraIntrinsics k{10, 10, 2, 2, 0, 4, 4};
  const auto batch = backproject_frame(k, PoseSE3::identity(), DepthMap(4, 4, 0.0));
  EXPECT_EQ(batch.size(), 0u);
  EXPECT_EQ(batch.filtered, 16u);
}

TEST(BackprojectFrame, DimensionMismatch) {
  const CameraIntrinsics k{10, 10, 2, 2, 0, 4, 4};
  try {
    backproject_frame(k, PoseSE3::identity(), DepthMap(5, 4, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDimensionMismatch);
  }
}

TEST(BackprojectFrame, FiltersInvalidDepthsAndConservesPixels) {
  const CameraIntrinsics k{10, 10, 2, 2, 0, 4, 2};
  DepthMap depth(4, 2, 1.0);
  depth(0, 0) = 0.0;
  depth(1, 0) = -3.0;
  depth(2, 0) = std::nan("");
  depth(3, 0) = 51.0;  // beyond the default 50 m range
  const auto batch = backproject_frame(k, PoseSE3::identity(), depth);
  EXPECT_EQ(batch.size(), 4u);
  EXPECT_EQ(batch.size() + batch.filtered, depth.size());
  EXPECT_EQ(batch.pixel_index, (std::vector<std::uint32_t>{4, 5, 6, 7}));
}

TEST(BackprojectFrame, MatchesPerPixelOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto k = random_intrinsics(rng, 16, 12);
    const auto pose = random_pose(rng);
    auto depth = random_depth(rng, 16, 12);
    depth(3, 3) = 0.0;
    const auto batch = backproject_frame(k, pose, depth);
    const Eigen::Matrix4d extrinsic = pose.inverse().matrix();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto pixel = batch.pixel_index[i];
      const double u = pixel % 16, v = pixel / 16;
      const auto expected = per_pixel_oracle(k, extrinsic, u, v, depth[pixel]);
      EXPECT_LE(rel_diff(batch.point(i), expected), 1e-9);
      EXPECT_LE(rel_diff(batch.point(i), backproject_pixel(k, pose, u, v, depth[pixel])), 1e-9);
      EXPECT_EQ(batch.points(3, static_cast<Eigen::Index>(i)), 1.0);
    }
  }
}

TEST(BackprojectFrame, RigidMotionConsistency) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = random_intrinsics(rng, 32, 24);
    const auto pose = random_pose(rng);
    const auto depth = random_depth(rng, 32, 24);
    const auto local = backproject_frame(k, PoseSE3::identity(), depth);
    const auto world = backproject_frame(k, pose, depth);
    ASSERT_EQ(local.size(), world.size());
    for (std::size_t i = 0; i < local.size(); ++i) {
      const Eigen::Vector3d moved = pose * local.point(i);
      EXPECT_LE((moved - world.point(i)).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, moved.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(BackprojectFrame, StrideSamplesGrid) {
  const CameraIntrinsics k{10, 10, 2, 2, 0, 4, 4};
  const auto batch = backproject_frame(k, PoseSE3::identity(), DepthMap(4, 4, 1.0), {50.0, 2});
  EXPECT_EQ(batch.pixel_index, (std::vector<std::uint32_t>{0, 2, 8, 10}));
}

TEST(CameraConvention, OpenGlFlipsYAndZ) {
  const CameraIntrinsics k{1, 1, 0, 0, 0, 4, 4};
  const auto p = backproject_pixel(k, PoseSE3::identity(), 1, 2, 3, CameraConvention::kOpenGl);
  EXPECT_EQ(p, Eigen::Vector3d(3, -6, -3));
  const auto n = backproject_pixel(k, PoseSE3::identity(), 1, 2, 3, CameraConvention::kNed);
  EXPECT_EQ(n, Eigen::Vector3d(3, 3, 6));
}

TEST(CameraConfig, ParsesAllKeys) {
  const auto cfg = parse_camera_config(
      "# camera\nfx = 320\nfy = 321\ncx = 319.5\ncy = 239.5\nskew = 0.5\nwidth = 640\nheight = 480\n"
      "max_range = 20\ncamera_convention = ned\ninverse_depth = true\n");
  EXPECT_EQ(cfg.intrinsics.fx, 320);
  EXPECT_EQ(cfg.intrinsics.fy, 321);
  EXPECT_EQ(cfg.intrinsics.skew, 0.5);
  EXPECT_EQ(cfg.intrinsics.width, 640u);
  EXPECT_EQ(cfg.max_range, 20);
  EXPECT_EQ(cfg.convention, CameraConvention::kNed);
  EXPECT_TRUE(cfg.inverse_depth);
  // Round trip through the formatter.
  const auto again = parse_camera_config(format_camera_config(cfg));
  EXPECT_EQ(again.intrinsics.cy, cfg.intrinsics.cy);
  EXPECT_EQ(again.convention, cfg.convention);
}

TEST(CameraConfig, UnknownAndMissingKeys) {
  try {
    parse_camera_config("fx = 1\nfy = 1\ncx = 0\ncy = 0\nwidth = 1\nheight = 1\nfocal = 3\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kUnknownKey);
    EXPECT_NE(std::string(e.what()).find(":7:"), std::string::npos);
  }
  EXPECT_THROW(parse_camera_config("fx = 1\nfy = 1\ncx = 0\n"), Error);
  EXPECT_THROW(parse_camera_config("fx = abc\nfy = 1\ncx = 0\ncy = 0\nwidth = 1\nheight = 1\n"), Error);
}

}  // namespace
}  // namespace volmap
