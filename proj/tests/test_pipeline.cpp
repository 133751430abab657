#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include "oracles.hpp"
#include "volmap/pipeline.hpp"
#include "volmap/synth.hpp"

namespace volmap {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(VOLMAP_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (const std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> key_values(const std::string& output) {
  std::map<std::string, std::string> kv;
  std::istringstream in(output);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string slurp(const fs::path& p) { return text::read_file(p.string()); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

TEST(Cli, ZeroFrameDatasetGivesEmptyMap) {
  const auto dir = testing::temp_dir("zero");
  ASSERT_EQ(run_cli("synth --frames 0 --out " + q(dir / "ds")).exit_code, 0);
  const auto r = run_cli("build-map --dataset " + q(dir / "ds") + " --out " + q(dir / "map.txt"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(key_values(r.output)["frames"], "0");
  const auto map = io::read_voxel_map((dir / "map.txt").string());
  EXPECT_TRUE(map.records.empty());
  EXPECT_EQ(map.classes, 9u);
}

TEST(Cli, SyntheticBuildIsAccurateAndDeterministic) {
  const auto dir = testing::temp_dir("synthbuild");
  ASSERT_EQ(run_cli("synth --frames 20 --out " + q(dir / "ds")).exit_code, 0);
  const auto a = run_cli("build-map --dataset " + q(dir / "ds") + " --out " + q(dir / "a.txt"));
  ASSERT_EQ(a.exit_code, 0) << a.output;
  ASSERT_EQ(run_cli("build-map --dataset " + q(dir / "ds") + " --out " + q(dir / "b.txt")).exit_code, 0);
  ASSERT_EQ(run_cli("build-map --sequential --dataset " + q(dir / "ds") + " --out " + q(dir / "c.txt")).exit_code, 0);
  const auto bytes = slurp(dir / "a.txt");
  EXPECT_EQ(bytes, slurp(dir / "b.txt"));
  EXPECT_EQ(bytes, slurp(dir / "c.txt"));

  const auto agreement = synth::score_map(io::read_voxel_map((dir / "a.txt").string()),
                                          io::read_voxel_map((dir / "ds" / synth::kGroundTruthFile).string()));
  EXPECT_GT(agreement.total, 1000u);
  EXPECT_GE(agreement.ratio(), 0.99);

  auto kv = key_values(a.output);
  EXPECT_EQ(kv["frames"], "20");
  EXPECT_TRUE(kv.count("projection_ms_per_frame"));
  EXPECT_TRUE(kv.count("update_ms_per_frame"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const auto dir = testing::temp_dir("config");
  ASSERT_EQ(run_cli("synth --frames 2 --out " + q(dir / "ds")).exit_code, 0);
  {
    std::ofstream cfg(dir / "run.ini");
    cfg << "voxel-res = 0.4\nkernel-l = 0.5\nstride = 4\n";
  }
  auto r = run_cli("build-map --config " + q(dir / "run.ini") + " --dataset " + q(dir / "ds") + " --out " +
                   q(dir / "m.txt"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(io::read_voxel_map((dir / "m.txt").string()).resolution, 0.4);
  r = run_cli("build-map --config " + q(dir / "run.ini") + " --voxel-res 0.25 --kernel-l 0.3 --dataset " +
              q(dir / "ds") + " --out " + q(dir / "m.txt"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(io::read_voxel_map((dir / "m.txt").string()).resolution, 0.25);
}

TEST(Cli, PerFramePlyOutput) {
  const auto dir = testing::temp_dir("ply");
  ASSERT_EQ(run_cli("synth --frames 3 --out " + q(dir / "ds")).exit_code, 0);
  const auto r = run_cli("build-map --stride 8 --ply-mode ascii --ply-dir " + q(dir / "ply") + " --dataset " +
                         q(dir / "ds") + " --out " + q(dir / "m.txt"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  for (const char* name : {"000000.ply", "000001.ply", "000002.ply"}) {
    const auto bytes = slurp(dir / "ply" / name);
    EXPECT_EQ(bytes.rfind("ply\nformat ascii 1.0\n", 0), 0u) << name;
  }
}

TEST(Cli, ErrorsNameTheFrameAndMapToExitCodes) {
  const auto dir = testing::temp_dir("errors");
  ASSERT_EQ(run_cli("synth --frames 6 --out " + q(dir / "ds")).exit_code, 0);
  const auto base = " --dataset " + q(dir / "ds") + " --out " + q(dir / "m.txt");

  // Data error in frame 3.
  {
    auto bytes = slurp(dir / "ds" / "depth" / "000003.vdr");
    bytes.resize(bytes.size() - 7);
    io::detail::write_bytes((dir / "ds" / "depth" / "000003.vdr").string(), bytes);
  }
  for (const char* mode : {"", " --sequential"}) {
    const auto r = run_cli(std::string("build-map") + mode + base);
    EXPECT_EQ(r.exit_code, 2) << r.output;
    EXPECT_NE(r.output.find("frame 3"), std::string::npos) << r.output;
  }

  // Config errors.
  EXPECT_EQ(run_cli("build-map --no-such-flag" + base).exit_code, 1);
  EXPECT_EQ(run_cli("build-map --voxel-res -1" + base).exit_code, 1);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 1);
  {
    std::ofstream cfg(dir / "ds" / "intrinsics.cfg", std::ios::app);
    cfg << "focal_length = 3\n";
  }
  auto r = run_cli("build-map" + base);
  EXPECT_EQ(r.exit_code, 1) << r.output;
  EXPECT_NE(r.output.find("focal_length"), std::string::npos);

  // Numeric error: degenerate intrinsics.
  io::detail::write_bytes((dir / "ds" / "intrinsics.cfg").string(), "fx = 0\nfy = 100\ncx = 1\ncy = 1\nwidth = 320\nheight = 240\n");
  r = run_cli("build-map" + base);
  EXPECT_EQ(r.exit_code, 3) << r.output;
}

TEST(Cli, StreamingMemoryDoesNotScaleWithFrameCount) {
  const auto dir = testing::temp_dir("memory");
  ASSERT_EQ(run_cli("synth --frames 8 --out " + q(dir / "small")).exit_code, 0);
  ASSERT_EQ(run_cli("synth --frames 80 --out " + q(dir / "large")).exit_code, 0);
  const auto small = run_cli("build-map --dataset " + q(dir / "small") + " --out " + q(dir / "s.txt"));
  const auto large = run_cli("build-map --dataset " + q(dir / "large") + " --out " + q(dir / "l.txt"));
  ASSERT_EQ(small.exit_code, 0) << small.output;
  ASSERT_EQ(large.exit_code, 0) << large.output;
  const double rss_small = std::stod(key_values(small.output)["peak_rss_kb"]);
  const double rss_large = std::stod(key_values(large.output)["peak_rss_kb"]);
  // Buffering all frames would cost ~0.45 MB per frame (f32 depth, u16 labels,
  // doubles after decoding); the map itself is the same scene in both runs.
  EXPECT_LT(rss_large, 2.0 * rss_small) << rss_small << " KB vs " << rss_large << " KB";
}

TEST(Synth, SameSeedSameBytes) {
  const auto dir = testing::temp_dir("synthdet");
  ASSERT_EQ(run_cli("synth --frames 3 --seed 9 --label-flip-prob 0.3 --depth-sigma 0.01 --out " + q(dir / "a")).exit_code, 0);
  ASSERT_EQ(run_cli("synth --frames 3 --seed 9 --label-flip-prob 0.3 --depth-sigma 0.01 --out " + q(dir / "b")).exit_code, 0);
  for (const char* f : {"depth/000002.vdr", "labels/000002.vdr", "trajectory.txt", "gt_voxels.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  ASSERT_EQ(run_cli("synth --frames 3 --seed 10 --label-flip-prob 0.3 --out " + q(dir / "c")).exit_code, 0);
  EXPECT_NE(slurp(dir / "a" / "labels/000002.vdr"), slurp(dir / "c" / "labels/000002.vdr"));
}

TEST(Synth, FullFlipWithTwoClasses) {
  synth::SyntheticScene scene = synth::default_scene();
  scene.num_classes = 2;
  scene.ground.label = 0;
  for (auto& b : scene.boxes) b.face_labels = {1, 1, 1, 1, 1, 1};
  scene.noise.label_flip_probability = 1.0;
  std::mt19937_64 rng(4);
  const auto frame = synth::render(scene, synth::camera_pose(scene, 0, 10), rng);
  ASSERT_GT(frame.labelled_pixels, 1000u);
  EXPECT_EQ(frame.correct_labels, 0u);
  for (std::size_t i = 0; i < frame.labels.size(); ++i) {
    if (frame.true_labels[i] == scene.unlabeled()) continue;
    EXPECT_EQ(frame.labels[i], 1 - frame.true_labels[i]);
  }
}

TEST(Synth, PlaneOnlyDepthMatchesRayPlaneIntersection) {
  synth::SyntheticScene scene = synth::default_scene();
  scene.boxes.clear();
  scene.ground = {0.1, 1000.0, 0};
  scene.max_range = 1000.0;
  const Eigen::Vector3d eye(1.0, -2.0, 4.0);
  const auto pose = synth::look_at(eye, Eigen::Vector3d(3, 1, 0));
  std::mt19937_64 rng(1);
  const auto frame = synth::render(scene, pose, rng);
  const auto& k = scene.camera;
  std::size_t hits = 0;
  for (std::size_t v = 0; v < k.height; ++v) {
    for (std::size_t u = 0; u < k.width; ++u) {
      // Pixel ray in the camera frame with unit optical-axis component.
      const double y = (static_cast<double>(v) - k.cy) / k.fy;
      const double x = (static_cast<double>(u) - k.cx - k.skew * y) / k.fx;
      const Eigen::Vector3d dir = pose.rotation() * Eigen::Vector3d(x, y, 1.0);
      if (dir.z() >= 0.0) {
        EXPECT_EQ(frame.depth(u, v), 0.0);
        continue;
      }
      const double t = (0.1 - eye.z()) / dir.z();
      EXPECT_NEAR(frame.depth(u, v), t, 1e-6);
      ++hits;
    }
  }
  EXPECT_GT(hits, k.width * k.height / 4);
}

TEST(Synth, SceneJson) {
  const auto scene = synth::parse_scene(R"({"seed": 3, "num_classes": 4,
      "ground": {"height": 0.0, "half_extent": 5, "class": 1},
      "boxes": [{"min": [0,0,0], "max": [1,1,1], "face_classes": [0,1,2,3,0,1]}],
      "path": {"type": "line", "start": [-3,-3,2], "end": [3,-3,2], "target": [0,0,0]},
      "noise": {"depth_sigma": 0.01, "label_flip_prob": 0.1}})");
  EXPECT_EQ(scene.seed, 3u);
  EXPECT_EQ(scene.num_classes, 4u);
  EXPECT_EQ(scene.boxes.size(), 1u);
  EXPECT_THROW(synth::parse_scene(R"({"sed": 3})"), Error);
  EXPECT_THROW(synth::parse_scene(R"({"boxes": [{"min": [1,0,0], "max": [0,1,1], "face_classes": 0}]})"), Error);
  EXPECT_THROW(synth::parse_scene("{"), Error);
}

TEST(Cli, ExportPlyAndVoxelText) {
  const auto dir = testing::temp_dir("export");
  io::write_voxel_map(io::VoxelMapFile{0.2, Eigen::Vector3d::Zero(), 3, {{{0, 0, 0}, 2, 1.5}}},
                      (dir / "m.txt").string());
  auto r = run_cli("export " + q(dir / "m.txt") + " --format ply --ply-mode ascii --out " + q(dir / "m.ply"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto ply = slurp(dir / "m.ply");
  const auto body = ply.substr(ply.find("end_header\n") + 11);
  float x = 0, y = 0, z = 0;
  unsigned cr = 0, cg = 0, cb = 0, cls = 0;
  ASSERT_EQ(std::sscanf(body.c_str(), "%f %f %f %u %u %u %u", &x, &y, &z, &cr, &cg, &cb, &cls), 7);
  EXPECT_NEAR(x, 0.1f, 1e-7);
  EXPECT_NEAR(y, 0.1f, 1e-7);
  EXPECT_NEAR(z, 0.1f, 1e-7);
  EXPECT_EQ(cls, 2u);

  r = run_cli("export " + q(dir / "m.txt") + " --format voxel-text --out " + q(dir / "copy.txt"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(slurp(dir / "copy.txt"), slurp(dir / "m.txt"));
  EXPECT_EQ(run_cli("export " + q(dir / "missing.txt") + " --out " + q(dir / "x.ply")).exit_code, 2);
}

void write_traj(const fs::path& path, const std::vector<PoseSE3>& poses) {
  std::vector<StampedPose> stamped;
  for (std::size_t i = 0; i < poses.size(); ++i) stamped.push_back({0.1 * static_cast<double>(i), poses[i]});
  io::write_trajectory(Trajectory(stamped), path.string());
}

TEST(Cli, EvalTraj) {
  const auto dir = testing::temp_dir("eval");
  std::mt19937_64 rng(8);
  std::vector<PoseSE3> ref{PoseSE3::identity()};
  for (int i = 0; i < 50; ++i) ref.push_back(ref.back() * testing::random_pose(rng, 0.5));
  write_traj(dir / "ref.txt", ref);
  auto r = run_cli("eval-traj " + q(dir / "ref.txt") + " " + q(dir / "ref.txt") + " --kitti-lengths 1,2,5 --json " +
                   q(dir / "r.json"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto kv = key_values(r.output);
  for (const char* key : {"ate_rmse", "rpe_trans", "rpe_rot", "kitti_trans", "kitti_rot"}) {
    EXPECT_LE(std::stod(kv[key]), 1e-12) << key;
  }
  const auto json = nlohmann::json::parse(slurp(dir / "r.json"));
  EXPECT_EQ(json["units"]["kitti_rot"], "rad/m");

  const auto offset = testing::random_pose(rng);
  std::vector<PoseSE3> est;
  for (const auto& p : ref) est.push_back(offset * p);
  write_traj(dir / "est.txt", est);
  r = run_cli("eval-traj " + q(dir / "est.txt") + " " + q(dir / "ref.txt") + " --kitti-lengths 1,2,5");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  kv = key_values(r.output);
  EXPECT_LE(std::stod(kv["ate_rmse"]), 1e-9);
  EXPECT_LE(std::stod(kv["rpe_trans"]), 1e-12);
  EXPECT_LE(std::stod(kv["rpe_rot"]), 1e-12);

  r = run_cli("eval-traj " + q(dir / "est.txt") + " " + q(dir / "ref.txt"));
  EXPECT_EQ(r.exit_code, 2) << r.output;  // path shorter than 100 m
  io::detail::write_bytes((dir / "bad.txt").string(), "0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n");
  r = run_cli("eval-traj " + q(dir / "bad.txt") + " " + q(dir / "ref.txt"));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("bad.txt:2"), std::string::npos) << r.output;
}

TEST(Pipeline, OverlappedAndSequentialAgreeInProcess) {
  const auto dir = testing::temp_dir("inproc");
  auto scene = synth::default_scene();
  scene.noise.label_flip_probability = 0.2;
  synth::write_dataset(scene, dir / "ds", 6);
  RunConfig cfg;
  cfg.dataset = dir / "ds";
  cfg.out = dir / "a.txt";
  const auto a = build_map(cfg);
  cfg.out = dir / "b.txt";
  cfg.overlap_stages = false;
  const auto b = build_map(cfg);
  EXPECT_EQ(a.frames, 6u);
  EXPECT_EQ(a.points_used, b.points_used);
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
}

}  // namespace
}  // namespace volmap
