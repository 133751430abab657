// volmap command-line front end: build-map, eval-traj, synth, export.

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <sys/resource.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "volmap/error.hpp"
#include "volmap/io.hpp"
#include "volmap/metrics.hpp"
#include "volmap/pipeline.hpp"
#include "volmap/synth.hpp"

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int run_build_map(const volmap::RunConfig& cfg, const std::string& timing_path) {
  const auto report = volmap::build_map(cfg);
  std::ostringstream out;
  out << "frames=" << report.frames << "\n"
      << "points_used=" << report.points_used << "\n"
      << "voxels=" << report.voxels << "\n"
      << "exported_voxels=" << report.exported << "\n"
      << "read_ms_per_frame=" << fmt(report.read_ms_per_frame) << "\n"
      << "projection_ms_per_frame=" << fmt(report.projection_ms_per_frame) << "\n"
      << "update_ms_per_frame=" << fmt(report.update_ms_per_frame) << "\n"
      << "wall_ms=" << fmt(report.wall_ms) << "\n";
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) == 0) out << "peak_rss_kb=" << usage.ru_maxrss << "\n";
  std::cout << out.str();
  if (!timing_path.empty()) volmap::io::detail::write_bytes(timing_path, out.str());
  return 0;
}

int run_eval(const std::string& est_path, const std::string& ref_path, const volmap::EvalOptions& options,
             const std::string& json_path) {
  const auto est = volmap::io::read_trajectory(est_path);
  const auto ref = volmap::io::read_trajectory(ref_path);
  const auto report = volmap::evaluate(est, ref, options);
  std::cout << "ate_rmse=" << fmt(report.ate_rmse) << "\n"
            << "rpe_trans=" << fmt(report.rpe_trans) << "\n"
            << "rpe_rot=" << fmt(report.rpe_rot) << "\n"
            << "kitti_trans=" << fmt(report.kitti_trans) << "\n"
            << "kitti_rot=" << fmt(report.kitti_rot) << "\n"
            << "pairs=" << report.pairs << "\n"
            << "kitti_segments=" << report.kitti_segments << "\n"
            << "alignment_scale=" << fmt(report.alignment.scale) << "\n";
  if (!json_path.empty()) {
    const auto& r = report.alignment.rigid.rotation();
    const auto& t = report.alignment.rigid.translation();
    nlohmann::json j = {
        {"ate_rmse", report.ate_rmse},
        {"rpe_trans", report.rpe_trans},
        {"rpe_rot", report.rpe_rot},
        {"kitti_trans", report.kitti_trans},
        {"kitti_rot", report.kitti_rot},
        {"pairs", report.pairs},
        {"kitti_segments", report.kitti_segments},
        {"alignment",
         {{"rotation", {{r(0, 0), r(0, 1), r(0, 2)}, {r(1, 0), r(1, 1), r(1, 2)}, {r(2, 0), r(2, 1), r(2, 2)}}},
          {"translation", {t.x(), t.y(), t.z()}},
          {"scale", report.alignment.scale}}},
        {"units", {{"kitti_trans", "ratio"}, {"kitti_rot", "rad/m"}, {"rpe_rot", "rad"}}},
    };
    volmap::io::detail::write_bytes(json_path, j.dump(2) + "\n");
  }
  return 0;
}

/// `<subcommand> --config FILE` expands FILE's `key = value` lines into
/// `--key=value` arguments placed before the user's own flags. Keys that also
/// appear on the command line are skipped so flags take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string path;
  std::size_t at = args.size();
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      at = i;
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      at = i;
      break;
    }
  }
  if (path.empty()) return args;
  if (at < 2) throw volmap::Error(volmap::Errc::kBadConfig, "--config goes after the subcommand");

  const auto given = [&](const std::string& flag) {
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> injected;
  for (const auto& kv : volmap::text::parse_key_values(volmap::text::read_file(path), path)) {
    std::string key = kv.key;
    std::replace(key.begin(), key.end(), '_', '-');
    if (!given("--" + key)) injected.push_back("--" + key + "=" + kv.value);
  }
  // Insert right after the subcommand name.
  std::size_t sub = 1;
  while (sub < args.size() && args[sub].rfind("-", 0) == 0) ++sub;
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(std::min(sub + 1, args.size())), injected.begin(),
              injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic voxel mapping from posed depth and label frames"};
  app.require_subcommand(1);

  // build-map
  volmap::RunConfig cfg;
  std::string dataset, intrinsics, trajectory, remap, kernel_file, frame_times, out, ply_dir, timing;
  std::string associate = "index", ply_mode = "binary";
  double max_range = 0.0;
  bool inverse_depth = false, sequential = false;
  auto* build = app.add_subcommand("build-map", "Fuse a dataset into a semantic voxel map");
  std::string config_path;  // consumed by expand_config; declared for --help
  build->add_option("--config", config_path, "key = value file with the same keys as the flags");
  build->add_option("--dataset", dataset, "Dataset root (depth/, labels/, trajectory.txt, intrinsics.cfg, remap.txt)")
      ->required();
  build->add_option("--intrinsics", intrinsics, "Intrinsics config (default: <dataset>/intrinsics.cfg)");
  build->add_option("--trajectory", trajectory, "TUM trajectory (default: <dataset>/trajectory.txt)");
  build->add_option("--remap", remap, "Label remap file (default: <dataset>/remap.txt)");
  build->add_option("--voxel-res", cfg.voxel_resolution, "Voxel edge length in meters")->capture_default_str();
  build->add_option("--kernel-l", cfg.kernel_length, "Kernel length scale in meters")->capture_default_str();
  build->add_option("--kernel-sigma0", cfg.kernel_sigma0, "Kernel signal scale")->capture_default_str();
  build->add_option("--kernel-file", kernel_file, "Kernel weight file (overrides --kernel-l/--kernel-sigma0)");
  build->add_option("--prior-alpha", cfg.prior_alpha, "Dirichlet prior per class")->capture_default_str();
  build->add_option("--stride", cfg.stride, "Pixel stride in both axes")->capture_default_str();
  auto* max_range_opt = build->add_option("--max-range", max_range, "Drop depths beyond this range (meters)");
  auto* inverse_opt = build->add_flag("--inverse-depth", inverse_depth, "Depth frames store 1/z");
  build->add_option("--associate", associate, "Frame/pose association")
      ->check(CLI::IsMember({"index", "timestamp"}))
      ->capture_default_str();
  build->add_option("--frame-times", frame_times, "Per-frame timestamps for --associate timestamp");
  build->add_option("--max-dt", cfg.max_dt, "Max timestamp difference for association (s)")->capture_default_str();
  build->add_option("--min-confidence", cfg.min_confidence, "Export only voxels above this concentration")
      ->capture_default_str();
  build->add_option("--out", out, "Output voxel map")->required();
  build->add_option("--ply-dir", ply_dir, "Write each frame's cloud as PLY here");
  build->add_option("--ply-mode", ply_mode, "PLY encoding")->check(CLI::IsMember({"ascii", "binary"}))->capture_default_str();
  build->add_flag("--sequential", sequential, "Do not overlap projection with map updates");
  build->add_option("--timing", timing, "Also write the timing report to this file");

  // eval-traj
  std::string est_path, ref_path, json_path;
  volmap::EvalOptions eval_options;
  auto* eval = app.add_subcommand("eval-traj", "ATE, RPE and KITTI errors of an estimated trajectory");
  eval->add_option("--config", config_path, "key = value file with the same keys as the flags");
  eval->add_option("estimate", est_path, "Estimated trajectory (TUM format)")->required();
  eval->add_option("reference", ref_path, "Reference trajectory (TUM format)")->required();
  eval->add_option("--rpe-delta", eval_options.rpe_delta, "RPE frame interval")->capture_default_str();
  eval->add_option("--kitti-lengths", eval_options.kitti_lengths, "KITTI segment lengths in meters")
      ->delimiter(',')
      ->capture_default_str();
  eval->add_flag("--scale-align", eval_options.scale_align, "Similarity alignment (monocular)");
  eval->add_option("--max-dt", eval_options.max_dt, "Max timestamp difference for association (s)")
      ->capture_default_str();
  eval->add_option("--json", json_path, "Write the report as JSON");

  // synth
  std::string scene_path, synth_out;
  std::size_t frames = 20;
  double flip = -1.0, depth_sigma = -1.0, synth_res = 0.0;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset with analytic ground truth");
  auto* scene_opt = synth->add_option("--scene", scene_path, "Scene JSON (default: plane + two boxes)");
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--frames", frames, "Frame count")->capture_default_str();
  auto* seed_opt = synth->add_option("--seed", seed, "Override the scene seed");
  synth->add_option("--label-flip-prob", flip, "Override label flip probability");
  synth->add_option("--depth-sigma", depth_sigma, "Override depth noise sigma (m)");
  synth->add_option("--voxel-res", synth_res, "Ground-truth voxel resolution");

  // export
  std::string map_path, export_out, format = "ply", export_ply_mode = "binary";
  auto* exp = app.add_subcommand("export", "Convert a voxel map");
  exp->add_option("map", map_path, "Voxel map file")->required();
  exp->add_option("--format", format, "Output format")->check(CLI::IsMember({"ply", "voxel-text"}))->capture_default_str();
  exp->add_option("--out", export_out, "Output path")->required();
  exp->add_option("--ply-mode", export_ply_mode, "PLY encoding")
      ->check(CLI::IsMember({"ascii", "binary"}))
      ->capture_default_str();

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const volmap::Error& e) {
    std::cerr << "volmap: error: " << e.what() << "\n";
    return static_cast<int>(volmap::ErrorFamily::kConfig);
  }
  std::vector<char*> arg_ptrs;
  for (auto& a : args) arg_ptrs.push_back(a.data());

  try {
    app.parse(static_cast<int>(arg_ptrs.size()), arg_ptrs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(volmap::ErrorFamily::kConfig);
  }

  try {
    if (*build) {
      cfg.dataset = dataset;
      cfg.intrinsics = intrinsics;
      cfg.trajectory = trajectory;
      cfg.remap = remap;
      cfg.kernel_file = kernel_file;
      cfg.frame_times = frame_times;
      cfg.out = out;
      cfg.ply_dir = ply_dir;
      cfg.ply_mode = volmap::io::parse_ply_mode(ply_mode);
      cfg.association = associate == "timestamp" ? volmap::FrameAssociation::kTimestamp : volmap::FrameAssociation::kIndex;
      if (max_range_opt->count() > 0) cfg.max_range = max_range;
      if (inverse_opt->count() > 0) cfg.inverse_depth = inverse_depth;
      cfg.overlap_stages = !sequential;
      return run_build_map(cfg, timing);
    }
    if (*eval) return run_eval(est_path, ref_path, eval_options, json_path);
    if (*synth) {
      auto scene = scene_opt->count() > 0 ? volmap::synth::read_scene(scene_path) : volmap::synth::default_scene();
      if (seed_opt->count() > 0) scene.seed = seed;
      if (flip >= 0.0) scene.noise.label_flip_probability = flip;
      if (depth_sigma >= 0.0) scene.noise.depth_sigma = depth_sigma;
      if (synth_res > 0.0) scene.voxel_resolution = synth_res;
      const auto stats = volmap::synth::write_dataset(scene, synth_out, frames);
      std::cout << "frames=" << stats.frames << "\n"
                << "labelled_pixels=" << stats.labelled_pixels << "\n"
                << "label_accuracy=" << fmt(stats.label_accuracy()) << "\n"
                << "ground_truth_voxels=" << stats.ground_truth_voxels << "\n";
      return 0;
    }
    if (*exp) {
      volmap::export_map(map_path, format == "ply" ? volmap::ExportFormat::kPly : volmap::ExportFormat::kVoxelText,
                         export_out, volmap::io::parse_ply_mode(export_ply_mode));
      return 0;
    }
  } catch (const volmap::Error& e) {
    std::cerr << "volmap: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "volmap: error: " << e.what() << "\n";
    return static_cast<int>(volmap::ErrorFamily::kData);
  }
  return 0;
}
