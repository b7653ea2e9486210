// SPDX-License-Identifier: Apache-2.0
//
// File formats: JSON skeletons, cameras and configs, CSV pose tracks, PNG and
// raw float images, and the synthetic dataset directory layout.
#pragma once

#include "r3/avatar.hpp"
#include "r3/image.hpp"
#include "r3/rasterizer.hpp"
#include "r3/synth.hpp"
#include "r3/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace r3 {

namespace fs = std::filesystem;
using Json = nlohmann::json;

Json skeleton_to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const Json& j);

Json camera_to_json(const Camera<double>& cam);
Camera<double> camera_from_json(const Json& j);

Json pose_to_json(const Pose& p);
Pose pose_from_json(const Json& j);

/// CSV columns frame_index, root_x, root_y, root_z, then j{k}_x, j{k}_y, j{k}_z per joint.
void write_pose_csv(const fs::path& path, const PoseTrack& track);
PoseTrack read_pose_csv(const fs::path& path);
/// .json (array of pose records) or .csv by extension.
PoseTrack read_pose_track(const fs::path& path);
void write_pose_track(const fs::path& path, const PoseTrack& track);

/// A single camera object, or the entry `index` of a camera array.
Camera<double> read_camera(const fs::path& path, int index = 0);
std::vector<Camera<double>> read_cameras(const fs::path& path);
void write_cameras(const fs::path& path, const std::vector<Camera<double>>& cams);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

/// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const fs::path& path, const Image<float>& img);
Image<float> read_png(const fs::path& path);

/// Raw dump: "R3IM", u32 width, u32 height, little-endian float32 RGB row-major.
void write_raw_image(const fs::path& path, const Image<float>& img);
Image<float> read_raw_image(const fs::path& path);

// Configs mirror the struct field names; missing keys keep their defaults.
void from_json(const Json& j, HexPlaneConfig& c);
void from_json(const Json& j, DecoderConfig& c);
void from_json(const Json& j, BlendFieldConfig& c);
void from_json(const Json& j, AvatarConfig& c);
void from_json(const Json& j, LearningRates& r);
void from_json(const Json& j, TrainingConfig& c);
void from_json(const Json& j, SplitSpec& s);
void from_json(const Json& j, SynthSceneSpec& s);
Json to_json(const SynthSceneSpec& s);
Json to_json(const SplitSpec& s);

/// Training run description: {"avatar": AvatarConfig, "training": TrainingConfig}.
struct RunConfig {
    AvatarConfig avatar;
    TrainingConfig training;
};
RunConfig read_run_config(const fs::path& path);

/// cameras.json, skeleton.json, poses.csv, split.json, spec.json,
/// images/view{V}/frame{F}.png and gt_gaussians.bin.
void write_dataset(const fs::path& dir, const SynthDataset& data);

struct LoadedDataset {
    Skeleton skeleton;
    std::vector<Camera<double>> cameras;
    PoseTrack poses;
    SplitSpec split;
    std::vector<std::vector<Image<float>>> images; ///< [view][frame]
};
/// Throws FormatError naming the missing or malformed file.
LoadedDataset read_dataset(const fs::path& dir);

/// "R3GT", u32 version, u32 gaussians, u32 frames, then float64 blocks: base, rotations,
/// scales, opacities, colors, weights, appendage mask (u8), per-frame offsets.
void write_ground_truth(const fs::path& path, const GroundTruthGaussians& gt);
GroundTruthGaussians read_ground_truth(const fs::path& path);

} // namespace r3
