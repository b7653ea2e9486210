// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic articulated scenes: a small biped made of gaussians
// with known skinning weights, a sinusoidal motion program and a cluster of
// "cloth" gaussians whose offsets depend on time rather than pose.
#pragma once

#include "r3/rasterizer.hpp"
#include "r3/skinning.hpp"
#include "r3/trainer.hpp"

#include <cstdint>
#include <vector>

namespace r3 {

/// 9 joints: pelvis (root), shoulders and hands, hips and feet; roughly one unit tall, y up.
Skeleton default_biped();

struct MotionProgram {
    double period = 10.0;         ///< frames per pose cycle
    double joint_amplitude = 1.0; ///< scales every joint track; 0 freezes the body
    double root_bounce = 0.02;    ///< vertical root translation amplitude
    double appendage_amplitude = 0.07;
    double appendage_period = 20.0;
    double appendage_phase = 1.5707963267948966; ///< radians; the swing peaks at t = 0
    /// Frames from `novel_from` on are evaluated `novel_phase_shift` frames later in the
    /// pose cycle, so they never repeat a training pose.
    int novel_from = 20;
    double novel_phase_shift = 0.5;
};

struct AppendageSpec {
    int count = 16;
    Eigen::Vector3d anchor{0.0, 0.42, -0.07}; ///< rest-pose cluster center
    double spread = 0.045;
    Eigen::Vector3d color{1.0, 0.8, 0.1};
};

struct CameraRing {
    int count = 8;
    double radius = 2.5;
    double height = 0.9;   ///< eye height
    double focal = 120.0;  ///< pixels
    Eigen::Vector3d target{0.0, 0.45, 0.0};
};

struct SplitSpec {
    int train_begin = 0, train_end = 20; ///< [begin, end)
    int novel_begin = 22, novel_end = 30;
    std::vector<int> train_views{0, 1, 2, 4, 5, 6};
    std::vector<int> test_views{3, 7};
};

struct SynthSceneSpec {
    Skeleton skeleton = default_biped();
    MotionProgram motion;
    AppendageSpec appendage;
    CameraRing cameras;
    int frame_count = 30;
    int width = 64, height = 64;
    int body_gaussians = 150;
    double body_radius = 0.055;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    std::uint64_t seed = 7;
    SplitSpec split;

    void validate() const;
};

struct GroundTruthGaussians {
    Points<double> base;
    Quats<double> rotations;
    Points<double> scales;
    Eigen::VectorXd opacities;
    MatX<double> colors;       ///< plain RGB, one row per gaussian
    Eigen::MatrixXd weights;   ///< skinning weights
    std::vector<std::uint8_t> appendage;
    std::vector<Points<double>> offsets; ///< canonical offsets at every integer frame

    Eigen::Index size() const { return base.rows(); }
};

struct SynthDataset {
    SynthSceneSpec spec;
    PoseTrack poses;
    std::vector<Camera<double>> cameras;
    GroundTruthGaussians gt;
    std::vector<std::vector<Image<float>>> images; ///< [view][frame]
};

/// Pose of (possibly fractional) frame `f` under the motion program.
Pose synth_pose(const SynthSceneSpec& spec, double f);
/// Appendage offsets at time `t` (frames); rows of non-appendage gaussians are zero.
Points<double> appendage_offsets(const SynthSceneSpec& spec, const GroundTruthGaussians& gt,
                                 double t);
std::vector<Camera<double>> camera_ring(const SynthSceneSpec& spec);
/// Ground-truth gaussians at time `t` posed with `pose`.
PosedGaussianSet<double> ground_truth_frame(const SynthSceneSpec& spec,
                                            const GroundTruthGaussians& gt, const Pose& pose,
                                            double t);
/// Ground-truth gaussians only (no rendering).
GroundTruthGaussians make_ground_truth(const SynthSceneSpec& spec);

SynthDataset generate(const SynthSceneSpec& spec);

struct DatasetPartition {
    std::vector<int> train_frames, novel_frames, train_views, test_views;
};

DatasetPartition split(const SynthSceneSpec& spec, const SplitSpec& s);

/// Images of the train views at the train frames; poses are the train frames in order.
TrainingSet<float> training_set(const std::vector<Camera<double>>& cameras,
                                const PoseTrack& poses,
                                const std::vector<std::vector<Image<float>>>& images,
                                const DatasetPartition& part);

} // namespace r3
