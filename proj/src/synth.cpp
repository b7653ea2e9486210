// SPDX-License-Identifier: Apache-2.0
#include "r3/synth.hpp"

#include "r3/avatar.hpp"
#include "r3/sh.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace r3 {

Skeleton default_biped() {
    using B = BodyPart;
    const auto j = [](const char* name, int parent, double x, double y, double z, B part) {
        return Joint{name, parent, Eigen::Vector3d(x, y, z), part};
    };
    return Skeleton({
        j("pelvis", -1, 0.0, 0.5, 0.0, B::CenterBody),
        j("l_shoulder", 0, 0.17, 0.85, 0.0, B::LeftArm),
        j("l_hand", 1, 0.45, 0.85, 0.0, B::LeftArm),
        j("r_shoulder", 0, -0.17, 0.85, 0.0, B::RightArm),
        j("r_hand", 3, -0.45, 0.85, 0.0, B::RightArm),
        j("l_hip", 0, 0.09, 0.45, 0.0, B::LeftLeg),
        j("l_foot", 5, 0.10, 0.02, 0.0, B::LeftLeg),
        j("r_hip", 0, -0.09, 0.45, 0.0, B::RightLeg),
        j("r_foot", 7, -0.10, 0.02, 0.0, B::RightLeg),
    });
}

void SynthSceneSpec::validate() const {
    if (frame_count < 10) throw ConfigError("synth: frame_count must be >= 10");
    if (cameras.count < 4) throw ConfigError("synth: need at least 4 cameras");
    if (width < 1 || height < 1) throw ConfigError("synth: empty image size");
    if (body_gaussians < 1 || appendage.count < 0) throw ConfigError("synth: invalid gaussian counts");
    if (!(body_radius > 0) || !(appendage.spread > 0)) throw ConfigError("synth: radii must be > 0");
    if (!(motion.period > 0) || !(motion.appendage_period > 0))
        throw ConfigError("synth: periods must be > 0");
    if (!(cameras.radius > 0) || !(cameras.focal > 0)) throw ConfigError("synth: invalid camera ring");
    for (const auto& views : {split.train_views, split.test_views})
        for (const int v : views)
            if (v < 0 || v >= cameras.count) throw ConfigError("synth: split view out of range");
}

namespace {

/// Per-joint motion: rotation axis, amplitude (radians) and phase.
struct JointTrack {
    Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
    double amplitude = 0.0;
    double phase = 0.0;
};

JointTrack track_for(const Joint& j) {
    constexpr double pi = std::numbers::pi;
    if (j.name == "pelvis") return {Eigen::Vector3d::UnitY(), 0.3, 0.0};
    if (j.name == "l_shoulder") return {Eigen::Vector3d::UnitZ(), 0.5, 0.0};
    if (j.name == "r_shoulder") return {Eigen::Vector3d::UnitZ(), 0.5, pi};
    if (j.name == "l_hip") return {Eigen::Vector3d::UnitX(), 0.5, pi};
    if (j.name == "r_hip") return {Eigen::Vector3d::UnitX(), 0.5, 0.0};
    return {};
}

Eigen::Vector3d part_color(BodyPart p) {
    switch (p) {
    case BodyPart::CenterBody: return {0.85, 0.3, 0.3};
    case BodyPart::LeftArm: return {0.3, 0.75, 0.35};
    case BodyPart::RightArm: return {0.25, 0.45, 0.9};
    case BodyPart::LeftLeg: return {0.7, 0.4, 0.85};
    case BodyPart::RightLeg: return {0.35, 0.8, 0.85};
    }
    return {0.5, 0.5, 0.5};
}

Eigen::Vector4d random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q[0] < 0 ? Eigen::Vector4d(-q) : q;
}

} // namespace

Pose synth_pose(const SynthSceneSpec& spec, double f) {
    const auto& m = spec.motion;
    const double shifted = f >= m.novel_from ? f + m.novel_phase_shift : f;
    // Reduce to one cycle first so that poses a whole period apart are bit-identical.
    const double cycle = std::fmod(shifted, m.period) / m.period;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Pose p = Pose::rest(spec.skeleton.size());
    p.frame_index = int(std::lround(f));
    for (int k = 0; k < spec.skeleton.size(); ++k) {
        const JointTrack t = track_for(spec.skeleton.joint(k));
        p.thetas[std::size_t(k)] =
            t.axis * (m.joint_amplitude * t.amplitude * std::sin(two_pi * cycle + t.phase));
    }
    p.root_translation.y() = m.joint_amplitude * m.root_bounce * std::sin(2.0 * two_pi * cycle);
    return p;
}

GroundTruthGaussians make_ground_truth(const SynthSceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto& skel = spec.skeleton;
    const int nb = spec.body_gaussians, na = spec.appendage.count;
    const int n = nb + na;

    GroundTruthGaussians gt;
    gt.base.resize(n, 3);
    gt.base.topRows(nb) = sample_bone_capsules(skel, nb, spec.body_radius, rng);
    for (int i = nb; i < n; ++i) {
        Eigen::Vector3d d;
        do {
            for (int a = 0; a < 3; ++a) d[a] = 2.0 * u(rng) - 1.0;
        } while (d.squaredNorm() > 1.0);
        gt.base.row(i) = (spec.appendage.anchor + spec.appendage.spread * d).transpose();
    }
    gt.rotations.resize(n, 4);
    gt.scales.resize(n, 3);
    gt.opacities.resize(n);
    gt.colors.resize(n, 3);
    gt.appendage.assign(std::size_t(n), 0);
    gt.weights = Eigen::MatrixXd::Zero(n, skel.size());
    gt.weights.topRows(nb) = bone_distance_weights(skel, gt.base.topRows(nb));
    gt.weights.bottomRows(na).col(skel.root()).setOnes();
    const auto parts = assign_gaussian_parts<double>(gt.weights, skel);
    for (int i = 0; i < n; ++i) {
        gt.rotations.row(i) = random_quat(rng).transpose();
        for (int a = 0; a < 3; ++a) gt.scales(i, a) = 0.028 + 0.02 * u(rng);
        gt.opacities[i] = 0.85 + 0.1 * u(rng);
        if (i < nb) {
            const double shade = 0.85 + 0.15 * std::sin(12.0 * gt.base(i, 1) + 5.0 * gt.base(i, 0));
            gt.colors.row(i) = (shade * part_color(parts[std::size_t(i)])).transpose();
        } else {
            gt.colors.row(i) = spec.appendage.color.transpose();
            gt.appendage[std::size_t(i)] = 1;
            gt.scales.row(i) *= 0.8;
        }
    }
    gt.offsets.reserve(std::size_t(spec.frame_count));
    for (int f = 0; f < spec.frame_count; ++f) gt.offsets.push_back(appendage_offsets(spec, gt, f));
    return gt;
}

Points<double> appendage_offsets(const SynthSceneSpec& spec, const GroundTruthGaussians& gt,
                                 double t) {
    const auto& m = spec.motion;
    Points<double> out = Points<double>::Zero(gt.size(), 3);
    const Eigen::Vector3d dir = Eigen::Vector3d(1.0, 0.0, 0.4).normalized();
    const double cycle = std::fmod(t, m.appendage_period) / m.appendage_period;
    for (Eigen::Index i = 0; i < gt.size(); ++i) {
        if (!gt.appendage[std::size_t(i)]) continue;
        const double along = (gt.base(i, 1) - spec.appendage.anchor.y()) / spec.appendage.spread;
        const double phase = 2.0 * std::numbers::pi * cycle + m.appendage_phase + 0.6 * along;
        out.row(i) = (m.appendage_amplitude * std::sin(phase) * dir).transpose();
    }
    return out;
}

std::vector<Camera<double>> camera_ring(const SynthSceneSpec& spec) {
    const auto& r = spec.cameras;
    std::vector<Camera<double>> cams;
    for (int v = 0; v < r.count; ++v) {
        const double a = 2.0 * std::numbers::pi * v / r.count + std::numbers::pi / 2;
        const Eigen::Vector3d eye(r.target.x() + r.radius * std::cos(a), r.height,
                                  r.target.z() + r.radius * std::sin(a));
        cams.push_back(Camera<double>::look_at(eye, r.target, Eigen::Vector3d::UnitY(), r.focal,
                                               spec.width, spec.height));
    }
    return cams;
}

PosedGaussianSet<double> ground_truth_frame(const SynthSceneSpec& spec,
                                            const GroundTruthGaussians& gt, const Pose& pose,
                                            double t) {
    const Points<double> canonical = gt.base + appendage_offsets(spec, gt, t);
    const auto jt = forward_kinematics<double>(spec.skeleton, pose);
    const auto warp = warp_to_observation<double>(canonical, gt.rotations, gt.weights, jt);
    PosedGaussianSet<double> set;
    set.positions = warp.positions;
    set.rotations = warp.rotations;
    set.scales = gt.scales;
    set.opacities = gt.opacities;
    set.sh_degree = 0;
    set.sh = ((gt.colors.array() - 0.5) / kShC0).matrix();
    set.parts = assign_gaussian_parts<double>(gt.weights, spec.skeleton);
    return set;
}

SynthDataset generate(const SynthSceneSpec& spec) {
    spec.validate();
    SynthDataset d;
    d.spec = spec;
    d.gt = make_ground_truth(spec);
    d.cameras = camera_ring(spec);
    for (int f = 0; f < spec.frame_count; ++f) d.poses.push_back(synth_pose(spec, f));
    RenderSettings settings;
    settings.background = spec.background;
    d.images.resize(d.cameras.size());
    for (std::size_t v = 0; v < d.cameras.size(); ++v)
        for (int f = 0; f < spec.frame_count; ++f) {
            const auto set = ground_truth_frame(spec, d.gt, d.poses[std::size_t(f)], f);
            d.images[v].push_back(render(set, d.cameras[v], settings).cast<float>());
        }
    return d;
}

DatasetPartition split(const SynthSceneSpec& spec, const SplitSpec& s) {
    DatasetPartition p;
    for (int f = std::max(0, s.train_begin); f < std::min(s.train_end, spec.frame_count); ++f)
        p.train_frames.push_back(f);
    for (int f = std::max(0, s.novel_begin); f < std::min(s.novel_end, spec.frame_count); ++f)
        p.novel_frames.push_back(f);
    if (p.train_frames.empty()) throw ConfigError("split: empty training frame range");
    for (const auto& views : {s.train_views, s.test_views})
        for (const int v : views)
            if (v < 0 || v >= spec.cameras.count) throw ConfigError("split: view out of range");
    if (s.train_views.empty()) throw ConfigError("split: no training views");
    p.train_views = s.train_views;
    p.test_views = s.test_views;
    return p;
}

TrainingSet<float> training_set(const std::vector<Camera<double>>& cameras,
                                const PoseTrack& poses,
                                const std::vector<std::vector<Image<float>>>& images,
                                const DatasetPartition& part) {
    TrainingSet<float> set;
    for (const auto& c : cameras) set.cameras.push_back(c.cast<float>());
    for (const int f : part.train_frames) set.poses.push_back(poses.at(std::size_t(f)));
    for (const int v : part.train_views)
        for (std::size_t j = 0; j < part.train_frames.size(); ++j)
            set.samples.push_back(
                {v, int(j), images.at(std::size_t(v)).at(std::size_t(part.train_frames[j]))});
    return set;
}

} // namespace r3
