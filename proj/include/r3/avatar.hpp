// SPDX-License-Identifier: Apache-2.0
//
// Canonical avatar: base gaussians plus every learned component, and the
// per-frame pipeline encode -> decode -> warp -> render with its reverse pass.
#pragma once

#include "r3/decoder.hpp"
#include "r3/hexplane.hpp"
#include "r3/rasterizer.hpp"
#include "r3/skinning.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace r3 {

struct AvatarConfig {
    HexPlaneConfig codebook;
    DecoderConfig decoder;
    BlendFieldConfig blend;
    int sh_degree = 0;
    int gaussian_count = 200;
    double capsule_radius = 0.05; ///< initial gaussians are sampled in bone capsules
    double bbox_margin = 0.15;    ///< added on every side of the rest-pose joint bounds
    Eigen::Vector3d init_color = Eigen::Vector3d::Constant(0.5);
    std::uint64_t seed = 0;
};

/// Uniform samples inside the capsules around the rest-pose bones (parent to child
/// segments), allocated in proportion to capsule volume.
Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>
sample_bone_capsules(const Skeleton& skel, int count, double radius, std::mt19937_64& rng);

/// Rest-pose joint bounds grown by `margin`.
Bbox<double> skeleton_bbox(const Skeleton& skel, double margin);

template <typename Scalar> struct CanonicalAvatar {
    Skeleton skeleton;
    Bbox<Scalar> bbox;
    PoseTrack training_poses;
    Points<Scalar> positions;
    VecX<Scalar> opacity_bias; ///< per-gaussian offset on the decoder's opacity logit
    GaussianColorStore<Scalar> colors;
    HexPlaneCodebook<Scalar> codebook;
    GaussianDecoder<Scalar> decoder;
    BlendWeightField<Scalar> blend;

    Eigen::Index size() const { return positions.rows(); }
    const TimeRange& time_range() const { return codebook.time_range(); }
    Scalar normalized_time(double frame) const { return Scalar(time_range().normalize(frame)); }

    /// Throws ConfigError when per-gaussian arrays disagree.
    void validate() const;
    /// Keeps the gaussians listed in `keep` (ascending).
    void compact(const std::vector<Eigen::Index>& keep);

    bool operator==(const CanonicalAvatar& o) const;
};

template <typename Scalar>
CanonicalAvatar<Scalar> initialize_avatar(const Skeleton& skel, const PoseTrack& training,
                                          const AvatarConfig& config);

/// Everything the reverse pass needs from one frame.
template <typename Scalar> struct FrameState {
    VecX<Scalar> times;
    MatX<Scalar> features;
    typename GaussianDecoder<Scalar>::Cache decoder_cache;
    DecodedBatch<Scalar> decoded;
    Points<Scalar> deformed; ///< base positions plus decoded offsets
    typename BlendWeightField<Scalar>::Cache blend_cache;
    JointTransforms<Scalar> joints;
    WarpResult<Scalar> warp;
    PosedGaussianSet<Scalar> posed;
    RenderCache<Scalar> render_cache;
    RenderedImage<Scalar> image;
};

/// Decodes precomputed features, warps with `pose` and fills state up to `posed`.
template <typename Scalar>
void pose_features(const CanonicalAvatar<Scalar>& avatar, const MatX<Scalar>& features,
                   const Pose& pose, FrameState<Scalar>& state);

/// Full forward pass with one normalized time per gaussian.
template <typename Scalar>
void forward_frame(const CanonicalAvatar<Scalar>& avatar, const VecX<Scalar>& times,
                   const Pose& pose, const Camera<Scalar>& cam, const RenderSettings& settings,
                   FrameState<Scalar>& state);

/// Renders the recorded appearance of training frame `frame` under `pose`.
template <typename Scalar>
RenderedImage<Scalar> render_frame(const CanonicalAvatar<Scalar>& avatar, double frame,
                                   const Pose& pose, const Camera<Scalar>& cam,
                                   const RenderSettings& settings = {});

template <typename Scalar> struct AvatarGradients {
    HexPlaneGrad<Scalar> planes;
    typename Mlp<Scalar>::Grad decoder;
    MatX<Scalar> sh;
    Points<Scalar> positions;
    VecX<Scalar> opacity_bias;
    MatX<Scalar> base_logits;
    typename Mlp<Scalar>::Grad refine;

    explicit AvatarGradients(const CanonicalAvatar<Scalar>& avatar);
    AvatarGradients() = default;
    /// Resets to zero for an avatar of the current size.
    void reset(const CanonicalAvatar<Scalar>& avatar);
};

/// Accumulates d(loss)/d(parameters) given d(loss)/d(rendered rgb).
template <typename Scalar>
void backward_frame(const CanonicalAvatar<Scalar>& avatar, const FrameState<Scalar>& state,
                    const Camera<Scalar>& cam, const RenderSettings& settings,
                    const MatX<Scalar>& d_render, AvatarGradients<Scalar>& grads);

} // namespace r3
