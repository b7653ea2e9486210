// SPDX-License-Identifier: Apache-2.0
#include "r3/avatar.hpp"

#include <algorithm>
#include <limits>

namespace r3 {

namespace {

double segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                        const Eigen::Vector3d& b) {
    const Eigen::Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>
sample_bone_capsules(const Skeleton& skel, int count, double radius, std::mt19937_64& rng) {
    if (count < 0 || !(radius > 0)) throw ConfigError("capsules: need count >= 0 and radius > 0");
    std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> bones;
    for (int k = 0; k < skel.size(); ++k)
        for (const int c : skel.children(k))
            bones.emplace_back(skel.joint(k).rest_position, skel.joint(c).rest_position);
    if (bones.empty())
        bones.emplace_back(skel.joint(skel.root()).rest_position,
                           skel.joint(skel.root()).rest_position);
    const Bbox<double> box = skeleton_bbox(skel, radius);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> out(count, 3);
    for (int i = 0; i < count;) {
        Eigen::Vector3d p;
        for (int a = 0; a < 3; ++a) p[a] = box.lo[a] + u(rng) * (box.hi[a] - box.lo[a]);
        const bool inside = std::any_of(bones.begin(), bones.end(), [&](const auto& b) {
            return segment_distance(p, b.first, b.second) <= radius;
        });
        if (inside) out.row(i++) = p.transpose();
    }
    return out;
}

Bbox<double> skeleton_bbox(const Skeleton& skel, double margin) {
    Bbox<double> b;
    b.lo.setConstant(std::numeric_limits<double>::infinity());
    b.hi.setConstant(-std::numeric_limits<double>::infinity());
    for (const auto& j : skel.joints()) {
        b.lo = b.lo.cwiseMin(j.rest_position);
        b.hi = b.hi.cwiseMax(j.rest_position);
    }
    b.lo.array() -= margin;
    b.hi.array() += margin;
    return b;
}

template <typename Scalar> void CanonicalAvatar<Scalar>::validate() const {
    const auto n = size();
    if (opacity_bias.size() != n || colors.size() != n || blend.size() != n)
        throw ConfigError("avatar: per-gaussian arrays disagree in length");
    if (blend.joint_count() != skeleton.size())
        throw ConfigError("avatar: blend field joint count does not match the skeleton");
    if (decoder.in_dim() != codebook.feature_dim())
        throw ConfigError("avatar: decoder input does not match the codebook feature size");
}

template <typename Scalar>
void CanonicalAvatar<Scalar>::compact(const std::vector<Eigen::Index>& keep) {
    positions = select_rows(positions, keep);
    VecX<Scalar> bias(Eigen::Index(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) bias[Eigen::Index(i)] = opacity_bias[keep[i]];
    opacity_bias = bias;
    colors.compact(keep);
    blend.compact(keep);
}

template <typename Scalar>
bool CanonicalAvatar<Scalar>::operator==(const CanonicalAvatar& o) const {
    return skeleton == o.skeleton && bbox.lo == o.bbox.lo && bbox.hi == o.bbox.hi &&
           training_poses == o.training_poses && positions == o.positions &&
           opacity_bias == o.opacity_bias && colors == o.colors && codebook == o.codebook &&
           decoder == o.decoder && blend == o.blend;
}

template <typename Scalar>
CanonicalAvatar<Scalar> initialize_avatar(const Skeleton& skel, const PoseTrack& training,
                                          const AvatarConfig& config) {
    if (training.empty()) throw ConfigError("avatar: empty training track");
    if (config.gaussian_count < 1) throw ConfigError("avatar: need at least one gaussian");
    CanonicalAvatar<Scalar> a;
    a.skeleton = skel;
    a.training_poses = training;
    a.bbox = skeleton_bbox(skel, config.bbox_margin).cast<Scalar>();
    const TimeRange range{double(training.front().frame_index),
                          double(training.back().frame_index)};

    std::mt19937_64 rng(derive_seed(config.seed, 0));
    const auto samples = sample_bone_capsules(skel, config.gaussian_count, config.capsule_radius, rng);
    a.positions = samples.cast<Scalar>();
    a.opacity_bias = VecX<Scalar>::Zero(a.positions.rows());
    a.colors = GaussianColorStore<Scalar>(a.positions.rows(), config.sh_degree);
    for (Eigen::Index i = 0; i < a.positions.rows(); ++i)
        a.colors.set_base_color(i, config.init_color.cast<Scalar>());
    a.codebook = HexPlaneCodebook<Scalar>(config.codebook, a.bbox, range, derive_seed(config.seed, 1));
    a.decoder = GaussianDecoder<Scalar>(a.codebook.feature_dim(), config.decoder,
                                        a.bbox.diagonal(), derive_seed(config.seed, 2));
    a.blend = BlendWeightField<Scalar>(BlendWeightField<Scalar>::initial_logits(skel, a.positions),
                                       config.blend, a.bbox, derive_seed(config.seed, 3));
    a.validate();
    return a;
}

template <typename Scalar>
void pose_features(const CanonicalAvatar<Scalar>& avatar, const MatX<Scalar>& features,
                   const Pose& pose, FrameState<Scalar>& s) {
    s.features = features;
    s.decoded = avatar.decoder.decode_matrix(s.features, &avatar.opacity_bias, &s.decoder_cache);
    s.deformed = avatar.positions + s.decoded.delta_x;
    const MatX<Scalar> weights = avatar.blend.weights_batch(avatar.positions, &s.blend_cache);
    s.joints = forward_kinematics<Scalar>(avatar.skeleton, pose);
    s.warp = warp_to_observation(s.deformed, s.decoded.rotation, weights, s.joints);
    s.posed.positions = s.warp.positions;
    s.posed.rotations = s.warp.rotations;
    s.posed.scales = s.decoded.scale;
    s.posed.opacities = s.decoded.opacity;
    s.posed.sh = avatar.colors.coeffs();
    s.posed.sh_degree = avatar.colors.degree();
    s.posed.parts = assign_gaussian_parts(weights, avatar.skeleton);
}

template <typename Scalar>
void forward_frame(const CanonicalAvatar<Scalar>& avatar, const VecX<Scalar>& times,
                   const Pose& pose, const Camera<Scalar>& cam, const RenderSettings& settings,
                   FrameState<Scalar>& s) {
    if (times.size() != avatar.size()) throw ConfigError("avatar: one time per gaussian expected");
    s.times = times;
    pose_features(avatar, avatar.codebook.encode_batch(avatar.positions, times), pose, s);
    s.image = render(s.posed, cam, settings, &s.render_cache);
}

template <typename Scalar>
RenderedImage<Scalar> render_frame(const CanonicalAvatar<Scalar>& avatar, double frame,
                                   const Pose& pose, const Camera<Scalar>& cam,
                                   const RenderSettings& settings) {
    FrameState<Scalar> s;
    const VecX<Scalar> times = VecX<Scalar>::Constant(avatar.size(), avatar.normalized_time(frame));
    forward_frame(avatar, times, pose, cam, settings, s);
    return std::move(s.image);
}

template <typename Scalar>
AvatarGradients<Scalar>::AvatarGradients(const CanonicalAvatar<Scalar>& avatar) {
    reset(avatar);
}

template <typename Scalar> void AvatarGradients<Scalar>::reset(const CanonicalAvatar<Scalar>& a) {
    if (planes.scale_count() != a.codebook.scale_count()) planes = HexPlaneGrad<Scalar>(a.codebook);
    else planes.clear();
    decoder = a.decoder.net().zero_grad();
    refine = a.blend.refine().zero_grad();
    sh = MatX<Scalar>::Zero(a.size(), a.colors.coeffs().cols());
    positions = Points<Scalar>::Zero(a.size(), 3);
    opacity_bias = VecX<Scalar>::Zero(a.size());
    base_logits = MatX<Scalar>::Zero(a.size(), a.blend.joint_count());
}

template <typename Scalar>
void backward_frame(const CanonicalAvatar<Scalar>& avatar, const FrameState<Scalar>& s,
                    const Camera<Scalar>& cam, const RenderSettings& settings,
                    const MatX<Scalar>& d_render, AvatarGradients<Scalar>& g) {
    const auto rg = render_backward(s.posed, cam, settings, s.render_cache, d_render);
    const auto wg = warp_backward(s.warp, s.decoded.rotation, s.joints, rg.positions,
                                  rg.rotation_matrices);
    HeadGradients<Scalar> heads{wg.positions, rg.opacities, wg.rotations, rg.scales};
    const MatX<Scalar> d_features =
        avatar.decoder.backward(s.decoder_cache, heads, g.decoder, &g.opacity_bias);
    for (Eigen::Index i = 0; i < avatar.size(); ++i) {
        const VecX<Scalar> up = d_features.row(i).transpose();
        const Vec4<Scalar> d = avatar.codebook.encode_gradient(avatar.positions.row(i).transpose(),
                                                               s.times[i], up, g.planes);
        g.positions.row(i) += d.template head<3>().transpose();
    }
    g.positions += wg.positions;
    avatar.blend.backward(s.blend_cache, wg.weights, g.refine, g.base_logits, g.positions);
    g.sh += rg.sh;
}

#define R3_INSTANTIATE(S)                                                                         \
    template struct CanonicalAvatar<S>;                                                           \
    template struct AvatarGradients<S>;                                                           \
    template CanonicalAvatar<S> initialize_avatar<S>(const Skeleton&, const PoseTrack&,           \
                                                     const AvatarConfig&);                        \
    template void pose_features(const CanonicalAvatar<S>&, const MatX<S>&, const Pose&,           \
                                FrameState<S>&);                                                  \
    template void forward_frame(const CanonicalAvatar<S>&, const VecX<S>&, const Pose&,           \
                                const Camera<S>&, const RenderSettings&, FrameState<S>&);         \
    template RenderedImage<S> render_frame(const CanonicalAvatar<S>&, double, const Pose&,        \
                                           const Camera<S>&, const RenderSettings&);              \
    template void backward_frame(const CanonicalAvatar<S>&, const FrameState<S>&,                 \
                                 const Camera<S>&, const RenderSettings&, const MatX<S>&,         \
                                 AvatarGradients<S>&);
R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
