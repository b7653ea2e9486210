// SPDX-License-Identifier: Apache-2.0
#include "r3/animate.hpp"

namespace r3 {

template <typename Scalar>
std::vector<RenderedImage<Scalar>> animate_trace(const CanonicalAvatar<Scalar>& avatar,
                                                 const RetrievalTrace& trace,
                                                 const PoseTrack& novel, const Camera<Scalar>& cam,
                                                 const AnimateOptions& options,
                                                 const EncodeObserver& observer) {
    if (novel.size() != trace.frames.size() + 2)
        throw ConfigError("animate: trace does not cover the novel track");
    const auto parts = assign_gaussian_parts(avatar.blend.weights_batch(avatar.positions),
                                             avatar.skeleton);
    std::vector<std::size_t> slot(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto s = trace.part_slot(parts[i]);
        if (!s) throw ConfigError("animate: trace lacks a body part used by the avatar");
        slot[i] = *s;
    }

    std::vector<RenderedImage<Scalar>> frames;
    frames.reserve(trace.frames.size());
    const Eigen::Index n = avatar.size();
    MatX<Scalar> features(n, avatar.codebook.feature_dim());
    FrameState<Scalar> state;
    for (std::size_t f = 0; f < trace.frames.size(); ++f) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& e = trace.entries[f][slot[std::size_t(i)]];
            const Vec3<Scalar> x = avatar.positions.row(i).transpose();
            EncodeEvent ev{trace.frames[f], i, parts[std::size_t(i)], false, e.timestamp,
                           e.timestamp};
            if (options.smoothing && e.jitter && e.has_pair) {
                ev.smoothed = true;
                ev.t_before = e.t_before;
                ev.t_after = e.t_after;
                features.row(i) = avatar.codebook
                                      .encode_smoothed(x, avatar.normalized_time(e.t_before),
                                                       avatar.normalized_time(e.t_after))
                                      .transpose();
            } else {
                features.row(i) =
                    avatar.codebook.encode(x, avatar.normalized_time(e.timestamp)).transpose();
            }
            if (observer) observer(ev);
        }
        pose_features(avatar, features, novel[f + 2], state);
        frames.push_back(render(state.posed, cam, options.render));
    }
    return frames;
}

template <typename Scalar>
std::vector<RenderedImage<Scalar>> animate(const CanonicalAvatar<Scalar>& avatar,
                                           const PoseSequenceIndex& index, const PoseTrack& novel,
                                           const Camera<Scalar>& cam, const AnimateOptions& options,
                                           RetrievalTrace* trace_out,
                                           const EncodeObserver& observer) {
    RetrievalTrace trace = retrieve_track(index, novel, options.retrieval);
    auto frames = animate_trace(avatar, trace, novel, cam, options, observer);
    if (trace_out) *trace_out = std::move(trace);
    return frames;
}

#define R3_INSTANTIATE(S)                                                                         \
    template std::vector<RenderedImage<S>> animate_trace(                                         \
        const CanonicalAvatar<S>&, const RetrievalTrace&, const PoseTrack&, const Camera<S>&,     \
        const AnimateOptions&, const EncodeObserver&);                                            \
    template std::vector<RenderedImage<S>> animate(const CanonicalAvatar<S>&,                     \
                                                   const PoseSequenceIndex&, const PoseTrack&,    \
                                                   const Camera<S>&, const AnimateOptions&,       \
                                                   RetrievalTrace*, const EncodeObserver&);
R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
