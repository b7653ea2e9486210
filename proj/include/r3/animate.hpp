// SPDX-License-Identifier: Apache-2.0
//
// Drives a trained avatar with a novel pose track: every gaussian is encoded
// at the timestamp retrieved for its body part, then decoded, warped with the
// novel pose and rendered.
#pragma once

#include "r3/avatar.hpp"
#include "r3/retrieval.hpp"

#include <functional>
#include <vector>

namespace r3 {

struct AnimateOptions {
    RetrievalParams retrieval;
    bool smoothing = true; ///< average the features around jitter-flagged timestamps
    RenderSettings render;
};

/// One feature lookup made while animating.
struct EncodeEvent {
    int frame = 0;
    Eigen::Index gaussian = 0;
    BodyPart part = BodyPart::CenterBody;
    bool smoothed = false;
    double t_before = 0, t_after = 0; ///< frame units; equal unless smoothed
};
using EncodeObserver = std::function<void(const EncodeEvent&)>;

/// Renders trace.frames[f] using novel[f + 2] as the pose.
template <typename Scalar>
std::vector<RenderedImage<Scalar>> animate_trace(const CanonicalAvatar<Scalar>& avatar,
                                                 const RetrievalTrace& trace,
                                                 const PoseTrack& novel, const Camera<Scalar>& cam,
                                                 const AnimateOptions& options,
                                                 const EncodeObserver& observer = {});

/// Retrieval followed by animate_trace. The trace is returned through `trace_out`.
template <typename Scalar>
std::vector<RenderedImage<Scalar>> animate(const CanonicalAvatar<Scalar>& avatar,
                                           const PoseSequenceIndex& index, const PoseTrack& novel,
                                           const Camera<Scalar>& cam, const AnimateOptions& options,
                                           RetrievalTrace* trace_out = nullptr,
                                           const EncodeObserver& observer = {});

} // namespace r3
