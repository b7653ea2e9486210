// SPDX-License-Identifier: Apache-2.0
//
// A small randomized avatar on the synthetic biped for pipeline-level tests.
#pragma once

#include "support.hpp"

#include "r3/avatar.hpp"
#include "r3/synth.hpp"

namespace r3::test {

struct SmallAvatar {
    SynthSceneSpec spec;
    CanonicalAvatar<double> avatar;
    Camera<double> cam;
};

inline SynthSceneSpec small_spec() {
    SynthSceneSpec spec;
    spec.width = spec.height = 24;
    spec.cameras.focal = 45;
    spec.body_gaussians = 60;
    spec.appendage.count = 8;
    return spec;
}

inline AvatarConfig small_config() {
    AvatarConfig cfg;
    cfg.codebook.resolutions = {4, 8};
    cfg.codebook.time_resolution = 20;
    cfg.codebook.channels = 4;
    cfg.decoder.width = 16;
    cfg.decoder.init_scale = 0.05;
    cfg.decoder.output_init_scale = 1.0;
    cfg.blend.depth = 1;
    cfg.blend.width = 8;
    cfg.blend.output_init_scale = 0.5;
    cfg.gaussian_count = 80;
    return cfg;
}

inline PoseTrack training_track(const SynthSceneSpec& spec, int frames = 20) {
    PoseTrack train;
    for (int f = 0; f < frames; ++f) train.push_back(synth_pose(spec, f));
    return train;
}

/// Randomized planes and colors so that every component contributes to the image.
inline SmallAvatar small_avatar(std::uint64_t seed = 5) {
    SmallAvatar s;
    s.spec = small_spec();
    s.avatar = initialize_avatar<double>(s.spec.skeleton, training_track(s.spec), small_config());
    std::mt19937_64 rng(seed);
    for (auto& scale : s.avatar.codebook.scales())
        for (auto& plane : scale)
            for (Eigen::Index i = 0; i < plane.data.size(); ++i) plane.data.data()[i] = uniform(rng, 0.2, 1.8);
    for (Eigen::Index i = 0; i < s.avatar.colors.size(); ++i)
        s.avatar.colors.set_base_color(i, random_vec3(rng, 0.2, 0.9));
    s.cam = camera_ring(s.spec)[0];
    return s;
}

} // namespace r3::test
