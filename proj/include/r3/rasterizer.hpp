// SPDX-License-Identifier: Apache-2.0
//
// Tile-based CPU splatting of 3D gaussians with front-to-back alpha blending
// and its analytic reverse pass.
#pragma once

#include "r3/common.hpp"
#include "r3/image.hpp"
#include "r3/skinning.hpp"

#include <optional>
#include <vector>

namespace r3 {

/// Pinhole camera. `rotation`/`translation` map world to camera coordinates
/// (x right, y down, z forward). Pixel (i, j) is sampled at (i + 0.5, j + 0.5).
template <typename Scalar> struct Camera {
    Scalar fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();
    Scalar near_plane = Scalar(0.01);
    Scalar far_plane = Scalar(100);

    Vec3<Scalar> center() const { return -rotation.transpose() * translation; }
    void validate() const;

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    static Camera look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target,
                          const Vec3<Scalar>& up, Scalar focal, int width, int height);

    template <typename Other> Camera<Other> cast() const {
        Camera<Other> c;
        c.fx = Other(fx), c.fy = Other(fy), c.cx = Other(cx), c.cy = Other(cy);
        c.width = width, c.height = height;
        c.rotation = rotation.template cast<Other>();
        c.translation = translation.template cast<Other>();
        c.near_plane = Other(near_plane), c.far_plane = Other(far_plane);
        return c;
    }
};

/// Observation-space gaussians ready for splatting.
template <typename Scalar> struct PosedGaussianSet {
    Points<Scalar> positions;
    Quats<Scalar> rotations;
    Points<Scalar> scales;
    VecX<Scalar> opacities;
    MatX<Scalar> sh; ///< GaussianColorStore layout
    int sh_degree = 0;
    std::vector<BodyPart> parts;

    Eigen::Index size() const { return positions.rows(); }
    void validate() const;
};

struct RenderSettings {
    int tile_size = 16; ///< <= 0 renders the whole image as one tile
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

inline constexpr double kLowPassFloor = 0.3;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kFootprintSigmas = 3.0;

/// Sigma = R diag(s)^2 R^T.
template <typename Scalar>
Mat3<Scalar> covariance_3d(const Vec4<Scalar>& rotation, const Vec3<Scalar>& scale);

template <typename Scalar> struct ProjectedGaussian {
    Vec2<Scalar> mean;       ///< pixels
    Mat2<Scalar> covariance; ///< pixels^2, low-pass floor included
    Scalar depth = 0;        ///< camera-space z
};

/// Perspective projection with first-order covariance propagation. Returns nullopt
/// when the mean lies outside [near, far].
template <typename Scalar>
std::optional<ProjectedGaussian<Scalar>> project_gaussian(const Vec3<Scalar>& position,
                                                          const Mat3<Scalar>& covariance,
                                                          const Camera<Scalar>& cam);

template <typename Scalar> struct RenderedImage : Image<Scalar> {
    VecX<Scalar> transmittance;
    std::vector<int> contributors;
};

/// Per-frame state kept for the reverse pass.
template <typename Scalar> struct RenderCache {
    struct Splat {
        bool visible = false;
        Vec3<Scalar> p_cam;
        Mat3<Scalar> rotation;
        Mat3<Scalar> cov3d;
        Vec2<Scalar> mean;
        Mat2<Scalar> cov2d;
        Mat2<Scalar> conic;
        Vec2<Scalar> extent; ///< half-width of the footprint rectangle
        Vec3<Scalar> color;
        Scalar depth = 0;
    };
    std::vector<Splat> splats;
    std::vector<int> order; ///< visible gaussians, front to back
    int tile_size = 0, tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tiles;
};

template <typename Scalar>
RenderedImage<Scalar> render(const PosedGaussianSet<Scalar>& set, const Camera<Scalar>& cam,
                             const RenderSettings& settings = {},
                             RenderCache<Scalar>* cache = nullptr);

template <typename Scalar> struct RenderGradients {
    Points<Scalar> positions;
    Quats<Scalar> rotations;                      ///< w.r.t. the stored quaternion
    std::vector<Mat3<Scalar>> rotation_matrices;  ///< w.r.t. R(q) as used by the splat
    Points<Scalar> scales;
    VecX<Scalar> opacities;
    MatX<Scalar> sh;
};

/// Gradients of sum(upstream .* rgb). Sorting is treated as piecewise constant.
template <typename Scalar>
RenderGradients<Scalar> render_backward(const PosedGaussianSet<Scalar>& set,
                                        const Camera<Scalar>& cam, const RenderSettings& settings,
                                        const RenderCache<Scalar>& cache,
                                        const MatX<Scalar>& upstream);

/// Convenience overload that re-runs the forward pass.
template <typename Scalar>
RenderGradients<Scalar> render_backward(const PosedGaussianSet<Scalar>& set,
                                        const Camera<Scalar>& cam, const RenderSettings& settings,
                                        const MatX<Scalar>& upstream);

} // namespace r3
