// SPDX-License-Identifier: Apache-2.0
//
// Helpers and independent reference implementations shared by the unit tests
// and the acceptance runner. Oracles here are written from the definitions,
// without calling the code they check.
#pragma once

#include "r3/hexplane.hpp"
#include "r3/rasterizer.hpp"
#include "r3/retrieval.hpp"
#include "r3/skinning.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace r3::test {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::Vector3d random_vec3(std::mt19937_64& rng, double lo, double hi) {
    return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Eigen::Vector4d random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f around the current value of `param`.
inline double central_difference(const std::function<double()>& f, double& param, double h) {
    const double saved = param;
    param = saved + h;
    const double up = f();
    param = saved - h;
    const double down = f();
    param = saved;
    return (up - down) / (2 * h);
}

template <typename Scalar>
HexPlaneCodebook<Scalar> random_codebook(std::vector<int> resolutions, int time_res, int channels,
                                         std::uint64_t seed, double lo = 0.5, double hi = 1.5) {
    HexPlaneConfig cfg;
    cfg.resolutions = std::move(resolutions);
    cfg.time_resolution = time_res;
    cfg.channels = channels;
    Bbox<Scalar> box;
    box.lo = Vec3<Scalar>(-1, -0.5, -2);
    box.hi = Vec3<Scalar>(1, 1.5, 0.5);
    HexPlaneCodebook<Scalar> cb(cfg, box, TimeRange{0, 19}, seed);
    std::mt19937_64 rng(seed + 99);
    for (auto& scale : cb.scales())
        for (auto& plane : scale)
            for (Eigen::Index i = 0; i < plane.data.size(); ++i)
                plane.data.data()[i] = Scalar(uniform(rng, lo, hi));
    return cb;
}

/// Straight-line bilinear lookup and product over the six planes, scale by scale.
template <typename Scalar>
VecX<double> reference_encode(const HexPlaneCodebook<Scalar>& cb, const Vec3<double>& x, double t) {
    const int c = cb.channels();
    VecX<double> out(cb.feature_dim());
    const Vec3<double> lo = cb.bbox().lo.template cast<double>();
    const Vec3<double> hi = cb.bbox().hi.template cast<double>();
    double coord[4];
    for (int a = 0; a < 3; ++a) coord[a] = std::clamp((x[a] - lo[a]) / (hi[a] - lo[a]), 0.0, 1.0);
    coord[3] = std::clamp(t, 0.0, 1.0);
    // Column and row axis for xy, xz, yz, xt, yt, zt.
    const int col_axis[6] = {0, 0, 1, 0, 1, 2};
    const int row_axis[6] = {1, 2, 2, 3, 3, 3};
    for (int s = 0; s < cb.scale_count(); ++s) {
        for (int ch = 0; ch < c; ++ch) {
            double prod = 1;
            for (int p = 0; p < 6; ++p) {
                const auto& plane = cb.scales()[std::size_t(s)][std::size_t(p)];
                const double gx = coord[col_axis[p]] * (plane.width - 1);
                const double gy = coord[row_axis[p]] * (plane.height - 1);
                int ix = int(gx), iy = int(gy);
                if (ix > plane.width - 2) ix = plane.width - 2;
                if (iy > plane.height - 2) iy = plane.height - 2;
                const double fx = gx - ix, fy = gy - iy;
                const auto at = [&](int row, int col) {
                    return double(plane.data(Eigen::Index(row) * plane.width + col, ch));
                };
                const double v = at(iy, ix) * (1 - fx) * (1 - fy) + at(iy, ix + 1) * fx * (1 - fy) +
                                 at(iy + 1, ix) * (1 - fx) * fy + at(iy + 1, ix + 1) * fx * fy;
                prod *= v;
            }
            out[s * c + ch] = prod;
        }
    }
    return out;
}

/// Joint world transforms by explicit recursion up the parent chain.
inline Eigen::Matrix4d recursive_world(const Skeleton& skel, const Pose& pose, int k) {
    const auto& j = skel.joint(k);
    Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
    const double angle = pose.thetas[std::size_t(k)].norm();
    if (angle > 0)
        local.topLeftCorner<3, 3>() =
            Eigen::AngleAxisd(angle, pose.thetas[std::size_t(k)] / angle).toRotationMatrix();
    if (j.parent < 0) {
        local.topRightCorner<3, 1>() = j.rest_position + pose.root_translation;
        return local;
    }
    local.topRightCorner<3, 1>() = j.rest_position - skel.joint(j.parent).rest_position;
    return recursive_world(skel, pose, j.parent) * local;
}

/// Skinning transform rest -> posed for joint k: world * translate(-rest_k).
inline Eigen::Matrix4d recursive_skinning(const Skeleton& skel, const Pose& pose, int k) {
    Eigen::Matrix4d inv_rest = Eigen::Matrix4d::Identity();
    inv_rest.topRightCorner<3, 1>() = -skel.joint(k).rest_position;
    return recursive_world(skel, pose, k) * inv_rest;
}

/// Random tree skeleton: joint k > 0 hangs from a random earlier joint.
inline Skeleton random_skeleton(std::mt19937_64& rng, int joints) {
    std::vector<Joint> js;
    for (int k = 0; k < joints; ++k) {
        Joint j;
        j.name = "j" + std::to_string(k);
        j.parent = k == 0 ? -1 : int(std::uniform_int_distribution<int>(0, k - 1)(rng));
        j.rest_position = random_vec3(rng, -1, 1);
        j.part = kAllBodyParts[std::size_t(k % kBodyPartCount)];
        js.push_back(j);
    }
    return Skeleton(std::move(js));
}

inline Pose random_pose(std::mt19937_64& rng, int joints, double angle = 1.0) {
    Pose p = Pose::rest(joints);
    for (auto& t : p.thetas) t = random_vec3(rng, -angle, angle);
    p.root_translation = random_vec3(rng, -0.5, 0.5);
    return p;
}

/// Per-pixel blend of every gaussian in depth order, evaluated without tiles.
/// Mirrors the footprint rules of the renderer: 3-sigma box on the screen
/// covariance diagonal, alpha below 1/255 skipped, stop below 1e-4 transmittance.
template <typename Scalar>
Image<double> brute_force_render(const PosedGaussianSet<Scalar>& set, const Camera<Scalar>& cam,
                                 const Eigen::Vector3d& background) {
    struct Splat {
        double depth;
        int index;
        Eigen::Vector2d mean;
        Eigen::Matrix2d cov;
        Eigen::Vector3d color;
    };
    std::vector<Splat> splats;
    const Eigen::Matrix3d r = cam.rotation.template cast<double>();
    const Eigen::Vector3d tr = cam.translation.template cast<double>();
    const Eigen::Vector3d eye = -r.transpose() * tr;
    for (Eigen::Index i = 0; i < set.size(); ++i) {
        const Eigen::Vector3d x = set.positions.row(i).transpose().template cast<double>();
        const Eigen::Vector3d pc = r * x + tr;
        if (pc.z() < double(cam.near_plane) || pc.z() > double(cam.far_plane)) continue;
        Eigen::Vector4d q = set.rotations.row(i).transpose().template cast<double>();
        q.normalize();
        const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
        const Eigen::Matrix3d rot = quat.toRotationMatrix();
        const Eigen::Vector3d s = set.scales.row(i).transpose().template cast<double>();
        const Eigen::Matrix3d cov3 = rot * s.cwiseAbs2().asDiagonal() * rot.transpose();
        Eigen::Matrix<double, 2, 3> j;
        const double fx = double(cam.fx), fy = double(cam.fy), z = pc.z();
        j << fx / z, 0, -fx * pc.x() / (z * z), 0, fy / z, -fy * pc.y() / (z * z);
        Splat sp;
        sp.depth = z;
        sp.index = int(i);
        sp.mean = {fx * pc.x() / z + double(cam.cx), fy * pc.y() / z + double(cam.cy)};
        sp.cov = j * r * cov3 * r.transpose() * j.transpose();
        sp.cov(0, 0) += 0.3;
        sp.cov(1, 1) += 0.3;
        // Degree-0 color only: DC term times the constant basis plus the 0.5 offset.
        for (int ch = 0; ch < 3; ++ch)
            sp.color[ch] = std::max(0.0, 0.28209479177387814 * double(set.sh(i, ch)) + 0.5);
        (void)eye;
        splats.push_back(sp);
    }
    std::stable_sort(splats.begin(), splats.end(),
                     [](const Splat& a, const Splat& b) { return a.depth < b.depth; });
    Image<double> img(cam.width, cam.height);
    for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
            const Eigen::Vector2d p(px + 0.5, py + 0.5);
            double tr_acc = 1;
            Eigen::Vector3d c = Eigen::Vector3d::Zero();
            for (const auto& sp : splats) {
                const Eigen::Vector2d d = p - sp.mean;
                if (std::abs(d.x()) > 3 * std::sqrt(sp.cov(0, 0)) ||
                    std::abs(d.y()) > 3 * std::sqrt(sp.cov(1, 1)))
                    continue;
                const double g = std::exp(-0.5 * d.dot(sp.cov.inverse() * d));
                const double a = double(set.opacities[sp.index]) * g;
                if (a < 1.0 / 255.0) continue;
                c += sp.color * a * tr_acc;
                tr_acc *= 1 - a;
                if (tr_acc < 1e-4) break;
            }
            img.rgb.row(img.index(px, py)) = (c + tr_acc * background).transpose();
        }
    return img;
}

/// Random degree-0 gaussians in front of a camera looking down +z from the origin.
inline PosedGaussianSet<double> random_scene(std::mt19937_64& rng, int count, double spread = 0.6,
                                             double min_scale = 0.05, double max_scale = 0.3) {
    PosedGaussianSet<double> s;
    s.positions.resize(count, 3);
    s.rotations.resize(count, 4);
    s.scales.resize(count, 3);
    s.opacities.resize(count);
    s.sh.resize(count, 3);
    s.sh_degree = 0;
    for (int i = 0; i < count; ++i) {
        s.positions.row(i) = Eigen::RowVector3d(uniform(rng, -spread, spread),
                                                uniform(rng, -spread, spread), uniform(rng, 2.5, 4.0));
        s.rotations.row(i) = random_quat(rng).transpose();
        for (int a = 0; a < 3; ++a) s.scales(i, a) = uniform(rng, min_scale, max_scale);
        s.opacities[i] = uniform(rng, 0.2, 0.95);
        for (int c = 0; c < 3; ++c) s.sh(i, c) = uniform(rng, -1.5, 1.5);
    }
    s.parts.assign(std::size_t(count), BodyPart::CenterBody);
    return s;
}

inline Camera<double> front_camera(int width, int height, double focal) {
    Camera<double> c;
    c.fx = c.fy = focal;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.width = width;
    c.height = height;
    return c;
}

/// Exhaustive argmin over the part's entries, ties to the earliest timestamp.
inline double exhaustive_nearest(const PoseSequenceIndex& index, BodyPart part,
                                 const Eigen::VectorXd& query) {
    const auto* e = index.find(part);
    double best = std::numeric_limits<double>::infinity();
    double t = -1;
    for (std::size_t i = 0; i < e->keys.size(); ++i) {
        const double d = (e->keys[i].values - query).norm();
        if (d < best) {
            best = d;
            t = e->timestamps[i];
        }
    }
    return t;
}

/// Two nearest entries (ties to the earliest timestamp) blended by inverse distance.
inline double weighted_top_two(const PoseSequenceIndex& index, BodyPart part,
                               const Eigen::VectorXd& query) {
    const auto* e = index.find(part);
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    double t1 = -1, t2 = -1;
    for (std::size_t i = 0; i < e->keys.size(); ++i) {
        const double d = (e->keys[i].values - query).norm();
        const double t = e->timestamps[i];
        if (d < d1) {
            d2 = d1, t2 = t1;
            d1 = d, t1 = t;
        } else if (d < d2) {
            d2 = d, t2 = t;
        }
    }
    if (d1 + d2 == 0) return 0.5 * (t1 + t2);
    return (d2 * t1 + d1 * t2) / (d1 + d2);
}

/// Key {dp(i-1), dp(i), p(i)} per joint recomputed with Eigen's angle-axis conversions.
inline Eigen::VectorXd reference_key(const PoseTrack& track, std::size_t i,
                                     const std::vector<int>& joints) {
    const auto rot = [](const Eigen::Vector3d& aa) {
        const double a = aa.norm();
        return a > 0 ? Eigen::AngleAxisd(a, aa / a).toRotationMatrix() : Eigen::Matrix3d::Identity();
    };
    const auto log_map = [](const Eigen::Matrix3d& m) {
        const Eigen::AngleAxisd aa(m);
        return Eigen::Vector3d(aa.angle() * aa.axis());
    };
    Eigen::VectorXd out(9 * Eigen::Index(joints.size()));
    for (std::size_t j = 0; j < joints.size(); ++j) {
        const auto k = std::size_t(joints[j]);
        const Eigen::Matrix3d r0 = rot(track[i - 2].thetas[k]);
        const Eigen::Matrix3d r1 = rot(track[i - 1].thetas[k]);
        const Eigen::Matrix3d r2 = rot(track[i].thetas[k]);
        out.segment<3>(Eigen::Index(9 * j)) = log_map(r0.transpose() * r1);
        out.segment<3>(Eigen::Index(9 * j + 3)) = log_map(r1.transpose() * r2);
        out.segment<3>(Eigen::Index(9 * j + 6)) = track[i].thetas[k];
    }
    return out;
}

} // namespace r3::test
