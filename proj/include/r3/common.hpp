// SPDX-License-Identifier: Apache-2.0
//
// Shared dense types, error classes and rotation helpers.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace r3 {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
/// Quaternions are stored as (w, x, y, z).
template <typename Scalar> using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar> using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar> using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// One row per gaussian.
template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename Scalar>
using Quats = Eigen::Matrix<Scalar, Eigen::Dynamic, 4, Eigen::RowMajor>;

/// Non-finite or otherwise invalid numeric input.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};
/// Inconsistent sizes or settings.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
/// API misuse, e.g. querying an empty index.
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};
/// Malformed files or datasets.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Optimization produced NaN/Inf.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Axis-aligned bounds of canonical space.
template <typename Scalar> struct Bbox {
    Vec3<Scalar> lo = Vec3<Scalar>::Zero();
    Vec3<Scalar> hi = Vec3<Scalar>::Ones();

    Vec3<Scalar> extent() const { return hi - lo; }
    Scalar diagonal() const { return extent().norm(); }
    Vec3<Scalar> center() const { return Scalar(0.5) * (lo + hi); }
    bool contains(const Vec3<Scalar>& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }

    template <typename Other> Bbox<Other> cast() const {
        return {lo.template cast<Other>(), hi.template cast<Other>()};
    }
};

/// Frame-index span mapped onto normalized time [0, 1].
struct TimeRange {
    double first = 0.0;
    double last = 1.0;

    double normalize(double frame) const {
        const double span = last - first;
        return span > 0.0 ? (frame - first) / span : 0.0;
    }
    double frame_at(double normalized) const { return first + normalized * (last - first); }
};

template <typename Derived> bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

template <typename Scalar> Mat3<Scalar> skew(const Vec3<Scalar>& v) {
    Mat3<Scalar> s;
    s << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(), Scalar(0);
    return s;
}

/// Rodrigues formula; the axis-angle magnitude is in radians.
template <typename Scalar> Mat3<Scalar> axis_angle_to_matrix(const Vec3<Scalar>& aa) {
    const Scalar angle = aa.norm();
    if (angle < Scalar(1e-12)) return Mat3<Scalar>::Identity() + skew(aa);
    return Eigen::AngleAxis<Scalar>(angle, aa / angle).toRotationMatrix();
}

/// Log map of SO(3) back to an axis-angle vector with angle in [0, pi].
template <typename Scalar> Vec3<Scalar> matrix_to_axis_angle(const Mat3<Scalar>& r) {
    const Eigen::AngleAxis<Scalar> aa(r);
    return aa.angle() * aa.axis();
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
template <typename Scalar> Mat3<Scalar> quat_to_matrix(const Vec4<Scalar>& q) {
    const Scalar w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<Scalar> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Gradient of a scalar loss w.r.t. q given its gradient w.r.t. quat_to_matrix(q).
template <typename Scalar>
Vec4<Scalar> quat_to_matrix_backward(const Vec4<Scalar>& q, const Mat3<Scalar>& d_r) {
    const Scalar w = q[0], x = q[1], y = q[2], z = q[3];
    const Mat3<Scalar>& g = d_r;
    Vec4<Scalar> d;
    d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                x * g(2, 1));
    d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
                z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

/// Unit quaternion (w >= 0) of a rotation matrix.
template <typename Scalar> Vec4<Scalar> matrix_to_quat(const Mat3<Scalar>& r) {
    Eigen::Quaternion<Scalar> q(r);
    q.normalize();
    Vec4<Scalar> out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < Scalar(0)) out = -out;
    return out;
}

/// Keeps rows of a per-gaussian matrix listed in `keep`.
template <typename Derived, typename Index>
Derived select_rows(const Derived& m, const std::vector<Index>& keep) {
    Derived out(Eigen::Index(keep.size()), m.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) out.row(Eigen::Index(i)) = m.row(Eigen::Index(keep[i]));
    return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

} // namespace r3
