// SPDX-License-Identifier: Apache-2.0
#include "r3/sh.hpp"

namespace r3 {

namespace {

constexpr double C1 = 0.4886025119029199;
constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                         -1.0925484305920792, 0.5462742152960396};
constexpr double C3[] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                         0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                         -0.5900435899266435};

// Basis values and their gradient w.r.t. the (unit) direction.
template <typename Scalar>
void basis_with_jacobian(int degree, const Vec3<Scalar>& d, VecX<Scalar>& b,
                         Eigen::Matrix<Scalar, Eigen::Dynamic, 3>* jac) {
    const int n = (degree + 1) * (degree + 1);
    b.resize(n);
    if (jac) jac->setZero(n, 3);
    const Scalar x = d.x(), y = d.y(), z = d.z();
    const Scalar xx = x * x, yy = y * y, zz = z * z;
    b[0] = Scalar(kShC0);
    if (degree < 1) return;
    b[1] = Scalar(-C1) * y;
    b[2] = Scalar(C1) * z;
    b[3] = Scalar(-C1) * x;
    if (jac) {
        (*jac)(1, 1) = Scalar(-C1);
        (*jac)(2, 2) = Scalar(C1);
        (*jac)(3, 0) = Scalar(-C1);
    }
    if (degree < 2) return;
    b[4] = Scalar(C2[0]) * x * y;
    b[5] = Scalar(C2[1]) * y * z;
    b[6] = Scalar(C2[2]) * (2 * zz - xx - yy);
    b[7] = Scalar(C2[3]) * x * z;
    b[8] = Scalar(C2[4]) * (xx - yy);
    if (jac) {
        auto& j = *jac;
        j.row(4) << Scalar(C2[0]) * y, Scalar(C2[0]) * x, 0;
        j.row(5) << 0, Scalar(C2[1]) * z, Scalar(C2[1]) * y;
        j.row(6) << -2 * Scalar(C2[2]) * x, -2 * Scalar(C2[2]) * y, 4 * Scalar(C2[2]) * z;
        j.row(7) << Scalar(C2[3]) * z, 0, Scalar(C2[3]) * x;
        j.row(8) << 2 * Scalar(C2[4]) * x, -2 * Scalar(C2[4]) * y, 0;
    }
    if (degree < 3) return;
    b[9] = Scalar(C3[0]) * y * (3 * xx - yy);
    b[10] = Scalar(C3[1]) * x * y * z;
    b[11] = Scalar(C3[2]) * y * (4 * zz - xx - yy);
    b[12] = Scalar(C3[3]) * z * (2 * zz - 3 * xx - 3 * yy);
    b[13] = Scalar(C3[4]) * x * (4 * zz - xx - yy);
    b[14] = Scalar(C3[5]) * z * (xx - yy);
    b[15] = Scalar(C3[6]) * x * (xx - 3 * yy);
    if (jac) {
        auto& j = *jac;
        const auto c = [](int i) { return Scalar(C3[i]); };
        j.row(9) << 6 * c(0) * x * y, c(0) * (3 * xx - 3 * yy), 0;
        j.row(10) << c(1) * y * z, c(1) * x * z, c(1) * x * y;
        j.row(11) << -2 * c(2) * x * y, c(2) * (4 * zz - xx - 3 * yy), 8 * c(2) * y * z;
        j.row(12) << -6 * c(3) * x * z, -6 * c(3) * y * z, c(3) * (6 * zz - 3 * xx - 3 * yy);
        j.row(13) << c(4) * (4 * zz - 3 * xx - yy), -2 * c(4) * x * y, 8 * c(4) * x * z;
        j.row(14) << 2 * c(5) * x * z, -2 * c(5) * y * z, c(5) * (xx - yy);
        j.row(15) << c(6) * (3 * xx - 3 * yy), -6 * c(6) * x * y, 0;
    }
}

} // namespace

template <typename Scalar> VecX<Scalar> sh_basis(int degree, const Vec3<Scalar>& dir) {
    VecX<Scalar> b;
    basis_with_jacobian<Scalar>(degree, dir, b, nullptr);
    return b;
}

template <typename Scalar>
Vec3<Scalar> sh_to_color(int degree, const Eigen::Ref<const VecX<Scalar>>& coeffs,
                         const Vec3<Scalar>& dir) {
    Vec3<Scalar> rgb = Vec3<Scalar>::Constant(Scalar(0.5));
    if (degree == 0) {
        rgb += Scalar(kShC0) * coeffs.template head<3>();
    } else {
        const VecX<Scalar> b = sh_basis(degree, dir);
        for (Eigen::Index k = 0; k < b.size(); ++k) rgb += b[k] * coeffs.template segment<3>(3 * k);
    }
    return rgb.cwiseMax(Scalar(0));
}

template <typename Scalar>
Vec3<Scalar> sh_to_color_backward(int degree, const Eigen::Ref<const VecX<Scalar>>& coeffs,
                                  const Vec3<Scalar>& view, const Vec3<Scalar>& d_color,
                                  Eigen::Ref<VecX<Scalar>> d_coeffs) {
    const Scalar len = view.norm();
    const Vec3<Scalar> dir = len > Scalar(0) ? Vec3<Scalar>(view / len) : Vec3<Scalar>::UnitZ();
    VecX<Scalar> b;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3> jac;
    basis_with_jacobian<Scalar>(degree, dir, b, degree > 0 ? &jac : nullptr);

    Vec3<Scalar> raw = Vec3<Scalar>::Constant(Scalar(0.5));
    for (Eigen::Index k = 0; k < b.size(); ++k) raw += b[k] * coeffs.template segment<3>(3 * k);
    const Vec3<Scalar> g = (raw.array() > Scalar(0)).select(d_color, Scalar(0));

    Vec3<Scalar> d_dir = Vec3<Scalar>::Zero();
    for (Eigen::Index k = 0; k < b.size(); ++k) {
        d_coeffs.template segment<3>(3 * k) += b[k] * g;
        if (k > 0) d_dir += g.dot(coeffs.template segment<3>(3 * k)) * jac.row(k).transpose();
    }
    if (degree == 0 || len <= Scalar(0)) return Vec3<Scalar>::Zero();
    return (d_dir - dir * dir.dot(d_dir)) / len;
}

template VecX<float> sh_basis(int, const Vec3<float>&);
template VecX<double> sh_basis(int, const Vec3<double>&);
template Vec3<float> sh_to_color(int, const Eigen::Ref<const VecX<float>>&, const Vec3<float>&);
template Vec3<double> sh_to_color(int, const Eigen::Ref<const VecX<double>>&, const Vec3<double>&);
template Vec3<float> sh_to_color_backward(int, const Eigen::Ref<const VecX<float>>&,
                                          const Vec3<float>&, const Vec3<float>&,
                                          Eigen::Ref<VecX<float>>);
template Vec3<double> sh_to_color_backward(int, const Eigen::Ref<const VecX<double>>&,
                                           const Vec3<double>&, const Vec3<double>&,
                                           Eigen::Ref<VecX<double>>);

} // namespace r3
