// SPDX-License-Identifier: Apache-2.0
//
// Real spherical harmonics up to degree 3, using the constants and sign
// conventions of the reference 3DGS renderer. Colors are SH(dir) + 0.5,
// clamped at zero.
#pragma once

#include "r3/common.hpp"

namespace r3 {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;

/// Basis values at unit direction `dir`, (degree + 1)^2 entries.
template <typename Scalar> VecX<Scalar> sh_basis(int degree, const Vec3<Scalar>& dir);

/// RGB color for one gaussian. `coeffs` is the row of a GaussianColorStore.
template <typename Scalar>
Vec3<Scalar> sh_to_color(int degree, const Eigen::Ref<const VecX<Scalar>>& coeffs,
                         const Vec3<Scalar>& dir);

/// Reverse of sh_to_color. Accumulates into d_coeffs and returns d(loss)/d(dir)
/// for the *unnormalized* view direction `view` (dir = view / |view|).
template <typename Scalar>
Vec3<Scalar> sh_to_color_backward(int degree, const Eigen::Ref<const VecX<Scalar>>& coeffs,
                                  const Vec3<Scalar>& view, const Vec3<Scalar>& d_color,
                                  Eigen::Ref<VecX<Scalar>> d_coeffs);

} // namespace r3
