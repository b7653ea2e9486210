// SPDX-License-Identifier: Apache-2.0
//
// RGB float images and the photometric losses used for supervision.
#pragma once

#include "r3/common.hpp"

namespace r3 {

/// Row-major RGB image, pixel (x, y) at rgb.row(y * width + x).
template <typename Scalar> struct Image {
    int width = 0;
    int height = 0;
    MatX<Scalar> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(MatX<Scalar>::Zero(Eigen::Index(w) * h, 3)) {}

    Eigen::Index index(int x, int y) const { return Eigen::Index(y) * width + x; }
    Vec3<Scalar> pixel(int x, int y) const { return rgb.row(index(x, y)).transpose(); }
    Eigen::Index pixel_count() const { return Eigen::Index(width) * height; }

    template <typename Other> Image<Other> cast() const {
        Image<Other> o;
        o.width = width;
        o.height = height;
        o.rgb = rgb.template cast<Other>();
        return o;
    }
};

template <typename Scalar> Scalar l1_loss(const Image<Scalar>& a, const Image<Scalar>& b);
template <typename Scalar> Scalar mse(const Image<Scalar>& a, const Image<Scalar>& b);
/// Peak signal-to-noise ratio in dB for signals in [0, 1].
template <typename Scalar> double psnr(const Image<Scalar>& a, const Image<Scalar>& b);

/// Mean SSIM over pixels and channels (11x11 gaussian window, sigma 1.5, zero padding).
/// When `d_a` is non-null it receives d(mean SSIM)/d(a).
template <typename Scalar>
Scalar ssim(const Image<Scalar>& a, const Image<Scalar>& b, MatX<Scalar>* d_a = nullptr);

template <typename Scalar> struct PhotometricLoss {
    Scalar total = 0;
    Scalar l1 = 0;
    Scalar ssim = 1;
    MatX<Scalar> d_render; ///< d(total)/d(rendered rgb)
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM), with gradient w.r.t. the rendered image.
template <typename Scalar>
PhotometricLoss<Scalar> photometric_loss(const Image<Scalar>& rendered, const Image<Scalar>& target,
                                         Scalar lambda_ssim);

} // namespace r3
