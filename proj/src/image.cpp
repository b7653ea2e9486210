// SPDX-License-Identifier: Apache-2.0
#include "r3/image.hpp"

#include <array>
#include <limits>

namespace r3 {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

template <typename Scalar> std::array<Scalar, kWindow> gaussian_kernel() {
    std::array<double, kWindow> k{};
    double sum = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        k[std::size_t(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
        sum += k[std::size_t(i)];
    }
    std::array<Scalar, kWindow> out{};
    for (int i = 0; i < kWindow; ++i) out[std::size_t(i)] = Scalar(k[std::size_t(i)] / sum);
    return out;
}

// Separable "same" filtering of a single-channel plane (h x w) with zero padding.
template <typename Scalar>
MatX<Scalar> blur(const MatX<Scalar>& in, const std::array<Scalar, kWindow>& k) {
    const auto h = in.rows(), w = in.cols();
    constexpr int r = kWindow / 2;
    MatX<Scalar> tmp = MatX<Scalar>::Zero(h, w), out = MatX<Scalar>::Zero(h, w);
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            Scalar s = 0;
            for (int i = -r; i <= r; ++i) {
                const auto xx = x + i;
                if (xx >= 0 && xx < w) s += k[std::size_t(i + r)] * in(y, xx);
            }
            tmp(y, x) = s;
        }
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            Scalar s = 0;
            for (int i = -r; i <= r; ++i) {
                const auto yy = y + i;
                if (yy >= 0 && yy < h) s += k[std::size_t(i + r)] * tmp(yy, x);
            }
            out(y, x) = s;
        }
    return out;
}

template <typename Scalar> MatX<Scalar> channel(const Image<Scalar>& img, int c) {
    MatX<Scalar> out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out(y, x) = img.rgb(img.index(x, y), c);
    return out;
}

template <typename Scalar> void check_same_shape(const Image<Scalar>& a, const Image<Scalar>& b) {
    if (a.width != b.width || a.height != b.height)
        throw ConfigError("image: size mismatch " + std::to_string(a.width) + "x" +
                          std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                          std::to_string(b.height));
}

} // namespace

template <typename Scalar> Scalar l1_loss(const Image<Scalar>& a, const Image<Scalar>& b) {
    check_same_shape(a, b);
    return (a.rgb - b.rgb).cwiseAbs().sum() / Scalar(a.rgb.size());
}

template <typename Scalar> Scalar mse(const Image<Scalar>& a, const Image<Scalar>& b) {
    check_same_shape(a, b);
    return (a.rgb - b.rgb).squaredNorm() / Scalar(a.rgb.size());
}

template <typename Scalar> double psnr(const Image<Scalar>& a, const Image<Scalar>& b) {
    const double m = double(mse(a, b));
    return m > 0 ? -10.0 * std::log10(m) : std::numeric_limits<double>::infinity();
}

template <typename Scalar>
Scalar ssim(const Image<Scalar>& a, const Image<Scalar>& b, MatX<Scalar>* d_a) {
    check_same_shape(a, b);
    const auto k = gaussian_kernel<Scalar>();
    const Scalar c1 = Scalar(kC1), c2 = Scalar(kC2);
    const Scalar norm = Scalar(1) / Scalar(a.rgb.size());
    if (d_a) d_a->setZero(a.rgb.rows(), 3);
    Scalar total = 0;
    for (int c = 0; c < 3; ++c) {
        const MatX<Scalar> pa = channel(a, c), pb = channel(b, c);
        const MatX<Scalar> mu_a = blur(pa, k), mu_b = blur(pb, k);
        const MatX<Scalar> e_aa = blur<Scalar>(pa.cwiseProduct(pa), k);
        const MatX<Scalar> e_bb = blur<Scalar>(pb.cwiseProduct(pb), k);
        const MatX<Scalar> e_ab = blur<Scalar>(pa.cwiseProduct(pb), k);
        MatX<Scalar> g_mu(pa.rows(), pa.cols()), g_aa(pa.rows(), pa.cols()),
            g_ab(pa.rows(), pa.cols());
        for (Eigen::Index y = 0; y < pa.rows(); ++y)
            for (Eigen::Index x = 0; x < pa.cols(); ++x) {
                const Scalar ma = mu_a(y, x), mb = mu_b(y, x);
                const Scalar a1 = 2 * ma * mb + c1;
                const Scalar a2 = 2 * (e_ab(y, x) - ma * mb) + c2;
                const Scalar b1 = ma * ma + mb * mb + c1;
                const Scalar b2 = (e_aa(y, x) - ma * ma) + (e_bb(y, x) - mb * mb) + c2;
                const Scalar den = b1 * b2;
                const Scalar s = a1 * a2 / den;
                total += s;
                g_mu(y, x) = norm * (2 * mb * (a2 - a1) - s * 2 * ma * (b2 - b1)) / den;
                g_aa(y, x) = norm * (-s * b1 / den);
                g_ab(y, x) = norm * (2 * a1 / den);
            }
        if (d_a) {
            const MatX<Scalar> bmu = blur(g_mu, k), baa = blur(g_aa, k), bab = blur(g_ab, k);
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x)
                    (*d_a)(a.index(x, y), c) =
                        bmu(y, x) + 2 * pa(y, x) * baa(y, x) + pb(y, x) * bab(y, x);
        }
    }
    return total * norm;
}

template <typename Scalar>
PhotometricLoss<Scalar> photometric_loss(const Image<Scalar>& rendered, const Image<Scalar>& target,
                                         Scalar lambda_ssim) {
    check_same_shape(rendered, target);
    PhotometricLoss<Scalar> out;
    const Scalar n = Scalar(rendered.rgb.size());
    const MatX<Scalar> diff = rendered.rgb - target.rgb;
    out.l1 = diff.cwiseAbs().sum() / n;
    out.d_render = (Scalar(1) - lambda_ssim) / n *
                   diff.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); });
    if (lambda_ssim != Scalar(0)) {
        MatX<Scalar> d_ssim;
        out.ssim = ssim(rendered, target, &d_ssim);
        out.d_render -= lambda_ssim * d_ssim;
    } else {
        out.ssim = ssim(rendered, target);
    }
    out.total = (Scalar(1) - lambda_ssim) * out.l1 + lambda_ssim * (Scalar(1) - out.ssim);
    return out;
}

#define R3_INSTANTIATE(S)                                                                         \
    template S l1_loss(const Image<S>&, const Image<S>&);                                         \
    template S mse(const Image<S>&, const Image<S>&);                                             \
    template double psnr(const Image<S>&, const Image<S>&);                                       \
    template S ssim(const Image<S>&, const Image<S>&, MatX<S>*);                                  \
    template PhotometricLoss<S> photometric_loss(const Image<S>&, const Image<S>&, S);
R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
