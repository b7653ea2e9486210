// SPDX-License-Identifier: Apache-2.0
#include "r3/decoder.hpp"

#include "r3/sh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace r3 {

namespace {
constexpr double kMinScale = 1e-6;
constexpr double kRotationEps = 1e-8;
} // namespace

template <typename Scalar>
GaussianDecoder<Scalar>::GaussianDecoder(int in_dim, const DecoderConfig& config,
                                         Scalar max_scale, std::uint64_t seed)
    : net_(in_dim, config.depth, config.width, kDecoderOutputs, seed,
           Scalar(config.output_init_scale)),
      max_offset_(Scalar(config.max_offset)), max_scale_(max_scale) {
    if (!(config.init_opacity > 0.0 && config.init_opacity < 1.0) || config.init_scale <= 0.0)
        throw ConfigError("decoder: invalid initial opacity or scale");
    auto& b = net_.biases().back();
    b[3] = Scalar(std::log(config.init_opacity / (1.0 - config.init_opacity)));
    b[4] = Scalar(1);
    b.template segment<3>(8).setConstant(Scalar(std::log(config.init_scale)));
}

template <typename Scalar>
GaussianDecoder<Scalar>::GaussianDecoder(Mlp<Scalar> net, Scalar max_offset, Scalar max_scale)
    : net_(std::move(net)), max_offset_(max_offset), max_scale_(max_scale) {
    if (net_.out_dim() != kDecoderOutputs) throw ConfigError("decoder: network must emit 11 values");
}

template <typename Scalar>
DecodedBatch<Scalar> GaussianDecoder<Scalar>::decode_matrix(const MatX<Scalar>& features,
                                                            const VecX<Scalar>* opacity_bias,
                                                            Cache* cache) const {
    if (features.cols() != in_dim())
        throw ConfigError("decoder: feature dimension " + std::to_string(features.cols()) +
                          " does not match network input " + std::to_string(in_dim()));
    const Eigen::Index n = features.rows();
    if (opacity_bias && opacity_bias->size() != n)
        throw ConfigError("decoder: opacity bias count mismatch");
    MatX<Scalar> raw = net_.forward(features, cache ? &cache->mlp : nullptr);

    DecodedBatch<Scalar> out;
    out.delta_x.resize(n, 3);
    out.opacity.resize(n);
    out.rotation.resize(n, 4);
    out.scale.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) out.delta_x(i, a) = max_offset_ * std::tanh(raw(i, a));
        const Scalar logit = raw(i, 3) + (opacity_bias ? (*opacity_bias)[i] : Scalar(0));
        // Saturated logits would round to exactly 0 or 1.
        out.opacity[i] = std::clamp(sigmoid(logit), std::numeric_limits<Scalar>::min(),
                                    std::nextafter(Scalar(1), Scalar(0)));
        const Vec4<Scalar> q = raw.row(i).template segment<4>(4).transpose();
        const Scalar qn = q.norm();
        if (qn < Scalar(kRotationEps))
            out.rotation.row(i) << Scalar(1), Scalar(0), Scalar(0), Scalar(0);
        else
            out.rotation.row(i) = (q / qn).transpose();
        for (int a = 0; a < 3; ++a)
            out.scale(i, a) =
                std::clamp(std::exp(raw(i, 8 + a)), Scalar(kMinScale), max_scale_);
    }
    if (cache) {
        cache->raw = std::move(raw);
        cache->opacity_bias = opacity_bias ? *opacity_bias : VecX<Scalar>::Zero(n);
    }
    return out;
}

template <typename Scalar>
MatX<Scalar> GaussianDecoder<Scalar>::backward(const Cache& cache,
                                               const HeadGradients<Scalar>& up,
                                               typename Mlp<Scalar>::Grad& grad,
                                               VecX<Scalar>* d_opacity_bias) const {
    const auto& raw = cache.raw;
    const Eigen::Index n = raw.rows();
    MatX<Scalar> draw = MatX<Scalar>::Zero(n, kDecoderOutputs);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            const Scalar th = std::tanh(raw(i, a));
            draw(i, a) = up.delta_x(i, a) * max_offset_ * (Scalar(1) - th * th);
        }
        const Scalar op = sigmoid(raw(i, 3) + cache.opacity_bias[i]);
        const Scalar dlogit = up.opacity[i] * op * (Scalar(1) - op);
        draw(i, 3) = dlogit;
        if (d_opacity_bias) (*d_opacity_bias)[i] += dlogit;

        const Vec4<Scalar> q = raw.row(i).template segment<4>(4).transpose();
        const Scalar qn = q.norm();
        if (qn >= Scalar(kRotationEps)) {
            const Vec4<Scalar> u = q / qn;
            const Vec4<Scalar> g = up.rotation.row(i).transpose();
            draw.row(i).template segment<4>(4) = ((g - u * u.dot(g)) / qn).transpose();
        }
        for (int a = 0; a < 3; ++a) {
            const Scalar s = std::exp(raw(i, 8 + a));
            if (s > Scalar(kMinScale) && s < max_scale_) draw(i, 8 + a) = up.scale(i, a) * s;
        }
    }
    return net_.backward(cache.mlp, draw, grad);
}

template <typename Scalar>
DecodedGaussianDelta<Scalar> GaussianDecoder<Scalar>::decode(const VecX<Scalar>& feature) const {
    MatX<Scalar> f = feature.transpose();
    return decode_matrix(f).at(0);
}

template <typename Scalar>
std::vector<DecodedGaussianDelta<Scalar>>
GaussianDecoder<Scalar>::decode_batch(const std::vector<VecX<Scalar>>& features) const {
    std::vector<DecodedGaussianDelta<Scalar>> out;
    if (features.empty()) return out;
    MatX<Scalar> f(Eigen::Index(features.size()), in_dim());
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != in_dim()) throw ConfigError("decoder: non-uniform feature sizes");
        f.row(Eigen::Index(i)) = features[i].transpose();
    }
    const auto batch = decode_matrix(f);
    out.reserve(features.size());
    for (Eigen::Index i = 0; i < batch.size(); ++i) out.push_back(batch.at(i));
    return out;
}

template <typename Scalar>
VecX<Scalar> GaussianDecoder<Scalar>::decoder_gradient(const VecX<Scalar>& feature,
                                                       const DecodedGaussianDelta<Scalar>& upstream,
                                                       typename Mlp<Scalar>::Grad& grad) const {
    Cache cache;
    MatX<Scalar> f = feature.transpose();
    decode_matrix(f, nullptr, &cache);
    auto up = HeadGradients<Scalar>::zeros(1);
    up.delta_x.row(0) = upstream.delta_x.transpose();
    up.opacity[0] = upstream.opacity;
    up.rotation.row(0) = upstream.rotation.transpose();
    up.scale.row(0) = upstream.scale.transpose();
    return backward(cache, up, grad).row(0).transpose();
}

template <typename Scalar>
VecX<Scalar> GaussianDecoder<Scalar>::opacity_logits(const MatX<Scalar>& features) const {
    return net_.forward(features).col(3);
}

template <typename Scalar>
GaussianColorStore<Scalar>::GaussianColorStore(Eigen::Index count, int degree) : degree_(degree) {
    if (degree < 0 || degree > kMaxShDegree) throw ConfigError("color store: SH degree must be 0..3");
    coeffs_ = MatX<Scalar>::Zero(count, 3 * coefficient_count());
}

template <typename Scalar>
void GaussianColorStore<Scalar>::set_base_color(Eigen::Index i, const Vec3<Scalar>& rgb) {
    coeffs_.row(i).setZero();
    coeffs_.row(i).template head<3>() =
        ((rgb.array() - Scalar(0.5)) / Scalar(kShC0)).matrix().transpose();
}

template <typename Scalar>
void GaussianColorStore<Scalar>::compact(const std::vector<Eigen::Index>& keep) {
    coeffs_ = select_rows(coeffs_, keep);
}

template class GaussianDecoder<float>;
template class GaussianDecoder<double>;
template class GaussianColorStore<float>;
template class GaussianColorStore<double>;

} // namespace r3
