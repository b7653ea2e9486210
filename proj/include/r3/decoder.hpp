// SPDX-License-Identifier: Apache-2.0
//
// Gaussian decoder: maps a spatio-temporal feature to the canonical attributes
// of one gaussian for the queried frame (offset, opacity, rotation, scale).
// Colors are not decoded; they live in a per-gaussian SH store.
#pragma once

#include "r3/common.hpp"
#include "r3/mlp.hpp"

#include <cstdint>
#include <vector>

namespace r3 {

inline constexpr int kDecoderOutputs = 11; // 3 offset + 1 opacity + 4 rotation + 3 scale

struct DecoderConfig {
    int depth = 2;
    int width = 256;
    double max_offset = 0.1;      ///< offset = max_offset * tanh(raw)
    double init_opacity = 0.5;    ///< opacity head bias at construction
    double init_scale = 1.0;      ///< scale head bias = log(init_scale)
    double output_init_scale = 0; ///< output-layer weight range, zero gives a constant decoder
};

template <typename Scalar> struct DecodedGaussianDelta {
    Vec3<Scalar> delta_x = Vec3<Scalar>::Zero();
    Scalar opacity = Scalar(0.5);
    Vec4<Scalar> rotation = Vec4<Scalar>(1, 0, 0, 0);
    Vec3<Scalar> scale = Vec3<Scalar>::Ones();
};

/// Struct-of-arrays form of a batch of decoded attributes.
template <typename Scalar> struct DecodedBatch {
    Points<Scalar> delta_x;
    VecX<Scalar> opacity;
    Quats<Scalar> rotation;
    Points<Scalar> scale;

    Eigen::Index size() const { return opacity.size(); }
    DecodedGaussianDelta<Scalar> at(Eigen::Index i) const {
        return {delta_x.row(i).transpose(), opacity[i], rotation.row(i).transpose(),
                scale.row(i).transpose()};
    }
};

/// Upstream gradients w.r.t. the four squashed heads, one row per gaussian.
template <typename Scalar> struct HeadGradients {
    Points<Scalar> delta_x;
    VecX<Scalar> opacity;
    Quats<Scalar> rotation;
    Points<Scalar> scale;

    static HeadGradients zeros(Eigen::Index n) {
        return {Points<Scalar>::Zero(n, 3), VecX<Scalar>::Zero(n), Quats<Scalar>::Zero(n, 4),
                Points<Scalar>::Zero(n, 3)};
    }
};

template <typename Scalar> class GaussianDecoder {
  public:
    struct Cache {
        typename Mlp<Scalar>::Cache mlp;
        MatX<Scalar> raw;
        VecX<Scalar> opacity_bias;
    };

    GaussianDecoder() = default;
    GaussianDecoder(int in_dim, const DecoderConfig& config, Scalar max_scale, std::uint64_t seed);
    /// Wraps an existing network, e.g. one loaded from an archive.
    GaussianDecoder(Mlp<Scalar> net, Scalar max_offset, Scalar max_scale);

    int in_dim() const { return net_.in_dim(); }
    Scalar max_offset() const { return max_offset_; }
    Scalar max_scale() const { return max_scale_; }
    Mlp<Scalar>& net() { return net_; }
    const Mlp<Scalar>& net() const { return net_; }

    DecodedGaussianDelta<Scalar> decode(const VecX<Scalar>& feature) const;
    std::vector<DecodedGaussianDelta<Scalar>>
    decode_batch(const std::vector<VecX<Scalar>>& features) const;

    /// Batched decode of feature rows. `opacity_bias` (per row, optional) is added to
    /// the raw opacity logit.
    DecodedBatch<Scalar> decode_matrix(const MatX<Scalar>& features,
                                       const VecX<Scalar>* opacity_bias = nullptr,
                                       Cache* cache = nullptr) const;

    /// Reverse pass of decode_matrix. Accumulates into grad and, when given, into
    /// d_opacity_bias; returns d(loss)/d(features).
    MatX<Scalar> backward(const Cache& cache, const HeadGradients<Scalar>& upstream,
                          typename Mlp<Scalar>::Grad& grad,
                          VecX<Scalar>* d_opacity_bias = nullptr) const;

    /// Single-feature convenience: returns d(loss)/d(feature).
    VecX<Scalar> decoder_gradient(const VecX<Scalar>& feature,
                                  const DecodedGaussianDelta<Scalar>& upstream,
                                  typename Mlp<Scalar>::Grad& grad) const;

    /// Raw opacity logit (before squashing) for each feature row.
    VecX<Scalar> opacity_logits(const MatX<Scalar>& features) const;

    bool operator==(const GaussianDecoder& o) const {
        return net_ == o.net_ && max_offset_ == o.max_offset_ && max_scale_ == o.max_scale_;
    }

  private:
    Mlp<Scalar> net_;
    Scalar max_offset_ = Scalar(0.1);
    Scalar max_scale_ = Scalar(1);
};

/// Per-gaussian spherical-harmonics color coefficients. Row i holds
/// (degree + 1)^2 RGB triples, coefficient-major.
template <typename Scalar> class GaussianColorStore {
  public:
    GaussianColorStore() = default;
    GaussianColorStore(Eigen::Index count, int degree);

    int degree() const { return degree_; }
    int coefficient_count() const { return (degree_ + 1) * (degree_ + 1); }
    Eigen::Index size() const { return coeffs_.rows(); }
    MatX<Scalar>& coeffs() { return coeffs_; }
    const MatX<Scalar>& coeffs() const { return coeffs_; }

    /// Sets the DC term so that the rendered color is `rgb` for every view direction.
    void set_base_color(Eigen::Index i, const Vec3<Scalar>& rgb);
    /// Keeps rows whose index appears in `keep` (ascending).
    void compact(const std::vector<Eigen::Index>& keep);

    bool operator==(const GaussianColorStore& o) const {
        return degree_ == o.degree_ && coeffs_ == o.coeffs_;
    }

  private:
    int degree_ = 0;
    MatX<Scalar> coeffs_;
};

} // namespace r3
