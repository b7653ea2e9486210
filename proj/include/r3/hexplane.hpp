// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale hex-plane spatio-temporal encoder. Six orthogonal feature
// planes (xy, xz, yz, xt, yt, zt) are bilinearly sampled, multiplied
// elementwise and concatenated over scales. The three time planes act as the
// temporal codebook that records per-frame appearance.
#pragma once

#include "r3/common.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace r3 {

enum class PlaneAxes : std::uint8_t { XY = 0, XZ, YZ, XT, YT, ZT };
inline constexpr int kPlaneCount = 6;
const char* plane_name(PlaneAxes axes);

/// Dense grid of feature vectors. Node (row, col) lives at data.row(row * width + col),
/// channels contiguous. Columns follow the first axis of the pair, rows the second.
template <typename Scalar> struct FeaturePlane {
    PlaneAxes axes = PlaneAxes::XY;
    int width = 0;
    int height = 0;
    int channels = 0;
    MatX<Scalar> data;

    FeaturePlane() = default;
    FeaturePlane(PlaneAxes a, int w, int h, int c)
        : axes(a), width(w), height(h), channels(c), data(MatX<Scalar>::Zero(w * h, c)) {}

    Eigen::Index node(int row, int col) const { return Eigen::Index(row) * width + col; }
};

struct HexPlaneConfig {
    std::vector<int> resolutions{64, 128, 256}; ///< spatial resolution per scale, ascending
    int time_resolution = 50;
    int channels = 32;
    double init_epsilon = 0.1; ///< planes start uniform in [1 - eps, 1 + eps]
};

template <typename Scalar> class HexPlaneGrad;

template <typename Scalar> class HexPlaneCodebook {
  public:
    using Feature = VecX<Scalar>;
    using Scale = std::array<FeaturePlane<Scalar>, kPlaneCount>;

    HexPlaneCodebook() = default;
    HexPlaneCodebook(const HexPlaneConfig& config, const Bbox<Scalar>& bbox,
                     const TimeRange& time_range, std::uint64_t seed);

    int scale_count() const { return int(scales_.size()); }
    int channels() const { return config_.channels; }
    int feature_dim() const { return scale_count() * channels(); }
    const HexPlaneConfig& config() const { return config_; }
    const Bbox<Scalar>& bbox() const { return bbox_; }
    const TimeRange& time_range() const { return time_range_; }
    void set_bbox(const Bbox<Scalar>& b) { bbox_ = b; }
    void set_time_range(const TimeRange& r) { time_range_ = r; }

    std::vector<Scale>& scales() { return scales_; }
    const std::vector<Scale>& scales() const { return scales_; }
    FeaturePlane<Scalar>& plane(int scale, PlaneAxes a) { return scales_[scale][int(a)]; }
    const FeaturePlane<Scalar>& plane(int scale, PlaneAxes a) const {
        return scales_[scale][int(a)];
    }

    /// Spatio-temporal feature at canonical position x and normalized time t.
    /// Positions outside the bbox and times outside [0, 1] are clamped.
    Feature encode(const Vec3<Scalar>& x, Scalar t) const;

    /// Mean of encode(x, t_before) and encode(x, t_after).
    Feature encode_smoothed(const Vec3<Scalar>& x, Scalar t_before, Scalar t_after) const;

    /// Accumulates d(loss)/d(plane entries) into grad and returns d(loss)/d(x, t)
    /// as a 4-vector (x, y, z, t) given upstream = d(loss)/d(feature).
    Vec4<Scalar> encode_gradient(const Vec3<Scalar>& x, Scalar t, const Feature& upstream,
                                 HexPlaneGrad<Scalar>& grad) const;

    /// Rows of `positions` encoded at per-row normalized times.
    MatX<Scalar> encode_batch(const Points<Scalar>& positions, const VecX<Scalar>& times) const;

    bool operator==(const HexPlaneCodebook& other) const;

  private:
    HexPlaneConfig config_;
    Bbox<Scalar> bbox_;
    TimeRange time_range_;
    std::vector<Scale> scales_;
};

/// Dense gradient mirror of a codebook that remembers which nodes were written.
template <typename Scalar> class HexPlaneGrad {
  public:
    HexPlaneGrad() = default;
    explicit HexPlaneGrad(const HexPlaneCodebook<Scalar>& codebook);

    void add(int scale, int plane, Eigen::Index node, Scalar weight,
             const Eigen::Ref<const VecX<Scalar>>& values);
    /// Zeroes the touched rows only.
    void clear();

    MatX<Scalar>& data(int scale, int plane) { return grads_[scale][plane]; }
    const MatX<Scalar>& data(int scale, int plane) const { return grads_[scale][plane]; }
    const std::vector<Eigen::Index>& touched(int scale, int plane) const {
        return touched_[scale][plane];
    }
    int scale_count() const { return int(grads_.size()); }

  private:
    std::vector<std::array<MatX<Scalar>, kPlaneCount>> grads_;
    std::vector<std::array<std::vector<Eigen::Index>, kPlaneCount>> touched_;
    std::vector<std::array<std::vector<std::uint8_t>, kPlaneCount>> flags_;
};

} // namespace r3
