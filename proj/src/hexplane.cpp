// SPDX-License-Identifier: Apache-2.0
#include "r3/hexplane.hpp"

#include <algorithm>
#include <random>

namespace r3 {

const char* plane_name(PlaneAxes axes) {
    static constexpr const char* names[] = {"xy", "xz", "yz", "xt", "yt", "zt"};
    return names[int(axes)];
}

namespace {

// Coordinate indices (into x, y, z, t) of each plane's column and row axis.
constexpr int kColAxis[kPlaneCount] = {0, 0, 1, 0, 1, 2};
constexpr int kRowAxis[kPlaneCount] = {1, 2, 2, 3, 3, 3};

template <typename Scalar> struct AxisSample {
    int lo = 0;       // lower node index
    Scalar frac = 0;  // position inside the cell
    Scalar dcoord = 0; // d(grid coordinate) / d(input coordinate), 0 when clamped
};

template <typename Scalar>
AxisSample<Scalar> sample_axis(Scalar unit, int nodes, Scalar dunit) {
    AxisSample<Scalar> s;
    Scalar u = unit;
    if (u < Scalar(0)) {
        u = Scalar(0);
        dunit = Scalar(0);
    } else if (u > Scalar(1)) {
        u = Scalar(1);
        dunit = Scalar(0);
    }
    const Scalar g = u * Scalar(nodes - 1);
    s.lo = std::min(int(std::floor(g)), nodes - 2);
    s.frac = g - Scalar(s.lo);
    s.dcoord = dunit * Scalar(nodes - 1);
    return s;
}

template <typename Scalar> struct PlaneSample {
    AxisSample<Scalar> col, row;
    Eigen::Index n00, n01, n10, n11; // (row, col) offsets: n01 = (lo_row, lo_col + 1)
    Scalar w00, w01, w10, w11;
};

template <typename Scalar>
PlaneSample<Scalar> sample_plane(const FeaturePlane<Scalar>& p, const Vec4<Scalar>& unit,
                                 const Vec4<Scalar>& dunit, int plane) {
    PlaneSample<Scalar> s;
    s.col = sample_axis(unit[kColAxis[plane]], p.width, dunit[kColAxis[plane]]);
    s.row = sample_axis(unit[kRowAxis[plane]], p.height, dunit[kRowAxis[plane]]);
    s.n00 = p.node(s.row.lo, s.col.lo);
    s.n01 = s.n00 + 1;
    s.n10 = s.n00 + p.width;
    s.n11 = s.n10 + 1;
    const Scalar fc = s.col.frac, fr = s.row.frac;
    s.w00 = (1 - fr) * (1 - fc);
    s.w01 = (1 - fr) * fc;
    s.w10 = fr * (1 - fc);
    s.w11 = fr * fc;
    return s;
}

template <typename Scalar>
void interpolate(const FeaturePlane<Scalar>& p, const PlaneSample<Scalar>& s,
                 VecX<Scalar>& out) {
    out = s.w00 * p.data.row(s.n00).transpose() + s.w01 * p.data.row(s.n01).transpose() +
          s.w10 * p.data.row(s.n10).transpose() + s.w11 * p.data.row(s.n11).transpose();
}

template <typename Scalar>
void check_query(const Vec3<Scalar>& x, Scalar t) {
    if (!x.allFinite() || !std::isfinite(t))
        throw DomainError("hexplane: non-finite query coordinate");
}

template <typename Scalar>
std::pair<Vec4<Scalar>, Vec4<Scalar>> unit_coords(const Bbox<Scalar>& bbox, const Vec3<Scalar>& x,
                                                  Scalar t) {
    Vec4<Scalar> unit, dunit;
    const Vec3<Scalar> ext = bbox.extent();
    for (int a = 0; a < 3; ++a) {
        unit[a] = (x[a] - bbox.lo[a]) / ext[a];
        dunit[a] = Scalar(1) / ext[a];
    }
    unit[3] = t;
    dunit[3] = Scalar(1);
    return {unit, dunit};
}

} // namespace

template <typename Scalar>
HexPlaneCodebook<Scalar>::HexPlaneCodebook(const HexPlaneConfig& config, const Bbox<Scalar>& bbox,
                                           const TimeRange& time_range, std::uint64_t seed)
    : config_(config), bbox_(bbox), time_range_(time_range) {
    if (config.resolutions.empty() || config.channels < 1 || config.time_resolution < 2)
        throw ConfigError("hexplane: need >= 1 scale, >= 1 channel and >= 2 time cells");
    if (!std::is_sorted(config.resolutions.begin(), config.resolutions.end()))
        throw ConfigError("hexplane: scale resolutions must be ascending");
    if ((bbox.extent().array() <= Scalar(0)).any())
        throw ConfigError("hexplane: degenerate bbox");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> init(1.0 - config.init_epsilon,
                                                1.0 + config.init_epsilon);
    for (const int res : config.resolutions) {
        if (res < 2) throw ConfigError("hexplane: resolution must be >= 2");
        Scale scale;
        for (int p = 0; p < kPlaneCount; ++p) {
            const bool temporal = kRowAxis[p] == 3;
            const int height = temporal ? config.time_resolution : res;
            scale[p] = FeaturePlane<Scalar>(PlaneAxes(p), res, height, config.channels);
            auto& d = scale[p].data;
            for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = Scalar(init(rng));
        }
        scales_.push_back(std::move(scale));
    }
}

template <typename Scalar>
typename HexPlaneCodebook<Scalar>::Feature
HexPlaneCodebook<Scalar>::encode(const Vec3<Scalar>& x, Scalar t) const {
    check_query(x, t);
    const auto [unit, dunit] = unit_coords(bbox_, x, t);
    const int c = channels();
    Feature f(feature_dim());
    VecX<Scalar> v(c);
    for (int s = 0; s < scale_count(); ++s) {
        auto block = f.segment(s * c, c);
        block.setOnes();
        for (int p = 0; p < kPlaneCount; ++p) {
            const auto& pl = scales_[s][p];
            interpolate(pl, sample_plane(pl, unit, dunit, p), v);
            block.array() *= v.array();
        }
    }
    return f;
}

template <typename Scalar>
typename HexPlaneCodebook<Scalar>::Feature
HexPlaneCodebook<Scalar>::encode_smoothed(const Vec3<Scalar>& x, Scalar t_before,
                                          Scalar t_after) const {
    if (t_before == t_after) return encode(x, t_before);
    return Scalar(0.5) * (encode(x, t_before) + encode(x, t_after));
}

template <typename Scalar>
MatX<Scalar> HexPlaneCodebook<Scalar>::encode_batch(const Points<Scalar>& positions,
                                                    const VecX<Scalar>& times) const {
    if (positions.rows() != times.size()) throw ConfigError("hexplane: batch size mismatch");
    MatX<Scalar> out(positions.rows(), feature_dim());
    for (Eigen::Index i = 0; i < positions.rows(); ++i)
        out.row(i) = encode(positions.row(i).transpose(), times[i]).transpose();
    return out;
}

template <typename Scalar>
Vec4<Scalar> HexPlaneCodebook<Scalar>::encode_gradient(const Vec3<Scalar>& x, Scalar t,
                                                       const Feature& upstream,
                                                       HexPlaneGrad<Scalar>& grad) const {
    check_query(x, t);
    if (upstream.size() != feature_dim()) throw ConfigError("hexplane: upstream size mismatch");
    const auto [unit, dunit] = unit_coords(bbox_, x, t);
    const int c = channels();
    Vec4<Scalar> dcoords = Vec4<Scalar>::Zero();

    std::array<PlaneSample<Scalar>, kPlaneCount> samples;
    MatX<Scalar> values(kPlaneCount, c);
    MatX<Scalar> prefix(kPlaneCount + 1, c), suffix(kPlaneCount + 1, c);
    VecX<Scalar> others(c), dv(c);

    for (int s = 0; s < scale_count(); ++s) {
        const auto up = upstream.segment(s * c, c);
        if (up.isZero(0)) continue;
        for (int p = 0; p < kPlaneCount; ++p) {
            samples[p] = sample_plane(scales_[s][p], unit, dunit, p);
            VecX<Scalar> v(c);
            interpolate(scales_[s][p], samples[p], v);
            values.row(p) = v.transpose();
        }
        // Products excluding one plane, without division.
        prefix.row(0).setOnes();
        for (int p = 0; p < kPlaneCount; ++p)
            prefix.row(p + 1) = prefix.row(p).cwiseProduct(values.row(p));
        suffix.row(kPlaneCount).setOnes();
        for (int p = kPlaneCount - 1; p >= 0; --p)
            suffix.row(p) = suffix.row(p + 1).cwiseProduct(values.row(p));

        for (int p = 0; p < kPlaneCount; ++p) {
            const auto& pl = scales_[s][p];
            const auto& sm = samples[p];
            others = (prefix.row(p).cwiseProduct(suffix.row(p + 1))).transpose().cwiseProduct(up);
            grad.add(s, p, sm.n00, sm.w00, others);
            grad.add(s, p, sm.n01, sm.w01, others);
            grad.add(s, p, sm.n10, sm.w10, others);
            grad.add(s, p, sm.n11, sm.w11, others);

            const auto r00 = pl.data.row(sm.n00), r01 = pl.data.row(sm.n01);
            const auto r10 = pl.data.row(sm.n10), r11 = pl.data.row(sm.n11);
            const Scalar fc = sm.col.frac, fr = sm.row.frac;
            if (sm.col.dcoord != Scalar(0)) {
                dv = ((1 - fr) * (r01 - r00) + fr * (r11 - r10)).transpose();
                dcoords[kColAxis[p]] += sm.col.dcoord * others.dot(dv);
            }
            if (sm.row.dcoord != Scalar(0)) {
                dv = ((1 - fc) * (r10 - r00) + fc * (r11 - r01)).transpose();
                dcoords[kRowAxis[p]] += sm.row.dcoord * others.dot(dv);
            }
        }
    }
    return dcoords;
}

template <typename Scalar>
bool HexPlaneCodebook<Scalar>::operator==(const HexPlaneCodebook& o) const {
    if (scales_.size() != o.scales_.size() || config_.channels != o.config_.channels ||
        config_.time_resolution != o.config_.time_resolution || bbox_.lo != o.bbox_.lo ||
        bbox_.hi != o.bbox_.hi || time_range_.first != o.time_range_.first ||
        time_range_.last != o.time_range_.last)
        return false;
    for (std::size_t s = 0; s < scales_.size(); ++s)
        for (int p = 0; p < kPlaneCount; ++p)
            if (scales_[s][p].data != o.scales_[s][p].data) return false;
    return true;
}

template <typename Scalar>
HexPlaneGrad<Scalar>::HexPlaneGrad(const HexPlaneCodebook<Scalar>& codebook) {
    const auto n = std::size_t(codebook.scale_count());
    grads_.resize(n);
    touched_.resize(n);
    flags_.resize(n);
    for (std::size_t s = 0; s < n; ++s)
        for (int p = 0; p < kPlaneCount; ++p) {
            const auto& d = codebook.scales()[s][p].data;
            grads_[s][p] = MatX<Scalar>::Zero(d.rows(), d.cols());
            flags_[s][p].assign(std::size_t(d.rows()), 0);
        }
}

template <typename Scalar>
void HexPlaneGrad<Scalar>::add(int scale, int plane, Eigen::Index node, Scalar weight,
                               const Eigen::Ref<const VecX<Scalar>>& values) {
    auto& flag = flags_[scale][plane][std::size_t(node)];
    if (!flag) {
        flag = 1;
        touched_[scale][plane].push_back(node);
    }
    grads_[scale][plane].row(node) += weight * values.transpose();
}

template <typename Scalar> void HexPlaneGrad<Scalar>::clear() {
    for (std::size_t s = 0; s < grads_.size(); ++s)
        for (int p = 0; p < kPlaneCount; ++p) {
            for (const auto node : touched_[s][p]) {
                grads_[s][p].row(node).setZero();
                flags_[s][p][std::size_t(node)] = 0;
            }
            touched_[s][p].clear();
        }
}

template class HexPlaneCodebook<float>;
template class HexPlaneCodebook<double>;
template class HexPlaneGrad<float>;
template class HexPlaneGrad<double>;

} // namespace r3
