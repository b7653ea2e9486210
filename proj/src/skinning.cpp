// SPDX-License-Identifier: Apache-2.0
#include "r3/skinning.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <functional>
#include <numeric>

namespace r3 {

const char* part_name(BodyPart part) {
    static constexpr const char* names[] = {"cb", "ll", "la", "rl", "ra"};
    return names[int(part)];
}

std::optional<BodyPart> parse_part(const std::string& label) {
    for (const auto p : kAllBodyParts)
        if (label == part_name(p)) return p;
    return std::nullopt;
}

Skeleton::Skeleton(std::vector<Joint> joints) : joints_(std::move(joints)) {
    const int n = size();
    if (n == 0) throw ConfigError("skeleton: no joints");
    for (int k = 0; k < n; ++k) {
        const int p = joints_[std::size_t(k)].parent;
        if (p == -1) {
            if (root_ != -1) throw ConfigError("skeleton: more than one root");
            root_ = k;
        } else if (p < 0 || p >= n || p == k) {
            throw ConfigError("skeleton: joint " + std::to_string(k) + " has invalid parent");
        }
        if (!joints_[std::size_t(k)].rest_position.allFinite())
            throw ConfigError("skeleton: non-finite rest position");
    }
    if (root_ == -1) throw ConfigError("skeleton: no root joint");
    // Breadth-first from the root; joints never reached sit on a cycle.
    order_.push_back(root_);
    for (std::size_t i = 0; i < order_.size(); ++i)
        for (int c : children(order_[i])) order_.push_back(c);
    if (int(order_.size()) != n) throw ConfigError("skeleton: parent links contain a cycle");
}

std::vector<int> Skeleton::children(int k) const {
    std::vector<int> out;
    for (int j = 0; j < size(); ++j)
        if (joints_[std::size_t(j)].parent == k) out.push_back(j);
    return out;
}

std::vector<int> Skeleton::joints_of(BodyPart part) const {
    std::vector<int> out;
    for (int j = 0; j < size(); ++j)
        if (joints_[std::size_t(j)].part == part) out.push_back(j);
    return out;
}

std::vector<BodyPart> Skeleton::parts_present() const {
    std::vector<BodyPart> out;
    for (const auto p : kAllBodyParts)
        if (!joints_of(p).empty()) out.push_back(p);
    return out;
}

bool Skeleton::operator==(const Skeleton& o) const {
    if (size() != o.size()) return false;
    for (int k = 0; k < size(); ++k) {
        const auto &a = joint(k), &b = o.joint(k);
        if (a.name != b.name || a.parent != b.parent || a.rest_position != b.rest_position ||
            a.part != b.part)
            return false;
    }
    return true;
}

template <typename Scalar>
JointTransforms<Scalar> forward_kinematics(const Skeleton& skel, const Pose& pose) {
    const int k_count = skel.size();
    if (int(pose.thetas.size()) != k_count)
        throw ConfigError("forward_kinematics: pose has " + std::to_string(pose.thetas.size()) +
                          " joints, skeleton has " + std::to_string(k_count));
    std::vector<Eigen::Matrix3d> rot(static_cast<std::size_t>(k_count));
    std::vector<Eigen::Vector3d> pos(static_cast<std::size_t>(k_count));
    for (const int k : skel.topological_order()) {
        const auto& j = skel.joint(k);
        const Eigen::Matrix3d local = axis_angle_to_matrix<double>(pose.thetas[std::size_t(k)]);
        if (j.parent < 0) {
            rot[std::size_t(k)] = local;
            pos[std::size_t(k)] = j.rest_position + pose.root_translation;
        } else {
            const auto p = std::size_t(j.parent);
            rot[std::size_t(k)] = rot[p] * local;
            pos[std::size_t(k)] =
                rot[p] * (j.rest_position - skel.joint(j.parent).rest_position) + pos[p];
        }
    }
    JointTransforms<Scalar> jt;
    for (int k = 0; k < k_count; ++k) {
        const auto i = std::size_t(k);
        Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
        t.topLeftCorner<3, 3>() = rot[i];
        t.topRightCorner<3, 1>() = pos[i] - rot[i] * skel.joint(k).rest_position;
        jt.rotation.push_back(rot[i].cast<Scalar>());
        jt.translation.push_back(pos[i].cast<Scalar>());
        jt.skinning.push_back(t.cast<Scalar>());
    }
    return jt;
}

namespace {

double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                              const Eigen::Vector3d& b) {
    const Eigen::Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (a + t * ab - p).norm();
}

} // namespace

Eigen::MatrixXd bone_distance_weights(
    const Skeleton& skel,
    const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& positions, int nearest) {
    struct Segment {
        Eigen::Vector3d a, b;
        int joint;
    };
    std::vector<Segment> segments;
    for (int k = 0; k < skel.size(); ++k) {
        const auto kids = skel.children(k);
        for (int c : kids) segments.push_back({skel.joint(k).rest_position, skel.joint(c).rest_position, k});
        if (kids.empty()) segments.push_back({skel.joint(k).rest_position, skel.joint(k).rest_position, k});
    }
    const auto n = positions.rows();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, skel.size());
    std::vector<std::pair<double, int>> dist(segments.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector3d p = positions.row(i).transpose();
        for (std::size_t s = 0; s < segments.size(); ++s)
            dist[s] = {point_segment_distance(p, segments[s].a, segments[s].b), int(s)};
        const auto m = std::min<std::size_t>(std::size_t(std::max(nearest, 1)), dist.size());
        std::partial_sort(dist.begin(), dist.begin() + std::ptrdiff_t(m), dist.end());
        double total = 0;
        for (std::size_t s = 0; s < m; ++s) {
            const double v = 1.0 / (dist[s].first * dist[s].first + 1e-4);
            w(i, segments[std::size_t(dist[s].second)].joint) += v;
            total += v;
        }
        w.row(i) /= total;
    }
    return w;
}

template <typename Scalar>
BlendWeightField<Scalar>::BlendWeightField(MatX<Scalar> base_logits,
                                           const BlendFieldConfig& config,
                                           const Bbox<Scalar>& bbox, std::uint64_t seed)
    : base_logits_(std::move(base_logits)),
      refine_(3, config.depth, config.width, int(base_logits_.cols()), seed,
              Scalar(config.output_init_scale)),
      bbox_(bbox) {}

template <typename Scalar>
BlendWeightField<Scalar>::BlendWeightField(MatX<Scalar> base_logits, Mlp<Scalar> refine,
                                           const Bbox<Scalar>& bbox)
    : base_logits_(std::move(base_logits)), refine_(std::move(refine)), bbox_(bbox) {
    if (refine_.in_dim() != 3 || refine_.out_dim() != base_logits_.cols())
        throw ConfigError("blend field: refinement network shape mismatch");
}

template <typename Scalar>
MatX<Scalar> BlendWeightField<Scalar>::initial_logits(const Skeleton& skel,
                                                      const Points<Scalar>& positions) {
    const Eigen::MatrixXd w = bone_distance_weights(skel, positions.template cast<double>());
    return (w.array() + 1e-6).log().matrix().template cast<Scalar>();
}

template <typename Scalar>
MatX<Scalar> BlendWeightField<Scalar>::network_input(const Points<Scalar>& x) const {
    const Vec3<Scalar> c = bbox_.center();
    const Vec3<Scalar> half = Scalar(0.5) * bbox_.extent();
    MatX<Scalar> in(x.rows(), 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        in.row(i) = (x.row(i) - c.transpose()).cwiseQuotient(half.transpose());
    return in;
}

template <typename Scalar>
MatX<Scalar> BlendWeightField<Scalar>::weights_batch(const Points<Scalar>& x, Cache* cache) const {
    if (x.rows() != size()) throw ConfigError("blend field: position count mismatch");
    MatX<Scalar> logits = base_logits_ + refine_.forward(network_input(x), cache ? &cache->mlp : nullptr);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    if (cache) cache->weights = logits;
    return logits;
}

template <typename Scalar>
VecX<Scalar> BlendWeightField<Scalar>::blend_weights(const Vec3<Scalar>& x,
                                                     Eigen::Index gaussian) const {
    if (gaussian < 0 || gaussian >= size()) throw ConfigError("blend field: index out of range");
    Points<Scalar> p(1, 3);
    p.row(0) = x.transpose();
    VecX<Scalar> logits =
        base_logits_.row(gaussian).transpose() + refine_.forward(network_input(p)).row(0).transpose();
    logits.array() -= logits.maxCoeff();
    logits = logits.array().exp().matrix();
    return logits / logits.sum();
}

template <typename Scalar>
void BlendWeightField<Scalar>::backward(const Cache& cache, const MatX<Scalar>& d_weights,
                                        typename Mlp<Scalar>::Grad& refine_grad,
                                        MatX<Scalar>& d_base_logits,
                                        Points<Scalar>& d_positions) const {
    const auto& w = cache.weights;
    MatX<Scalar> d_logits(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const Scalar inner = w.row(i).dot(d_weights.row(i));
        d_logits.row(i) = w.row(i).cwiseProduct(d_weights.row(i).array().matrix() -
                                                 MatX<Scalar>::Constant(1, w.cols(), inner));
    }
    d_base_logits += d_logits;
    const MatX<Scalar> d_in = refine_.backward(cache.mlp, d_logits, refine_grad);
    const Vec3<Scalar> half = Scalar(0.5) * bbox_.extent();
    for (Eigen::Index i = 0; i < d_in.rows(); ++i)
        d_positions.row(i) += d_in.row(i).cwiseQuotient(half.transpose());
}

template <typename Scalar>
void BlendWeightField<Scalar>::compact(const std::vector<Eigen::Index>& keep) {
    base_logits_ = select_rows(base_logits_, keep);
}

template <typename Scalar> std::size_t WarpResult<Scalar>::invalid_count() const {
    return std::size_t(std::count(valid.begin(), valid.end(), std::uint8_t(0)));
}

template <typename Scalar>
WarpResult<Scalar> warp_to_observation(const Points<Scalar>& positions,
                                       const Quats<Scalar>& rotations,
                                       const MatX<Scalar>& weights,
                                       const JointTransforms<Scalar>& jt) {
    const Eigen::Index n = positions.rows();
    if (rotations.rows() != n || weights.rows() != n || weights.cols() != jt.size())
        throw ConfigError("warp: mismatched gaussian or joint counts");
    WarpResult<Scalar> out;
    out.positions.resize(n, 3);
    out.rotations.resize(n, 4);
    out.rotation_matrices.resize(std::size_t(n));
    out.valid.assign(std::size_t(n), 1);
    out.canonical_positions = positions;
    out.canonical_rotations.resize(std::size_t(n));
    out.linear.resize(std::size_t(n));
    out.polar_v.resize(std::size_t(n));
    out.polar_s.resize(std::size_t(n));
    out.weights = weights;

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = std::size_t(i);
        Mat4<Scalar> t = Mat4<Scalar>::Zero();
        for (int k = 0; k < jt.size(); ++k) t += weights(i, k) * jt.skinning[std::size_t(k)];
        const Mat3<Scalar> a = t.template topLeftCorner<3, 3>();
        const Vec3<Scalar> x = positions.row(i).transpose();
        out.positions.row(i) = (a * x + t.template topRightCorner<3, 1>()).transpose();
        const Vec4<Scalar> q = rotations.row(i).transpose();
        const Mat3<Scalar> rc = quat_to_matrix<Scalar>(q.normalized());
        out.canonical_rotations[ui] = rc;
        out.linear[ui] = a;
        if (std::abs(a.determinant()) < Scalar(1e-9)) {
            out.valid[ui] = 0;
            out.rotation_matrices[ui] = rc;
            out.rotations.row(i) = q.normalized().transpose();
            out.polar_v[ui].setIdentity();
            out.polar_s[ui].setOnes();
            continue;
        }
        const Mat3<Scalar> m = a * rc;
        Eigen::JacobiSVD<Mat3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3<Scalar> u = svd.matrixU();
        const Mat3<Scalar> v = svd.matrixV();
        Vec3<Scalar> s = svd.singularValues();
        if ((u * v.transpose()).determinant() < Scalar(0)) {
            u.col(2) = -u.col(2);
            s[2] = -s[2];
        }
        const Mat3<Scalar> r = u * v.transpose();
        out.rotation_matrices[ui] = r;
        out.rotations.row(i) = matrix_to_quat<Scalar>(r).transpose();
        out.polar_v[ui] = v;
        out.polar_s[ui] = s;
    }
    return out;
}

template <typename Scalar>
WarpGradients<Scalar> warp_backward(const WarpResult<Scalar>& warp,
                                    const Quats<Scalar>& canonical_rotations,
                                    const JointTransforms<Scalar>& jt,
                                    const Points<Scalar>& d_positions,
                                    const std::vector<Mat3<Scalar>>& d_rotation_matrices) {
    const Eigen::Index n = warp.size();
    WarpGradients<Scalar> g{Points<Scalar>::Zero(n, 3), Quats<Scalar>::Zero(n, 4),
                            MatX<Scalar>::Zero(n, jt.size())};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = std::size_t(i);
        if (!warp.valid[ui]) continue;
        const Mat3<Scalar>& a = warp.linear[ui];
        const Mat3<Scalar>& rc = warp.canonical_rotations[ui];
        const Mat3<Scalar>& r = warp.rotation_matrices[ui];
        const Vec3<Scalar> x = warp.canonical_positions.row(i).transpose();
        const Vec3<Scalar> gx = d_positions.row(i).transpose();

        // Polar factor: dL/dM = R (C - C^T), C = V [ (V^T R^T G V)_ij / (s_i + s_j) ] V^T.
        const Mat3<Scalar>& v = warp.polar_v[ui];
        const Vec3<Scalar>& s = warp.polar_s[ui];
        Mat3<Scalar> b = v.transpose() * r.transpose() * d_rotation_matrices[ui] * v;
        for (int p = 0; p < 3; ++p)
            for (int q = 0; q < 3; ++q) {
                const Scalar denom = s[p] + s[q];
                b(p, q) = std::abs(denom) > Scalar(1e-12) ? b(p, q) / denom : Scalar(0);
            }
        const Mat3<Scalar> c = v * b * v.transpose();
        const Mat3<Scalar> d_m = r * (c - c.transpose());

        const Mat3<Scalar> d_a = d_m * rc.transpose() + gx * x.transpose();
        const Mat3<Scalar> d_rc = a.transpose() * d_m;
        g.positions.row(i) = (a.transpose() * gx).transpose();

        const Vec4<Scalar> q_raw = canonical_rotations.row(i).transpose();
        const Scalar qn = q_raw.norm();
        const Vec4<Scalar> qu = q_raw / qn;
        const Vec4<Scalar> dqu = quat_to_matrix_backward<Scalar>(qu, d_rc);
        g.rotations.row(i) = ((dqu - qu * qu.dot(dqu)) / qn).transpose();

        for (int k = 0; k < jt.size(); ++k) {
            const auto& tk = jt.skinning[std::size_t(k)];
            g.weights(i, k) = (d_a.cwiseProduct(tk.template topLeftCorner<3, 3>())).sum() +
                              gx.dot(tk.template topRightCorner<3, 1>());
        }
    }
    return g;
}

template <typename Scalar>
std::vector<BodyPart> assign_gaussian_parts(const MatX<Scalar>& weights, const Skeleton& skel) {
    if (weights.cols() != skel.size()) throw ConfigError("assign_gaussian_parts: joint count mismatch");
    std::vector<BodyPart> parts(std::size_t(weights.rows()));
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < weights.cols(); ++k)
            if (weights(i, k) > weights(i, best)) best = k;
        parts[std::size_t(i)] = skel.joint(int(best)).part;
    }
    return parts;
}

#define R3_INSTANTIATE(S)                                                                        \
    template JointTransforms<S> forward_kinematics<S>(const Skeleton&, const Pose&);             \
    template class BlendWeightField<S>;                                                          \
    template struct WarpResult<S>;                                                               \
    template WarpResult<S> warp_to_observation(const Points<S>&, const Quats<S>&,                \
                                               const MatX<S>&, const JointTransforms<S>&);       \
    template WarpGradients<S> warp_backward(const WarpResult<S>&, const Quats<S>&,               \
                                            const JointTransforms<S>&, const Points<S>&,         \
                                            const std::vector<Mat3<S>>&);                        \
    template std::vector<BodyPart> assign_gaussian_parts(const MatX<S>&, const Skeleton&);

R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
