// SPDX-License-Identifier: Apache-2.0
#include "r3/rasterizer.hpp"

#include "r3/sh.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cassert>
#include <numeric>

namespace r3 {

template <typename Scalar> void Camera<Scalar>::validate() const {
    if (!(fx > 0 && fy > 0)) throw ConfigError("camera: focal lengths must be positive");
    if (!(near_plane < far_plane)) throw ConfigError("camera: near must be < far");
    if (width < 1 || height < 1) throw ConfigError("camera: empty image");
}

template <typename Scalar>
Camera<Scalar> Camera<Scalar>::look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target,
                                       const Vec3<Scalar>& up, Scalar focal, int width,
                                       int height) {
    const Vec3<Scalar> forward = (target - eye).normalized();
    const Vec3<Scalar> right = forward.cross(up).normalized();
    const Vec3<Scalar> down = forward.cross(right);
    Camera c;
    c.rotation.row(0) = right.transpose();
    c.rotation.row(1) = down.transpose();
    c.rotation.row(2) = forward.transpose();
    c.translation = -c.rotation * eye;
    c.fx = c.fy = focal;
    c.cx = Scalar(width) / 2;
    c.cy = Scalar(height) / 2;
    c.width = width;
    c.height = height;
    return c;
}

template <typename Scalar> void PosedGaussianSet<Scalar>::validate() const {
    const auto n = size();
    if (rotations.rows() != n || scales.rows() != n || opacities.size() != n || sh.rows() != n)
        throw ConfigError("posed set: per-gaussian arrays disagree in length");
    if (sh.cols() != 3 * (sh_degree + 1) * (sh_degree + 1))
        throw ConfigError("posed set: SH block does not match degree");
}

template <typename Scalar>
Mat3<Scalar> covariance_3d(const Vec4<Scalar>& rotation, const Vec3<Scalar>& scale) {
    const Mat3<Scalar> r = quat_to_matrix<Scalar>(rotation.normalized());
    const Vec3<Scalar> s2 = scale.cwiseProduct(scale);
    return r * s2.asDiagonal() * r.transpose();
}

namespace {

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 3> projection_jacobian(const Vec3<Scalar>& p, const Camera<Scalar>& cam) {
    const Scalar z = p.z(), z2 = z * z;
    Eigen::Matrix<Scalar, 2, 3> j;
    j << cam.fx / z, 0, -cam.fx * p.x() / z2, 0, cam.fy / z, -cam.fy * p.y() / z2;
    return j;
}

} // namespace

template <typename Scalar>
std::optional<ProjectedGaussian<Scalar>> project_gaussian(const Vec3<Scalar>& position,
                                                          const Mat3<Scalar>& covariance,
                                                          const Camera<Scalar>& cam) {
    const Vec3<Scalar> p = cam.rotation * position + cam.translation;
    if (p.z() < cam.near_plane || p.z() > cam.far_plane) return std::nullopt;
    ProjectedGaussian<Scalar> out;
    out.mean = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
    const auto j = projection_jacobian(p, cam);
    out.covariance = j * cam.rotation * covariance * cam.rotation.transpose() * j.transpose();
    out.covariance.diagonal().array() += Scalar(kLowPassFloor);
    out.depth = p.z();
    return out;
}

namespace {

template <typename Scalar>
void prepare(const PosedGaussianSet<Scalar>& set, const Camera<Scalar>& cam,
             const RenderSettings& settings, RenderCache<Scalar>& cache) {
    set.validate();
    cam.validate();
    const auto n = set.size();
    const Vec3<Scalar> eye = cam.center();
    cache.splats.assign(std::size_t(n), {});
    cache.order.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& sp = cache.splats[std::size_t(i)];
        const Vec3<Scalar> x = set.positions.row(i).transpose();
        const Vec4<Scalar> q = set.rotations.row(i).transpose();
        sp.rotation = quat_to_matrix<Scalar>(q.normalized());
        const Vec3<Scalar> s = set.scales.row(i).transpose();
        sp.cov3d = sp.rotation * s.cwiseProduct(s).asDiagonal() * sp.rotation.transpose();
        const auto proj = project_gaussian(x, sp.cov3d, cam);
        if (!proj) continue;
        sp.visible = true;
        sp.p_cam = cam.rotation * x + cam.translation;
        sp.mean = proj->mean;
        sp.cov2d = proj->covariance;
        sp.depth = proj->depth;
        const Scalar det = sp.cov2d.determinant();
        assert(det > 0);
        sp.conic << sp.cov2d(1, 1) / det, -sp.cov2d(0, 1) / det, -sp.cov2d(1, 0) / det,
            sp.cov2d(0, 0) / det;
        sp.extent = {Scalar(kFootprintSigmas) * std::sqrt(sp.cov2d(0, 0)),
                     Scalar(kFootprintSigmas) * std::sqrt(sp.cov2d(1, 1))};
        sp.color = sh_to_color<Scalar>(set.sh_degree, set.sh.row(i).transpose(), (x - eye).normalized());
        cache.order.push_back(int(i));
    }
    std::stable_sort(cache.order.begin(), cache.order.end(), [&](int a, int b) {
        return cache.splats[std::size_t(a)].depth < cache.splats[std::size_t(b)].depth;
    });

    const int ts = settings.tile_size > 0 ? settings.tile_size : std::max(cam.width, cam.height);
    cache.tile_size = ts;
    cache.tiles_x = (cam.width + ts - 1) / ts;
    cache.tiles_y = (cam.height + ts - 1) / ts;
    cache.tiles.assign(std::size_t(cache.tiles_x * cache.tiles_y), {});
    for (const int g : cache.order) {
        const auto& sp = cache.splats[std::size_t(g)];
        // Pixel centers px + 0.5 inside [mean - extent, mean + extent].
        const Scalar x0 = sp.mean.x() - sp.extent.x() - Scalar(0.5);
        const Scalar x1 = sp.mean.x() + sp.extent.x() - Scalar(0.5);
        const Scalar y0 = sp.mean.y() - sp.extent.y() - Scalar(0.5);
        const Scalar y1 = sp.mean.y() + sp.extent.y() - Scalar(0.5);
        const int px0 = std::max(0, int(std::ceil(x0)));
        const int px1 = std::min(cam.width - 1, int(std::floor(x1)));
        const int py0 = std::max(0, int(std::ceil(y0)));
        const int py1 = std::min(cam.height - 1, int(std::floor(y1)));
        if (px0 > px1 || py0 > py1) continue;
        for (int ty = py0 / ts; ty <= py1 / ts; ++ty)
            for (int tx = px0 / ts; tx <= px1 / ts; ++tx)
                cache.tiles[std::size_t(ty * cache.tiles_x + tx)].push_back(g);
    }
}

// Walks the depth-ordered list of one pixel, calling visit(g, alpha, gauss, T_before)
// for every blended gaussian. Returns the final transmittance.
template <typename Scalar, typename Visit>
Scalar blend_pixel(const RenderCache<Scalar>& cache, const std::vector<int>& list,
                   const VecX<Scalar>& opacities, Scalar px, Scalar py, Visit&& visit) {
    Scalar t = 1;
    for (const int g : list) {
        const auto& sp = cache.splats[std::size_t(g)];
        const Scalar dx = px - sp.mean.x(), dy = py - sp.mean.y();
        if (std::abs(dx) > sp.extent.x() || std::abs(dy) > sp.extent.y()) continue;
        const Scalar power =
            Scalar(-0.5) * (sp.conic(0, 0) * dx * dx + Scalar(2) * sp.conic(0, 1) * dx * dy +
                            sp.conic(1, 1) * dy * dy);
        const Scalar gauss = std::exp(power);
        const Scalar alpha = opacities[g] * gauss;
        if (alpha < Scalar(kMinAlpha)) continue;
        visit(g, alpha, gauss, t, dx, dy);
        t *= Scalar(1) - alpha;
        if (t < Scalar(kMinTransmittance)) break;
    }
    return t;
}

} // namespace

template <typename Scalar>
RenderedImage<Scalar> render(const PosedGaussianSet<Scalar>& set, const Camera<Scalar>& cam,
                             const RenderSettings& settings, RenderCache<Scalar>* cache) {
    RenderCache<Scalar> local;
    RenderCache<Scalar>& c = cache ? *cache : local;
    prepare(set, cam, settings, c);

    RenderedImage<Scalar> img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgb = MatX<Scalar>::Zero(img.pixel_count(), 3);
    img.transmittance = VecX<Scalar>::Ones(img.pixel_count());
    img.contributors.assign(std::size_t(img.pixel_count()), 0);
    const Vec3<Scalar> bg = settings.background.cast<Scalar>();

    for (int ty = 0; ty < c.tiles_y; ++ty)
        for (int tx = 0; tx < c.tiles_x; ++tx) {
            const auto& list = c.tiles[std::size_t(ty * c.tiles_x + tx)];
            const int y_end = std::min(cam.height, (ty + 1) * c.tile_size);
            const int x_end = std::min(cam.width, (tx + 1) * c.tile_size);
            for (int y = ty * c.tile_size; y < y_end; ++y)
                for (int x = tx * c.tile_size; x < x_end; ++x) {
                    Vec3<Scalar> color = Vec3<Scalar>::Zero();
                    int count = 0;
                    const Scalar t = blend_pixel(
                        c, list, set.opacities, Scalar(x) + Scalar(0.5), Scalar(y) + Scalar(0.5),
                        [&](int g, Scalar alpha, Scalar, Scalar t_before, Scalar, Scalar) {
                            color += c.splats[std::size_t(g)].color * (alpha * t_before);
                            ++count;
                        });
                    const auto idx = img.index(x, y);
                    img.rgb.row(idx) = (color + t * bg).transpose();
                    img.transmittance[idx] = t;
                    img.contributors[std::size_t(idx)] = count;
                }
        }
    return img;
}

template <typename Scalar>
RenderGradients<Scalar> render_backward(const PosedGaussianSet<Scalar>& set,
                                        const Camera<Scalar>& cam, const RenderSettings& settings,
                                        const RenderCache<Scalar>& c,
                                        const MatX<Scalar>& upstream) {
    const auto n = set.size();
    if (upstream.rows() != Eigen::Index(cam.width) * cam.height || upstream.cols() != 3)
        throw ConfigError("render_backward: upstream does not match the image");
    RenderGradients<Scalar> g;
    g.positions = Points<Scalar>::Zero(n, 3);
    g.rotations = Quats<Scalar>::Zero(n, 4);
    g.rotation_matrices.assign(std::size_t(n), Mat3<Scalar>::Zero());
    g.scales = Points<Scalar>::Zero(n, 3);
    g.opacities = VecX<Scalar>::Zero(n);
    g.sh = MatX<Scalar>::Zero(n, set.sh.cols());

    std::vector<Vec2<Scalar>> d_mean(std::size_t(n), Vec2<Scalar>::Zero());
    std::vector<Mat2<Scalar>> d_conic(std::size_t(n), Mat2<Scalar>::Zero());
    std::vector<Vec3<Scalar>> d_color(std::size_t(n), Vec3<Scalar>::Zero());
    const Vec3<Scalar> bg = settings.background.cast<Scalar>();

    struct Step {
        int g;
        Scalar alpha, gauss, t_before, dx, dy;
    };
    std::vector<Step> steps;

    for (int ty = 0; ty < c.tiles_y; ++ty)
        for (int tx = 0; tx < c.tiles_x; ++tx) {
            const auto& list = c.tiles[std::size_t(ty * c.tiles_x + tx)];
            if (list.empty()) continue;
            const int y_end = std::min(cam.height, (ty + 1) * c.tile_size);
            const int x_end = std::min(cam.width, (tx + 1) * c.tile_size);
            for (int y = ty * c.tile_size; y < y_end; ++y)
                for (int x = tx * c.tile_size; x < x_end; ++x) {
                    const Vec3<Scalar> up =
                        upstream.row(Eigen::Index(y) * cam.width + x).transpose();
                    if (up.isZero(0)) continue;
                    steps.clear();
                    blend_pixel(c, list, set.opacities, Scalar(x) + Scalar(0.5),
                                Scalar(y) + Scalar(0.5),
                                [&](int gi, Scalar alpha, Scalar gauss, Scalar t_before, Scalar dx,
                                    Scalar dy) {
                                    steps.push_back({gi, alpha, gauss, t_before, dx, dy});
                                });
                    // rest = color of everything behind the current step, per unit transmittance.
                    Vec3<Scalar> rest = bg;
                    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
                        const auto gi = std::size_t(it->g);
                        const auto& sp = c.splats[gi];
                        d_color[gi] += up * (it->alpha * it->t_before);
                        const Scalar d_alpha = it->t_before * up.dot(sp.color - rest);
                        rest = it->alpha * sp.color + (Scalar(1) - it->alpha) * rest;
                        g.opacities[it->g] += d_alpha * it->gauss;
                        const Scalar d_power = d_alpha * set.opacities[it->g] * it->gauss;
                        // power = -1/2 d^T conic d, d = pixel - mean
                        const Scalar dx = it->dx, dy = it->dy;
                        d_mean[gi].x() += d_power * (sp.conic(0, 0) * dx + sp.conic(0, 1) * dy);
                        d_mean[gi].y() += d_power * (sp.conic(0, 1) * dx + sp.conic(1, 1) * dy);
                        Mat2<Scalar> outer;
                        outer << dx * dx, dx * dy, dx * dy, dy * dy;
                        d_conic[gi] += Scalar(-0.5) * d_power * outer;
                    }
                }
        }

    const Vec3<Scalar> eye = cam.center();
    const Mat3<Scalar>& w = cam.rotation;
    for (const int gi : c.order) {
        const auto ui = std::size_t(gi);
        const auto& sp = c.splats[ui];
        const Vec3<Scalar> x = set.positions.row(gi).transpose();

        auto d_sh = g.sh.row(gi).transpose();
        VecX<Scalar> d_sh_row = VecX<Scalar>::Zero(set.sh.cols());
        const Vec3<Scalar> d_view = sh_to_color_backward<Scalar>(
            set.sh_degree, set.sh.row(gi).transpose(), x - eye, d_color[ui], d_sh_row);
        d_sh = d_sh_row;
        Vec3<Scalar> d_x = d_view;

        // conic = cov2d^-1
        const Mat2<Scalar> d_cov2d = -sp.conic.transpose() * d_conic[ui] * sp.conic.transpose();
        const auto j = projection_jacobian(sp.p_cam, cam);
        const Mat3<Scalar> m = w * sp.cov3d * w.transpose();
        const Mat3<Scalar> d_m = j.transpose() * d_cov2d * j;
        const Eigen::Matrix<Scalar, 2, 3> d_j =
            d_cov2d * j * m.transpose() + d_cov2d.transpose() * j * m;
        const Mat3<Scalar> d_cov3d = w.transpose() * d_m * w;

        const Scalar px = sp.p_cam.x(), py = sp.p_cam.y(), pz = sp.p_cam.z();
        const Scalar z2 = pz * pz, z3 = z2 * pz;
        Vec3<Scalar> d_p;
        d_p.x() = d_j(0, 2) * (-cam.fx / z2) + d_mean[ui].x() * cam.fx / pz;
        d_p.y() = d_j(1, 2) * (-cam.fy / z2) + d_mean[ui].y() * cam.fy / pz;
        d_p.z() = d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2 * cam.fx * px / z3) +
                  d_j(1, 1) * (-cam.fy / z2) + d_j(1, 2) * (2 * cam.fy * py / z3) -
                  d_mean[ui].x() * cam.fx * px / z2 - d_mean[ui].y() * cam.fy * py / z2;
        d_x += w.transpose() * d_p;
        g.positions.row(gi) = d_x.transpose();

        // cov3d = R diag(s^2) R^T
        const Vec3<Scalar> s = set.scales.row(gi).transpose();
        const Vec3<Scalar> s2 = s.cwiseProduct(s);
        const Mat3<Scalar>& r = sp.rotation;
        const Mat3<Scalar> d_r =
            (d_cov3d + d_cov3d.transpose()) * r * s2.asDiagonal();
        const Mat3<Scalar> inner = r.transpose() * d_cov3d * r;
        for (int a = 0; a < 3; ++a) g.scales(gi, a) = Scalar(2) * s[a] * inner(a, a);
        g.rotation_matrices[ui] = d_r;
        const Vec4<Scalar> q = set.rotations.row(gi).transpose();
        const Scalar qn = q.norm();
        const Vec4<Scalar> qu = q / qn;
        const Vec4<Scalar> dqu = quat_to_matrix_backward<Scalar>(qu, d_r);
        g.rotations.row(gi) = ((dqu - qu * qu.dot(dqu)) / qn).transpose();
    }
    return g;
}

template <typename Scalar>
RenderGradients<Scalar> render_backward(const PosedGaussianSet<Scalar>& set,
                                        const Camera<Scalar>& cam, const RenderSettings& settings,
                                        const MatX<Scalar>& upstream) {
    RenderCache<Scalar> cache;
    render(set, cam, settings, &cache);
    return render_backward(set, cam, settings, cache, upstream);
}

#define R3_INSTANTIATE(S)                                                                         \
    template struct Camera<S>;                                                                    \
    template struct PosedGaussianSet<S>;                                                          \
    template Mat3<S> covariance_3d(const Vec4<S>&, const Vec3<S>&);                               \
    template std::optional<ProjectedGaussian<S>> project_gaussian(const Vec3<S>&, const Mat3<S>&, \
                                                                  const Camera<S>&);              \
    template RenderedImage<S> render(const PosedGaussianSet<S>&, const Camera<S>&,                \
                                     const RenderSettings&, RenderCache<S>*);                     \
    template RenderGradients<S> render_backward(const PosedGaussianSet<S>&, const Camera<S>&,     \
                                                const RenderSettings&, const RenderCache<S>&,     \
                                                const MatX<S>&);                                  \
    template RenderGradients<S> render_backward(const PosedGaussianSet<S>&, const Camera<S>&,     \
                                                const RenderSettings&, const MatX<S>&);
R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
