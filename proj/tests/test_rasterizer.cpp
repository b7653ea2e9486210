#include "support.hpp"

#include "r3/decoder.hpp"
#include "r3/sh.hpp"

#include <Eigen/Eigenvalues>

#include <numeric>

#include <doctest.h>

using namespace r3;
using r3::test::uniform;

namespace {

// Scene for gradient checks: footprints much larger than the 8x8 image, moderate
// opacities and well separated depths, so no cutoff or ordering changes under small
// perturbations.
PosedGaussianSet<double> smooth_scene(std::mt19937_64& rng, int count, int degree) {
    PosedGaussianSet<double> s;
    s.positions.resize(count, 3);
    s.rotations.resize(count, 4);
    s.scales.resize(count, 3);
    s.opacities.resize(count);
    const int coeffs = (degree + 1) * (degree + 1);
    s.sh = MatX<double>::Zero(count, 3 * coeffs);
    s.sh_degree = degree;
    for (int i = 0; i < count; ++i) {
        s.positions.row(i) = Eigen::RowVector3d(uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4), 2.5 + 0.3 * i);
        s.rotations.row(i) = test::random_quat(rng).transpose();
        for (int a = 0; a < 3; ++a) s.scales(i, a) = uniform(rng, 2.2, 3.0);
        s.opacities[i] = uniform(rng, 0.2, 0.6);
        for (int c = 0; c < 3; ++c) s.sh(i, c) = uniform(rng, -1, 1);
        for (int c = 3; c < 3 * coeffs; ++c) s.sh(i, c) = uniform(rng, -0.1, 0.1);
    }
    s.parts.assign(std::size_t(count), BodyPart::CenterBody);
    return s;
}

PosedGaussianSet<double> take_front(const PosedGaussianSet<double>& s, const std::vector<int>& idx) {
    PosedGaussianSet<double> o;
    o.positions = select_rows(s.positions, idx);
    o.rotations = select_rows(s.rotations, idx);
    o.scales = select_rows(s.scales, idx);
    o.opacities.resize(Eigen::Index(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) o.opacities[Eigen::Index(i)] = s.opacities[idx[i]];
    o.sh = select_rows(s.sh, idx);
    o.sh_degree = s.sh_degree;
    o.parts.assign(idx.size(), BodyPart::CenterBody);
    return o;
}

} // namespace

TEST_SUITE("rasterizer") {

TEST_CASE("3d covariance") {
    CHECK((covariance_3d<double>(Vec4<double>(1, 0, 0, 0), Vec3<double>::Ones()) - Mat3<double>::Identity()).norm() ==
          0.0);
    CHECK((covariance_3d<double>(Vec4<double>(1, 0, 0, 0), Vec3<double>(2, 1, 1)) -
           Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix())
              .norm() == 0.0);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const Vec3<double> s = test::random_vec3(rng, 0.01, 2);
        const auto cov = covariance_3d<double>(test::random_quat(rng), s);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        Eigen::Vector3d expect = s.cwiseAbs2();
        std::sort(expect.data(), expect.data() + 3);
        CHECK((es.eigenvalues() - expect).cwiseAbs().maxCoeff() <= 1e-5);
    }
}

TEST_CASE("projection") {
    const auto cam = test::front_camera(32, 24, 40);
    const auto on_axis = project_gaussian<double>(Vec3<double>(0, 0, 3), Mat3<double>::Identity() * 0.01, cam);
    REQUIRE(on_axis);
    CHECK(on_axis->mean == Vec2<double>(16, 12));
    const Mat2<double> c = on_axis->covariance - kLowPassFloor * Mat2<double>::Identity();
    CHECK(c(0, 1) == doctest::Approx(0.0));
    CHECK(c(0, 0) == doctest::Approx(c(1, 1)).epsilon(1e-12));
    CHECK_FALSE(project_gaussian<double>(Vec3<double>(0, 0, -1), Mat3<double>::Identity(), cam));
    CHECK_FALSE(project_gaussian<double>(Vec3<double>(0, 0, 1e-3), Mat3<double>::Identity(), cam));

    // Pinhole oracle through an arbitrary look-at camera.
    std::mt19937_64 rng(2);
    const auto look = Camera<double>::look_at(Vec3<double>(2, 1, -3), Vec3<double>(0, 0.3, 0),
                                              Vec3<double>(0, 1, 0), 50, 40, 30);
    const Eigen::Vector3d eye(2, 1, -3);
    const Eigen::Vector3d fwd = (Eigen::Vector3d(0, 0.3, 0) - eye).normalized();
    const Eigen::Vector3d right = fwd.cross(Eigen::Vector3d(0, 1, 0)).normalized();
    const Eigen::Vector3d down = fwd.cross(right);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector3d x = test::random_vec3(rng, -0.5, 0.5);
        const Eigen::Vector3d d = x - eye;
        const double z = d.dot(fwd);
        const Eigen::Vector2d expect(50 * d.dot(right) / z + 20, 50 * d.dot(down) / z + 15);
        const auto p = project_gaussian<double>(x, Mat3<double>::Identity() * 0.01, look);
        REQUIRE(p);
        CHECK((p->mean - expect).norm() <= 1e-6);
        CHECK(p->depth == doctest::Approx(z).epsilon(1e-12));
    }
    CHECK((look.center() - eye).norm() <= 1e-12);
}

TEST_CASE("empty set renders the background") {
    PosedGaussianSet<double> empty;
    empty.sh.resize(0, 3);
    RenderSettings rs;
    rs.background = Eigen::Vector3d(0.1, 0.2, 0.3);
    const auto img = render(empty, test::front_camera(9, 7, 10), rs);
    for (Eigen::Index i = 0; i < img.pixel_count(); ++i)
        CHECK(img.rgb.row(i) == Eigen::RowVector3d(0.1, 0.2, 0.3));
    CHECK(img.transmittance.isOnes(0));
}

TEST_CASE("an opaque wide gaussian shows its DC color at the center pixel") {
    PosedGaussianSet<double> s;
    s.positions = Points<double>(1, 3);
    s.positions << 0, 0, 3;
    s.rotations = Quats<double>(1, 4);
    s.rotations << 1, 0, 0, 0;
    s.scales = Points<double>::Constant(1, 3, 5.0);
    s.opacities = VecX<double>::Constant(1, 1.0);
    s.sh_degree = 0;
    GaussianColorStore<double> store(1, 0);
    store.set_base_color(0, Vec3<double>(0.2, 0.7, 0.4));
    s.sh = store.coeffs();
    s.parts = {BodyPart::CenterBody};
    auto cam = test::front_camera(16, 16, 20);
    const auto img = render(s, cam);
    CHECK((img.pixel(8, 8) - Vec3<double>(0.2, 0.7, 0.4)).norm() <= 1e-3);
}

TEST_CASE("tile-based render equals the per-pixel brute-force blend") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const auto scene = test::random_scene(rng, 10);
        const auto cam = test::front_camera(16, 16, 18);
        RenderSettings rs;
        rs.background = Eigen::Vector3d(0.05, 0.1, 0.2);
        const auto img = render(scene, cam, rs);
        const auto ref = test::brute_force_render(scene, cam, rs.background);
        CHECK((img.rgb - ref.rgb).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("float render agrees with the 64-bit oracle") {
    std::mt19937_64 rng(11);
    const auto scene = test::random_scene(rng, 10);
    PosedGaussianSet<float> f;
    f.positions = scene.positions.cast<float>();
    f.rotations = scene.rotations.cast<float>();
    f.scales = scene.scales.cast<float>();
    f.opacities = scene.opacities.cast<float>();
    f.sh = scene.sh.cast<float>();
    f.parts = scene.parts;
    const auto cam = test::front_camera(16, 16, 18);
    const auto img = render(f, cam.cast<float>());
    const auto ref = test::brute_force_render(f, cam.cast<float>(), Eigen::Vector3d::Zero());
    CHECK((img.rgb.cast<double>() - ref.rgb).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("tiling does not change the image") {
    std::mt19937_64 rng(12);
    const auto scene = test::random_scene(rng, 60, 0.8, 0.02, 0.2);
    const auto cam = test::front_camera(40, 36, 30);
    RenderSettings rs;
    rs.tile_size = 0;
    const auto whole = render(scene, cam, rs);
    for (const int tile : {1, 8, 16, 7}) {
        rs.tile_size = tile;
        const auto img = render(scene, cam, rs);
        CHECK(img.rgb == whole.rgb);
        CHECK(img.transmittance == whole.transmittance);
    }
}

TEST_CASE("transmittance is non-increasing as gaussians are added front to back") {
    std::mt19937_64 rng(13);
    auto scene = test::random_scene(rng, 12);
    std::vector<int> order(12);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scene.positions(a, 2) < scene.positions(b, 2); });
    const auto cam = test::front_camera(16, 16, 18);
    VecX<double> previous = VecX<double>::Ones(256);
    for (std::size_t k = 1; k <= order.size(); ++k) {
        const std::vector<int> prefix(order.begin(), order.begin() + long(k));
        const auto img = render(take_front(scene, prefix), cam);
        CHECK((img.transmittance.array() >= 0).all());
        CHECK((img.transmittance.array() <= 1).all());
        CHECK((img.transmittance.array() <= previous.array()).all());
        previous = img.transmittance;
    }
}

TEST_CASE("a fully opaque front gaussian hides everything behind it") {
    std::mt19937_64 rng(14);
    auto scene = test::random_scene(rng, 8);
    // Front gaussian centered on pixel (7, 7) of a camera whose principal point is a pixel center.
    auto cam = test::front_camera(16, 16, 18);
    cam.cx = 7.5;
    cam.cy = 7.5;
    scene.positions.row(0) << 0, 0, 1.0;
    scene.opacities[0] = 1.0;
    const auto img = render(scene, cam);
    CHECK(img.transmittance[img.index(7, 7)] == 0.0);
    const auto alone = render(take_front(scene, {0}), cam);
    CHECK(img.pixel(7, 7) == alone.pixel(7, 7));
    CHECK(img.contributors[std::size_t(img.index(7, 7))] == 1);
}

TEST_CASE("degree-1 colors follow the view direction") {
    PosedGaussianSet<double> s;
    s.positions = Points<double>(1, 3);
    s.positions << 0.3, -0.2, 3;
    s.rotations = Quats<double>(1, 4);
    s.rotations << 1, 0, 0, 0;
    s.scales = Points<double>::Constant(1, 3, 4.0);
    s.opacities = VecX<double>::Constant(1, 1.0);
    s.sh_degree = 1;
    s.sh = MatX<double>::Zero(1, 12);
    s.sh.row(0) << 0.1, 0.2, 0.3, 0.4, -0.2, 0.1, 0.3, 0.3, -0.1, -0.2, 0.5, 0.2;
    s.parts = {BodyPart::CenterBody};
    auto cam = test::front_camera(16, 16, 20);
    cam.cx = 7.5 - 20 * 0.3 / 3;
    cam.cy = 7.5 + 20 * 0.2 / 3;
    const auto img = render(s, cam);
    const Eigen::Vector3d dir = Eigen::Vector3d(0.3, -0.2, 3).normalized();
    const auto expect = sh_to_color<double>(1, s.sh.row(0).transpose(), dir);
    // Center pixel: gauss = 1 and alpha = 1.
    CHECK((img.pixel(7, 7) - expect).norm() <= 1e-9);
}

TEST_CASE("zero upstream gives zero render gradients") {
    std::mt19937_64 rng(15);
    const auto scene = smooth_scene(rng, 4, 1);
    const auto cam = test::front_camera(8, 8, 8);
    const auto g = render_backward(scene, cam, RenderSettings{}, MatX<double>(MatX<double>::Zero(64, 3)));
    CHECK(g.positions.isZero(0));
    CHECK(g.rotations.isZero(0));
    CHECK(g.scales.isZero(0));
    CHECK(g.opacities.isZero(0));
    CHECK(g.sh.isZero(0));
}

TEST_CASE("render backward matches central differences") {
    for (const int degree : {0, 1}) {
        std::mt19937_64 rng(16 + std::uint64_t(degree));
        auto scene = smooth_scene(rng, 6, degree);
        const auto cam = test::front_camera(8, 8, 8);
        RenderSettings rs;
        rs.background = Eigen::Vector3d(0.2, 0.1, 0.3);
        rs.tile_size = 4;
        MatX<double> up(64, 3);
        for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = uniform(rng, -1, 1);
        const auto g = render_backward(scene, cam, rs, up);
        const auto loss = [&] { return render(scene, cam, rs).rgb.cwiseProduct(up).sum(); };
        const auto check_block = [&](auto& param, const auto& grad, const char* name) {
            for (Eigen::Index i = 0; i < param.size(); ++i) {
                const double fd = test::central_difference(loss, param.data()[i], 1e-6);
                INFO(name << " entry " << i);
                CHECK(test::rel_err(grad.data()[i], fd, 1e-6) <= 1e-3);
            }
        };
        check_block(scene.positions, g.positions, "position");
        check_block(scene.rotations, g.rotations, "rotation");
        check_block(scene.scales, g.scales, "scale");
        check_block(scene.opacities, g.opacities, "opacity");
        check_block(scene.sh, g.sh, "sh");
    }
}

TEST_CASE("invalid inputs are rejected") {
    std::mt19937_64 rng(17);
    auto scene = test::random_scene(rng, 3);
    auto cam = test::front_camera(8, 8, 8);
    cam.fx = 0;
    CHECK_THROWS_AS(render(scene, cam), ConfigError);
    cam = test::front_camera(8, 8, 8);
    cam.near_plane = 5;
    cam.far_plane = 1;
    CHECK_THROWS_AS(render(scene, cam), ConfigError);
    scene.sh_degree = 1;
    CHECK_THROWS_AS(render(scene, test::front_camera(8, 8, 8)), ConfigError);
}

} // TEST_SUITE
