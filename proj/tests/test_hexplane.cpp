#include "support.hpp"

#include <doctest.h>

using namespace r3;
using r3::test::random_codebook;
using r3::test::reference_encode;
using r3::test::uniform;

namespace {

Eigen::Vector3d random_inside(std::mt19937_64& rng, const Bbox<double>& box) {
    Eigen::Vector3d x;
    for (int a = 0; a < 3; ++a) x[a] = uniform(rng, box.lo[a], box.hi[a]);
    return x;
}

// True when every grid coordinate is at least `margin` cells away from a node, so a
// finite-difference step never crosses a cell boundary.
bool away_from_nodes(const HexPlaneCodebook<double>& cb, const Eigen::Vector3d& x, double t,
                     double margin) {
    const Eigen::Vector3d u = (x - cb.bbox().lo).cwiseQuotient(cb.bbox().extent());
    for (const auto& scale : cb.scales()) {
        const int n = scale[0].width;
        for (int a = 0; a < 3; ++a) {
            const double g = u[a] * (n - 1);
            if (std::abs(g - std::round(g)) < margin) return false;
        }
        const double gt = t * (scale[int(PlaneAxes::XT)].height - 1);
        if (std::abs(gt - std::round(gt)) < margin) return false;
    }
    return true;
}

} // namespace

TEST_SUITE("hexplane") {

TEST_CASE("all-ones planes give an all-ones feature") {
    HexPlaneConfig cfg; // 64/128/256, T = 50, C = 32
    HexPlaneCodebook<float> cb(cfg, Bbox<float>{}, TimeRange{0, 49}, 1);
    for (auto& s : cb.scales())
        for (auto& p : s) p.data.setOnes();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        const auto f = cb.encode(test::random_vec3(rng, 0, 1).cast<float>(), float(uniform(rng, 0, 1)));
        REQUIRE(f.size() == 96);
        CHECK((f.array() - 1.0f).abs().maxCoeff() <= 1e-6f);
    }
    CHECK(cb.feature_dim() == 3 * 32);
}

TEST_CASE("default planes start near one and every plane has its expected shape") {
    HexPlaneConfig cfg;
    cfg.resolutions = {8, 16};
    cfg.time_resolution = 5;
    cfg.channels = 4;
    HexPlaneCodebook<double> cb(cfg, Bbox<double>{}, TimeRange{0, 4}, 11);
    for (int s = 0; s < 2; ++s)
        for (int p = 0; p < kPlaneCount; ++p) {
            const auto& pl = cb.plane(s, PlaneAxes(p));
            CHECK(pl.width == cfg.resolutions[std::size_t(s)]);
            CHECK(pl.height == (p >= int(PlaneAxes::XT) ? 5 : cfg.resolutions[std::size_t(s)]));
            CHECK(pl.data.rows() == pl.width * pl.height);
            CHECK((pl.data.array() - 1).abs().maxCoeff() <= cfg.init_epsilon);
        }
    HexPlaneCodebook<double> again(cfg, Bbox<double>{}, TimeRange{0, 4}, 11);
    CHECK(again == cb);
}

TEST_CASE("query at a shared grid node returns the product of the stored nodes") {
    // One resolution so every plane shares the node lattice.
    auto cb = random_codebook<double>({9}, 9, 3, 21);
    const auto& box = cb.bbox();
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        int idx[4];
        for (int& i : idx) i = std::uniform_int_distribution<int>(0, 8)(rng);
        Eigen::Vector3d x;
        for (int a = 0; a < 3; ++a) x[a] = box.lo[a] + idx[a] / 8.0 * box.extent()[a];
        const double t = idx[3] / 8.0;
        const auto f = cb.encode(x, t);
        const int col[6] = {0, 0, 1, 0, 1, 2}, row[6] = {1, 2, 2, 3, 3, 3};
        Eigen::VectorXd expect = Eigen::VectorXd::Ones(3);
        for (int p = 0; p < 6; ++p) {
            const auto& pl = cb.plane(0, PlaneAxes(p));
            expect = expect.cwiseProduct(pl.data.row(pl.node(idx[row[p]], idx[col[p]])).transpose());
        }
        CHECK((f - expect).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("encode matches the straight-line reference on random queries") {
    for (const std::uint64_t seed : {1u, 2u}) {
        auto cb = random_codebook<double>({6, 11}, 7, 4, seed);
        std::mt19937_64 rng(seed);
        for (int i = 0; i < 500; ++i) {
            const Eigen::Vector3d x = random_inside(rng, cb.bbox());
            const double t = uniform(rng, 0, 1);
            CHECK((cb.encode(x, t) - reference_encode(cb, x, t)).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
    auto cbf = random_codebook<float>({6, 11}, 7, 4, 5);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d x = random_inside(rng, cbf.bbox().cast<double>());
        const double t = uniform(rng, 0, 1);
        const auto f = cbf.encode(x.cast<float>(), float(t)).cast<double>();
        CHECK((f - reference_encode(cbf, x.cast<float>().cast<double>(), double(float(t))))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-5);
    }
}

TEST_CASE("queries outside the domain are clamped") {
    auto cb = random_codebook<double>({5}, 4, 2, 8);
    const Eigen::Vector3d inside = cb.bbox().hi;
    const Eigen::Vector3d outside = inside + Eigen::Vector3d(1, 2, 3);
    CHECK(cb.encode(outside, 1.7) == cb.encode(inside, 1.0));
    CHECK(cb.encode(cb.bbox().lo - Eigen::Vector3d::Ones(), -3.0) == cb.encode(cb.bbox().lo, 0.0));
}

TEST_CASE("each plane is affine along each of its axes inside a cell") {
    // A spatial axis feeds three planes, so the full product is cubic along it.
    // Isolate one plane by setting the other five to ones.
    const auto full = random_codebook<double>({7}, 6, 3, 9);
    const int col_axis[6] = {0, 0, 1, 0, 1, 2}, row_axis[6] = {1, 2, 2, 3, 3, 3};
    std::mt19937_64 rng(10);
    for (int p = 0; p < kPlaneCount; ++p) {
        auto cb = full;
        for (int q = 0; q < kPlaneCount; ++q)
            if (q != p) cb.scales()[0][std::size_t(q)].data.setOnes();
        for (int trial = 0; trial < 20; ++trial) {
            const Eigen::Vector3d x = random_inside(rng, cb.bbox());
            const double t = uniform(rng, 0, 1);
            for (const int axis : {col_axis[p], row_axis[p]}) {
                const double cells = axis < 3 ? 6 : 5;
                const double extent = axis < 3 ? cb.bbox().extent()[axis] : 1.0;
                const double lo = axis < 3 ? cb.bbox().lo[axis] : 0.0;
                const double coord = axis < 3 ? x[axis] : t;
                const int cell = std::min(int((coord - lo) / extent * cells), int(cells) - 1);
                const double a = lo + (cell + 0.1) / cells * extent;
                const double b = lo + (cell + 0.9) / cells * extent;
                const auto eval = [&](double v) {
                    Eigen::Vector3d q = x;
                    double tq = t;
                    if (axis < 3) q[axis] = v;
                    else tq = v;
                    return cb.encode(q, tq);
                };
                const Eigen::VectorXd fa = eval(a), fb = eval(b), fm = eval(0.3 * a + 0.7 * b);
                CHECK((fm - (0.3 * fa + 0.7 * fb)).cwiseAbs().maxCoeff() <= 1e-12);
            }
        }
    }
}

TEST_CASE("scales are concatenated in ascending order") {
    auto cb = random_codebook<double>({4, 8}, 3, 2, 12);
    for (auto& p : cb.scales()[0]) p.data.setConstant(2.0);
    for (auto& p : cb.scales()[1]) p.data.setConstant(0.5);
    const auto f = cb.encode(cb.bbox().center(), 0.4);
    CHECK(f.head(2).isConstant(64.0, 0));
    CHECK(f.tail(2).isConstant(1.0 / 64.0, 0));
}

TEST_CASE("smoothed encode is the mean of two encodes") {
    auto cb = random_codebook<double>({6, 9}, 8, 3, 13);
    std::mt19937_64 rng(14);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Vector3d x = random_inside(rng, cb.bbox());
        const double t1 = uniform(rng, 0, 1), t2 = uniform(rng, 0, 1);
        CHECK(cb.encode_smoothed(x, t1, t1) == cb.encode(x, t1));
        const Eigen::VectorXd expect = 0.5 * (cb.encode(x, t1) + cb.encode(x, t2));
        CHECK((cb.encode_smoothed(x, t1, t2) - expect).cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("encode_batch equals per-row encode") {
    auto cb = random_codebook<float>({6, 9}, 8, 3, 15);
    std::mt19937_64 rng(16);
    Points<float> x(20, 3);
    VecX<float> t(20);
    for (int i = 0; i < 20; ++i) {
        x.row(i) = random_inside(rng, cb.bbox().cast<double>()).cast<float>().transpose();
        t[i] = float(uniform(rng, 0, 1));
    }
    const auto batch = cb.encode_batch(x, t);
    for (int i = 0; i < 20; ++i) CHECK(batch.row(i).transpose() == cb.encode(x.row(i).transpose(), t[i]));
}

TEST_CASE("non-finite queries raise a domain error") {
    auto cb = random_codebook<double>({4}, 3, 2, 17);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(cb.encode(Eigen::Vector3d(nan, 0, 0), 0.5), DomainError);
    CHECK_THROWS_AS(cb.encode(Eigen::Vector3d::Zero(), std::numeric_limits<double>::infinity()),
                    DomainError);
    HexPlaneGrad<double> g(cb);
    CHECK_THROWS_AS(cb.encode_gradient(Eigen::Vector3d(nan, 0, 0), 0.5, Eigen::VectorXd::Ones(2), g),
                    DomainError);
}

TEST_CASE("zero upstream produces no gradient") {
    auto cb = random_codebook<double>({5, 7}, 4, 3, 18);
    HexPlaneGrad<double> g(cb);
    const auto d = cb.encode_gradient(cb.bbox().center(), 0.3, Eigen::VectorXd::Zero(6), g);
    CHECK(d.isZero(0));
    for (int s = 0; s < 2; ++s)
        for (int p = 0; p < kPlaneCount; ++p) CHECK(g.data(s, p).isZero(0));
}

TEST_CASE("with all-ones planes a node's gradient equals its bilinear weight") {
    HexPlaneConfig cfg;
    cfg.resolutions = {5};
    cfg.time_resolution = 4;
    cfg.channels = 1;
    HexPlaneCodebook<double> cb(cfg, Bbox<double>{}, TimeRange{0, 3}, 0);
    for (auto& p : cb.scales()[0]) p.data.setOnes();
    const Eigen::Vector3d x(0.3, 0.55, 0.8);
    const double t = 0.45;
    HexPlaneGrad<double> g(cb);
    cb.encode_gradient(x, t, Eigen::VectorXd::Ones(1), g);
    // XY plane: columns follow x, rows follow y; grid coordinate u * (n - 1).
    const double gx = 0.3 * 4, gy = 0.55 * 4;
    const int ix = int(gx), iy = int(gy);
    const double fx = gx - ix, fy = gy - iy;
    const auto& d = g.data(0, int(PlaneAxes::XY));
    const auto& pl = cb.plane(0, PlaneAxes::XY);
    CHECK(d(pl.node(iy, ix), 0) == doctest::Approx((1 - fx) * (1 - fy)).epsilon(1e-12));
    CHECK(d(pl.node(iy, ix + 1), 0) == doctest::Approx(fx * (1 - fy)).epsilon(1e-12));
    CHECK(d(pl.node(iy + 1, ix), 0) == doctest::Approx((1 - fx) * fy).epsilon(1e-12));
    CHECK(d(pl.node(iy + 1, ix + 1), 0) == doctest::Approx(fx * fy).epsilon(1e-12));
    CHECK(d.sum() == doctest::Approx(1.0));
    CHECK(g.touched(0, int(PlaneAxes::XY)).size() == 4);
}

TEST_CASE("encode_gradient matches central differences") {
    auto cb = random_codebook<double>({5, 8}, 6, 3, 19);
    std::mt19937_64 rng(20);
    int checked = 0;
    while (checked < 30) {
        const Eigen::Vector3d x = random_inside(rng, cb.bbox());
        const double t = uniform(rng, 0.02, 0.98);
        if (!away_from_nodes(cb, x, t, 1e-2)) continue;
        ++checked;
        Eigen::VectorXd up(cb.feature_dim());
        for (int i = 0; i < up.size(); ++i) up[i] = uniform(rng, -1, 1);
        HexPlaneGrad<double> g(cb);
        const auto dcoord = cb.encode_gradient(x, t, up, g);

        Eigen::Vector3d xq = x;
        double tq = t;
        const auto loss = [&] { return cb.encode(xq, tq).dot(up); };
        for (int a = 0; a < 3; ++a)
            CHECK(test::rel_err(dcoord[a], test::central_difference(loss, xq[a], 1e-6)) <= 1e-5);
        CHECK(test::rel_err(dcoord[3], test::central_difference(loss, tq, 1e-6)) <= 1e-5);

        for (int s = 0; s < cb.scale_count(); ++s)
            for (int p = 0; p < kPlaneCount; ++p)
                for (const auto node : g.touched(s, p))
                    for (int c = 0; c < cb.channels(); ++c) {
                        double& entry = cb.scales()[std::size_t(s)][std::size_t(p)].data(node, c);
                        const double fd = test::central_difference(loss, entry, 1e-4);
                        CHECK(test::rel_err(g.data(s, p)(node, c), fd) <= 1e-5);
                    }
    }
}

TEST_CASE("float gradients agree with double finite differences") {
    auto cbd = random_codebook<double>({5, 8}, 6, 2, 23);
    HexPlaneCodebook<float> cbf = random_codebook<float>({5, 8}, 6, 2, 23);
    for (std::size_t s = 0; s < cbd.scales().size(); ++s)
        for (std::size_t p = 0; p < 6; ++p)
            cbd.scales()[s][p].data = cbf.scales()[s][p].data.cast<double>();
    cbd.set_bbox(cbf.bbox().cast<double>());
    std::mt19937_64 rng(24);
    int checked = 0;
    while (checked < 20) {
        Eigen::Vector3d x = random_inside(rng, cbd.bbox()).cast<float>().cast<double>();
        const double t = double(float(uniform(rng, 0.02, 0.98)));
        if (!away_from_nodes(cbd, x, t, 1e-2)) continue;
        ++checked;
        const Eigen::VectorXd up = Eigen::VectorXd::Ones(cbd.feature_dim());
        HexPlaneGrad<float> g(cbf);
        const auto df = cbf.encode_gradient(x.cast<float>(), float(t), up.cast<float>(), g);
        double tq = t;
        const auto loss = [&] { return cbd.encode(x, tq).dot(up); };
        for (int a = 0; a < 3; ++a)
            CHECK(test::rel_err(df[a], test::central_difference(loss, x[a], 1e-4), 1e-3) <= 1e-3);
        CHECK(test::rel_err(df[3], test::central_difference(loss, tq, 1e-4), 1e-3) <= 1e-3);
    }
}

TEST_CASE("clear resets only what was touched") {
    auto cb = random_codebook<double>({5}, 4, 2, 25);
    HexPlaneGrad<double> g(cb);
    cb.encode_gradient(cb.bbox().center(), 0.5, Eigen::VectorXd::Ones(2), g);
    CHECK_FALSE(g.data(0, 0).isZero(0));
    g.clear();
    for (int p = 0; p < kPlaneCount; ++p) {
        CHECK(g.data(0, p).isZero(0));
        CHECK(g.touched(0, p).empty());
    }
}

} // TEST_SUITE
