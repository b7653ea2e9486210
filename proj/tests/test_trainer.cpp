#include "fixtures.hpp"
#include "support.hpp"

#include "r3/trainer.hpp"

#include <doctest.h>

#include <sstream>

using namespace r3;
using r3::test::uniform;

namespace {

struct Probe {
    const char* group;
    double* param;
    double grad;
};

// Weighted pixel sum; its gradient w.r.t. the image is the weight map.
double weighted_render(const CanonicalAvatar<double>& a, const VecX<double>& times, const Pose& pose,
                       const Camera<double>& cam, const MatX<double>& w) {
    FrameState<double> st;
    forward_frame(a, times, pose, cam, RenderSettings{}, st);
    return st.image.rgb.cwiseProduct(w).sum();
}

template <typename M> std::pair<double*, Eigen::Index> pick(std::mt19937_64& rng, M& m) {
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, m.size() - 1)(rng);
    return {m.data() + i, i};
}

TrainingSet<float> small_training_set(const SynthDataset& ds) {
    return training_set(ds.cameras, ds.poses, ds.images, split(ds.spec, ds.spec.split));
}

const SynthDataset& small_dataset() {
    static const SynthDataset ds = generate(test::small_spec());
    return ds;
}

CanonicalAvatar<float> small_float_avatar() {
    const auto spec = test::small_spec();
    return initialize_avatar<float>(spec.skeleton, test::training_track(spec), test::small_config());
}

TrainingConfig quick_config(int iterations) {
    TrainingConfig cfg;
    cfg.iterations = iterations;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("frame backward pass against finite differences") {
    auto s = test::small_avatar();
    auto& a = s.avatar;
    std::mt19937_64 rng(1);
    VecX<double> times(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) times[i] = uniform(rng, 0.1, 0.9);
    const Pose pose = synth_pose(s.spec, 3.3);
    MatX<double> w(s.cam.width * s.cam.height, 3);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -1, 1);

    FrameState<double> st;
    forward_frame(a, times, pose, s.cam, RenderSettings{}, st);
    REQUIRE(st.image.rgb.maxCoeff() > 0.05);
    AvatarGradients<double> g(a);
    backward_frame(a, st, s.cam, RenderSettings{}, w, g);

    std::vector<Probe> probes;
    for (int trial = 0; trial < 6; ++trial) {
        const int sc = trial % 2, p = trial % kPlaneCount;
        const auto& touched = g.planes.touched(sc, p);
        REQUIRE_FALSE(touched.empty());
        const auto row = touched[std::size_t(trial * 7) % touched.size()];
        const int ch = trial % a.codebook.channels();
        auto& data = a.codebook.scales()[std::size_t(sc)][std::size_t(p)].data;
        probes.push_back({"planes", &data(row, ch), g.planes.data(sc, p)(row, ch)});
    }
    auto add = [&](const char* group, auto& param, const auto& grad, int count) {
        for (int k = 0; k < count; ++k) {
            const auto [ptr, i] = pick(rng, param);
            probes.push_back({group, ptr, grad.data()[i]});
        }
    };
    auto& dec = a.decoder.net();
    for (int l = 0; l < dec.layer_count(); ++l) {
        add("decoder weights", dec.weights()[std::size_t(l)], g.decoder.weights[std::size_t(l)], 4);
        add("decoder biases", dec.biases()[std::size_t(l)], g.decoder.biases[std::size_t(l)], 2);
    }
    auto& ref = a.blend.refine();
    for (int l = 0; l < ref.layer_count(); ++l) {
        add("refine weights", ref.weights()[std::size_t(l)], g.refine.weights[std::size_t(l)], 4);
        add("refine biases", ref.biases()[std::size_t(l)], g.refine.biases[std::size_t(l)], 2);
    }
    add("sh", a.colors.coeffs(), g.sh, 6);
    add("positions", a.positions, g.positions, 10);
    add("opacity bias", a.opacity_bias, g.opacity_bias, 6);
    add("base logits", a.blend.base_logits(), g.base_logits, 6);

    int nonzero = 0;
    for (auto& pr : probes) {
        const double fd = test::central_difference([&] { return weighted_render(a, times, pose, s.cam, w); },
                                                   *pr.param, 1e-6);
        INFO(pr.group);
        CHECK(std::abs(pr.grad - fd) <= 1e-5 + 1e-3 * std::abs(fd));
        nonzero += std::abs(fd) > 1e-6;
    }
    CHECK(nonzero > int(probes.size()) / 2);
}

TEST_CASE("a target equal to the render has zero loss and zero gradient") {
    auto s = test::small_avatar();
    TrainingConfig cfg;
    Trainer<double> trainer(s.avatar, cfg);
    const Pose pose = synth_pose(s.spec, 4);
    const double t = s.avatar.normalized_time(4);
    TrainingSample<double> sample;
    sample.target = render_frame(s.avatar, 4, pose, s.cam);
    const auto r = trainer.evaluate(sample, s.cam, pose, t);
    CHECK(std::abs(r.loss) <= 1e-12);
    const auto& g = trainer.gradients();
    double worst = std::max({g.sh.cwiseAbs().maxCoeff(), g.positions.cwiseAbs().maxCoeff(),
                             g.opacity_bias.cwiseAbs().maxCoeff(), g.base_logits.cwiseAbs().maxCoeff()});
    for (const auto& m : g.decoder.weights) worst = std::max(worst, m.cwiseAbs().maxCoeff());
    for (int sc = 0; sc < 2; ++sc)
        for (int p = 0; p < kPlaneCount; ++p) worst = std::max(worst, g.planes.data(sc, p).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-8);

    SUBCASE("one altered pixel under pure L1") {
        TrainingConfig l1;
        l1.lambda_ssim = 0;
        Trainer<double> t1(s.avatar, l1);
        sample.target.rgb(sample.target.index(5, 9), 0) += 0.3;
        const auto r1 = t1.evaluate(sample, s.cam, pose, t);
        CHECK(r1.loss == doctest::Approx(0.3 / double(sample.target.rgb.size())).epsilon(1e-9));
    }
}

TEST_CASE("zero iterations leave the avatar untouched") {
    auto a = small_float_avatar();
    const auto before = a;
    const auto log = train(a, small_training_set(small_dataset()), quick_config(0));
    CHECK(log.empty());
    CHECK(a == before);
}

TEST_CASE("training is deterministic per seed") {
    const auto data = small_training_set(small_dataset());
    auto a = small_float_avatar(), b = small_float_avatar(), c = small_float_avatar();
    auto cfg = quick_config(25);
    OptimizerState<float> oa, ob;
    const auto la = train(a, data, cfg, &oa);
    const auto lb = train(b, data, cfg, &ob);
    std::ostringstream sa, sb, sc;
    write_loss_csv(sa, la);
    write_loss_csv(sb, lb);
    CHECK(sa.str() == sb.str());
    CHECK(a == b);
    CHECK(oa == ob);
    CHECK(oa.step == 25);
    cfg.seed = 4;
    write_loss_csv(sc, train(c, data, cfg));
    CHECK(sc.str() != sa.str());
}

TEST_CASE("repeated steps on one sample reduce its loss") {
    auto a = small_float_avatar();
    const auto data = small_training_set(small_dataset());
    Trainer<float> trainer(a, quick_config(1));
    const auto& sample = data.samples[3];
    const auto& cam = data.cameras[std::size_t(sample.view)];
    const auto& pose = data.poses[std::size_t(sample.pose)];
    const double t = a.normalized_time(pose.frame_index);
    const double first = trainer.evaluate(sample, cam, pose, t).loss;
    for (int i = 0; i < 30; ++i) trainer.step(sample, cam, pose, t);
    CHECK(trainer.evaluate(sample, cam, pose, t).loss < 0.9 * first);
}

TEST_CASE("a zero rate freezes its group") {
    auto a = small_float_avatar();
    const auto before = a;
    auto cfg = quick_config(10);
    cfg.rates.decoder = 0;
    cfg.rates.positions = 0;
    train(a, small_training_set(small_dataset()), cfg);
    CHECK(a.decoder == before.decoder);
    CHECK(a.positions == before.positions);
    CHECK_FALSE(a.colors == before.colors);
}

TEST_CASE("pruning removes faint gaussians and compacts everything alongside") {
    auto s = test::small_avatar();
    auto& a = s.avatar;
    const auto before = a;
    const std::vector<Eigen::Index> faint{3, 17, 18, 79};
    for (const auto i : faint) a.opacity_bias[i] = std::log(0.001 / 0.999) - 30;
    auto opt = make_optimizer(a);
    for (auto& m : opt.first) m.setRandom();
    for (auto& m : opt.second) m.setRandom();
    const auto opt_before = opt;

    CHECK(prune_candidates(a, 0.005, 1e9) == faint);
    TrainingConfig cfg;
    cfg.prune_interval = 10;
    cfg.opacity_reset_interval = 1000;
    CHECK(density_control(a, opt, cfg, 9).pruned.empty());
    const auto report = density_control(a, opt, cfg, 10);
    CHECK(report.pruned == faint);
    CHECK_FALSE(report.reset);
    REQUIRE(a.size() == before.size() - 4);
    CHECK_NOTHROW(a.validate());

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < before.size(); ++i)
        if (std::find(faint.begin(), faint.end(), i) == faint.end()) keep.push_back(i);
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto i = keep[j], jj = Eigen::Index(j);
        CHECK(a.positions.row(jj) == before.positions.row(i));
        CHECK(a.opacity_bias[jj] == before.opacity_bias[i]);
        CHECK(a.colors.coeffs().row(jj) == before.colors.coeffs().row(i));
        CHECK(a.blend.base_logits().row(jj) == before.blend.base_logits().row(i));
    }
    const std::size_t n = opt.first.size();
    for (std::size_t k = 0; k < n; ++k) {
        if (k + 4 < n) {
            CHECK(opt.first[k] == opt_before.first[k]);
            continue;
        }
        REQUIRE(opt.first[k].rows() == a.size());
        for (std::size_t j = 0; j < keep.size(); ++j)
            CHECK(opt.second[k].row(Eigen::Index(j)) == opt_before.second[k].row(keep[j]));
    }
    CHECK(a.decoder == before.decoder);
    CHECK(a.codebook == before.codebook);
}

TEST_CASE("oversized gaussians are pruned") {
    auto s = test::small_avatar();
    const auto all = prune_candidates(s.avatar, 0.0, 0.0);
    CHECK(all.size() == std::size_t(s.avatar.size()));
    CHECK(prune_candidates(s.avatar, 0.0, 1e9).empty());
}

TEST_CASE("opacity reset caps every decoded opacity") {
    auto s = test::small_avatar();
    auto& a = s.avatar;
    for (Eigen::Index i = 0; i < a.size(); ++i) a.opacity_bias[i] = i % 2 ? 3.0 : -8.0;
    const auto before = a;
    auto opt = make_optimizer(a);
    TrainingConfig cfg;
    cfg.prune_interval = 1000;
    cfg.opacity_reset_interval = 7;
    const auto report = density_control(a, opt, cfg, 14);
    CHECK(report.reset);
    for (int j = 0; j < 8; ++j) {
        const auto f = a.codebook.encode_batch(a.positions, VecX<double>::Constant(a.size(), j / 7.0));
        const auto d = a.decoder.decode_matrix(f, &a.opacity_bias);
        CHECK(d.opacity.maxCoeff() <= cfg.reset_opacity * (1 + 1e-9));
    }
    for (Eigen::Index i = 0; i < a.size(); i += 2) CHECK(a.opacity_bias[i] == before.opacity_bias[i]);
    for (Eigen::Index i = 1; i < a.size(); i += 2) CHECK(a.opacity_bias[i] < before.opacity_bias[i]);

    cfg.density_until = 13;
    auto b = before;
    CHECK_FALSE(density_control(b, opt, cfg, 14).reset);
    CHECK(b == before);
}

TEST_CASE("pose-conditioned times collapse repeated poses") {
    const auto spec = test::small_spec();
    const auto track = test::training_track(spec, 20);
    const TimeRange range{0, 19};
    const auto own = sample_times(track, range, false);
    const auto shared = sample_times(track, range, true);
    for (int f = 0; f < 20; ++f) {
        CHECK(own[std::size_t(f)] == range.normalize(f));
        CHECK(shared[std::size_t(f)] == range.normalize(f % 10));
    }
}

TEST_CASE("invalid training input") {
    auto cfg = quick_config(1);
    cfg.rates.sh = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = quick_config(1);
    cfg.lambda_ssim = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    auto a = small_float_avatar();
    auto data = small_training_set(small_dataset());
    auto bad = data;
    bad.samples[0].view = 99;
    CHECK_THROWS_AS(train(a, bad, quick_config(1)), ConfigError);
    CHECK_THROWS_AS(train(a, TrainingSet<float>{}, quick_config(1)), ConfigError);
    bad = data;
    for (auto& s : bad.samples) s.target.rgb.setConstant(std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(train(a, bad, quick_config(1)), NumericError);
}

TEST_CASE("loss log CSV") {
    std::ostringstream out;
    write_loss_csv(out, {{1, 0.5, 0.25, 0.75, 80}, {2, 0.125, 0.0625, 0.875, 79}});
    CHECK(out.str() == "iteration,loss,l1,ssim,gaussian_count\n1,0.5,0.25,0.75,80\n2,0.125,0.0625,0.875,79\n");
}

} // TEST_SUITE
