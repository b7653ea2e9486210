// SPDX-License-Identifier: Apache-2.0
#include "r3/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

namespace r3 {

void TrainingConfig::validate() const {
    if (iterations < 0) throw ConfigError("training: iterations must be >= 0");
    const LearningRates& r = rates;
    for (const double v : {r.planes, r.decoder, r.sh, r.positions, r.blend, r.opacity_bias})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("training: rates must be >= 0");
    if (prune_interval < 1 || opacity_reset_interval < 1)
        throw ConfigError("training: intervals must be >= 1");
    if (!(lambda_ssim >= 0.0 && lambda_ssim <= 1.0))
        throw ConfigError("training: lambda_ssim must be in [0, 1]");
    if (!(reset_opacity > 0.0 && reset_opacity < 1.0))
        throw ConfigError("training: reset opacity must be in (0, 1)");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 &&
          adam_epsilon > 0))
        throw ConfigError("training: invalid Adam constants");
}

namespace {

template <typename Scalar> struct Slot {
    Scalar* param = nullptr;
    const Scalar* grad = nullptr;
    Eigen::Index rows = 0, cols = 0;
    double rate = 0;
    const char* group = "";
    const std::vector<Eigen::Index>* touched = nullptr; ///< sparse rows, planes only
};

template <typename Scalar, typename P>
void push(std::vector<Slot<Scalar>>& out, P& param, const Scalar* grad, double rate,
          const char* group, const std::vector<Eigen::Index>* touched = nullptr) {
    out.push_back({param.data(), grad, param.rows(), param.cols(), rate, group, touched});
}

/// Parameter tensors in optimizer order; `g` may be null when only shapes are needed.
template <typename Scalar>
std::vector<Slot<Scalar>> collect(CanonicalAvatar<Scalar>& a, const AvatarGradients<Scalar>* g,
                                  const LearningRates& r) {
    std::vector<Slot<Scalar>> out;
    auto& scales = a.codebook.scales();
    for (std::size_t s = 0; s < scales.size(); ++s)
        for (int p = 0; p < kPlaneCount; ++p)
            push(out, scales[s][std::size_t(p)].data,
                 g ? g->planes.data(int(s), p).data() : nullptr, r.planes, "planes",
                 g ? &g->planes.touched(int(s), p) : nullptr);
    auto& dec = a.decoder.net();
    for (int l = 0; l < dec.layer_count(); ++l) {
        const auto ul = std::size_t(l);
        push(out, dec.weights()[ul], g ? g->decoder.weights[ul].data() : nullptr, r.decoder,
             "decoder");
        push(out, dec.biases()[ul], g ? g->decoder.biases[ul].data() : nullptr, r.decoder,
             "decoder");
    }
    auto& ref = a.blend.refine();
    for (int l = 0; l < ref.layer_count(); ++l) {
        const auto ul = std::size_t(l);
        push(out, ref.weights()[ul], g ? g->refine.weights[ul].data() : nullptr, r.blend,
             "blend_network");
        push(out, ref.biases()[ul], g ? g->refine.biases[ul].data() : nullptr, r.blend,
             "blend_network");
    }
    push(out, a.colors.coeffs(), g ? g->sh.data() : nullptr, r.sh, "sh");
    push(out, a.positions, g ? g->positions.data() : nullptr, r.positions, "positions");
    push(out, a.opacity_bias, g ? g->opacity_bias.data() : nullptr, r.opacity_bias,
         "opacity_bias");
    push(out, a.blend.base_logits(), g ? g->base_logits.data() : nullptr, r.blend, "blend_logits");
    return out;
}

constexpr std::size_t kPerGaussianSlots = 4; // sh, positions, opacity bias, base logits

template <typename Scalar>
void adam_range(Scalar* p, const Scalar* g, Scalar* m, Scalar* v, Eigen::Index n, Scalar lr_t,
                Scalar b1, Scalar b2, Scalar eps) {
    for (Eigen::Index i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (Scalar(1) - b1) * g[i];
        v[i] = b2 * v[i] + (Scalar(1) - b2) * g[i] * g[i];
        p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
    }
}

template <typename Scalar> bool finite_range(const Scalar* g, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i)
        if (!std::isfinite(g[i])) return false;
    return true;
}

} // namespace

template <typename Scalar> OptimizerState<Scalar> make_optimizer(const CanonicalAvatar<Scalar>& a) {
    OptimizerState<Scalar> s;
    auto slots = collect<Scalar>(const_cast<CanonicalAvatar<Scalar>&>(a), nullptr, LearningRates{});
    for (const auto& sl : slots) {
        s.first.push_back(MatX<Scalar>::Zero(sl.rows, sl.cols));
        s.second.push_back(MatX<Scalar>::Zero(sl.rows, sl.cols));
    }
    return s;
}

std::vector<double> sample_times(const PoseTrack& poses, const TimeRange& range,
                                 bool pose_conditioned) {
    std::vector<double> times(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
        std::size_t key = i;
        if (pose_conditioned)
            for (std::size_t j = 0; j < i; ++j)
                if (poses[j].thetas == poses[i].thetas &&
                    poses[j].root_translation == poses[i].root_translation) {
                    key = j;
                    break;
                }
        times[i] = range.normalize(double(poses[key].frame_index));
    }
    return times;
}

template <typename Scalar>
Trainer<Scalar>::Trainer(CanonicalAvatar<Scalar>& avatar, const TrainingConfig& config)
    : avatar_(avatar), config_(config), grads_(avatar), opt_(make_optimizer(avatar)) {
    config_.validate();
}

template <typename Scalar>
StepResult Trainer<Scalar>::evaluate(const TrainingSample<Scalar>& sample,
                                     const Camera<Scalar>& cam, const Pose& pose, double time) {
    if (sample.target.width != cam.width || sample.target.height != cam.height)
        throw ConfigError("training: target image does not match the camera");
    grads_.reset(avatar_);
    const VecX<Scalar> times = VecX<Scalar>::Constant(avatar_.size(), Scalar(time));
    forward_frame(avatar_, times, pose, cam, config_.render, state_);
    const auto loss = photometric_loss<Scalar>(state_.image, sample.target,
                                               Scalar(config_.lambda_ssim));
    if (!std::isfinite(double(loss.total)))
        throw NumericError("training: non-finite loss (rendered image or target)");
    backward_frame(avatar_, state_, cam, config_.render, loss.d_render, grads_);
    return {double(loss.total), double(loss.l1), double(loss.ssim)};
}

template <typename Scalar>
StepResult Trainer<Scalar>::step(const TrainingSample<Scalar>& sample, const Camera<Scalar>& cam,
                                 const Pose& pose, double time) {
    const StepResult r = evaluate(sample, cam, pose, time);
    apply_update();
    return r;
}

template <typename Scalar> void Trainer<Scalar>::apply_update() {
    auto slots = collect(avatar_, &grads_, config_.rates);
    if (opt_.first.size() != slots.size())
        throw ConfigError("training: optimizer state does not match the avatar");
    for (const auto& sl : slots) {
        bool ok = true;
        if (sl.touched) {
            for (const auto row : *sl.touched)
                ok = ok && finite_range(sl.grad + row * sl.cols, sl.cols);
        } else {
            ok = finite_range(sl.grad, sl.rows * sl.cols);
        }
        if (!ok) throw NumericError(std::string("training: non-finite gradient in group ") + sl.group);
    }
    ++opt_.step;
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double correction =
        std::sqrt(1.0 - std::pow(b2, double(opt_.step))) / (1.0 - std::pow(b1, double(opt_.step)));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const auto& sl = slots[k];
        if (sl.rate == 0.0) continue;
        auto& m = opt_.first[k];
        auto& v = opt_.second[k];
        if (m.rows() != sl.rows || m.cols() != sl.cols)
            throw ConfigError("training: optimizer moment shape mismatch");
        const Scalar lr_t = Scalar(sl.rate * correction);
        if (sl.touched) {
            for (const auto row : *sl.touched) {
                const auto o = row * sl.cols;
                adam_range(sl.param + o, sl.grad + o, m.data() + o, v.data() + o, sl.cols, lr_t,
                           Scalar(b1), Scalar(b2), Scalar(config_.adam_epsilon));
            }
        } else {
            adam_range(sl.param, sl.grad, m.data(), v.data(), sl.rows * sl.cols, lr_t, Scalar(b1),
                       Scalar(b2), Scalar(config_.adam_epsilon));
        }
    }
    for (Eigen::Index i = 0; i < avatar_.size(); ++i)
        for (int a = 0; a < 3; ++a)
            avatar_.positions(i, a) =
                std::clamp(avatar_.positions(i, a), avatar_.bbox.lo[a], avatar_.bbox.hi[a]);
}

namespace {

constexpr int kDensitySamples = 8;

template <typename Scalar>
DecodedBatch<Scalar> decode_at(const CanonicalAvatar<Scalar>& a, Scalar t,
                               typename GaussianDecoder<Scalar>::Cache* cache = nullptr) {
    const MatX<Scalar> f =
        a.codebook.encode_batch(a.positions, VecX<Scalar>::Constant(a.size(), t));
    return a.decoder.decode_matrix(f, &a.opacity_bias, cache);
}

} // namespace

template <typename Scalar>
std::vector<Eigen::Index> prune_candidates(const CanonicalAvatar<Scalar>& a, double min_opacity,
                                           double max_scale) {
    const Eigen::Index n = a.size();
    VecX<Scalar> mean_opacity = VecX<Scalar>::Zero(n);
    VecX<Scalar> largest = VecX<Scalar>::Zero(n);
    for (int j = 0; j < kDensitySamples; ++j) {
        const auto d = decode_at(a, Scalar(j) / Scalar(kDensitySamples - 1));
        mean_opacity += d.opacity / Scalar(kDensitySamples);
        largest = largest.cwiseMax(d.scale.rowwise().maxCoeff());
    }
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < n; ++i)
        if (double(mean_opacity[i]) < min_opacity || double(largest[i]) > max_scale)
            out.push_back(i);
    return out;
}

template <typename Scalar>
DensityReport density_control(CanonicalAvatar<Scalar>& a, OptimizerState<Scalar>& opt,
                              const TrainingConfig& cfg, int iteration) {
    DensityReport report;
    if (iteration <= 0 || iteration > cfg.density_until) return report;
    if (iteration % cfg.prune_interval == 0) {
        report.pruned = prune_candidates(a, cfg.prune_opacity,
                                         cfg.prune_scale_fraction * double(a.bbox.diagonal()));
        if (!report.pruned.empty()) {
            std::vector<Eigen::Index> keep;
            std::size_t next = 0;
            for (Eigen::Index i = 0; i < a.size(); ++i) {
                if (next < report.pruned.size() && report.pruned[next] == i) ++next;
                else keep.push_back(i);
            }
            if (keep.empty()) throw NumericError("training: pruning removed every gaussian");
            a.compact(keep);
            if (!opt.empty()) {
                const std::size_t n = opt.first.size();
                for (std::size_t k = n - kPerGaussianSlots; k < n; ++k) {
                    opt.first[k] = select_rows(opt.first[k], keep);
                    opt.second[k] = select_rows(opt.second[k], keep);
                }
            }
        }
    }
    if (iteration % cfg.opacity_reset_interval == 0) {
        const Scalar target = Scalar(std::log(cfg.reset_opacity / (1.0 - cfg.reset_opacity)));
        VecX<Scalar> highest = VecX<Scalar>::Constant(a.size(), -std::numeric_limits<Scalar>::infinity());
        for (int j = 0; j < kDensitySamples; ++j) {
            const MatX<Scalar> f = a.codebook.encode_batch(
                a.positions,
                VecX<Scalar>::Constant(a.size(), Scalar(j) / Scalar(kDensitySamples - 1)));
            highest = highest.cwiseMax(a.decoder.opacity_logits(f) + a.opacity_bias);
        }
        for (Eigen::Index i = 0; i < a.size(); ++i)
            if (highest[i] > target) a.opacity_bias[i] -= highest[i] - target;
        if (!opt.empty()) {
            const std::size_t k = opt.first.size() - 2;
            opt.first[k].setZero();
            opt.second[k].setZero();
        }
        report.reset = true;
    }
    return report;
}

template <typename Scalar>
std::vector<LossRecord> train(CanonicalAvatar<Scalar>& avatar, const TrainingSet<Scalar>& data,
                              const TrainingConfig& cfg,
                              std::type_identity_t<OptimizerState<Scalar>>* opt_out,
                              const std::type_identity_t<TrainingHooks<Scalar>>& hooks) {
    cfg.validate();
    if (data.samples.empty()) throw ConfigError("training: empty dataset");
    for (const auto& s : data.samples)
        if (s.view < 0 || std::size_t(s.view) >= data.cameras.size() || s.pose < 0 ||
            std::size_t(s.pose) >= data.poses.size())
            throw ConfigError("training: sample refers to a missing camera or pose");
    const auto times = sample_times(data.poses, avatar.time_range(), cfg.pose_conditioned);

    Trainer<Scalar> trainer(avatar, cfg);
    if (opt_out && !opt_out->empty()) trainer.set_optimizer(*opt_out);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::size_t cursor = order.size();

    std::vector<LossRecord> log;
    log.reserve(std::size_t(cfg.iterations));
    for (int it = 1; it <= cfg.iterations; ++it) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const auto& s = data.samples[order[cursor++]];
        const auto r = trainer.step(s, data.cameras[std::size_t(s.view)],
                                    data.poses[std::size_t(s.pose)], times[std::size_t(s.pose)]);
        density_control(avatar, trainer.optimizer(), cfg, it);
        log.push_back({it, r.loss, r.l1, r.ssim, avatar.size()});
        if (hooks.interval > 0 && hooks.on_interval && it % hooks.interval == 0)
            hooks.on_interval(it, avatar);
    }
    if (opt_out) *opt_out = trainer.optimizer();
    return log;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& log) {
    out << "iteration,loss,l1,ssim,gaussian_count\n";
    char buf[160];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%ld\n", r.iteration, r.loss, r.l1, r.ssim,
                      long(r.gaussian_count));
        out << buf;
    }
}

#define R3_INSTANTIATE(S)                                                                         \
    template OptimizerState<S> make_optimizer(const CanonicalAvatar<S>&);                         \
    template class Trainer<S>;                                                                    \
    template DensityReport density_control(CanonicalAvatar<S>&, OptimizerState<S>&,               \
                                           const TrainingConfig&, int);                           \
    template std::vector<Eigen::Index> prune_candidates(const CanonicalAvatar<S>&, double,        \
                                                        double);                                  \
    template std::vector<LossRecord> train(CanonicalAvatar<S>&, const TrainingSet<S>&,            \
                                           const TrainingConfig&, OptimizerState<S>*,             \
                                           const TrainingHooks<S>&);
R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
