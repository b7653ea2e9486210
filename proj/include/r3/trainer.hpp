// SPDX-License-Identifier: Apache-2.0
//
// Multi-view optimization of a canonical avatar: photometric loss, Adam with
// per-group rates, pruning and opacity resets.
#pragma once

#include "r3/avatar.hpp"
#include "r3/image.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <type_traits>
#include <vector>

namespace r3 {

struct LearningRates {
    double planes = 1e-2;
    double decoder = 1e-3;
    double sh = 2.5e-3;
    double positions = 1.6e-4;
    double blend = 1e-3; ///< base logits and refinement network
    double opacity_bias = 1e-2;
};

struct TrainingConfig {
    int iterations = 5000;
    LearningRates rates; ///< a zero rate freezes the group
    double lambda_ssim = 0.2;
    int prune_interval = 500;
    double prune_opacity = 0.005;
    double prune_scale_fraction = 0.5; ///< of the bbox diagonal
    int opacity_reset_interval = 3000;
    double reset_opacity = 0.01;
    int density_until = 4000; ///< no pruning or resets after this iteration
    std::uint64_t seed = 0;
    bool pose_conditioned = false; ///< baseline: time replaced by the first frame with the same pose
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-15;
    RenderSettings render;

    void validate() const;
};

template <typename Scalar> struct TrainingSample {
    int view = 0;
    int pose = 0; ///< index into TrainingSet::poses
    Image<Scalar> target;
};

template <typename Scalar> struct TrainingSet {
    std::vector<Camera<Scalar>> cameras;
    PoseTrack poses;
    std::vector<TrainingSample<Scalar>> samples;
};

/// Adam moments for every parameter tensor, in a fixed order: codebook planes (scale-major),
/// decoder layers, refinement layers, SH, positions, opacity bias, base logits.
template <typename Scalar> struct OptimizerState {
    long step = 0;
    std::vector<MatX<Scalar>> first, second;

    bool empty() const { return first.empty(); }
    bool operator==(const OptimizerState& o) const {
        return step == o.step && first == o.first && second == o.second;
    }
};

template <typename Scalar> OptimizerState<Scalar> make_optimizer(const CanonicalAvatar<Scalar>& a);

struct StepResult {
    double loss = 0, l1 = 0, ssim = 0;
};

/// Normalized time of each pose: its own frame, or the first frame sharing its pose
/// when `pose_conditioned`.
std::vector<double> sample_times(const PoseTrack& poses, const TimeRange& range,
                                 bool pose_conditioned);

template <typename Scalar> class Trainer {
  public:
    Trainer(CanonicalAvatar<Scalar>& avatar, const TrainingConfig& config);

    /// One forward/backward/update on a single (view, frame) pair.
    StepResult step(const TrainingSample<Scalar>& sample, const Camera<Scalar>& cam,
                    const Pose& pose, double time);
    /// Loss and gradients without updating parameters.
    StepResult evaluate(const TrainingSample<Scalar>& sample, const Camera<Scalar>& cam,
                        const Pose& pose, double time);

    const AvatarGradients<Scalar>& gradients() const { return grads_; }
    OptimizerState<Scalar>& optimizer() { return opt_; }
    const OptimizerState<Scalar>& optimizer() const { return opt_; }
    void set_optimizer(OptimizerState<Scalar> s) { opt_ = std::move(s); }

  private:
    void apply_update();

    CanonicalAvatar<Scalar>& avatar_;
    TrainingConfig config_;
    AvatarGradients<Scalar> grads_;
    FrameState<Scalar> state_;
    OptimizerState<Scalar> opt_;
};

struct DensityReport {
    std::vector<Eigen::Index> pruned;
    bool reset = false;
};

/// Prunes faint or oversized gaussians and, on schedule, lowers every opacity to at most
/// cfg.reset_opacity through the per-gaussian bias. Optimizer moments are compacted along.
template <typename Scalar>
DensityReport density_control(CanonicalAvatar<Scalar>& avatar, OptimizerState<Scalar>& opt,
                              const TrainingConfig& cfg, int iteration);

/// Gaussians whose mean decoded opacity over 8 sampled times is below the threshold or
/// whose largest decoded scale exceeds the limit.
template <typename Scalar>
std::vector<Eigen::Index> prune_candidates(const CanonicalAvatar<Scalar>& avatar,
                                           double min_opacity, double max_scale);

struct LossRecord {
    int iteration = 0;
    double loss = 0, l1 = 0, ssim = 0;
    Eigen::Index gaussian_count = 0;
};

template <typename Scalar> struct TrainingHooks {
    int interval = 0;
    std::function<void(int, const CanonicalAvatar<Scalar>&)> on_interval;
};

/// Runs cfg.iterations steps over shuffled samples. Deterministic given cfg.seed.
template <typename Scalar>
std::vector<LossRecord> train(CanonicalAvatar<Scalar>& avatar, const TrainingSet<Scalar>& data,
                              const TrainingConfig& cfg,
                              std::type_identity_t<OptimizerState<Scalar>>* opt_out = nullptr,
                              const std::type_identity_t<TrainingHooks<Scalar>>& hooks = {});

/// CSV iteration,loss,l1,ssim,gaussian_count.
void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& log);

} // namespace r3
