// SPDX-License-Identifier: Apache-2.0
//
// Skeleton, forward kinematics and linear blend skinning from canonical
// (rest-pose) space to observation space.
#pragma once

#include "r3/common.hpp"
#include "r3/mlp.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace r3 {

enum class BodyPart : std::uint8_t { CenterBody = 0, LeftLeg, LeftArm, RightLeg, RightArm };
inline constexpr int kBodyPartCount = 5;
inline constexpr std::array<BodyPart, kBodyPartCount> kAllBodyParts = {
    BodyPart::CenterBody, BodyPart::LeftLeg, BodyPart::LeftArm, BodyPart::RightLeg,
    BodyPart::RightArm};

/// Short label: cb, ll, la, rl, ra.
const char* part_name(BodyPart part);
std::optional<BodyPart> parse_part(const std::string& label);

struct Joint {
    std::string name;
    int parent = -1; ///< -1 for the root
    Eigen::Vector3d rest_position = Eigen::Vector3d::Zero();
    BodyPart part = BodyPart::CenterBody;
};

class Skeleton {
  public:
    Skeleton() = default;
    /// Validates a single root, in-range parents and acyclicity.
    explicit Skeleton(std::vector<Joint> joints);

    int size() const { return int(joints_.size()); }
    int root() const { return root_; }
    const Joint& joint(int k) const { return joints_[std::size_t(k)]; }
    const std::vector<Joint>& joints() const { return joints_; }
    /// Parents before children.
    const std::vector<int>& topological_order() const { return order_; }
    std::vector<int> children(int k) const;
    std::vector<int> joints_of(BodyPart part) const;
    /// Parts with at least one joint, in kAllBodyParts order.
    std::vector<BodyPart> parts_present() const;

    bool operator==(const Skeleton& o) const;

  private:
    std::vector<Joint> joints_;
    std::vector<int> order_;
    int root_ = -1;
};

/// Local joint rotations as axis-angle vectors (radians) plus the root translation.
struct Pose {
    int frame_index = 0;
    Eigen::Vector3d root_translation = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> thetas;

    static Pose rest(int joint_count) {
        Pose p;
        p.thetas.assign(std::size_t(joint_count), Eigen::Vector3d::Zero());
        return p;
    }
    bool operator==(const Pose& o) const {
        return frame_index == o.frame_index && root_translation == o.root_translation &&
               thetas == o.thetas;
    }
};
using PoseTrack = std::vector<Pose>;

template <typename Scalar> struct JointTransforms {
    std::vector<Mat3<Scalar>> rotation;    ///< world rotation of each joint frame
    std::vector<Vec3<Scalar>> translation; ///< world position of each joint
    std::vector<Mat4<Scalar>> skinning;    ///< rest space -> posed space, T_k

    int size() const { return int(skinning.size()); }
};

template <typename Scalar>
JointTransforms<Scalar> forward_kinematics(const Skeleton& skel, const Pose& pose);

/// Inverse-distance weights to the nearest `nearest` rest-pose bone segments, one row
/// per position. Each child bone is driven by its parent joint; leaf joints add a point
/// segment of their own.
Eigen::MatrixXd bone_distance_weights(const Skeleton& skel,
                                      const Eigen::Matrix<double, Eigen::Dynamic, 3,
                                                          Eigen::RowMajor>& positions,
                                      int nearest = 4);

struct BlendFieldConfig {
    int depth = 4;
    int width = 128;
    double output_init_scale = 0.0; ///< zero: the refinement starts as a no-op
};

/// Per-gaussian base logits plus a positional refinement network; effective weights
/// are softmax(base + refine(x)).
template <typename Scalar> class BlendWeightField {
  public:
    struct Cache {
        typename Mlp<Scalar>::Cache mlp;
        MatX<Scalar> weights;
    };

    BlendWeightField() = default;
    BlendWeightField(MatX<Scalar> base_logits, const BlendFieldConfig& config,
                     const Bbox<Scalar>& bbox, std::uint64_t seed);
    BlendWeightField(MatX<Scalar> base_logits, Mlp<Scalar> refine, const Bbox<Scalar>& bbox);

    /// Base logits log(w) from bone_distance_weights.
    static MatX<Scalar> initial_logits(const Skeleton& skel, const Points<Scalar>& positions);

    int joint_count() const { return int(base_logits_.cols()); }
    Eigen::Index size() const { return base_logits_.rows(); }
    MatX<Scalar>& base_logits() { return base_logits_; }
    const MatX<Scalar>& base_logits() const { return base_logits_; }
    Mlp<Scalar>& refine() { return refine_; }
    const Mlp<Scalar>& refine() const { return refine_; }
    const Bbox<Scalar>& bbox() const { return bbox_; }

    VecX<Scalar> blend_weights(const Vec3<Scalar>& x, Eigen::Index gaussian) const;
    MatX<Scalar> weights_batch(const Points<Scalar>& x, Cache* cache = nullptr) const;
    /// Reverse of weights_batch. Accumulates into the refinement gradient, the base
    /// logit gradient and the position gradient.
    void backward(const Cache& cache, const MatX<Scalar>& d_weights,
                  typename Mlp<Scalar>::Grad& refine_grad, MatX<Scalar>& d_base_logits,
                  Points<Scalar>& d_positions) const;

    void compact(const std::vector<Eigen::Index>& keep);

    bool operator==(const BlendWeightField& o) const {
        return base_logits_ == o.base_logits_ && refine_ == o.refine_ && bbox_.lo == o.bbox_.lo &&
               bbox_.hi == o.bbox_.hi;
    }

  private:
    MatX<Scalar> network_input(const Points<Scalar>& x) const;

    MatX<Scalar> base_logits_;
    Mlp<Scalar> refine_;
    Bbox<Scalar> bbox_;
};

template <typename Scalar> struct WarpResult {
    Points<Scalar> positions;
    Quats<Scalar> rotations;
    std::vector<Mat3<Scalar>> rotation_matrices;
    std::vector<std::uint8_t> valid; ///< 0 where the blended transform is degenerate

    // Retained for warp_backward.
    Points<Scalar> canonical_positions;
    std::vector<Mat3<Scalar>> canonical_rotations;
    std::vector<Mat3<Scalar>> linear;   ///< blended linear part A
    std::vector<Mat3<Scalar>> polar_v;  ///< right singular vectors of A * R_c
    std::vector<Vec3<Scalar>> polar_s;  ///< signed singular values
    MatX<Scalar> weights;

    Eigen::Index size() const { return positions.rows(); }
    std::size_t invalid_count() const;
};

/// x_o = T x', R_o = polar(linear(T) R_c) with T = sum_k w_k T_k.
template <typename Scalar>
WarpResult<Scalar> warp_to_observation(const Points<Scalar>& positions,
                                       const Quats<Scalar>& rotations,
                                       const MatX<Scalar>& weights,
                                       const JointTransforms<Scalar>& jt);

template <typename Scalar> struct WarpGradients {
    Points<Scalar> positions;
    Quats<Scalar> rotations;
    MatX<Scalar> weights;
};

/// Reverse of warp_to_observation given gradients w.r.t. the posed positions and
/// posed rotation matrices.
template <typename Scalar>
WarpGradients<Scalar> warp_backward(const WarpResult<Scalar>& warp,
                                    const Quats<Scalar>& canonical_rotations,
                                    const JointTransforms<Scalar>& jt,
                                    const Points<Scalar>& d_positions,
                                    const std::vector<Mat3<Scalar>>& d_rotation_matrices);

/// Part of each gaussian's argmax joint; ties go to the lowest joint index.
template <typename Scalar>
std::vector<BodyPart> assign_gaussian_parts(const MatX<Scalar>& weights, const Skeleton& skel);

} // namespace r3
