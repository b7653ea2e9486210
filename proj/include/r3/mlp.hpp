// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "r3/common.hpp"

#include <cstdint>
#include <vector>

namespace r3 {

/// Fully connected ReLU network: `depth` hidden layers of `width` units and a linear
/// output layer. Weight matrices are (out x in); inputs are batched one row per sample.
template <typename Scalar> class Mlp {
  public:
    struct Cache {
        std::vector<MatX<Scalar>> inputs; ///< input of every layer (post-activation)
    };
    struct Grad {
        std::vector<MatX<Scalar>> weights;
        std::vector<VecX<Scalar>> biases;
        void set_zero();
        Scalar squared_norm() const;
    };

    Mlp() = default;
    /// He-uniform hidden layers. Output weights are uniform in +-scale/sqrt(fan_in), zero
    /// by default; all biases start at zero.
    Mlp(int in_dim, int depth, int width, int out_dim, std::uint64_t seed,
        Scalar output_weight_scale = Scalar(0));

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    int depth() const { return depth_; }
    int width() const { return width_; }
    int layer_count() const { return int(weights_.size()); }

    std::vector<MatX<Scalar>>& weights() { return weights_; }
    const std::vector<MatX<Scalar>>& weights() const { return weights_; }
    std::vector<VecX<Scalar>>& biases() { return biases_; }
    const std::vector<VecX<Scalar>>& biases() const { return biases_; }

    MatX<Scalar> forward(const MatX<Scalar>& input, Cache* cache = nullptr) const;
    /// Accumulates parameter gradients into grad and returns d(loss)/d(input).
    MatX<Scalar> backward(const Cache& cache, const MatX<Scalar>& upstream, Grad& grad) const;

    Grad zero_grad() const;
    std::size_t parameter_count() const;

    bool operator==(const Mlp& o) const;

  private:
    int in_dim_ = 0, depth_ = 0, width_ = 0, out_dim_ = 0;
    std::vector<MatX<Scalar>> weights_;
    std::vector<VecX<Scalar>> biases_;
};

} // namespace r3
