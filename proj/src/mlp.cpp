// SPDX-License-Identifier: Apache-2.0
#include "r3/mlp.hpp"

#include <random>

namespace r3 {

template <typename Scalar>
Mlp<Scalar>::Mlp(int in_dim, int depth, int width, int out_dim, std::uint64_t seed,
                 Scalar output_weight_scale)
    : in_dim_(in_dim), depth_(depth), width_(width), out_dim_(out_dim) {
    if (in_dim < 1 || depth < 0 || (depth > 0 && width < 1) || out_dim < 1)
        throw ConfigError("mlp: invalid layer sizes");
    std::mt19937_64 rng(seed);
    int prev = in_dim;
    for (int l = 0; l <= depth; ++l) {
        const bool last = l == depth;
        const int out = last ? out_dim : width;
        const double bound =
            last ? double(output_weight_scale) / std::sqrt(double(prev)) : std::sqrt(6.0 / prev);
        std::uniform_real_distribution<double> dist(-bound, bound);
        MatX<Scalar> w(out, prev);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = bound > 0 ? Scalar(dist(rng)) : Scalar(0);
        weights_.push_back(std::move(w));
        biases_.push_back(VecX<Scalar>::Zero(out));
        prev = out;
    }
}

template <typename Scalar>
MatX<Scalar> Mlp<Scalar>::forward(const MatX<Scalar>& input, Cache* cache) const {
    if (input.cols() != in_dim_) throw ConfigError("mlp: input dimension mismatch");
    if (cache) cache->inputs.clear();
    MatX<Scalar> h = input;
    for (int l = 0; l < layer_count(); ++l) {
        MatX<Scalar> z = h * weights_[l].transpose();
        z.rowwise() += biases_[l].transpose();
        if (cache) cache->inputs.push_back(std::move(h));
        if (l + 1 < layer_count()) z = z.cwiseMax(Scalar(0));
        h = std::move(z);
    }
    return h;
}

template <typename Scalar>
MatX<Scalar> Mlp<Scalar>::backward(const Cache& cache, const MatX<Scalar>& upstream,
                                   Grad& grad) const {
    MatX<Scalar> dz = upstream;
    for (int l = layer_count() - 1; l >= 0; --l) {
        const auto& in = cache.inputs[std::size_t(l)];
        grad.weights[std::size_t(l)].noalias() += dz.transpose() * in;
        grad.biases[std::size_t(l)] += dz.colwise().sum().transpose();
        MatX<Scalar> dx = dz * weights_[std::size_t(l)];
        // ReLU derivative: the stored input of layer l is relu(z_{l-1}).
        if (l > 0) dx = (in.array() > Scalar(0)).select(dx, Scalar(0));
        dz = std::move(dx);
    }
    return dz;
}

template <typename Scalar> typename Mlp<Scalar>::Grad Mlp<Scalar>::zero_grad() const {
    Grad g;
    for (int l = 0; l < layer_count(); ++l) {
        g.weights.push_back(MatX<Scalar>::Zero(weights_[l].rows(), weights_[l].cols()));
        g.biases.push_back(VecX<Scalar>::Zero(biases_[l].size()));
    }
    return g;
}

template <typename Scalar> void Mlp<Scalar>::Grad::set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
}

template <typename Scalar> Scalar Mlp<Scalar>::Grad::squared_norm() const {
    Scalar s = 0;
    for (const auto& w : weights) s += w.squaredNorm();
    for (const auto& b : biases) s += b.squaredNorm();
    return s;
}

template <typename Scalar> std::size_t Mlp<Scalar>::parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l)
        n += std::size_t(weights_[l].size() + biases_[l].size());
    return n;
}

template <typename Scalar> bool Mlp<Scalar>::operator==(const Mlp& o) const {
    if (in_dim_ != o.in_dim_ || depth_ != o.depth_ || width_ != o.width_ || out_dim_ != o.out_dim_)
        return false;
    for (int l = 0; l < layer_count(); ++l)
        if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
    return true;
}

template class Mlp<float>;
template class Mlp<double>;

} // namespace r3
