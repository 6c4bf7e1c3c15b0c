#ifndef TARO_DENOISER_HPP
#define TARO_DENOISER_HPP

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "taro/autodiff.hpp"
#include "taro/gmm.hpp"
#include "taro/mlp.hpp"
#include "taro/schedule.hpp"

namespace taro {

/// Clean-signal estimate D(x, sigma) for an N x d batch of noisy rows.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual ad::Variable denoise(const ad::Variable& x, double sigma) const = 0;
    virtual std::string name() const = 0;

    Tensor denoise(const Tensor& x, double sigma) const
    {
        ad::Tape tape;
        return denoise(tape.constant(x), sigma).value();
    }
};

/// Exact posterior mean of a Gaussian mixture, written with tape primitives so
/// it can be differentiated to any order.
class GmmDenoiser : public Denoiser {
public:
    explicit GmmDenoiser(GaussianMixture gmm) : gmm_(std::move(gmm)) { gmm_.validate(); }

    using Denoiser::denoise;
    const GaussianMixture& gmm() const { return gmm_; }
    std::string name() const override { return "gmm"; }

    ad::Variable denoise(const ad::Variable& x, double sigma) const override
    {
        if (x.value().rank() != 2 || x.shape()[1] != gmm_.dim())
            throw Error("gmm denoiser: input shape " + shape_str(x.shape()) + " does not match dimension " +
                        std::to_string(gmm_.dim()));
        if (!(sigma >= 0.0)) throw Error("gmm denoiser: sigma must be nonnegative");
        ad::Tape& tape = x.tape();
        const std::size_t n = x.shape()[0], d = gmm_.dim(), K = gmm_.components();
        const auto di = static_cast<Eigen::Index>(d);

        std::vector<ad::Variable> logits, posterior_means;
        for (std::size_t k = 0; k < K; ++k) {
            const Eigen::MatrixXd C = gmm_.covariances[k] + sigma * sigma * Eigen::MatrixXd::Identity(di, di);
            Eigen::LLT<Eigen::MatrixXd> llt(C);
            if (llt.info() != Eigen::Success) throw Error("gmm denoiser: smoothed covariance not invertible");
            const Eigen::MatrixXd P = llt.solve(Eigen::MatrixXd::Identity(di, di));
            const Eigen::MatrixXd A = P * gmm_.covariances[k];
            const Eigen::MatrixXd L = llt.matrixL();
            const double log_norm = std::log(gmm_.weights[k]) - L.diagonal().array().log().sum();

            const ad::Variable mu = ad::broadcast(tape.constant(from_eigen_matrix(gmm_.means[k].transpose())), {n, d});
            const ad::Variable r = ad::sub(x, mu);
            const ad::Variable quad = ad::sum(ad::mul(r, ad::matmul(r, tape.constant(from_eigen_matrix(P)))), 1);
            logits.push_back(ad::sub(ad::broadcast(tape.scalar(log_norm), {n, 1}), ad::scale(quad, 0.5)));
            posterior_means.push_back(ad::add(mu, ad::matmul(r, tape.constant(from_eigen_matrix(A)))));
        }
        if (K == 1) return posterior_means.front();

        const ad::Variable z = ad::concat(logits, 1);
        Tensor row_max = Tensor::zeros({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            double m = -INFINITY;
            for (std::size_t k = 0; k < K; ++k) m = std::max(m, z.value().data[i * K + k]);
            row_max.data[i] = m;
        }
        const ad::Variable e = ad::exp(ad::sub(z, ad::broadcast(tape.constant(row_max), {n, K})));
        const ad::Variable resp = ad::div(e, ad::broadcast(ad::sum(e, 1), {n, K}));
        ad::Variable out;
        for (std::size_t k = 0; k < K; ++k) {
            const ad::Variable term = ad::mul(ad::broadcast(ad::slice(resp, 1, k, k + 1), {n, d}), posterior_means[k]);
            out = k == 0 ? term : ad::add(out, term);
        }
        return out;
    }

private:
    GaussianMixture gmm_;
};

/// Learned denoiser with EDM-style preconditioning around a small MLP:
/// D = c_skip x + c_out F([c_in x, log sigma]).
class MlpDenoiser : public Denoiser {
public:
    MlpDenoiser() = default;
    MlpDenoiser(Mlp net, double sigma_data) : net_(std::move(net)), sigma_data_(sigma_data) {}

    static MlpDenoiser init(std::size_t dim, const std::vector<std::size_t>& hidden, double sigma_data, Rng& rng)
    {
        std::vector<std::size_t> sizes{dim + 1};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(dim);
        return MlpDenoiser(Mlp::init(sizes, rng, Activation::Tanh), sigma_data);
    }

    using Denoiser::denoise;
    std::string name() const override { return "mlp"; }
    const Mlp& net() const { return net_; }
    Mlp& net() { return net_; }
    double sigma_data() const { return sigma_data_; }
    std::size_t dim() const { return net_.in_dim() - 1; }

    ad::Variable denoise(const ad::Variable& x, double sigma) const override
    {
        if (!(sigma > 0.0)) sigma = 1e-6;
        return denoise_rows(x, Tensor::full({x.shape()[0], 1}, sigma), net_.bind(x.tape(), false));
    }

    /// Per-row noise levels, parameters supplied by the caller (for training).
    ad::Variable denoise_rows(const ad::Variable& x, const Tensor& sigmas, const std::vector<ad::Variable>& p) const
    {
        if (x.value().rank() != 2 || x.shape()[1] != dim())
            throw Error("mlp denoiser: input shape " + shape_str(x.shape()) + " does not match dimension " +
                        std::to_string(dim()));
        ad::Tape& tape = x.tape();
        const std::size_t n = x.shape()[0], d = dim();
        const double sd2 = sigma_data_ * sigma_data_;
        Tensor c_skip = Tensor::zeros({n, 1}), c_out = c_skip, c_in = c_skip, feat = c_skip;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = sigmas.data[i];
            const double s2 = s * s;
            c_skip.data[i] = sd2 / (s2 + sd2);
            c_out.data[i] = s * sigma_data_ / std::sqrt(s2 + sd2);
            c_in.data[i] = 1.0 / std::sqrt(s2 + sd2);
            feat.data[i] = std::log(s) / 4.0;
        }
        auto col = [&](const Tensor& c) { return ad::broadcast(tape.constant(c), {n, d}); };
        const ad::Variable input = ad::concat({ad::mul(col(c_in), x), tape.constant(feat)}, 1);
        const ad::Variable f = net_.forward(input, p);
        return ad::add(ad::mul(col(c_skip), x), ad::mul(col(c_out), f));
    }

private:
    Mlp net_;
    double sigma_data_ = 1.0;
};

} // namespace taro

#endif // TARO_DENOISER_HPP
