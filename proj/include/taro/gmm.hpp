#ifndef TARO_GMM_HPP
#define TARO_GMM_HPP

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "taro/random.hpp"
#include "taro/tensor.hpp"

namespace taro {

inline Eigen::VectorXd to_eigen(const Tensor& t) { return Eigen::Map<const Eigen::VectorXd>(t.data.data(), t.size()); }

inline Tensor from_eigen(const Eigen::VectorXd& v) { return Tensor::vector(std::vector<double>(v.data(), v.data() + v.size())); }

inline Eigen::MatrixXd to_eigen_matrix(const Tensor& t)
{
    if (t.rank() != 2) throw Error("to_eigen_matrix: expected rank 2, got " + shape_str(t.shape));
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data.data(), t.shape[0], t.shape[1]);
}

inline Tensor from_eigen_matrix(const Eigen::MatrixXd& m)
{
    Tensor t = Tensor::zeros({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.data[i * m.cols() + j] = m(i, j);
    return t;
}

/// Gaussian mixture with one class label per component.
struct GaussianMixture {
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covariances;
    std::vector<int> labels;

    std::size_t components() const { return weights.size(); }
    std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }

    int num_classes() const
    {
        int c = 0;
        for (int l : labels) c = std::max(c, l + 1);
        return c;
    }

    void validate() const
    {
        if (weights.empty()) throw Error("gmm: no components");
        if (means.size() != weights.size() || covariances.size() != weights.size() || labels.size() != weights.size())
            throw Error("gmm: component arrays have different lengths");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw Error("gmm: negative weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) throw Error("gmm: weights sum to " + std::to_string(s));
        const auto d = means.front().size();
        for (std::size_t k = 0; k < components(); ++k) {
            if (means[k].size() != d || covariances[k].rows() != d || covariances[k].cols() != d)
                throw Error("gmm: component " + std::to_string(k) + " has inconsistent dimension");
            if (!covariances[k].isApprox(covariances[k].transpose(), 1e-12))
                throw Error("gmm: covariance " + std::to_string(k) + " is not symmetric");
            Eigen::LLT<Eigen::MatrixXd> llt(covariances[k]);
            if (llt.info() != Eigen::Success)
                throw Error("gmm: covariance " + std::to_string(k) + " is not positive definite");
            if (labels[k] < 0) throw Error("gmm: negative class label");
        }
    }

    Eigen::VectorXd mean() const
    {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
        for (std::size_t k = 0; k < components(); ++k) m += weights[k] * means[k];
        return m;
    }

    /// Largest component standard deviation (sqrt of the largest covariance eigenvalue).
    double max_scale() const
    {
        double m = 0.0;
        for (const auto& c : covariances) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
            m = std::max(m, std::sqrt(es.eigenvalues().maxCoeff()));
        }
        return m;
    }
};

namespace detail {

// Per-component quantities of the smoothed mixture at one noise level.
struct SmoothedComponent {
    Eigen::LLT<Eigen::MatrixXd> chol;
    double log_norm = 0.0; // log w_k - 0.5 log det C_k - 0.5 d log 2pi
};

inline std::vector<SmoothedComponent> smoothed_components(const GaussianMixture& g, double sigma)
{
    if (!(sigma >= 0.0)) throw Error("gmm: sigma must be nonnegative");
    const auto d = static_cast<Eigen::Index>(g.dim());
    std::vector<SmoothedComponent> out(g.components());
    for (std::size_t k = 0; k < g.components(); ++k) {
        Eigen::MatrixXd c = g.covariances[k] + sigma * sigma * Eigen::MatrixXd::Identity(d, d);
        out[k].chol.compute(c);
        if (out[k].chol.info() != Eigen::Success)
            throw Error("gmm: smoothed covariance " + std::to_string(k) + " is not invertible");
        const Eigen::MatrixXd L = out[k].chol.matrixL();
        const double logdet = 2.0 * L.diagonal().array().log().sum();
        out[k].log_norm = (g.weights[k] > 0.0 ? std::log(g.weights[k]) : -INFINITY) - 0.5 * logdet -
                          0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
    }
    return out;
}

inline std::vector<double> component_log_terms(const GaussianMixture& g, const std::vector<SmoothedComponent>& comps,
                                               const Eigen::VectorXd& x)
{
    std::vector<double> lt(g.components());
    for (std::size_t k = 0; k < g.components(); ++k) {
        const Eigen::VectorXd r = x - g.means[k];
        lt[k] = comps[k].log_norm - 0.5 * r.dot(comps[k].chol.solve(r));
    }
    return lt;
}

inline double log_sum_exp(const std::vector<double>& v)
{
    double m = -INFINITY;
    for (double a : v) m = std::max(m, a);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double a : v) s += std::exp(a - m);
    return m + std::log(s);
}

inline void require_dim(const GaussianMixture& g, const Tensor& x)
{
    if (x.size() != g.dim())
        throw Error("gmm: point of shape " + shape_str(x.shape) + " does not match dimension " +
                    std::to_string(g.dim()));
}

} // namespace detail

/// log p_sigma(x) where p_sigma is the mixture convolved with N(0, sigma^2 I).
inline double smoothed_log_density(const GaussianMixture& g, const Tensor& x, double sigma)
{
    detail::require_dim(g, x);
    const auto comps = detail::smoothed_components(g, sigma);
    return detail::log_sum_exp(detail::component_log_terms(g, comps, to_eigen(x)));
}

/// Posterior component probabilities of x under p_sigma.
inline std::vector<double> responsibilities(const GaussianMixture& g, const Tensor& x, double sigma)
{
    detail::require_dim(g, x);
    const auto comps = detail::smoothed_components(g, sigma);
    auto lt = detail::component_log_terms(g, comps, to_eigen(x));
    const double lse = detail::log_sum_exp(lt);
    for (auto& v : lt) v = std::exp(v - lse);
    return lt;
}

/// Probability of class `label` at x under the unsmoothed mixture.
inline double class_posterior(const GaussianMixture& g, const Tensor& x, int label)
{
    const auto r = responsibilities(g, x, 0.0);
    double p = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k)
        if (g.labels[k] == label) p += r[k];
    return p;
}

inline int bayes_class(const GaussianMixture& g, const Tensor& x)
{
    int best = 0;
    double bp = -1.0;
    for (int c = 0; c < g.num_classes(); ++c) {
        const double p = class_posterior(g, x, c);
        if (p > bp) {
            bp = p;
            best = c;
        }
    }
    return best;
}

/// grad_x log p_sigma(x) = sum_k r_k (Sigma_k + sigma^2 I)^{-1} (mu_k - x)
inline Tensor smoothed_score(const GaussianMixture& g, const Tensor& x, double sigma)
{
    detail::require_dim(g, x);
    const auto comps = detail::smoothed_components(g, sigma);
    const Eigen::VectorXd xe = to_eigen(x);
    auto lt = detail::component_log_terms(g, comps, xe);
    const double lse = detail::log_sum_exp(lt);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(xe.size());
    for (std::size_t k = 0; k < g.components(); ++k) {
        const double r = std::exp(lt[k] - lse);
        if (r == 0.0) continue;
        s += r * comps[k].chol.solve(g.means[k] - xe);
    }
    return from_eigen(s);
}

/// Tweedie posterior mean x + sigma^2 * score.
inline Tensor tweedie_denoise(const GaussianMixture& g, const Tensor& x, double sigma)
{
    return tensor_ops::axpy(x, sigma * sigma, smoothed_score(g, x, sigma));
}

/// Row-wise tweedie_denoise of an N x d batch.
inline Tensor tweedie_denoise_batch(const GaussianMixture& g, const Tensor& X, double sigma)
{
    Tensor out = X;
    const std::size_t d = X.cols();
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const Tensor r = tweedie_denoise(g, X.row(i), sigma);
        std::copy(r.data.begin(), r.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

inline Tensor forward_noise(const Tensor& x0, double sigma, const Tensor& eps)
{
    tensor_ops::require_same_shape(x0, eps, "forward_noise");
    return tensor_ops::axpy(x0, sigma, eps);
}

struct GmmSamples {
    Tensor x;                       // N x d
    std::vector<int> labels;        // class per row
    std::vector<std::size_t> component;
};

inline GmmSamples sample(const GaussianMixture& g, std::size_t n, Rng& rng)
{
    g.validate();
    if (n == 0) throw Error("gmm: cannot draw an empty sample");
    const std::size_t d = g.dim();
    std::vector<Eigen::MatrixXd> L;
    for (const auto& c : g.covariances) L.push_back(Eigen::LLT<Eigen::MatrixXd>(c).matrixL());
    std::discrete_distribution<std::size_t> pick(g.weights.begin(), g.weights.end());
    GmmSamples s;
    s.x = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = pick(rng.engine());
        Eigen::VectorXd z(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) z[static_cast<Eigen::Index>(j)] = rng.normal();
        const Eigen::VectorXd v = g.means[k] + L[k] * z;
        for (std::size_t j = 0; j < d; ++j) s.x.data[i * d + j] = v[static_cast<Eigen::Index>(j)];
        s.labels.push_back(g.labels[k]);
        s.component.push_back(k);
    }
    return s;
}

} // namespace taro

#endif // TARO_GMM_HPP
