#ifndef TARO_THEORY_HPP
#define TARO_THEORY_HPP

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "taro/gmm.hpp"
#include "taro/grad_check.hpp"
#include "taro/purifier.hpp"

namespace taro {

/// Two experts u_f = x* + b_f + xi_f and u_c = x* + b_c + xi_c with zero-mean,
/// jointly Gaussian noise; cross = E[xi_f xi_c^T].
struct ExpertNoiseModel {
    Eigen::VectorXd x_star, b_f, b_c;
    Eigen::MatrixXd cov_f, cov_c, cross;

    std::size_t dim() const { return static_cast<std::size_t>(x_star.size()); }

    Eigen::MatrixXd joint() const
    {
        const auto d = x_star.size();
        Eigen::MatrixXd j(2 * d, 2 * d);
        j << cov_f, cross, cross.transpose(), cov_c;
        return j;
    }

    void validate() const
    {
        const auto d = x_star.size();
        if (d == 0) throw Error("expert model: empty signal");
        if (b_f.size() != d || b_c.size() != d || cov_f.rows() != d || cov_f.cols() != d || cov_c.rows() != d ||
            cov_c.cols() != d || cross.rows() != d || cross.cols() != d)
            throw Error("expert model: dimension mismatch");
        const Eigen::MatrixXd j = joint();
        if ((j - j.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw Error("expert model: covariance not symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
        if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
            throw Error("expert model: joint noise covariance is not positive semidefinite");
    }

    static ExpertNoiseModel independent(Eigen::VectorXd x_star, Eigen::VectorXd b_f, Eigen::VectorXd b_c,
                                        Eigen::MatrixXd cov_f, Eigen::MatrixXd cov_c)
    {
        const auto d = x_star.size();
        return {std::move(x_star), std::move(b_f), std::move(b_c), std::move(cov_f), std::move(cov_c),
                Eigen::MatrixXd::Zero(d, d)};
    }
};

/// ||b_gamma||^2 + tr Cov(xi_gamma), with b_gamma = b_c + gamma (b_f - b_c)
/// and xi_gamma = (1 - gamma) xi_c + gamma xi_f.
inline double risk_closed_form(const ExpertNoiseModel& m, double gamma)
{
    m.validate();
    const Eigen::VectorXd b = m.b_c + gamma * (m.b_f - m.b_c);
    const Eigen::MatrixXd cov = gamma * gamma * m.cov_f + (1 - gamma) * (1 - gamma) * m.cov_c +
                                gamma * (1 - gamma) * (m.cross + m.cross.transpose());
    return b.squaredNorm() + cov.trace();
}

struct McEstimate {
    double mean = 0.0;
    double se = 0.0;
    double cross_mean = 0.0; // sample mean of b_gamma^T xi_gamma
    double cross_se = 0.0;
    std::size_t n = 0;
};

namespace detail {

// Running mean and variance; identical samples give exactly their value and zero variance.
struct Welford {
    std::size_t n = 0;
    double mean = 0.0, m2 = 0.0;
    void add(double x)
    {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double se() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0; }
};

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& c)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

} // namespace detail

/// Sample mean of ||u_gamma - x*||^2 over n joint noise draws.
inline McEstimate risk_monte_carlo(const ExpertNoiseModel& m, double gamma, std::size_t n, Rng& rng)
{
    m.validate();
    if (n < 100) throw Error("risk_monte_carlo: need at least 100 samples");
    const auto d = m.x_star.size();
    const Eigen::MatrixXd S = detail::psd_sqrt(m.joint());
    const Eigen::VectorXd b = m.b_c + gamma * (m.b_f - m.b_c);
    detail::Welford risk, cross;
    Eigen::VectorXd z(2 * d);
    for (std::size_t i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < 2 * d; ++k) z[k] = rng.normal();
        const Eigen::VectorXd xi = S * z;
        const Eigen::VectorXd xi_g = xi.tail(d) + gamma * (xi.head(d) - xi.tail(d));
        risk.add((b + xi_g).squaredNorm());
        cross.add(b.dot(xi_g));
    }
    return {risk.mean, risk.se(), cross.mean, cross.se(), n};
}

/// risk(gamma) = a gamma^2 + b gamma + c, coefficients from the moments.
struct QuadraticRisk {
    double a = 0.0, b = 0.0, c = 0.0;
    double operator()(double g) const { return (a * g + b) * g + c; }
    double vertex() const { return a > 0.0 ? -b / (2.0 * a) : std::nan(""); }
};

inline QuadraticRisk risk_coefficients(const ExpertNoiseModel& m)
{
    m.validate();
    const Eigen::VectorXd db = m.b_f - m.b_c;
    const double tf = m.cov_f.trace(), tc = m.cov_c.trace(), tx = m.cross.trace();
    return {db.squaredNorm() + tf + tc - 2.0 * tx, 2.0 * m.b_c.dot(db) + 2.0 * (tx - tc), m.b_c.squaredNorm() + tc};
}

struct GammaCurve {
    std::vector<double> gamma;
    std::vector<double> risk; // closed form at each gamma
    QuadraticRisk fit;        // exact expansion
    double gamma_star = 0.0;
};

inline GammaCurve risk_gamma_curve(const ExpertNoiseModel& m, const std::vector<double>& grid)
{
    if (grid.empty()) throw Error("risk_gamma_curve: empty gamma grid");
    GammaCurve c;
    c.gamma = grid;
    for (double g : grid) c.risk.push_back(risk_closed_form(m, g));
    c.fit = risk_coefficients(m);
    c.gamma_star = c.fit.vertex();
    return c;
}

/// Quadratic through three (gamma, risk) points, by Lagrange interpolation.
inline QuadraticRisk quadratic_through(double g0, double r0, double g1, double r1, double g2, double r2)
{
    Eigen::Matrix3d V;
    V << g0 * g0, g0, 1, g1 * g1, g1, 1, g2 * g2, g2, 1;
    const Eigen::Vector3d s = V.fullPivLu().solve(Eigen::Vector3d(r0, r1, r2));
    return {s[0], s[1], s[2]};
}

/// Precisions Lambda_k combined with weights summing to one.
struct LocalGaussianPair {
    std::vector<Eigen::MatrixXd> precisions;
    std::vector<double> weights;

    static LocalGaussianPair two_expert(const Eigen::MatrixXd& fine, const Eigen::MatrixXd& coarse, double gamma)
    {
        return {{fine, coarse}, {gamma, 1.0 - gamma}};
    }
};

struct AffinePrecision {
    Eigen::MatrixXd lambda;
    bool is_pd = false;
    double min_eigenvalue = 0.0;
    // Two-expert inputs with gamma > 1 and Lambda_f - Lambda_c PSD: smallest
    // eigenvalue of Lambda_aff - Lambda_f (nonnegative when the ordering holds).
    bool ordering_applies = false;
    double dominance_floor = 0.0;
};

inline bool is_spd(const Eigen::MatrixXd& m)
{
    if (m.rows() != m.cols() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.norm()))
        return false;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    return llt.info() == Eigen::Success;
}

inline double min_eigenvalue(const Eigen::MatrixXd& m)
{
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (m + m.transpose())).eigenvalues().minCoeff();
}

inline AffinePrecision affine_precision(const LocalGaussianPair& pair)
{
    if (pair.precisions.empty() || pair.precisions.size() != pair.weights.size())
        throw Error("affine_precision: weight count mismatch");
    double s = 0.0;
    for (double w : pair.weights) s += w;
    if (std::abs(s - 1.0) > 1e-12) throw Error("affine_precision: weights sum to " + std::to_string(s));
    for (const auto& p : pair.precisions)
        if (!is_spd(p)) throw Error("affine_precision: input precision is not SPD");

    AffinePrecision out;
    out.lambda = Eigen::MatrixXd::Zero(pair.precisions[0].rows(), pair.precisions[0].cols());
    for (std::size_t k = 0; k < pair.precisions.size(); ++k) out.lambda += pair.weights[k] * pair.precisions[k];
    out.min_eigenvalue = min_eigenvalue(out.lambda);
    out.is_pd = out.min_eigenvalue > 0.0 && Eigen::LLT<Eigen::MatrixXd>(out.lambda).info() == Eigen::Success;
    if (pair.precisions.size() == 2 && pair.weights[0] > 1.0 &&
        min_eigenvalue(pair.precisions[0] - pair.precisions[1]) >= 0.0) {
        out.ordering_applies = true;
        out.dominance_floor = min_eigenvalue(out.lambda - pair.precisions[0]);
    }
    return out;
}

/// Lambda_f + (gamma - 1)(Lambda_f - Lambda_c)
inline Eigen::MatrixXd affine_precision_two_expert(const Eigen::MatrixXd& fine, const Eigen::MatrixXd& coarse,
                                                   double gamma)
{
    return fine + (gamma - 1.0) * (fine - coarse);
}

struct InterpolationRow {
    double gamma = 0.0;
    Eigen::VectorXd affine_score; // gamma s_f + (1 - gamma) s_c
    Eigen::VectorXd poe_score;    // sum_k raw_k (D_k - x), raw = (gamma / s_f^2, (1 - gamma) / s_c^2)
    Eigen::VectorXd fd_score;     // central difference of the affine log-density
    double poe_gap = 0.0;         // max |affine - poe|
    double fd_rel = 0.0;          // relative error of fd against affine
};

/// Score of gamma log p_f + (1 - gamma) log p_c at x, three ways.
inline std::vector<InterpolationRow> poe_interpolation_check(const GaussianMixture& gmm, const Eigen::VectorXd& x,
                                                             double sigma_f, double sigma_c,
                                                             const std::vector<double>& grid)
{
    if (!(sigma_f > 0.0) || !(sigma_c > 0.0)) throw Error("poe_interpolation_check: sigmas must be positive");
    const Tensor xt = from_eigen(x);
    const Eigen::VectorXd s_f = to_eigen(smoothed_score(gmm, xt, sigma_f));
    const Eigen::VectorXd s_c = to_eigen(smoothed_score(gmm, xt, sigma_c));
    std::vector<InterpolationRow> rows;
    for (double g : grid) {
        InterpolationRow r;
        r.gamma = g;
        r.affine_score = g * s_f + (1.0 - g) * s_c;
        const PoeScore p = poe_score(gmm, xt, {sigma_f, sigma_c},
                                     {g / (sigma_f * sigma_f), (1.0 - g) / (sigma_c * sigma_c)});
        r.poe_score = to_eigen(p.weighted_sum);
        const Tensor fd = finite_difference(
            [&](const Tensor& v) {
                return g * smoothed_log_density(gmm, v, sigma_f) + (1.0 - g) * smoothed_log_density(gmm, v, sigma_c);
            },
            xt, 1e-5);
        r.fd_score = to_eigen(fd);
        r.poe_gap = (r.affine_score - r.poe_score).cwiseAbs().maxCoeff();
        r.fd_rel = relative_error(fd, from_eigen(r.affine_score));
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Bias and noise moments of two GMM posterior-mean experts at a clean point,
/// estimated from n independent noisy evaluations each.
inline ExpertNoiseModel empirical_expert_model(const GaussianMixture& gmm, const Eigen::VectorXd& x_star,
                                               double sigma_f, double sigma_c, std::size_t n, Rng& rng)
{
    if (n < 2) throw Error("empirical_expert_model: need at least two samples");
    const auto d = x_star.size();
    Eigen::MatrixXd uf(n, d), uc(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd ef(d), ec(d);
        for (Eigen::Index k = 0; k < d; ++k) ef[k] = rng.normal();
        for (Eigen::Index k = 0; k < d; ++k) ec[k] = rng.normal();
        uf.row(static_cast<Eigen::Index>(i)) = to_eigen(tweedie_denoise(gmm, from_eigen(x_star + sigma_f * ef), sigma_f)).transpose();
        uc.row(static_cast<Eigen::Index>(i)) = to_eigen(tweedie_denoise(gmm, from_eigen(x_star + sigma_c * ec), sigma_c)).transpose();
    }
    const Eigen::VectorXd mf = uf.colwise().mean().transpose(), mc = uc.colwise().mean().transpose();
    const Eigen::MatrixXd cf = uf.rowwise() - mf.transpose(), cc = uc.rowwise() - mc.transpose();
    const double den = static_cast<double>(n - 1);
    ExpertNoiseModel m;
    m.x_star = x_star;
    m.b_f = mf - x_star;
    m.b_c = mc - x_star;
    m.cov_f = cf.transpose() * cf / den;
    m.cov_c = cc.transpose() * cc / den;
    m.cov_f = 0.5 * (m.cov_f + m.cov_f.transpose());
    m.cov_c = 0.5 * (m.cov_c + m.cov_c.transpose());
    m.cross = Eigen::MatrixXd::Zero(d, d);
    return m;
}

} // namespace taro

#endif // TARO_THEORY_HPP
