#ifndef TARO_CHECKS_HPP
#define TARO_CHECKS_HPP

// Numerical self-checks shared by the acceptance runner and the theory-check
// subcommand. Each suite returns rows of (measured value, threshold, verdict).

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "taro/autodiff.hpp"
#include "taro/dataset.hpp"
#include "taro/grad_check.hpp"
#include "taro/purifier.hpp"
#include "taro/random.hpp"
#include "taro/theory.hpp"

namespace taro {

struct CheckRow {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation; // "<", "<=", ">=", "=="
    bool pass = false;
    std::string note;
};

struct CheckSuite {
    std::string id;
    std::string title;
    std::vector<CheckRow> rows;

    bool pass() const
    {
        if (rows.empty()) return false;
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }

    void below(std::string name, double v, double thr, std::string note = {})
    {
        rows.push_back({std::move(name), v, thr, "<", std::isfinite(v) && v < thr, std::move(note)});
    }
    void at_most(std::string name, double v, double thr, std::string note = {})
    {
        rows.push_back({std::move(name), v, thr, "<=", std::isfinite(v) && v <= thr, std::move(note)});
    }
    void at_least(std::string name, double v, double thr, std::string note = {})
    {
        rows.push_back({std::move(name), v, thr, ">=", std::isfinite(v) && v >= thr, std::move(note)});
    }
    void exact(std::string name, double v, std::string note = {})
    {
        rows.push_back({std::move(name), v, 0.0, "==", v == 0.0, std::move(note)});
    }
};

inline std::string format_row(const CheckRow& r)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-4s %-44s %.4g %s %.4g", r.pass ? "ok" : "FAIL", r.name.c_str(), r.value,
                  r.relation.c_str(), r.threshold);
    std::string s = buf;
    if (!r.note.empty()) s += "  (" + r.note + ")";
    return s;
}

namespace checks {

namespace detail {

using ad::Tape;
using ad::Variable;
using UnaryOp = std::function<Variable(const Variable&)>;
using BinaryOp = std::function<Variable(const Variable&, const Variable&)>;

inline Tensor uniform_tensor(const Shape& s, double lo, double hi, Rng& rng)
{
    Tensor t = Tensor::zeros(s);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// max relative error of reverse mode against central differences, output
// scalarized by a random weighting
inline double fd_unary(const UnaryOp& op, const Shape& shape, double lo, double hi, int cases, Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const Tensor x = uniform_tensor(shape, lo, hi, rng);
        Tape probe;
        const Tensor w = rng.normal_tensor(op(probe.constant(x)).shape());
        Tape tape;
        Variable xv = tape.leaf(x);
        const Tensor g = ad::grad(ad::dot(op(xv), tape.constant(w)), xv).value();
        const Tensor fd = finite_difference(
            [&](const Tensor& p) {
                Tape t;
                return tensor_ops::dot(op(t.constant(p)).value(), w);
            },
            x, 1e-6);
        worst = std::max(worst, relative_error(g, fd));
    }
    return worst;
}

inline double fd_binary(const BinaryOp& op, const Shape& sa, const Shape& sb, double lo, double hi, int cases, Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const Tensor a = uniform_tensor(sa, lo, hi, rng), b = uniform_tensor(sb, lo, hi, rng);
        Tape probe;
        const Tensor w = rng.normal_tensor(op(probe.constant(a), probe.constant(b)).shape());
        Tape tape;
        Variable av = tape.leaf(a), bv = tape.leaf(b);
        const auto g = ad::grad(ad::dot(op(av, bv), tape.constant(w)), {av, bv});
        const Tensor fa = finite_difference(
            [&](const Tensor& p) {
                Tape t;
                return tensor_ops::dot(op(t.constant(p), t.constant(b)).value(), w);
            },
            a, 1e-6);
        const Tensor fb = finite_difference(
            [&](const Tensor& p) {
                Tape t;
                return tensor_ops::dot(op(t.constant(a), t.constant(p)).value(), w);
            },
            b, 1e-6);
        worst = std::max({worst, relative_error(g[0].value(), fa), relative_error(g[1].value(), fb)});
    }
    return worst;
}

// FD of the build_graph gradient along a random direction
inline double fd_second_order(const UnaryOp& op, const Shape& shape, double lo, double hi, int cases, Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const Tensor x = uniform_tensor(shape, lo, hi, rng);
        Tape probe;
        const Tensor w = rng.normal_tensor(op(probe.constant(x)).shape());
        const Tensor v = rng.normal_tensor(shape);
        auto gv = [&](const Tensor& p) {
            Tape t;
            Variable xv = t.leaf(p);
            Variable g = ad::grad(ad::dot(op(xv), t.constant(w)), xv, true);
            return ad::dot(g, t.constant(v)).item();
        };
        Tape tape;
        Variable xv = tape.leaf(x);
        Variable g = ad::grad(ad::dot(op(xv), tape.constant(w)), xv, true);
        const Tensor hv = ad::grad(ad::dot(g, tape.constant(v)), xv).value();
        worst = std::max(worst, relative_error(hv, finite_difference(gv, x, 1e-5)));
    }
    return worst;
}

inline ExpertNoiseModel correlated_model()
{
    Eigen::Vector2d x(0.3, -1.0), bf(0.02, -0.01), bc(0.4, 0.25);
    Eigen::Matrix2d cf, cc, cx;
    cf << 0.30, 0.05, 0.05, 0.20;
    cc << 0.04, 0.01, 0.01, 0.05;
    cx << 0.03, 0.00, 0.01, 0.02;
    return {x, bf, bc, cf, cc, cx};
}

inline Eigen::MatrixXd random_spd(int d, Rng& rng, double floor)
{
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d * d; ++i) g.data()[i] = rng.normal();
    return g * g.transpose() + floor * Eigen::MatrixXd::Identity(d, d);
}

inline GaussianMixture random_gmm(int d, int K, Rng& rng)
{
    GaussianMixture g;
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
        g.weights.push_back(rng.uniform(0.2, 1.0));
        s += g.weights.back();
        Eigen::VectorXd mu(d);
        for (int j = 0; j < d; ++j) mu[j] = 2.0 * rng.normal();
        g.means.push_back(mu);
        Eigen::MatrixXd c = 0.3 * random_spd(d, rng, 0.0) + 0.2 * Eigen::MatrixXd::Identity(d, d);
        g.covariances.push_back(0.5 * (c + c.transpose()));
        g.labels.push_back(k % 2);
    }
    double head = 0.0;
    for (int k = 0; k + 1 < K; ++k) head += (g.weights[k] /= s);
    g.weights.back() = 1.0 - head;
    return g;
}

} // namespace detail

/// Reverse-mode gradients of every primitive against finite differences, plus
/// exact Hessian-vector products on quadratics.
inline CheckSuite autodiff(std::uint64_t seed = 1, int cases = 100)
{
    using detail::Variable;
    CheckSuite s{"1", "autodiff correctness", {}};
    Rng root(seed);
    std::uint64_t stream = 0;
    const Shape v{4}, m{3, 4};
    auto un = [&](const char* name, const detail::UnaryOp& op, const Shape& sh, double lo, double hi) {
        Rng rng = root.child(++stream);
        s.below(std::string("fd ") + name, detail::fd_unary(op, sh, lo, hi, cases, rng), 1e-5);
    };
    auto bin = [&](const char* name, const detail::BinaryOp& op, const Shape& a, const Shape& b, double lo,
                   double hi) {
        Rng rng = root.child(++stream);
        s.below(std::string("fd ") + name, detail::fd_binary(op, a, b, lo, hi, cases, rng), 1e-5);
    };
    bin("add", ad::add, m, m, -2, 2);
    bin("sub", ad::sub, m, m, -2, 2);
    bin("mul", ad::mul, m, m, -2, 2);
    bin("div", ad::div, v, v, 0.5, 2);
    un("neg", ad::neg, m, -2, 2);
    bin("matmul", ad::matmul, {3, 4}, {4, 2}, -2, 2);
    un("transpose", ad::transpose, m, -2, 2);
    un("sum", [](const Variable& x) { return ad::sum(x); }, m, -2, 2);
    un("sum axis 0", [](const Variable& x) { return ad::sum(x, 0); }, m, -2, 2);
    un("sum axis 1", [](const Variable& x) { return ad::sum(x, 1); }, m, -2, 2);
    un("mean", ad::mean, m, -2, 2);
    bin("dot", ad::dot, m, m, -2, 2);
    un("sq_norm", ad::sq_norm, m, -2, 2);
    un("exp", ad::exp, m, -2, 2);
    un("log", ad::log, m, 0.2, 3);
    un("tanh", ad::tanh, m, -2, 2);
    un("softplus", ad::softplus, m, -4, 4);
    un("sigmoid", ad::sigmoid, m, -4, 4);
    un("sqrt", ad::sqrt, m, 0.2, 3);
    un("scale", [](const Variable& x) { return ad::scale(x, -1.7); }, m, -2, 2);
    un("broadcast row", [](const Variable& x) { return ad::broadcast(ad::slice(x, 0, 0, 1), {5, 4}); }, m, -2, 2);
    un("broadcast scalar", [](const Variable& x) { return ad::broadcast(ad::sum(x), {2, 3}); }, m, -2, 2);
    bin("concat", [](const Variable& a, const Variable& b) { return ad::concat({a, b, a}, 1); }, m, {3, 2}, -2, 2);
    un("slice", [](const Variable& x) { return ad::slice(x, 1, 1, 3); }, m, -2, 2);
    un("clamp inside", [](const Variable& x) { return ad::clamp(x, -1, 1); }, m, -0.9, 0.9);
    un("clamp outside", [](const Variable& x) { return ad::clamp(x, -1, 1); }, m, 1.1, 3);

    const Shape q{2, 3};
    auto second = [&](const char* name, const detail::UnaryOp& op, double lo, double hi) {
        Rng rng = root.child(++stream);
        s.below(std::string("fd hvp ") + name, detail::fd_second_order(op, q, lo, hi, cases / 5 + 1, rng), 1e-5);
    };
    second("mul/tanh", [](const Variable& x) { return ad::mul(x, ad::tanh(x)); }, -2, 2);
    second("div/exp/softplus", [](const Variable& x) { return ad::div(ad::exp(x), ad::softplus(x)); }, -2, 2);
    second("log", [](const Variable& x) { return ad::mul(ad::log(x), x); }, 0.3, 3);
    second("sqrt", [](const Variable& x) { return ad::sqrt(ad::mul(x, x)); }, 0.3, 3);
    second("matmul", [](const Variable& x) { return ad::tanh(ad::matmul(x, ad::transpose(x))); }, -1, 1);

    // 0.5 x^T A x has Hessian A, so the double-backward product must be A v.
    Rng rng = root.child(++stream);
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 5);
        const Tensor B = rng.normal_tensor({n, n});
        Tensor A = Tensor::zeros({n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) A.at(i, j) = B.at(i, j) + B.at(j, i);
        detail::Tape tape;
        Variable x = tape.leaf(rng.normal_tensor({n, 1}));
        const Tensor dir = rng.normal_tensor({n, 1});
        Variable L = ad::scale(ad::sum(ad::mul(x, ad::matmul(tape.constant(A), x))), 0.5);
        Variable g = ad::grad(L, x, true);
        const Tensor hv = ad::grad(ad::dot(g, tape.constant(dir)), x).value();
        for (std::size_t i = 0; i < n; ++i) {
            double ref = 0.0;
            for (std::size_t j = 0; j < n; ++j) ref += A.at(i, j) * dir[j];
            worst = std::max(worst, std::abs(hv[i] - ref));
        }
    }
    s.below("quadratic hvp max abs error", worst, 1e-8);
    return s;
}

/// Tweedie identity, score against the log-density, and the posterior-mean
/// property of the analytic denoiser.
inline CheckSuite tweedie(std::uint64_t seed = 2, int cases = 100)
{
    CheckSuite s{"2", "tweedie and score identities", {}};
    Rng root(seed);
    {
        Rng rng = root.child(1);
        double worst = 0.0;
        for (int i = 0; i < cases; ++i) {
            const auto g = detail::random_gmm(3, 3, rng);
            const double sigma = rng.uniform(0.0, 3.0);
            const Tensor x = rng.normal_tensor({3});
            const Tensor gap = tensor_ops::sub(tensor_ops::sub(tweedie_denoise(g, x, sigma), x),
                                               tensor_ops::scale(smoothed_score(g, x, sigma), sigma * sigma));
            worst = std::max(worst, tensor_ops::max_abs(gap));
        }
        s.below("D(x) - x - sigma^2 score", worst, 1e-12);
    }
    {
        Rng rng = root.child(2);
        double worst = 0.0;
        for (int i = 0; i < cases; ++i) {
            const auto g = detail::random_gmm(3, 3, rng);
            const double sigma = rng.uniform(0.0, 2.0);
            const Tensor x = rng.normal_tensor({3});
            const Tensor fd =
                finite_difference([&](const Tensor& p) { return smoothed_log_density(g, p, sigma); }, x, 1e-5);
            worst = std::max(worst, relative_error(smoothed_score(g, x, sigma), fd));
        }
        s.below("score vs fd of log density (rel)", worst, 1e-6);
    }
    {
        // The posterior mean is the projection: E[(x0 - D(x)) h(x)] = 0 for every h.
        GaussianMixture g;
        g.weights = {0.3, 0.7};
        g.means = {Eigen::VectorXd::Constant(1, -1.5), Eigen::VectorXd::Constant(1, 1.0)};
        g.covariances = {Eigen::MatrixXd::Constant(1, 1, 0.25), Eigen::MatrixXd::Constant(1, 1, 0.4)};
        g.labels = {0, 1};
        const double sigma = 0.6;
        Rng rng = root.child(3);
        const auto smp = sample(g, 100'000, rng);
        const std::vector<std::pair<const char*, std::function<double(double)>>> tests{
            {"1", [](double) { return 1.0; }},
            {"x", [](double x) { return x; }},
            {"tanh(2x)", [](double x) { return std::tanh(2.0 * x); }}};
        std::vector<::taro::detail::Welford> acc(tests.size());
        for (std::size_t i = 0; i < smp.x.rows(); ++i) {
            const double x0 = smp.x.data[i];
            const double x = x0 + sigma * rng.normal();
            const double r = x0 - tweedie_denoise(g, Tensor::vector({x}), sigma)[0];
            for (std::size_t k = 0; k < tests.size(); ++k) acc[k].add(r * tests[k].second(x));
        }
        for (std::size_t k = 0; k < tests.size(); ++k)
            s.at_most(std::string("posterior mean mc |z|, h=") + tests[k].first, std::abs(acc[k].mean) / acc[k].se(),
                      3.0);
    }
    return s;
}

/// Affine structure of the coarse-anchored target and the quadrature identity.
inline CheckSuite taro_algebra(std::uint64_t seed = 3, int cases = 200)
{
    using detail::Variable;
    CheckSuite s{"3", "target algebra", {}};
    Rng rng(seed);
    auto constants = [](detail::Tape& t, const std::vector<Tensor>& ts) {
        std::vector<Variable> out;
        for (const auto& x : ts) out.push_back(t.constant(x));
        return out;
    };
    double sum_gap = 0.0, k2_gap = 0.0, fine_gap = 0.0, coarse_gap = 0.0;
    for (int i = 0; i < cases; ++i) {
        const std::size_t K = 2 + static_cast<std::size_t>(i % 4);
        const double gamma = rng.uniform(0.0, 3.0);
        const auto c = taro_coefficients(K, gamma);
        double sum = 0.0, mag = 0.0;
        for (double v : c) {
            sum += v;
            mag += std::abs(v);
        }
        sum_gap = std::max(sum_gap, std::abs(sum - 1.0) / mag);

        std::vector<Tensor> us;
        for (std::size_t k = 0; k < K; ++k) us.push_back(rng.normal_tensor({3, 2}));
        detail::Tape tape;
        const auto u = constants(tape, us);
        fine_gap = std::max(fine_gap, tensor_ops::max_abs_diff(taro_target(u, 1.0).value(), us.front()));
        coarse_gap = std::max(coarse_gap, tensor_ops::max_abs_diff(taro_target(u, 0.0).value(), us.back()));
        const Tensor k2 = guided_target_k2(u[0], u[1], gamma).value();
        k2_gap = std::max(k2_gap, tensor_ops::max_abs_diff(k2, taro_target({u[0], u[1]}, gamma).value()));
    }
    s.below("coefficient sum - 1, relative to sum |c|", sum_gap, 4 * std::numeric_limits<double>::epsilon());
    s.below("K=2 target vs guided form", k2_gap, 1e-14);
    s.exact("gamma=1 target vs fine expert", fine_gap);
    s.exact("gamma=0 target vs coarse expert", coarse_gap);

    const GaussianMixture g = preset_gmm("tri-2d");
    double poe_gap = 0.0;
    for (int i = 0; i < cases; ++i) {
        const Tensor x = tensor_ops::scale(rng.normal_tensor({2}), 2.0);
        std::vector<double> sig, raw;
        double lam = 0.0;
        for (int k = 0; k < 3; ++k) {
            sig.push_back(rng.uniform(0.05, 3.0));
            raw.push_back(rng.uniform(-2.0, 3.0));
            lam += raw.back();
        }
        if (std::abs(lam) < 1e-3) continue;
        const auto p = poe_score(g, x, sig, raw);
        poe_gap = std::max(poe_gap, tensor_ops::max_abs_diff(p.weighted_sum, p.consensus_form));
    }
    s.below("quadrature identity sum w(u-x) vs L(Dbar-x)", poe_gap, 1e-12);
    return s;
}

/// Bias-variance decomposition of the guided estimator risk.
inline CheckSuite risk_decomposition(std::uint64_t seed = 4, std::size_t n = 100'000)
{
    CheckSuite s{"4", "risk decomposition", {}};
    const auto m = detail::correlated_model();
    const std::vector<double> grid{0.0, 0.5, 1.0, 1.5, 2.0, 3.0};
    Rng root(seed);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        Rng rng = root.child(i);
        const auto mc = risk_monte_carlo(m, grid[i], n, rng);
        const double cf = risk_closed_form(m, grid[i]);
        char tag[32];
        std::snprintf(tag, sizeof tag, "gamma=%.1f", grid[i]);
        s.at_most(std::string("mc vs closed form |z| ") + tag, std::abs(mc.mean - cf) / mc.se, 3.0);
        s.at_most(std::string("cross term |z| ") + tag, std::abs(mc.cross_mean) / mc.cross_se, 3.0);
    }

    // least-squares quadratic through the closed-form curve
    const auto curve = risk_gamma_curve(m, grid);
    Eigen::MatrixXd V(grid.size(), 3);
    Eigen::VectorXd r(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        V(i, 0) = grid[i] * grid[i];
        V(i, 1) = grid[i];
        V(i, 2) = 1.0;
        r[i] = curve.risk[i];
    }
    const Eigen::Vector3d q = V.colPivHouseholderQr().solve(r);
    const double resid = (V * q - r).cwiseAbs().maxCoeff() / r.cwiseAbs().maxCoeff();
    s.below("quadratic fit residual (rel)", resid, 1e-10);
    const double coef_gap = std::max({std::abs(q[0] - curve.fit.a), std::abs(q[1] - curve.fit.b),
                                      std::abs(q[2] - curve.fit.c)}) /
                            std::max({std::abs(curve.fit.a), std::abs(curve.fit.b), std::abs(curve.fit.c)});
    s.below("fit vs expanded coefficients (rel)", coef_gap, 1e-10);
    return s;
}

/// Two-expert affine precision identity, ordering, and a non-PD counterexample.
inline CheckSuite affine_precision_suite(std::uint64_t seed = 5, int trials = 100)
{
    CheckSuite s{"5", "affine precision", {}};
    Rng rng(seed);
    double gap = 0.0;
    int held = 0;
    for (int t = 0; t < trials; ++t) {
        const int d = 2 + static_cast<int>(rng.index(4));
        const Eigen::MatrixXd lc = detail::random_spd(d, rng, 0.1);
        const Eigen::MatrixXd lf = lc + detail::random_spd(d, rng, 0.1);
        const double gamma = 1.0 + rng.uniform(1e-6, 3.0);
        const auto out = affine_precision(LocalGaussianPair::two_expert(lf, lc, gamma));
        gap = std::max(gap, (out.lambda - affine_precision_two_expert(lf, lc, gamma)).cwiseAbs().maxCoeff() /
                                std::max(1.0, lf.cwiseAbs().maxCoeff()));
        held += out.ordering_applies && out.is_pd && out.dominance_floor >= -1e-12 * lf.norm();
    }
    s.below("weighted sum vs two-expert form (rel)", gap, 1e-12);
    s.at_least("ordering held (of " + std::to_string(trials) + ")", held, trials);

    // Gaussian prior: the affine log-density score is -L_aff (x - mu) exactly.
    GaussianMixture g;
    g.weights = {1.0};
    g.means = {Eigen::Vector2d(0.2, 0.1)};
    Eigen::Matrix2d cov;
    cov << 0.5, 0.1, 0.1, 0.3;
    g.covariances = {cov};
    g.labels = {0};
    const double sf = 0.2, sc = 0.8;
    const Eigen::Matrix2d lf = (cov + sf * sf * Eigen::Matrix2d::Identity()).inverse();
    const Eigen::Matrix2d lc = (cov + sc * sc * Eigen::Matrix2d::Identity()).inverse();
    double score_gap = 0.0;
    for (double gamma : {0.5, 1.0, 1.5, 2.5}) {
        const Eigen::Vector2d x(rng.normal(), rng.normal());
        const auto rows = poe_interpolation_check(g, x, sf, sc, {gamma});
        const Eigen::Vector2d expect = -affine_precision_two_expert(lf, lc, gamma) * (x - g.means[0]);
        score_gap = std::max({score_gap, (rows[0].affine_score - expect).cwiseAbs().maxCoeff(), rows[0].poe_gap});
    }
    s.below("gaussian affine score vs -L_aff (x - mu)", score_gap, 1e-12);

    // coarse sharper than fine: extrapolation loses definiteness
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    const auto bad = affine_precision(LocalGaussianPair::two_expert(I, 5.0 * I, 2.0));
    char note[64];
    std::snprintf(note, sizeof note, "min eigenvalue %.3g", bad.min_eigenvalue);
    s.at_least("non-pd counterexample detected", bad.is_pd ? 0.0 : 1.0, 1.0, note);
    return s;
}

inline std::vector<CheckSuite> theory_suites(std::uint64_t seed = 0)
{
    return {autodiff(seed + 1), tweedie(seed + 2), taro_algebra(seed + 3), risk_decomposition(seed + 4),
            affine_precision_suite(seed + 5)};
}

} // namespace checks

} // namespace taro

#endif // TARO_CHECKS_HPP
