#include <gtest/gtest.h>

#include <cmath>

#include "taro/dataset.hpp"
#include "taro/theory.hpp"

using namespace taro;

namespace {

ExpertNoiseModel toy_model()
{
    Eigen::Vector2d x(0.3, -1.0), bf(0.02, -0.01), bc(0.4, 0.25);
    Eigen::Matrix2d cf, cc, cx;
    cf << 0.30, 0.05, 0.05, 0.20;
    cc << 0.04, 0.01, 0.01, 0.05;
    cx << 0.03, 0.00, 0.01, 0.02;
    return {x, bf, bc, cf, cc, cx};
}

} // namespace

TEST(Risk, ClosedFormAgreesWithMonteCarlo)
{
    const auto m = toy_model();
    for (double g : {0.0, 0.5, 1.0, 1.5, 2.0}) {
        Rng rng(11);
        const auto mc = risk_monte_carlo(m, g, 40000, rng);
        const double cf = risk_closed_form(m, g);
        EXPECT_LT(std::abs(mc.mean - cf), 3.0 * mc.se + 1e-12) << "gamma " << g;
        EXPECT_LT(std::abs(mc.cross_mean), 3.0 * mc.cross_se + 1e-12) << "gamma " << g;
    }
}

TEST(Risk, HandComputedValue)
{
    // 1-d: b_f = 0, b_c = 1, var_f = 1, var_c = 0, no cross term.
    ExpertNoiseModel m = ExpertNoiseModel::independent(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                                       Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1),
                                                       Eigen::MatrixXd::Zero(1, 1));
    // (1 - g)^2 + g^2, minimised at g = 1/2 with value 1/2.
    EXPECT_DOUBLE_EQ(risk_closed_form(m, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(risk_closed_form(m, 2.0), 5.0);
    const auto curve = risk_gamma_curve(m, {0.0, 0.5, 1.0});
    EXPECT_DOUBLE_EQ(curve.gamma_star, 0.5);
}

TEST(Risk, CoefficientsMatchThreePointFit)
{
    const auto m = toy_model();
    const auto q = risk_coefficients(m);
    const auto fit = quadratic_through(0.0, risk_closed_form(m, 0.0), 1.0, risk_closed_form(m, 1.0), 2.0,
                                       risk_closed_form(m, 2.0));
    EXPECT_NEAR(q.a, fit.a, 1e-12);
    EXPECT_NEAR(q.b, fit.b, 1e-12);
    EXPECT_NEAR(q.c, fit.c, 1e-12);
    for (double g : {-0.7, 0.3, 1.3, 3.1}) EXPECT_NEAR(q(g), risk_closed_form(m, g), 1e-12);
}

TEST(Risk, CurveIsConvexAndVertexIsMinimum)
{
    const auto m = toy_model();
    std::vector<double> grid;
    for (int i = 0; i <= 40; ++i) grid.push_back(-1.0 + 0.1 * i);
    const auto c = risk_gamma_curve(m, grid);
    EXPECT_GT(c.fit.a, 0.0);
    for (std::size_t i = 1; i + 1 < grid.size(); ++i) EXPECT_LE(c.risk[i], 0.5 * (c.risk[i - 1] + c.risk[i + 1]) + 1e-12);
    for (double r : c.risk) EXPECT_GE(r + 1e-12, risk_closed_form(m, c.gamma_star));
}

TEST(Risk, BiasOnlyMonteCarloIsExact)
{
    auto m = toy_model();
    m.cov_f.setZero();
    m.cov_c.setZero();
    m.cross.setZero();
    Rng rng(3);
    const auto mc = risk_monte_carlo(m, 1.4, 500, rng);
    const Eigen::VectorXd b = m.b_c + 1.4 * (m.b_f - m.b_c);
    EXPECT_EQ(mc.mean, b.squaredNorm());
    EXPECT_EQ(mc.se, 0.0);
}

TEST(Risk, RejectsBadModels)
{
    auto m = toy_model();
    Rng rng(1);
    EXPECT_THROW(risk_monte_carlo(m, 1.0, 99, rng), Error);
    m.cross << 5.0, 0.0, 0.0, 5.0; // joint covariance indefinite
    EXPECT_THROW(risk_closed_form(m, 1.0), Error);
    auto w = toy_model();
    w.b_f = Eigen::VectorXd::Zero(3);
    EXPECT_THROW(risk_closed_form(w, 1.0), Error);
    EXPECT_THROW(risk_gamma_curve(toy_model(), {}), Error);
}

TEST(AffinePrecision, TwoExpertFormAndOrdering)
{
    Eigen::Matrix2d lf, lc;
    lf << 4.0, 0.5, 0.5, 3.0;
    lc << 1.0, 0.2, 0.2, 1.5;
    const auto out = affine_precision(LocalGaussianPair::two_expert(lf, lc, 1.5));
    EXPECT_LT((out.lambda - affine_precision_two_expert(lf, lc, 1.5)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_TRUE(out.is_pd);
    EXPECT_TRUE(out.ordering_applies);
    EXPECT_GE(out.dominance_floor, 0.0);
}

TEST(AffinePrecision, NonPdIsReportedNotThrown)
{
    Eigen::Matrix2d lf = Eigen::Matrix2d::Identity(), lc = 5.0 * Eigen::Matrix2d::Identity();
    const auto out = affine_precision(LocalGaussianPair::two_expert(lf, lc, 2.0)); // 2 - 5 = -3
    EXPECT_FALSE(out.is_pd);
    EXPECT_NEAR(out.min_eigenvalue, -3.0, 1e-12);
    EXPECT_FALSE(out.ordering_applies);
}

TEST(AffinePrecision, Validation)
{
    Eigen::Matrix2d ok = Eigen::Matrix2d::Identity(), bad;
    bad << 1.0, 0.0, 0.0, -1.0;
    EXPECT_THROW(affine_precision({{ok, bad}, {0.5, 0.5}}), Error);
    EXPECT_THROW(affine_precision({{ok, ok}, {0.5, 0.6}}), Error);
    EXPECT_THROW(affine_precision({{ok}, {0.5, 0.5}}), Error);
}

TEST(Interpolation, ThreeRoutesAgreeOnMixture)
{
    const auto gmm = preset_gmm("tri-2d");
    const Eigen::Vector2d x(0.4, -0.7);
    const auto rows = poe_interpolation_check(gmm, x, 0.3, 0.9, {0.0, 0.5, 1.0, 1.5, 2.0});
    for (const auto& r : rows) {
        EXPECT_LT(r.poe_gap, 1e-10) << "gamma " << r.gamma;
        EXPECT_LT(r.fd_rel, 1e-6) << "gamma " << r.gamma;
    }
}

TEST(Interpolation, SingleGaussianAffinePrecision)
{
    GaussianMixture g;
    g.weights = {1.0};
    g.means = {Eigen::Vector2d(0.2, 0.1)};
    Eigen::Matrix2d s;
    s << 0.5, 0.1, 0.1, 0.3;
    g.covariances = {s};
    g.labels = {0};
    const double sf = 0.2, sc = 0.8, gamma = 1.5;
    const Eigen::Vector2d x(1.0, -0.4);
    const Eigen::Matrix2d lf = (s + sf * sf * Eigen::Matrix2d::Identity()).inverse();
    const Eigen::Matrix2d lc = (s + sc * sc * Eigen::Matrix2d::Identity()).inverse();
    const Eigen::Vector2d expect = -affine_precision_two_expert(lf, lc, gamma) * (x - g.means[0]);
    const auto rows = poe_interpolation_check(g, x, sf, sc, {gamma});
    EXPECT_LT((rows[0].affine_score - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Interpolation, EmpiricalMomentsReproduceRiskCurve)
{
    const auto gmm = preset_gmm("separated-2d");
    const Eigen::VectorXd x = gmm.means[0];
    Rng rng(5);
    const auto m = empirical_expert_model(gmm, x, 0.2, 0.8, 4000, rng);
    EXPECT_LT(m.b_f.norm(), m.b_c.norm());
    // Direct affine combinations of fresh denoiser draws against the estimated closed form.
    Rng draw(6);
    detail::Welford w;
    const double gamma = 1.5;
    for (int i = 0; i < 4000; ++i) {
        const Tensor nf = draw.normal_tensor({2}), nc = draw.normal_tensor({2});
        const Eigen::VectorXd uf = to_eigen(tweedie_denoise(gmm, from_eigen(x + 0.2 * to_eigen(nf)), 0.2));
        const Eigen::VectorXd uc = to_eigen(tweedie_denoise(gmm, from_eigen(x + 0.8 * to_eigen(nc)), 0.8));
        w.add((uc + gamma * (uf - uc) - x).squaredNorm());
    }
    const double cf = risk_closed_form(m, gamma);
    EXPECT_LT(std::abs(w.mean - cf), 4.0 * w.se() + 0.05 * cf);
}

TEST(Risk, TrivialExamples)
{
    const auto m = toy_model();
    EXPECT_NEAR(risk_closed_form(m, 0.0), m.b_c.squaredNorm() + m.cov_c.trace(), 1e-15);
    EXPECT_NEAR(risk_closed_form(m, 1.0), m.b_f.squaredNorm() + m.cov_f.trace(), 1e-15);
    Eigen::MatrixXd cf = Eigen::MatrixXd::Zero(2, 2), cc = Eigen::MatrixXd::Zero(2, 2);
    cf(0, 0) = 1.0;
    cc(0, 0) = cc(1, 1) = 1.0;
    const auto z = ExpertNoiseModel::independent(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                                 Eigen::VectorXd::Zero(2), cf, cc);
    EXPECT_DOUBLE_EQ(risk_closed_form(z, 2.0), 6.0);
}

TEST(Risk, StandardErrorScalesWithSampleCount)
{
    const auto m = toy_model();
    Rng a(21), b(22);
    const double ratio = risk_monte_carlo(m, 1.5, 20000, a).se / risk_monte_carlo(m, 1.5, 40000, b).se;
    EXPECT_GE(ratio, 1.3);
    EXPECT_LE(ratio, 1.55);
}

TEST(Risk, FineCorrectionHelpsWhenCoarseIsBiased)
{
    const auto m = ExpertNoiseModel::independent(Eigen::VectorXd::Zero(2), Eigen::Vector2d(0.01, 0.0),
                                                 Eigen::Vector2d(1.0, 0.5), 0.1 * Eigen::MatrixXd::Identity(2, 2),
                                                 0.05 * Eigen::MatrixXd::Identity(2, 2));
    EXPECT_GT(risk_coefficients(m).vertex(), 0.0);
}

TEST(AffinePrecision, TrivialExamples)
{
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
    const auto a = affine_precision(LocalGaussianPair::two_expert(2 * I, I, 2.0));
    EXPECT_LT((a.lambda - 3 * I).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(a.is_pd);
    const auto b = affine_precision(LocalGaussianPair::two_expert(I, 2 * I, 3.0));
    EXPECT_LT((b.lambda + I).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_FALSE(b.is_pd);
}

TEST(AffinePrecision, RandomizedOrdering)
{
    Rng rng(17);
    int held = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 2 + static_cast<int>(rng.index(4));
        auto spd = [&] {
            Eigen::MatrixXd g(d, d);
            for (int i = 0; i < d * d; ++i) g.data()[i] = rng.normal();
            return Eigen::MatrixXd(g * g.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d));
        };
        const Eigen::MatrixXd lc = spd();
        const Eigen::MatrixXd lf = lc + spd();
        const double gamma = rng.uniform(1.0, 4.0) + 1e-9;
        const auto out = affine_precision(LocalGaussianPair::two_expert(lf, lc, gamma));
        EXPECT_LT((out.lambda - affine_precision_two_expert(lf, lc, gamma)).cwiseAbs().maxCoeff(),
                  1e-12 * std::max(1.0, lf.norm()));
        held += out.ordering_applies && out.dominance_floor >= -1e-12 * lf.norm();
    }
    EXPECT_EQ(held, 100);
}

TEST(Interpolation, EndpointsSelectOneExpert)
{
    const auto gmm = preset_gmm("tri-2d");
    const Eigen::Vector2d x(-0.3, 0.9);
    const auto rows = poe_interpolation_check(gmm, x, 0.3, 0.9, {1.0, 0.0});
    const Tensor xt = from_eigen(x);
    EXPECT_LT((rows[0].affine_score - to_eigen(smoothed_score(gmm, xt, 0.3))).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((rows[1].affine_score - to_eigen(smoothed_score(gmm, xt, 0.9))).cwiseAbs().maxCoeff(), 1e-15);
}
