#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "taro/adversary_aware.hpp"
#include "taro/denoiser.hpp"
#include "taro/grad_check.hpp"

using namespace taro;
using ad::Tape;
using ad::Variable;

namespace {

struct Fixture {
    Dataset train, test;
    std::shared_ptr<const Classifier> clf;
    std::shared_ptr<const GmmDenoiser> den;
    ResidualCorpus corpus;
    std::shared_ptr<const PerturbationModel> pert;
    TrainLog log;
};

CorpusSpec l2_spec()
{
    CorpusSpec s;
    s.norm = Norm::L2;
    s.eps = 0.3;
    s.samples = 256;
    return s;
}

PertTrainConfig quick_train()
{
    PertTrainConfig c;
    c.steps = 400;
    return c;
}

const Fixture& fixture()
{
    static const Fixture f = [] {
        Fixture f;
        Rng data(7);
        f.train = synth_dataset("separated-2d", 512, data);
        f.test = synth_dataset("separated-2d", 256, data);
        ClassifierSpec lin;
        lin.kind = ClassifierKind::Linear;
        Rng r(1);
        f.clf = std::make_shared<Classifier>(train_classifier(f.train, lin, r));
        f.den = std::make_shared<GmmDenoiser>(f.train.gmm);
        f.corpus = generate_residual_corpus(f.train, *f.clf, l2_spec(), Rng(2));
        Rng tr(3);
        f.pert = std::make_shared<PerturbationModel>(train_perturbation_model(f.corpus, quick_train(), tr, &f.log));
        return f;
    }();
    return f;
}

AaConfig small_aa(double lambda = 0.25)
{
    AaConfig c;
    c.taro.iters = 3;
    c.lambda_pert = lambda;
    return c;
}

struct Step {
    AaTerms terms;
    Tensor direction;
};

Step one_step(const Tensor& x0, const AaConfig& cfg, const PerturbationModel* pert, std::uint64_t seed,
              Tape& tape, const Variable& x)
{
    Rng rng(seed);
    const TaroConfig& tc = cfg.taro;
    const double t = 0.3;
    const auto times = effective_timesteps(t, tc.kappas_at(t), tc.noise.t_min, tc.noise.t_max, tc.rule);
    const TemporalExperts e = compute_experts(x, times, tc.noise, *fixture().den, rng);
    const Variable xa = tape.constant(tensor_ops::add(x0, Tensor::full(x0.shape, 0.05)));
    Step s{taro_aa_terms(x, xa, e, t, tc.noise.sigma(t), cfg, pert, rng), {}};
    s.direction = s.terms.objective.direction(x, false).value();
    return s;
}

} // namespace

TEST(Corpus, ResidualsRespectBudget)
{
    const auto& f = fixture();
    CorpusSpec s = l2_spec();
    s.norm = Norm::Linf;
    s.eps = 0.4;
    const auto c = generate_residual_corpus(f.train, *f.clf, s, Rng(4));
    ASSERT_GT(c.size(), 0u);
    for (double v : row_norms(c.residuals, Norm::Linf)) EXPECT_LE(v, 0.4 + 1e-12);
    for (double v : row_norms(f.corpus.residuals, Norm::L2)) EXPECT_LE(v, 0.3 + 1e-12);
    EXPECT_EQ(f.corpus.attempted, 256u);
}

TEST(Corpus, ZeroBudgetGivesZeros)
{
    const auto& f = fixture();
    CorpusSpec s = l2_spec();
    s.eps = 0.0;
    const auto c = generate_residual_corpus(f.train, *f.clf, s, Rng(4));
    EXPECT_EQ(c.size(), 256u);
    EXPECT_EQ(tensor_ops::max_abs(c.residuals), 0.0);
}

TEST(Corpus, Deterministic)
{
    const auto& f = fixture();
    EXPECT_TRUE(generate_residual_corpus(f.train, *f.clf, l2_spec(), Rng(2)) == f.corpus);
}

TEST(Corpus, Errors)
{
    const auto& f = fixture();
    CorpusSpec s = l2_spec();
    s.eps = 1e-6; // nothing flips
    EXPECT_THROW(generate_residual_corpus(f.train, *f.clf, s, Rng(1)), Error);
    s.samples = 0;
    EXPECT_THROW(generate_residual_corpus(f.train, *f.clf, s, Rng(1)), Error);
}

TEST(PerturbationModel, LearnsBetterThanZeroPredictor)
{
    const auto& f = fixture();
    const double d = static_cast<double>(f.corpus.dim());
    EXPECT_LT(f.log.final_val_loss, d);
    EXPECT_LT(f.log.final_val_loss, f.log.initial_val_loss);
    ASSERT_GE(f.log.val_curve.size(), 4u);
    EXPECT_LT(f.log.val_curve[3], f.log.val_curve[0]);
}

TEST(PerturbationModel, SameSeedSameParameters)
{
    const auto& f = fixture();
    PertTrainConfig c = quick_train();
    c.steps = 50;
    Rng a(9), b(9);
    EXPECT_TRUE(train_perturbation_model(f.corpus, c, a) == train_perturbation_model(f.corpus, c, b));
}

TEST(Hybrid, AggregatedNoiseIdentity)
{
    const auto& f = fixture();
    const Tensor x0 = detail::row_block(f.test.x, 0, 8);
    Tape tape;
    const Variable x = tape.leaf(x0);
    const auto s = one_step(x0, small_aa(), f.pert.get(), 1, tape, x);
    EXPECT_LT(tensor_ops::max_abs_diff(tensor_ops::sub(s.terms.x_t.value(), x0), s.terms.eps_taro), 1e-12);
}

TEST(Hybrid, PriorOnlyDirection)
{
    const auto& f = fixture();
    const Tensor x0 = detail::row_block(f.test.x, 0, 8);
    Tape tape;
    const Variable x = tape.leaf(x0);
    const auto s = one_step(x0, small_aa(0.0), f.pert.get(), 1, tape, x);
    EXPECT_FALSE(s.terms.has_pert);
    const Tensor expect = tensor_ops::sub(s.terms.eps_hat.value(), s.terms.eps_taro);
    EXPECT_LT(tensor_ops::max_abs_diff(s.direction, expect), 1e-12);
}

TEST(Hybrid, FrozenBranchesGiveClosedFormDirection)
{
    const auto& f = fixture();
    const Tensor x0 = detail::row_block(f.test.x, 0, 8);
    Tape tape;
    const Variable x = tape.leaf(x0);
    const AaConfig cfg = small_aa(0.25);
    const auto s = one_step(x0, cfg, f.pert.get(), 1, tape, x);
    ASSERT_TRUE(s.terms.has_pert);
    Tensor expect = tensor_ops::sub(s.terms.eps_hat.value(), s.terms.eps_taro);
    expect = tensor_ops::axpy(expect, 0.25, tensor_ops::sub(s.terms.d_out.value(), s.terms.eps_prime));
    EXPECT_LT(relative_error(s.direction, expect), 1e-12);

    // The same loss with nothing frozen, against central differences with the noise held fixed.
    auto full_loss = [&](const Tensor& v) {
        Tape t2;
        const Variable xv = t2.constant(v);
        return one_step(x0, cfg, f.pert.get(), 1, t2, xv).terms.objective.loss.item();
    };
    const Tensor g = ad::grad(s.terms.objective.loss, x).value();
    EXPECT_LT(relative_error(g, finite_difference(full_loss, x0, 1e-6)), 1e-5);
}

TEST(Hybrid, SingleExpertCollapse)
{
    const auto& f = fixture();
    const Tensor x0 = detail::row_block(f.test.x, 0, 4);
    AaConfig cfg = small_aa(0.0);
    cfg.taro.kappa = {0.0};
    Tape tape;
    const Variable x = tape.leaf(x0);
    const auto s = one_step(x0, cfg, nullptr, 2, tape, x);
    // With one expert: eps_hat = (x + n - D(x + n)) / sigma and eps_taro = n.
    Rng rng(2);
    const double sig = cfg.taro.noise.sigma(0.3);
    const Tensor n = tensor_ops::scale(rng.normal_tensor(x0.shape), sig);
    const Tensor xn = tensor_ops::add(x0, n);
    const Tensor eh = tensor_ops::scale(tensor_ops::sub(xn, f.den->denoise(xn, sig)), 1.0 / sig);
    EXPECT_LT(tensor_ops::max_abs_diff(s.terms.eps_taro, n), 1e-15);
    EXPECT_LT(tensor_ops::max_abs_diff(s.direction, tensor_ops::sub(eh, n)), 1e-10);
}

TEST(Hybrid, ZeroLambdaMatchesBranchDeletion)
{
    const auto& f = fixture();
    const Tensor x0 = detail::row_block(f.test.x, 0, 16);
    Rng a(5), b(5);
    const auto with_model = purify_aa(x0, small_aa(0.0), *f.den, f.pert.get(), a);
    const auto no_model = purify_aa(x0, small_aa(0.25), *f.den, nullptr, b);
    EXPECT_EQ(with_model.x, no_model.x);
}

TEST(Hybrid, ZeroIterationsReturnInput)
{
    const auto& f = fixture();
    AaConfig cfg = small_aa();
    cfg.taro.iters = 0;
    Rng rng(1);
    const Tensor x0 = detail::row_block(f.test.x, 0, 8);
    EXPECT_EQ(purify_aa(x0, cfg, *f.den, f.pert.get(), rng).x, x0);
}

TEST(Hybrid, Errors)
{
    const auto& f = fixture();
    Tape tape;
    const Tensor x0 = detail::row_block(f.test.x, 0, 2);
    const Variable x = tape.leaf(x0);
    Rng rng(1);
    const TemporalExperts e = compute_experts_at(x, {0.5}, *f.den, rng);
    EXPECT_THROW(taro_aa_terms(x, x, e, 0.0, 0.0, small_aa(), f.pert.get(), rng), Error);
    AaConfig bad = small_aa();
    bad.lambda_pert = -1.0;
    EXPECT_THROW(bad.validate(), Error);
    Rng r2(2);
    PerturbationModel wrong = PerturbationModel::init(3, {4}, r2);
    EXPECT_THROW(purify_aa(x0, small_aa(), *f.den, &wrong, rng), Error);
}

TEST(Hybrid, CleanAccuracyPreserved)
{
    const auto& f = fixture();
    AaConfig cfg;
    cfg.taro.step = 0.02;
    cfg.taro.timesteps = TimestepSchedule::linear(0.25, 0.0);
    const Pipeline bare{nullptr, f.clf};
    const Pipeline aa{std::make_shared<TaroAaPurifier>(cfg, f.den, f.pert), f.clf};
    const double base = accuracy_of(predict_clean(bare, f.test.x, Rng(1)), f.test.y);
    const double with = accuracy_of(predict_clean(aa, f.test.x, Rng(1)), f.test.y);
    EXPECT_GE(with, base - 0.05);
}
