#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "taro/attack.hpp"
#include "taro/denoiser.hpp"
#include "taro/toy_purifiers.hpp"

using namespace taro;

namespace {

struct Fixture {
    Dataset train, test;
    std::shared_ptr<const Classifier> linear, mlp;
    std::shared_ptr<const Denoiser> den;
};

const Fixture& fixture()
{
    static const Fixture f = [] {
        Fixture f;
        Rng data(7);
        f.train = synth_dataset("separated-2d", 512, data);
        f.test = synth_dataset("separated-2d", 64, data);
        ClassifierSpec lin;
        lin.kind = ClassifierKind::Linear;
        Rng r1(1), r2(2);
        f.linear = std::make_shared<Classifier>(train_classifier(f.train, lin, r1));
        f.mlp = std::make_shared<Classifier>(train_classifier(f.train, ClassifierSpec{}, r2));
        f.den = std::make_shared<GmmDenoiser>(f.train.gmm);
        return f;
    }();
    return f;
}

std::shared_ptr<const Purifier> small_taro(std::size_t iters = 4)
{
    TaroConfig c = TaroConfig::taro2();
    c.iters = iters;
    c.step = 0.1;
    return std::make_shared<TaroPurifier>(c, fixture().den);
}

Tensor first_rows(const Tensor& x, std::size_t n) { return detail::row_block(x, 0, n); }
std::vector<int> first_labels(const std::vector<int>& y, std::size_t n) { return {y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n)}; }

double cosine(const Tensor& a, const Tensor& b)
{
    return tensor_ops::dot(a, b) / (tensor_ops::norm(a) * tensor_ops::norm(b));
}

} // namespace

TEST(Projection, Examples)
{
    const Tensor d = Tensor::matrix(2, 2, {0.3, -0.05, 3.0, 4.0});
    const Tensor li = project(d, {Norm::Linf, 0.1});
    EXPECT_EQ(li.data, (std::vector<double>{0.1, -0.05, 0.1, 0.1}));
    const Tensor l2 = project(d, {Norm::L2, 1.0});
    EXPECT_DOUBLE_EQ(l2.data[0], 0.3);
    EXPECT_DOUBLE_EQ(l2.data[2], 0.6);
    EXPECT_DOUBLE_EQ(l2.data[3], 0.8);
    ThreatModel boxed{Norm::Linf, 0.5, true, 0.0, 1.0};
    const Tensor x = Tensor::matrix(1, 2, {0.9, 0.2});
    const Tensor pb = project(Tensor::matrix(1, 2, {0.4, -0.4}), boxed, &x);
    EXPECT_NEAR(pb.data[0], 0.1, 1e-15);
    EXPECT_NEAR(pb.data[1], -0.2, 1e-15);
    EXPECT_THROW(ThreatModel({Norm::L2, 0.0}).validate(), Error);
}

TEST(Pgd, StaysInsideBudget)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.mlp};
    for (Norm n : {Norm::Linf, Norm::L2}) {
        AttackConfig cfg;
        cfg.steps = 5;
        cfg.random_start = true;
        cfg.restarts = 2;
        const ThreatModel t{n, 0.3};
        const auto r = pgd_eot(first_rows(f.test.x, 40), first_labels(f.test.y, 40), pipe, t, cfg, Rng(3));
        for (double v : r.norm) EXPECT_LE(v, 0.3 + 1e-12);
        EXPECT_EQ(r.loss_trace.size(), cfg.steps + 1);
    }
}

TEST(Pgd, IdentityPurifierModesAgree)
{
    const auto& f = fixture();
    const Pipeline pipe{std::make_shared<IdentityPurifier>(), f.mlp};
    AttackConfig cfg;
    const Tensor x = first_rows(f.test.x, 16);
    const auto y = first_labels(f.test.y, 16);
    cfg.mode = GradientMode::FullUnroll;
    const Tensor ref = eot_gradient(x, y, pipe, cfg, Rng(1)).grad;
    for (auto m : {GradientMode::DetachedUnroll, GradientMode::OneStepApprox, GradientMode::BpdaIdentity}) {
        cfg.mode = m;
        EXPECT_LT(tensor_ops::max_abs_diff(eot_gradient(x, y, pipe, cfg, Rng(1)).grad, ref), 1e-10)
            << gradient_mode_name(m);
    }
    const ThreatModel t{Norm::Linf, 0.2};
    cfg.mode = GradientMode::FullUnroll;
    const auto a = pgd_eot(x, y, pipe, t, cfg, Rng(4));
    const auto b = bpda_eot(x, y, pipe, t, cfg, Rng(4));
    EXPECT_EQ(a.x_adv, b.x_adv);
}

TEST(Pgd, Deterministic)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.linear};
    AttackConfig cfg;
    cfg.steps = 3;
    cfg.n_eot = 2;
    cfg.random_start = true;
    const ThreatModel t{Norm::L2, 0.5};
    const auto a = pgd_eot(f.test.x, f.test.y, pipe, t, cfg, Rng(5));
    const auto b = pgd_eot(f.test.x, f.test.y, pipe, t, cfg, Rng(5));
    EXPECT_EQ(a.x_adv, b.x_adv);
    EXPECT_EQ(a.pred, b.pred);
    const auto c = pgd_eot(f.test.x, f.test.y, pipe, t, cfg, Rng(6));
    EXPECT_NE(a.x_adv, c.x_adv);
}

TEST(Pgd, ChunkResultsDoNotDependOnBatchLength)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.linear};
    AttackConfig cfg;
    cfg.steps = 3;
    const ThreatModel t{Norm::Linf, 0.2};
    const auto all = pgd_eot(f.test.x, f.test.y, pipe, t, cfg, Rng(8));
    const auto head = pgd_eot(first_rows(f.test.x, detail::kChunkRows), first_labels(f.test.y, detail::kChunkRows),
                              pipe, t, cfg, Rng(8));
    EXPECT_EQ(first_rows(all.x_adv, detail::kChunkRows), head.x_adv);
}

TEST(Pgd, TinyBudgetKeepsCleanAccuracy)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.mlp};
    AttackConfig cfg;
    cfg.steps = 3;
    const Rng rng(9);
    const auto ev = evaluate(pipe, f.test, {Norm::Linf, 1e-9}, {cfg}, rng);
    EXPECT_EQ(ev.robust_accuracy, ev.clean_accuracy);
}

TEST(Pgd, LinearClassifierBrokenBeyondMargin)
{
    const auto& f = fixture();
    const auto& clf = *f.linear;
    // Logit gap w.x + b; its l_inf distance to the boundary is |gap| / ||w||_1.
    const Tensor W = clf.net.weights[0];
    const std::size_t d = clf.dim();
    double w1 = 0.0;
    for (std::size_t j = 0; j < d; ++j) w1 += std::abs((W.data[j * 2 + 1] - W.data[j * 2]) * clf.scale.data[j]);
    const Tensor z = clf.logits(f.test.x);
    double worst = 0.0;
    for (std::size_t i = 0; i < f.test.size(); ++i) worst = std::max(worst, std::abs(z.data[2 * i + 1] - z.data[2 * i]) / w1);
    AttackConfig cfg;
    const Pipeline pipe{nullptr, f.linear};
    const auto r = pgd_eot(f.test.x, f.test.y, pipe, {Norm::Linf, 2.0 * worst}, cfg, Rng(1));
    EXPECT_EQ(r.robust_accuracy(), 0.0);
}

TEST(Pgd, LossIncreasesOnMostSamples)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.mlp};
    AttackConfig cfg;
    cfg.steps = 10;
    cfg.n_eot = 4;
    cfg.loss = AttackLoss::Margin;
    const auto r = pgd_eot(f.test.x, f.test.y, pipe, {Norm::L2, 0.3}, cfg, Rng(2));
    std::size_t up = 0;
    for (std::size_t i = 0; i < f.test.size(); ++i) up += r.loss_trace.back()[i] >= r.loss_trace.front()[i];
    EXPECT_GE(static_cast<double>(up), 0.9 * static_cast<double>(f.test.size()));
}

TEST(Unroll, QuadraticOneStepJacobian)
{
    Eigen::Matrix2d A;
    A << 2.0, 0.5, 0.5, 1.0;
    const double eta = 0.3;
    const QuadraticPurifier q(A, Eigen::Vector2d(0.1, -0.2), eta, 1);
    const Tensor x0 = Tensor::matrix(1, 2, {0.7, 0.4});
    const Tensor w = Tensor::matrix(1, 2, {1.0, -2.0});
    auto grad_for = [&](Differentiation m) {
        ad::Tape tape;
        Rng rng(0);
        const auto x = tape.leaf(x0);
        const auto out = q.apply(x, rng, m);
        return ad::grad(ad::sum(ad::mul(out, tape.constant(w))), x).value();
    };
    const Tensor full = grad_for(differentiation_for(GradientMode::FullUnroll));
    const Tensor det = grad_for(differentiation_for(GradientMode::DetachedUnroll));
    const Eigen::Vector2d we(1.0, -2.0);
    const Eigen::Vector2d expect_full = (Eigen::Matrix2d::Identity() - eta * A) * we;
    EXPECT_NEAR(full.data[0], expect_full[0], 1e-12);
    EXPECT_NEAR(full.data[1], expect_full[1], 1e-12);
    EXPECT_NEAR(det.data[0], we[0], 1e-12);
    EXPECT_NEAR(det.data[1], we[1], 1e-12);
    const Eigen::Vector2d diff = -eta * A * we;
    EXPECT_NEAR(full.data[0] - det.data[0], diff[0], 1e-8);
    EXPECT_NEAR(full.data[1] - det.data[1], diff[1], 1e-8);
}

TEST(Unroll, ZeroStepSizeModesCoincide)
{
    const auto& f = fixture();
    Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
    const Pipeline pipe{std::make_shared<QuadraticPurifier>(A, Eigen::Vector2d::Zero(), 0.0, 3), f.mlp};
    const Tensor x = first_rows(f.test.x, 8);
    const auto y = first_labels(f.test.y, 8);
    AttackConfig cfg;
    cfg.mode = GradientMode::FullUnroll;
    const Tensor ref = eot_gradient(x, y, pipe, cfg, Rng(1)).grad;
    for (auto m : {GradientMode::DetachedUnroll, GradientMode::BpdaIdentity}) {
        cfg.mode = m;
        EXPECT_LT(tensor_ops::max_abs_diff(eot_gradient(x, y, pipe, cfg, Rng(1)).grad, ref), 1e-12);
    }
}

TEST(Eot, AverageConverges)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(2), f.mlp};
    const Tensor x = first_rows(f.test.x, 4);
    const auto y = first_labels(f.test.y, 4);
    AttackConfig cfg;
    cfg.mode = GradientMode::DetachedUnroll;
    cfg.n_eot = 4000;
    const Tensor ref = eot_gradient(x, y, pipe, cfg, Rng(100)).grad;
    cfg.n_eot = 200;
    std::vector<Tensor> blocks;
    for (std::uint64_t b = 0; b < 20; ++b) blocks.push_back(eot_gradient(x, y, pipe, cfg, Rng(200 + b)).grad);
    EXPECT_GT(cosine(blocks[0], ref), 0.99);
    // Block means are centred on the reference to within three standard errors.
    Tensor mean = Tensor::zeros(x.shape), var = Tensor::zeros(x.shape);
    for (const auto& g : blocks) mean = tensor_ops::axpy(mean, 1.0 / 20.0, g);
    for (const auto& g : blocks)
        for (std::size_t q = 0; q < g.size(); ++q) var.data[q] += (g.data[q] - mean.data[q]) * (g.data[q] - mean.data[q]) / 19.0;
    std::size_t inside = 0;
    for (std::size_t q = 0; q < mean.size(); ++q)
        inside += std::abs(mean.data[q] - ref.data[q]) <= 3.0 * std::sqrt(var.data[q] / 20.0) + 1e-12;
    EXPECT_GE(static_cast<double>(inside), 0.9 * static_cast<double>(mean.size()));
}

TEST(Errors, ModesAndLimits)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.mlp};
    AttackConfig cfg;
    cfg.mode = GradientMode::BpdaIdentity;
    EXPECT_THROW(unrolled_attack(f.test.x, f.test.y, pipe, {Norm::Linf, 0.1}, cfg, Rng(1)), Error);
    cfg.mode = GradientMode::FullUnroll;
    cfg.max_tape_nodes = 100;
    try {
        pgd_eot(f.test.x, f.test.y, pipe, {Norm::Linf, 0.1}, cfg, Rng(1));
        FAIL() << "expected tape limit error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("inner iterations"), std::string::npos);
    }
    EXPECT_THROW(evaluate(pipe, Dataset{Tensor::zeros({0, 2}), {}, f.test.gmm}, {Norm::Linf, 0.1}, {}, Rng(1)), Error);
    EXPECT_THROW(parse_gradient_mode("adjoint"), Error);
    EXPECT_THROW(pgd_eot(f.test.x, {0}, pipe, {Norm::Linf, 0.1}, AttackConfig{}, Rng(1)), Error);
}

TEST(Evaluate, WorstCaseOverAttacksAndDeterminism)
{
    const auto& f = fixture();
    const Pipeline pipe{small_taro(), f.linear};
    AttackConfig a, b;
    a.steps = b.steps = 4;
    b.mode = GradientMode::BpdaIdentity;
    const ThreatModel t{Norm::Linf, 0.25};
    const auto e1 = evaluate(pipe, f.test, t, {a, b}, Rng(3));
    const auto e2 = evaluate(pipe, f.test, t, {a, b}, Rng(3));
    EXPECT_EQ(e1.robust, e2.robust);
    EXPECT_EQ(e1.pred_clean, e2.pred_clean);
    for (const auto& s : e1.attacks) EXPECT_LE(e1.robust_accuracy, s.robust_accuracy);
    const auto none = evaluate(pipe, f.test, t, {}, Rng(3));
    EXPECT_EQ(none.robust_accuracy, none.clean_accuracy);
}
