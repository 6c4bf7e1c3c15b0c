#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "taro/classifier.hpp"
#include "taro/grad_check.hpp"

using namespace taro;

namespace {

ClassifierSpec linear_spec()
{
    ClassifierSpec s;
    s.kind = ClassifierKind::Linear;
    return s;
}

} // namespace

TEST(Classifier, SeparatedPresetIsLearned)
{
    Rng data(7);
    const Dataset train = synth_dataset("separated-2d", 1024, data);
    const Dataset test = synth_dataset("separated-2d", 1024, data);
    for (const auto& spec : {linear_spec(), ClassifierSpec{}}) {
        Rng rng(1);
        const Classifier clf = train_classifier(train, spec, rng);
        EXPECT_GE(clf.accuracy(test.x, test.y), 0.99) << classifier_kind_name(spec.kind);
    }
}

TEST(Classifier, SameSeedSameParameters)
{
    Rng data(2);
    const Dataset train = synth_dataset("tri-2d", 300, data);
    Rng a(9), b(9);
    EXPECT_TRUE(train_classifier(train, ClassifierSpec{}, a) == train_classifier(train, ClassifierSpec{}, b));
}

TEST(Classifier, ShuffledLabelsGiveChance)
{
    Rng data(4);
    const Dataset train = synth_dataset("separated-2d", 1024, data);
    const Dataset test = synth_dataset("separated-2d", 2048, data);
    std::vector<int> y = train.y;
    std::shuffle(y.begin(), y.end(), Rng(5).engine());
    Rng rng(1);
    const Classifier clf = train_classifier(train.x, y, 2, linear_spec(), rng);
    EXPECT_NEAR(clf.accuracy(test.x, test.y), 0.5, 0.1);
}

TEST(Classifier, LossGradientsMatchFiniteDifferences)
{
    Rng data(3);
    const Dataset d = synth_dataset("tri-2d", 6, data);
    Rng rng(1);
    ClassifierSpec spec;
    spec.steps = 20;
    const Classifier clf = train_classifier(d, spec, rng);
    for (int which = 0; which < 2; ++which) {
        auto f = [&](const Tensor& x) {
            ad::Tape tape;
            const auto z = clf.logits(tape.constant(x));
            return ad::sum(which == 0 ? cross_entropy_rows(z, d.y) : margin_rows(z, d.y)).item();
        };
        ad::Tape tape;
        const auto x = tape.leaf(d.x);
        const auto z = clf.logits(x);
        const auto loss = ad::sum(which == 0 ? cross_entropy_rows(z, d.y) : margin_rows(z, d.y));
        const Tensor g = ad::grad(loss, x).value();
        EXPECT_LT(relative_error(g, finite_difference(f, d.x, 1e-6)), 1e-6) << which;
    }
}

TEST(Classifier, MarginSignMatchesPrediction)
{
    Rng data(8);
    const Dataset d = synth_dataset("tri-2d", 200, data);
    Rng rng(1);
    ClassifierSpec spec;
    spec.steps = 30;
    const Classifier clf = train_classifier(d, spec, rng);
    ad::Tape tape;
    const auto m = margin_rows(clf.logits(tape.constant(d.x)), d.y).value();
    const auto p = clf.predict(d.x);
    for (std::size_t i = 0; i < d.size(); ++i)
        if (m.data[i] != 0.0) EXPECT_EQ(m.data[i] < 0.0, p[i] == d.y[i]);
}

TEST(Classifier, Errors)
{
    Rng rng(1);
    EXPECT_THROW(train_classifier(Tensor::zeros({0, 2}), {}, 2, ClassifierSpec{}, rng), Error);
    EXPECT_THROW(train_classifier(Tensor::zeros({2, 2}), {0, 1}, 1, ClassifierSpec{}, rng), Error);
    EXPECT_THROW(train_classifier(Tensor::zeros({2, 2}), {0, 3}, 2, ClassifierSpec{}, rng), Error);
    Tensor x = Tensor::zeros({2, 2});
    x.data[0] = NAN;
    EXPECT_THROW(train_classifier(x, {0, 1}, 2, ClassifierSpec{}, rng), Error);
    EXPECT_THROW(parse_classifier_kind("svm"), Error);
}

TEST(Synth, ClassFrequenciesMatchWeights)
{
    Rng rng(12);
    const Dataset d = synth_dataset("tri-2d", 512, rng);
    std::vector<double> count(static_cast<std::size_t>(d.gmm.num_classes()), 0.0);
    for (int y : d.y) count[static_cast<std::size_t>(y)] += 1.0;
    std::vector<double> w(count.size(), 0.0);
    for (std::size_t k = 0; k < d.gmm.components(); ++k) w[static_cast<std::size_t>(d.gmm.labels[k])] += d.gmm.weights[k];
    for (std::size_t c = 0; c < w.size(); ++c) {
        const double se = std::sqrt(w[c] * (1 - w[c]) / 512.0);
        EXPECT_LT(std::abs(count[c] / 512.0 - w[c]), 3 * se) << c;
    }
}

TEST(Synth, SeededAndValidated)
{
    Rng a(3), b(3);
    EXPECT_EQ(synth_dataset("tri-2d", 50, a).x, synth_dataset("tri-2d", 50, b).x);
    EXPECT_THROW(synth_dataset("tri-2d", 0, a), Error);
    EXPECT_THROW(synth_dataset(GaussianMixture{}, 10, a), Error);
}
