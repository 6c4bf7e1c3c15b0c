#ifndef TARO_CLASSIFIER_HPP
#define TARO_CLASSIFIER_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "taro/autodiff.hpp"
#include "taro/dataset.hpp"
#include "taro/mlp.hpp"

namespace taro {

enum class ClassifierKind { Linear, Mlp };

inline std::string classifier_kind_name(ClassifierKind k) { return k == ClassifierKind::Linear ? "linear" : "mlp"; }

inline ClassifierKind parse_classifier_kind(const std::string& s)
{
    if (s == "linear") return ClassifierKind::Linear;
    if (s == "mlp") return ClassifierKind::Mlp;
    throw Error("unknown classifier kind '" + s + "'");
}

struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::Mlp;
    std::vector<std::size_t> hidden = {16};
    Activation activation = Activation::Tanh;
    std::size_t steps = 400;
    double lr = 0.05;
    bool standardize = true; // z-score inputs with training statistics

    void validate() const
    {
        if (steps == 0) throw Error("classifier spec: steps must be positive");
        if (!(lr > 0.0)) throw Error("classifier spec: lr must be positive");
        if (kind == ClassifierKind::Mlp && hidden.empty()) throw Error("classifier spec: mlp needs a hidden layer");
    }
};

/// Smooth classifier on standardized inputs; logits = net((x - shift) * scale).
struct Classifier {
    Mlp net;
    Tensor shift; // 1 x d
    Tensor scale; // 1 x d

    std::size_t dim() const { return net.in_dim(); }
    std::size_t num_classes() const { return net.out_dim(); }

    ad::Variable logits(const ad::Variable& x) const
    {
        ad::Tape& tape = x.tape();
        if (x.value().rank() != 2 || x.shape()[1] != dim())
            throw Error("classifier: input shape " + shape_str(x.shape()) + " does not match dimension " +
                        std::to_string(dim()));
        const Shape s = x.shape();
        const ad::Variable z =
            ad::mul(ad::sub(x, ad::broadcast(tape.constant(shift), s)), ad::broadcast(tape.constant(scale), s));
        return net.forward(z);
    }

    Tensor logits(const Tensor& x) const
    {
        ad::Tape tape;
        return logits(tape.constant(x)).value();
    }

    std::vector<int> predict(const Tensor& x) const { return argmax_rows(logits(x)); }

    double accuracy(const Tensor& x, const std::vector<int>& y) const
    {
        const auto p = predict(x);
        if (p.size() != y.size()) throw Error("classifier: label count mismatch");
        std::size_t ok = 0;
        for (std::size_t i = 0; i < p.size(); ++i) ok += p[i] == y[i];
        return p.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(p.size());
    }

    static std::vector<int> argmax_rows(const Tensor& logits)
    {
        std::vector<int> out(logits.rows());
        const std::size_t c = logits.cols();
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const auto* row = logits.data.data() + i * c;
            out[i] = static_cast<int>(std::max_element(row, row + c) - row);
        }
        return out;
    }

    friend bool operator==(const Classifier& a, const Classifier& b)
    {
        return a.net == b.net && a.shift == b.shift && a.scale == b.scale;
    }
};

namespace detail {

inline Tensor one_hot(const std::vector<int>& y, std::size_t classes)
{
    Tensor t = Tensor::zeros({y.size(), classes});
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= classes)
            throw Error("label " + std::to_string(y[i]) + " out of range for " + std::to_string(classes) + " classes");
        t.data[i * classes + static_cast<std::size_t>(y[i])] = 1.0;
    }
    return t;
}

} // namespace detail

/// Per-row cross-entropy, N x 1. The row max is subtracted as a constant.
inline ad::Variable cross_entropy_rows(const ad::Variable& logits, const std::vector<int>& y)
{
    ad::Tape& tape = logits.tape();
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (y.size() != n) throw Error("cross_entropy: label count mismatch");
    Tensor rmax = Tensor::zeros({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        rmax.data[i] = *std::max_element(logits.value().data.begin() + static_cast<std::ptrdiff_t>(i * c),
                                         logits.value().data.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    const ad::Variable m = tape.constant(rmax);
    const ad::Variable shifted = ad::sub(logits, ad::broadcast(m, {n, c}));
    const ad::Variable lse = ad::add(ad::log(ad::sum(ad::exp(shifted), 1)), m);
    const ad::Variable picked = ad::sum(ad::mul(logits, tape.constant(detail::one_hot(y, c))), 1);
    return ad::sub(lse, picked);
}

/// Per-row margin max_{j != y} z_j - z_y, N x 1 (positive means misclassified).
inline ad::Variable margin_rows(const ad::Variable& logits, const std::vector<int>& y)
{
    ad::Tape& tape = logits.tape();
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (y.size() != n) throw Error("margin: label count mismatch");
    if (c < 2) throw Error("margin: need at least two classes");
    std::vector<int> rival(n);
    for (std::size_t i = 0; i < n; ++i) {
        int best = -1;
        for (std::size_t j = 0; j < c; ++j) {
            if (static_cast<int>(j) == y[i]) continue;
            if (best < 0 || logits.value().data[i * c + j] > logits.value().data[i * c + static_cast<std::size_t>(best)])
                best = static_cast<int>(j);
        }
        rival[i] = best;
    }
    const Tensor sel = tensor_ops::sub(detail::one_hot(rival, c), detail::one_hot(y, c));
    return ad::sum(ad::mul(logits, tape.constant(sel)), 1);
}

/// Full-batch Adam on mean cross-entropy. Never sees adversarial inputs.
inline Classifier train_classifier(const Tensor& x, const std::vector<int>& y, std::size_t classes,
                                   const ClassifierSpec& spec, Rng& rng)
{
    spec.validate();
    if (x.rank() != 2 || x.rows() == 0) throw Error("train_classifier: empty dataset");
    if (y.size() != x.rows()) throw Error("train_classifier: label count mismatch");
    if (classes < 2) throw Error("train_classifier: need at least two classes");
    const std::size_t n = x.rows(), d = x.cols();

    Classifier clf;
    clf.shift = Tensor::zeros({1, d});
    clf.scale = Tensor::ones({1, d});
    for (std::size_t j = 0; j < d && spec.standardize; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x.data[i * d + j];
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) sq += (x.data[i * d + j] - mean) * (x.data[i * d + j] - mean);
        const double sd = std::sqrt(sq / static_cast<double>(n));
        clf.shift.data[j] = mean;
        clf.scale.data[j] = sd > 0.0 ? 1.0 / sd : 1.0;
    }

    std::vector<std::size_t> sizes = {d};
    if (spec.kind == ClassifierKind::Mlp) sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
    sizes.push_back(classes);
    clf.net = Mlp::init(sizes, rng, spec.activation);

    Adam opt(spec.lr);
    for (std::size_t step = 0; step < spec.steps; ++step) {
        ad::Tape tape;
        const auto p = clf.net.bind(tape, true);
        const Shape s = x.shape;
        const ad::Variable z = ad::mul(ad::sub(tape.constant(x), ad::broadcast(tape.constant(clf.shift), s)),
                                       ad::broadcast(tape.constant(clf.scale), s));
        const ad::Variable loss =
            ad::scale(ad::sum(cross_entropy_rows(clf.net.forward(z, p), y)), 1.0 / static_cast<double>(n));
        if (!std::isfinite(loss.item()))
            throw Error("train_classifier: loss diverged at step " + std::to_string(step));
        const auto g = ad::grad(loss, p);
        std::vector<Tensor> gv;
        for (const auto& v : g) gv.push_back(v.value());
        opt.step(clf.net.parameters(), gv);
        if (!clf.net.all_finite()) throw Error("train_classifier: parameters diverged at step " + std::to_string(step));
    }
    return clf;
}

inline Classifier train_classifier(const Dataset& data, const ClassifierSpec& spec, Rng& rng)
{
    return train_classifier(data.x, data.y, std::max<std::size_t>(2, data.gmm.num_classes()), spec, rng);
}

} // namespace taro

#endif // TARO_CLASSIFIER_HPP
