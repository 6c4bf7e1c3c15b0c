#ifndef TARO_DATASET_HPP
#define TARO_DATASET_HPP

#include <cmath>
#include <string>
#include <vector>

#include "taro/gmm.hpp"

namespace taro {

struct Dataset {
    Tensor x; // N x d
    std::vector<int> y;
    GaussianMixture gmm; // ground truth the rows were drawn from

    std::size_t size() const { return y.size(); }
    std::size_t dim() const { return x.cols(); }

    Dataset subset(std::size_t begin, std::size_t end) const
    {
        if (begin >= end || end > size()) throw Error("dataset: invalid subset range");
        Dataset d;
        const std::size_t c = dim();
        d.x = Tensor({end - begin, c}, std::vector<double>(x.data.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                           x.data.begin() + static_cast<std::ptrdiff_t>(end * c)));
        d.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin), y.begin() + static_cast<std::ptrdiff_t>(end));
        d.gmm = gmm;
        return d;
    }
};

/// Named ground-truth mixtures.
///   separated-2d  two classes; wide along the first axis, separated only by
///                 a thin offset along the second
///   tri-2d        three isotropic classes with unequal weights
///   blobs-8d      two classes in eight dimensions
///   arc-2d        two tight classes at angles -0.25 and +0.25 on a circle of
///                 radius 2 (the inner-loop toy)
inline GaussianMixture preset_gmm(const std::string& name)
{
    GaussianMixture g;
    if (name == "separated-2d") {
        g.weights = {0.5, 0.5};
        g.means = {Eigen::Vector2d(-3.0, -0.1), Eigen::Vector2d(3.0, 0.1)};
        const Eigen::Matrix2d c = Eigen::Vector2d(1.0, 1e-4).asDiagonal();
        g.covariances = {c, c};
        g.labels = {0, 1};
    } else if (name == "tri-2d") {
        g.weights = {0.5, 0.3, 0.2};
        g.means = {Eigen::Vector2d(0.0, 3.0), Eigen::Vector2d(-2.6, -1.5), Eigen::Vector2d(2.6, -1.5)};
        const Eigen::Matrix2d c = Eigen::Matrix2d::Identity() * 0.25;
        g.covariances = {c, c, c};
        g.labels = {0, 1, 2};
    } else if (name == "blobs-8d") {
        g.weights = {0.5, 0.5};
        Eigen::VectorXd a = Eigen::VectorXd::Zero(8), b = Eigen::VectorXd::Zero(8);
        a[0] = -3.0;
        b[0] = 3.0;
        a[1] = -0.1;
        b[1] = 0.1;
        Eigen::VectorXd diag = Eigen::VectorXd::Constant(8, 0.25);
        diag[0] = 1.0;
        diag[1] = 1e-4;
        g.means = {a, b};
        g.covariances = {diag.asDiagonal(), diag.asDiagonal()};
        g.labels = {0, 1};
    } else if (name == "arc-2d") {
        g.weights = {0.5, 0.5};
        g.means = {Eigen::Vector2d(2.0 * std::cos(0.25), -2.0 * std::sin(0.25)),
                   Eigen::Vector2d(2.0 * std::cos(0.25), 2.0 * std::sin(0.25))};
        const Eigen::Matrix2d c = Eigen::Matrix2d::Identity() * 0.01;
        g.covariances = {c, c};
        g.labels = {0, 1};
    } else {
        throw Error("unknown dataset preset '" + name + "'");
    }
    return g;
}

inline std::vector<std::string> dataset_presets() { return {"separated-2d", "tri-2d", "blobs-8d", "arc-2d"}; }

inline Dataset synth_dataset(const GaussianMixture& gmm, std::size_t n, Rng& rng)
{
    if (gmm.components() == 0) throw Error("synth: mixture has zero components");
    if (n == 0) throw Error("synth: empty dataset requested");
    gmm.validate();
    auto s = sample(gmm, n, rng);
    return Dataset{std::move(s.x), std::move(s.labels), gmm};
}

inline Dataset synth_dataset(const std::string& preset, std::size_t n, Rng& rng)
{
    return synth_dataset(preset_gmm(preset), n, rng);
}

} // namespace taro

#endif // TARO_DATASET_HPP
