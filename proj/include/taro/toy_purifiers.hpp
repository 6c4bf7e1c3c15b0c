#ifndef TARO_TOY_PURIFIERS_HPP
#define TARO_TOY_PURIFIERS_HPP

#include <cmath>
#include <string>

#include "taro/attack.hpp"

namespace taro {

/// M gradient steps on 0.5 (z - a)^T A (z - a), rowwise. Deterministic.
class QuadraticPurifier : public Purifier {
public:
    QuadraticPurifier(Eigen::MatrixXd A, Eigen::VectorXd a, double eta, std::size_t iters)
        : A_(std::move(A)), a_(std::move(a)), eta_(eta), iters_(iters)
    {
        if (A_.rows() != A_.cols() || A_.rows() != a_.size()) throw Error("quadratic purifier: shape mismatch");
        if ((A_ - A_.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw Error("quadratic purifier: A must be symmetric");
    }

    using Purifier::apply;
    std::string name() const override { return "quadratic"; }
    const Eigen::MatrixXd& A() const { return A_; }
    double eta() const { return eta_; }

    ad::Variable apply(const ad::Variable& x, Rng&, Differentiation mode) const override
    {
        const Tensor A = from_eigen_matrix(A_);
        const Tensor a = from_eigen_matrix(a_.transpose());
        auto loss_fn = [&](const ad::Variable& z, std::size_t) {
            ad::Tape& tape = z.tape();
            const ad::Variable d = ad::sub(z, ad::broadcast(tape.constant(a), z.shape()));
            return Objective{ad::scale(ad::sum(ad::mul(ad::matmul(d, tape.constant(A)), d)), 0.5), {}};
        };
        return detail::run_optimizer(x, iters_, eta_, OptimizerKind::GradientDescent, mode, loss_fn, nullptr, nullptr);
    }

private:
    Eigen::MatrixXd A_;
    Eigen::VectorXd a_;
    double eta_;
    std::size_t iters_;
};

/// Rows are first scaled onto the sphere of the given radius, then M gradient
/// steps on -beta cos(z, c) rotate each row toward the anchor c. With
/// eta beta / radius^2 between 1 and 2 the angle to c overshoots and changes
/// sign on every step.
class CosinePurifier : public Purifier {
public:
    CosinePurifier(Eigen::VectorXd anchor, double beta, double eta, std::size_t iters, double radius = 2.0)
        : c_(std::move(anchor)), beta_(beta), eta_(eta), iters_(iters), radius_(radius)
    {
        if (!(c_.norm() > 0.0)) throw Error("cosine purifier: anchor must be nonzero");
        if (!(radius_ > 0.0)) throw Error("cosine purifier: radius must be positive");
    }

    using Purifier::apply;
    std::string name() const override { return "cosine"; }

    ad::Variable apply(const ad::Variable& x, Rng&, Differentiation mode) const override
    {
        const Tensor c = from_eigen_matrix((c_ / c_.norm()).transpose());
        auto loss_fn = [&](const ad::Variable& z, std::size_t) {
            ad::Tape& tape = z.tape();
            const ad::Variable dot = ad::sum(ad::mul(z, ad::broadcast(tape.constant(c), z.shape())), 1);
            const ad::Variable nrm = ad::sqrt(ad::sum(ad::mul(z, z), 1));
            return Objective{ad::scale(ad::sum(ad::div(dot, nrm)), -beta_), {}};
        };
        const ad::Variable nrm = ad::sqrt(ad::sum(ad::mul(x, x), 1));
        const ad::Variable z0 = ad::scale(ad::div(x, ad::broadcast(nrm, x.shape())), radius_);
        return detail::run_optimizer(z0, iters_, eta_, OptimizerKind::GradientDescent, mode, loss_fn, nullptr, nullptr);
    }

private:
    Eigen::VectorXd c_;
    double beta_;
    double eta_;
    std::size_t iters_;
    double radius_;
};

} // namespace taro

#endif // TARO_TOY_PURIFIERS_HPP
