#ifndef TARO_PURIFIER_HPP
#define TARO_PURIFIER_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "taro/autodiff.hpp"
#include "taro/denoiser.hpp"
#include "taro/gmm.hpp"
#include "taro/schedule.hpp"

namespace taro {

enum class TimeRule { Sqrt, Linear };
enum class OptimizerKind { GradientDescent, Adam };

/// How a purification run relates to the caller's tape.
///   None       values only; each iteration on a private tape
///   Full       every inner gradient recorded with build_graph (second order kept)
///   Detached   inner gradients are constants; trajectory stays on the tape
///   OneStep    earlier iterations frozen, only the final update is on the tape
enum class Differentiation { None, Full, Detached, OneStep };

struct TaroConfig {
    // Scale multipliers; with kappa1_is_t the first entry is replaced by the
    // base time at every iteration (the "[t, 2]" stream-factor convention).
    std::vector<double> kappa = {0.0, 2.0};
    bool kappa1_is_t = true;
    double gamma = 1.4;
    NoiseSchedule noise;
    std::size_t iters = 20;
    double step = 0.02;
    OptimizerKind optimizer = OptimizerKind::GradientDescent;
    double lambda_cons = 0.0;
    TimestepSchedule timesteps = TimestepSchedule::linear(0.25, 0.0);
    bool stop_gradient_target = true;
    TimeRule rule = TimeRule::Sqrt;

    std::size_t K() const { return kappa.size(); }

    void validate() const
    {
        if (kappa.empty()) throw Error("taro config: kappa is empty");
        const std::size_t first = kappa1_is_t ? 1 : 0;
        for (std::size_t k = first + 1; k < kappa.size(); ++k)
            if (!(kappa[k] > kappa[k - 1])) throw Error("taro config: kappa must be strictly increasing");
        if (!(gamma >= 0.0)) throw Error("taro config: gamma must be nonnegative");
        if (!(step >= 0.0)) throw Error("taro config: step size must be nonnegative");
        if (!(lambda_cons >= 0.0)) throw Error("taro config: lambda_cons must be nonnegative");
        noise.validate();
        timesteps.validate();
    }

    /// Multipliers in effect at base time t.
    std::vector<double> kappas_at(double t) const
    {
        std::vector<double> k = kappa;
        if (kappa1_is_t && !k.empty()) k[0] = t;
        return k;
    }

    static TaroConfig taro2()
    {
        TaroConfig c;
        c.kappa = {0.0, 2.0};
        c.gamma = 1.4;
        return c;
    }

    static TaroConfig taro3()
    {
        TaroConfig c;
        c.kappa = {0.0, 1.0, 2.0};
        c.gamma = 1.1;
        return c;
    }
};

/// t_k = clip(sqrt(t kappa_k)) or clip(kappa_k t), nondecreasing in k.
inline std::vector<double> effective_timesteps(double t, const std::vector<double>& kappa, double t_min, double t_max,
                                               TimeRule rule = TimeRule::Sqrt)
{
    if (kappa.empty()) throw Error("effective_timesteps: kappa is empty");
    if (!(t >= 0.0)) throw Error("effective_timesteps: base time must be nonnegative");
    std::vector<double> out;
    for (double k : kappa) {
        const double raw = rule == TimeRule::Sqrt ? std::sqrt(t * k) : k * t;
        out.push_back(std::clamp(raw, t_min, t_max));
    }
    for (std::size_t k = 1; k < out.size(); ++k)
        if (out[k] < out[k - 1]) throw Error("effective_timesteps: kappa is not ordered");
    return out;
}

struct TemporalExperts {
    std::vector<double> times;
    std::vector<double> sigmas;
    std::vector<Tensor> eps;          // standard normal draws
    std::vector<Tensor> noise;        // sigma_j * eps_j
    std::vector<ad::Variable> noisy;  // x + noise_j
    std::vector<ad::Variable> u;      // denoiser outputs

    std::size_t K() const { return u.size(); }
};

/// Expert k uses noise level sigma_k on x + sigma_k eps_k, eps_k fresh from rng.
inline TemporalExperts compute_experts_at(const ad::Variable& x, const std::vector<double>& sigmas,
                                          const Denoiser& denoiser, Rng& rng)
{
    TemporalExperts e;
    ad::Tape& tape = x.tape();
    for (double s : sigmas) {
        Tensor eps = rng.normal_tensor(x.shape());
        Tensor n = tensor_ops::scale(eps, s);
        ad::Variable xt = ad::add(x, tape.constant(n));
        e.sigmas.push_back(s);
        e.eps.push_back(std::move(eps));
        e.noise.push_back(std::move(n));
        e.u.push_back(denoiser.denoise(xt, s));
        e.noisy.push_back(std::move(xt));
    }
    return e;
}

inline TemporalExperts compute_experts(const ad::Variable& x, const std::vector<double>& times,
                                       const NoiseSchedule& schedule, const Denoiser& denoiser, Rng& rng)
{
    std::vector<double> sigmas;
    for (double t : times) sigmas.push_back(schedule.sigma(t));
    TemporalExperts e = compute_experts_at(x, sigmas, denoiser, rng);
    e.times = times;
    return e;
}

/// Coefficient of u_j in taro_target, expanded.
inline std::vector<double> taro_coefficients(std::size_t K, double gamma)
{
    if (K < 1) throw Error("taro_coefficients: K must be positive");
    std::vector<double> c(K, 0.0);
    for (std::size_t j = 0; j < K; ++j) {
        const double up = j == 0 ? 0.0 : std::pow(gamma, static_cast<double>(K - j));
        const double own = j + 1 == K ? 1.0 : std::pow(gamma, static_cast<double>(K - 1 - j));
        c[j] = own - up;
    }
    return c;
}

/// Coarse-anchored combination v_K + sum_{j<K} gamma^{K-j} (v_j - v_{j+1}),
/// evaluated in expanded form so gamma = 1 and gamma = 0 select an expert
/// exactly. A single entry is returned unchanged.
inline ad::Variable taro_aggregate(const std::vector<ad::Variable>& v, double gamma)
{
    if (v.empty()) throw Error("taro_aggregate: no experts");
    if (v.size() == 1) return v.front();
    const auto c = taro_coefficients(v.size(), gamma);
    ad::Variable out = ad::scale(v[0], c[0]);
    for (std::size_t j = 1; j < v.size(); ++j) out = ad::add(out, ad::scale(v[j], c[j]));
    return out;
}

inline ad::Variable taro_target(const std::vector<ad::Variable>& u, double gamma)
{
    if (u.size() < 2) throw Error("taro_target: need at least two experts");
    return taro_aggregate(u, gamma);
}

inline ad::Variable taro_target(const TemporalExperts& e, double gamma) { return taro_target(e.u, gamma); }

/// gamma u_f + (1 - gamma) u_c
inline ad::Variable guided_target_k2(const ad::Variable& u_f, const ad::Variable& u_c, double gamma)
{
    return ad::add(ad::scale(u_f, gamma), ad::scale(u_c, 1.0 - gamma));
}

struct QuadratureWeights {
    std::vector<double> raw;
    double lambda = 0.0;
    std::vector<double> alpha;

    static QuadratureWeights from_raw(std::vector<double> raw)
    {
        QuadratureWeights w;
        w.raw = std::move(raw);
        for (double r : w.raw) w.lambda += r;
        if (w.lambda == 0.0) throw Error("quadrature weights: normalizer is zero");
        for (double r : w.raw) w.alpha.push_back(r / w.lambda);
        return w;
    }

    static QuadratureWeights from_alpha(std::vector<double> alpha)
    {
        QuadratureWeights w;
        w.alpha = alpha;
        w.raw = std::move(alpha);
        w.lambda = 1.0;
        return w;
    }
};

/// sum_k alpha_k u_k
inline ad::Variable consensus_denoiser(const std::vector<ad::Variable>& u, const QuadratureWeights& w)
{
    if (u.empty() || u.size() != w.alpha.size()) throw Error("consensus_denoiser: weight count mismatch");
    double s = 0.0;
    for (double a : w.alpha) s += a;
    if (std::abs(s - 1.0) > 1e-12) throw Error("consensus_denoiser: weights sum to " + std::to_string(s));
    ad::Variable out = ad::scale(u[0], w.alpha[0]);
    for (std::size_t k = 1; k < u.size(); ++k) out = ad::add(out, ad::scale(u[k], w.alpha[k]));
    return out;
}

struct PoeScore {
    Tensor weighted_sum;    // sum_k raw_k (D(x, sigma_k) - x)
    Tensor consensus_form;  // Lambda (Dbar_alpha(x) - x)
};

/// Product-of-experts score from noise-free exact denoiser evaluations.
inline PoeScore poe_score(const GaussianMixture& gmm, const Tensor& x, const std::vector<double>& sigmas,
                          const std::vector<double>& raw)
{
    if (sigmas.size() != raw.size() || sigmas.empty()) throw Error("poe_score: weight count mismatch");
    const auto w = QuadratureWeights::from_raw(raw);
    std::vector<Tensor> u;
    for (double s : sigmas) u.push_back(tweedie_denoise(gmm, x, s));
    Tensor ws = Tensor::zeros(x.shape), bar = Tensor::zeros(x.shape);
    for (std::size_t k = 0; k < u.size(); ++k) {
        ws = tensor_ops::axpy(ws, w.raw[k], tensor_ops::sub(u[k], x));
        bar = tensor_ops::axpy(bar, w.alpha[k], u[k]);
    }
    return {ws, tensor_ops::scale(tensor_ops::sub(bar, x), w.lambda)};
}

/// ||sg(target) - x||^2, or with a live target when stop_grad is false.
inline ad::Variable prior_loss(const ad::Variable& x, const ad::Variable& target, bool stop_grad = true)
{
    return ad::sq_norm(ad::sub(stop_grad ? ad::stop_gradient(target) : target, x));
}

/// sum_{i<j} ||u_i - u_j||^2
inline ad::Variable consistency_loss(const std::vector<ad::Variable>& u)
{
    if (u.size() < 2) throw Error("consistency_loss: need at least two experts");
    std::optional<ad::Variable> out;
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = i + 1; j < u.size(); ++j) {
            ad::Variable term = ad::sq_norm(ad::sub(u[i], u[j]));
            out = out ? ad::add(*out, term) : term;
        }
    return *out;
}

inline ad::Variable consistency_loss(const TemporalExperts& e) { return consistency_loss(e.u); }

/// Scalar objective plus the nodes its update direction holds fixed.
struct Objective {
    ad::Variable loss;
    std::vector<ad::Variable> frozen;

    ad::Variable direction(const ad::Variable& x, bool build_graph) const
    {
        return ad::grad(loss, x, build_graph, frozen);
    }
};

/// Full TARO objective at one iterate. With stop_gradient_target the target
/// is held fixed for the update direction but stays live on the tape, so
/// differentiating the purified output still sees how the target moves.
inline Objective taro_objective(const ad::Variable& x, const TemporalExperts& e, const TaroConfig& cfg)
{
    const ad::Variable target = taro_target(e, cfg.gamma);
    Objective o{prior_loss(x, target, false), {}};
    if (cfg.stop_gradient_target) o.frozen.push_back(target);
    if (cfg.lambda_cons > 0.0) o.loss = ad::add(o.loss, ad::scale(consistency_loss(e), cfg.lambda_cons));
    return o;
}

namespace detail {

// Shared iteration driver for the TARO and TARO-AA loops. `loss_fn` builds
// the Objective at iterate x for iteration i.
template <class LossFn>
ad::Variable run_optimizer(const ad::Variable& x_adv, std::size_t iters, double step, OptimizerKind opt,
                           Differentiation mode, LossFn&& loss_fn, std::vector<Tensor>* trajectory,
                           std::vector<double>* losses)
{
    ad::Tape& tape = x_adv.tape();
    constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
    auto record = [&](const ad::Variable& x, double loss) {
        if (trajectory) trajectory->push_back(x.value());
        if (losses) losses->push_back(loss);
    };

    // Value-only iterations on private tapes.
    auto run_plain = [&](Tensor x, std::size_t from, std::size_t to, std::vector<Tensor>& m, std::vector<Tensor>& v) {
        for (std::size_t i = from; i < to; ++i) {
            ad::Tape local;
            ad::Variable xi = local.leaf(x);
            const Objective obj = loss_fn(xi, i);
            const ad::Variable& loss = obj.loss;
            Tensor g = obj.direction(xi, false).value();
            if (opt == OptimizerKind::GradientDescent) {
                x = tensor_ops::axpy(x, -step, g);
            } else {
                if (m.empty()) {
                    m.push_back(Tensor::zeros(x.shape));
                    v.push_back(Tensor::zeros(x.shape));
                }
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(i + 1));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(i + 1));
                for (std::size_t k = 0; k < x.size(); ++k) {
                    m[0].data[k] = b1 * m[0].data[k] + (1 - b1) * g.data[k];
                    v[0].data[k] = b2 * v[0].data[k] + (1 - b2) * (g.data[k] * g.data[k]);
                    const double denom = std::sqrt(v[0].data[k] * (1.0 / c2) + adam_eps * adam_eps);
                    x.data[k] = x.data[k] - (step / c1) * (m[0].data[k] / denom);
                }
            }
            if (!x.all_finite()) throw Error("purify: non-finite iterate at iteration " + std::to_string(i));
            if (trajectory) trajectory->push_back(x);
            if (losses) losses->push_back(loss.item());
        }
        return x;
    };

    if (mode == Differentiation::None) {
        std::vector<Tensor> m, v;
        return tape.constant(run_plain(x_adv.value(), 0, iters, m, v));
    }

    ad::Variable x = x_adv;
    std::optional<ad::Variable> m, v;
    std::size_t first = 0;
    if (mode == Differentiation::OneStep && iters > 0) {
        std::vector<Tensor> mm, vv;
        const Tensor frozen = run_plain(x_adv.value(), 0, iters - 1, mm, vv);
        x = ad::straight_through(x_adv, frozen);
        if (!mm.empty()) {
            m = tape.constant(mm[0]);
            v = tape.constant(vv[0]);
        }
        first = iters - 1;
    }
    for (std::size_t i = first; i < iters; ++i) {
        if (!x.requires_grad()) x = tape.leaf(x.value());
        const Objective obj = loss_fn(x, i);
        const ad::Variable& loss = obj.loss;
        ad::Variable g = obj.direction(x, mode != Differentiation::Detached);
        if (opt == OptimizerKind::GradientDescent) {
            x = ad::sub(x, ad::scale(g, step));
        } else {
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(i + 1));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(i + 1));
            m = m ? ad::add(ad::scale(*m, b1), ad::scale(g, 1 - b1)) : ad::scale(g, 1 - b1);
            v = v ? ad::add(ad::scale(*v, b2), ad::scale(ad::mul(g, g), 1 - b2)) : ad::scale(ad::mul(g, g), 1 - b2);
            const ad::Variable denom =
                ad::sqrt(ad::add(ad::scale(*v, 1.0 / c2), tape.constant(Tensor::full(x.shape(), adam_eps * adam_eps))));
            x = ad::sub(x, ad::scale(ad::div(*m, denom), step / c1));
        }
        if (!x.value().all_finite()) throw Error("purify: non-finite iterate at iteration " + std::to_string(i));
        record(x, loss.item());
    }
    return x;
}

} // namespace detail

struct PurifyResult {
    Tensor x;
    std::vector<Tensor> trajectory; // iterate after each update, when requested
    std::vector<double> losses;     // objective before each update
};

/// Test-time optimization of the TARO objective starting from x_adv (N x d rows).
/// The returned Variable lives on x_adv's tape; its dependence on x_adv is
/// governed by `mode`.
inline ad::Variable purify(const ad::Variable& x_adv, const TaroConfig& cfg, const Denoiser& denoiser, Rng& rng,
                           Differentiation mode, std::vector<Tensor>* trajectory = nullptr,
                           std::vector<double>* losses = nullptr)
{
    cfg.validate();
    if (!x_adv.value().all_finite()) throw Error("purify: input is not finite");
    // Base times and expert noise depend only on the iteration index, so
    // every mode consumes the random stream identically.
    auto loss_fn = [&](const ad::Variable& x, std::size_t i) {
        const double t = cfg.timesteps.at(i, cfg.iters, cfg.noise.t_min, rng);
        const auto times = effective_timesteps(t, cfg.kappas_at(t), cfg.noise.t_min, cfg.noise.t_max, cfg.rule);
        const TemporalExperts e = compute_experts(x, times, cfg.noise, denoiser, rng);
        return taro_objective(x, e, cfg);
    };
    return detail::run_optimizer(x_adv, cfg.iters, cfg.step, cfg.optimizer, mode, loss_fn, trajectory, losses);
}

inline PurifyResult purify(const Tensor& x_adv, const TaroConfig& cfg, const Denoiser& denoiser, Rng& rng,
                           bool keep_trajectory = false)
{
    ad::Tape tape;
    PurifyResult r;
    r.x = purify(tape.constant(x_adv), cfg, denoiser, rng, Differentiation::None,
                 keep_trajectory ? &r.trajectory : nullptr, &r.losses)
              .value();
    return r;
}

} // namespace taro

#endif // TARO_PURIFIER_HPP
