#ifndef TARO_ATTACK_HPP
#define TARO_ATTACK_HPP

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "taro/classifier.hpp"
#include "taro/purifier.hpp"

namespace taro {

enum class Norm { Linf, L2 };

inline std::string norm_name(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }

inline Norm parse_norm(const std::string& s)
{
    if (s == "linf") return Norm::Linf;
    if (s == "l2") return Norm::L2;
    throw Error("unknown norm '" + s + "'");
}

struct ThreatModel {
    Norm norm = Norm::Linf;
    double eps = 0.1;
    bool has_box = false;
    double box_lo = 0.0;
    double box_hi = 1.0;

    void validate() const
    {
        if (!(eps > 0.0)) throw Error("threat model: eps must be positive");
        if (has_box && !(box_lo < box_hi)) throw Error("threat model: empty input box");
    }
};

/// Per-row perturbation size in the threat norm.
inline std::vector<double> row_norms(const Tensor& delta, Norm norm)
{
    const std::size_t n = delta.rank() == 2 ? delta.rows() : 1;
    const std::size_t d = delta.size() / std::max<std::size_t>(n, 1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double v = delta.data[i * d + j];
            out[i] = norm == Norm::Linf ? std::max(out[i], std::abs(v)) : out[i] + v * v;
        }
    if (norm == Norm::L2)
        for (auto& v : out) v = std::sqrt(v);
    return out;
}

/// Rowwise projection onto the threat ball; with a box and the clean rows x,
/// x + delta is also clamped into the box.
inline Tensor project(const Tensor& delta, const ThreatModel& threat, const Tensor* x = nullptr)
{
    Tensor out = delta;
    const std::size_t n = delta.rank() == 2 ? delta.rows() : 1;
    const std::size_t d = delta.size() / std::max<std::size_t>(n, 1);
    if (threat.norm == Norm::Linf) {
        for (auto& v : out.data) v = std::clamp(v, -threat.eps, threat.eps);
    } else {
        const auto norms = row_norms(delta, Norm::L2);
        for (std::size_t i = 0; i < n; ++i)
            if (norms[i] > threat.eps)
                for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] *= threat.eps / norms[i];
    }
    if (threat.has_box && x) {
        if (x->shape != delta.shape) throw Error("project: clean input shape does not match perturbation");
        for (std::size_t k = 0; k < out.size(); ++k)
            out.data[k] = std::clamp(x->data[k] + out.data[k], threat.box_lo, threat.box_hi) - x->data[k];
    }
    return out;
}

enum class GradientMode { FullUnroll, DetachedUnroll, OneStepApprox, BpdaIdentity };

inline std::string gradient_mode_name(GradientMode m)
{
    switch (m) {
    case GradientMode::FullUnroll: return "full-unroll";
    case GradientMode::DetachedUnroll: return "detached-unroll";
    case GradientMode::OneStepApprox: return "one-step-approx";
    case GradientMode::BpdaIdentity: return "bpda-identity";
    }
    return "?";
}

inline GradientMode parse_gradient_mode(const std::string& s)
{
    for (auto m : {GradientMode::FullUnroll, GradientMode::DetachedUnroll, GradientMode::OneStepApprox,
                   GradientMode::BpdaIdentity})
        if (gradient_mode_name(m) == s) return m;
    throw Error("unknown gradient mode '" + s + "'");
}

enum class AttackLoss { CrossEntropy, Margin };

inline std::string attack_loss_name(AttackLoss l) { return l == AttackLoss::CrossEntropy ? "ce" : "margin"; }

inline AttackLoss parse_attack_loss(const std::string& s)
{
    if (s == "ce") return AttackLoss::CrossEntropy;
    if (s == "margin") return AttackLoss::Margin;
    throw Error("unknown attack loss '" + s + "'");
}

struct AttackConfig {
    std::string name = "pgd-eot";
    std::size_t steps = 20;
    double step_size = 0.0; // 0 selects 2.5 eps / steps
    std::size_t n_eot = 1;
    GradientMode mode = GradientMode::FullUnroll;
    std::size_t restarts = 1;
    bool random_start = false;
    AttackLoss loss = AttackLoss::CrossEntropy;
    std::uint64_t seed = 0;
    std::size_t max_tape_nodes = 20'000'000;

    void validate() const
    {
        if (steps == 0) throw Error("attack config: steps must be at least 1");
        if (n_eot == 0) throw Error("attack config: n_eot must be at least 1");
        if (restarts == 0) throw Error("attack config: restarts must be at least 1");
        if (!(step_size >= 0.0)) throw Error("attack config: step size must be nonnegative");
    }

    double step_for(double eps) const { return step_size > 0.0 ? step_size : 2.5 * eps / static_cast<double>(steps); }

    static AttackConfig bpda()
    {
        AttackConfig c;
        c.name = "bpda-eot";
        c.steps = 50;
        c.n_eot = 15;
        c.mode = GradientMode::BpdaIdentity;
        return c;
    }
};

/// A defense mapping N x d rows to N x d rows. `mode` says how the result
/// depends on x on the tape; stochastic purifiers draw from rng.
class Purifier {
public:
    virtual ~Purifier() = default;
    virtual std::string name() const = 0;
    virtual ad::Variable apply(const ad::Variable& x, Rng& rng, Differentiation mode) const = 0;

    Tensor apply(const Tensor& x, Rng& rng) const
    {
        ad::Tape tape;
        return apply(tape.constant(x), rng, Differentiation::None).value();
    }
};

class IdentityPurifier : public Purifier {
public:
    using Purifier::apply;
    std::string name() const override { return "identity"; }
    ad::Variable apply(const ad::Variable& x, Rng&, Differentiation) const override { return x; }
};

class TaroPurifier : public Purifier {
public:
    TaroPurifier(TaroConfig cfg, std::shared_ptr<const Denoiser> denoiser)
        : cfg_(std::move(cfg)), denoiser_(std::move(denoiser))
    {
        cfg_.validate();
        if (!denoiser_) throw Error("taro purifier: no denoiser");
    }

    using Purifier::apply;
    std::string name() const override { return "taro"; }
    const TaroConfig& config() const { return cfg_; }

    ad::Variable apply(const ad::Variable& x, Rng& rng, Differentiation mode) const override
    {
        return purify(x, cfg_, *denoiser_, rng, mode);
    }

private:
    TaroConfig cfg_;
    std::shared_ptr<const Denoiser> denoiser_;
};

inline Differentiation differentiation_for(GradientMode m)
{
    switch (m) {
    case GradientMode::FullUnroll: return Differentiation::Full;
    case GradientMode::DetachedUnroll: return Differentiation::Detached;
    case GradientMode::OneStepApprox: return Differentiation::OneStep;
    case GradientMode::BpdaIdentity: return Differentiation::None;
    }
    return Differentiation::None;
}

/// Classifier composed with a purifier (null purifier = identity).
struct Pipeline {
    std::shared_ptr<const Purifier> purifier;
    std::shared_ptr<const Classifier> classifier;

    void validate() const
    {
        if (!classifier) throw Error("pipeline: no classifier");
    }

    std::string name() const { return purifier ? purifier->name() : "identity"; }

    ad::Variable purified(const ad::Variable& x, Rng& rng, GradientMode mode) const
    {
        if (!purifier) return x;
        if (mode == GradientMode::BpdaIdentity) {
            Tensor p = purifier->apply(x.tape().constant(x.value()), rng, Differentiation::None).value();
            return ad::straight_through(x, std::move(p));
        }
        return purifier->apply(x, rng, differentiation_for(mode));
    }

    ad::Variable logits(const ad::Variable& x, Rng& rng, GradientMode mode) const
    {
        validate();
        return classifier->logits(purified(x, rng, mode));
    }

    std::vector<int> predict(const Tensor& x, Rng& rng) const
    {
        validate();
        ad::Tape tape;
        const ad::Variable xv = tape.constant(x);
        const ad::Variable p = purifier ? purifier->apply(xv, rng, Differentiation::None) : xv;
        return Classifier::argmax_rows(classifier->logits(p).value());
    }
};

inline ad::Variable attack_loss_rows(const ad::Variable& logits, const std::vector<int>& y, AttackLoss loss)
{
    return loss == AttackLoss::CrossEntropy ? cross_entropy_rows(logits, y) : margin_rows(logits, y);
}

struct EotResult {
    Tensor grad;              // mean input gradient, N x d
    std::vector<double> loss; // mean per-row loss over realizations
};

/// Realization s draws its purification noise from rng.child(s).
inline EotResult eot_gradient(const Tensor& x_adv, const std::vector<int>& y, const Pipeline& pipe,
                              const AttackConfig& cfg, const Rng& rng)
{
    cfg.validate();
    EotResult r{Tensor::zeros(x_adv.shape), std::vector<double>(y.size(), 0.0)};
    const double inv = 1.0 / static_cast<double>(cfg.n_eot);
    for (std::size_t s = 0; s < cfg.n_eot; ++s) {
        Rng rs = rng.child(s);
        ad::Tape tape;
        const ad::Variable x = tape.leaf(x_adv);
        const ad::Variable rows = attack_loss_rows(pipe.logits(x, rs, cfg.mode), y, cfg.loss);
        if (tape.node_count() > cfg.max_tape_nodes)
            throw Error("attack: tape holds " + std::to_string(tape.node_count()) + " nodes (limit " +
                        std::to_string(cfg.max_tape_nodes) + "); reduce the purifier's inner iterations M");
        const Tensor g = ad::grad(ad::sum(rows), x).value();
        if (!g.all_finite()) throw Error("eot_gradient: non-finite gradient at realization " + std::to_string(s));
        r.grad = tensor_ops::axpy(r.grad, inv, g);
        for (std::size_t i = 0; i < y.size(); ++i) r.loss[i] += inv * rows.value().data[i];
    }
    return r;
}

/// Mean per-row loss over n_eot forward realizations, no gradient.
inline std::vector<double> eot_loss(const Tensor& x_adv, const std::vector<int>& y, const Pipeline& pipe,
                                    const AttackConfig& cfg, const Rng& rng)
{
    std::vector<double> out(y.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(cfg.n_eot);
    for (std::size_t s = 0; s < cfg.n_eot; ++s) {
        Rng rs = rng.child(s);
        ad::Tape tape;
        const ad::Variable rows =
            attack_loss_rows(pipe.logits(tape.constant(x_adv), rs, GradientMode::BpdaIdentity), y, cfg.loss);
        for (std::size_t i = 0; i < y.size(); ++i) out[i] += inv * rows.value().data[i];
    }
    return out;
}

struct AttackResult {
    Tensor x_adv;
    std::vector<int> pred;                      // post-attack prediction
    std::vector<bool> success;                  // pred != label
    std::vector<double> norm;                   // ||x_adv - x|| in the threat norm
    std::vector<std::vector<double>> loss_trace; // (steps + 1) x N, EOT mean loss at each iterate

    double robust_accuracy() const
    {
        if (success.empty()) return 0.0;
        std::size_t ok = 0;
        for (bool s : success) ok += !s;
        return static_cast<double>(ok) / static_cast<double>(success.size());
    }
};

namespace detail {

inline Tensor row_block(const Tensor& x, std::size_t b, std::size_t e)
{
    const std::size_t d = x.cols();
    return Tensor({e - b, d}, std::vector<double>(x.data.begin() + static_cast<std::ptrdiff_t>(b * d),
                                                  x.data.begin() + static_cast<std::ptrdiff_t>(e * d)));
}

inline void put_rows(Tensor& dst, const Tensor& src, std::size_t b)
{
    std::copy(src.data.begin(), src.data.end(), dst.data.begin() + static_cast<std::ptrdiff_t>(b * dst.cols()));
}

constexpr std::size_t kChunkRows = 32;
constexpr std::uint64_t kEvalStream = 0xe7a1;

/// Runs fn(chunk, begin, end) over fixed row blocks. The block layout does not
/// depend on the thread count, so results are identical for any parallelism.
template <class F>
void for_each_chunk(std::size_t n, F fn)
{
    const std::size_t chunks = (n + kChunkRows - 1) / kChunkRows;
    const std::size_t workers = std::min<std::size_t>(chunks, std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::exception_ptr> errors(chunks);
    auto work = [&](std::size_t w) {
        for (std::size_t c = w; c < chunks; c += workers) {
            try {
                fn(c, c * kChunkRows, std::min(n, (c + 1) * kChunkRows));
            } catch (...) {
                errors[c] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline Tensor random_start(const Tensor& x, const ThreatModel& threat, Rng& rng)
{
    Tensor d = Tensor::zeros(x.shape);
    if (threat.norm == Norm::Linf) {
        for (auto& v : d.data) v = rng.uniform(-threat.eps, threat.eps);
    } else {
        const std::size_t n = x.rows(), c = x.cols();
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                d.data[i * c + j] = rng.normal();
                sq += d.data[i * c + j] * d.data[i * c + j];
            }
            const double r = threat.eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(c)) / std::sqrt(sq);
            for (std::size_t j = 0; j < c; ++j) d.data[i * c + j] *= r;
        }
    }
    return project(d, threat, &x);
}

// One restart on one block of rows.
inline AttackResult pgd_block(const Tensor& x, const std::vector<int>& y, const Pipeline& pipe,
                              const ThreatModel& threat, const AttackConfig& cfg, const Rng& rng)
{
    const double eta = cfg.step_for(threat.eps);
    const std::size_t n = x.rows(), d = x.cols();
    Rng start = rng.child(0x5a);
    Tensor x_adv = cfg.random_start ? tensor_ops::add(x, random_start(x, threat, start)) : x;
    AttackResult r;
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const EotResult e = eot_gradient(x_adv, y, pipe, cfg, rng.child(k + 1));
        r.loss_trace.push_back(e.loss);
        Tensor stepv = Tensor::zeros(x.shape);
        if (threat.norm == Norm::Linf) {
            for (std::size_t q = 0; q < stepv.size(); ++q)
                stepv.data[q] = e.grad.data[q] > 0.0 ? eta : (e.grad.data[q] < 0.0 ? -eta : 0.0);
        } else {
            const auto gn = row_norms(e.grad, Norm::L2);
            for (std::size_t i = 0; i < n; ++i)
                if (gn[i] > 0.0)
                    for (std::size_t j = 0; j < d; ++j) stepv.data[i * d + j] = eta * e.grad.data[i * d + j] / gn[i];
        }
        x_adv = tensor_ops::add(x, project(tensor_ops::sub(tensor_ops::add(x_adv, stepv), x), threat, &x));
    }
    r.loss_trace.push_back(eot_loss(x_adv, y, pipe, cfg, rng.child(cfg.steps + 1)));
    r.x_adv = std::move(x_adv);
    return r;
}

} // namespace detail

/// Projected gradient ascent on the attack loss with EOT gradients. Restarts
/// are merged per sample by worst case: a misclassifying restart wins,
/// otherwise the one with the larger final loss.
inline AttackResult pgd_eot(const Tensor& x, const std::vector<int>& y, const Pipeline& pipe,
                            const ThreatModel& threat, const AttackConfig& cfg, const Rng& rng)
{
    threat.validate();
    cfg.validate();
    pipe.validate();
    if (x.rank() != 2 || x.rows() == 0) throw Error("attack: empty input");
    if (y.size() != x.rows()) throw Error("attack: label count mismatch");
    const std::size_t n = x.rows();
    const Rng base = rng.child(cfg.seed);

    AttackResult out;
    out.x_adv = x;
    out.pred.assign(n, 0);
    out.success.assign(n, false);
    out.norm.assign(n, 0.0);
    out.loss_trace.assign(cfg.steps + 1, std::vector<double>(n, 0.0));

    detail::for_each_chunk(n, [&](std::size_t c, std::size_t b, std::size_t e) {
        const Tensor xb = detail::row_block(x, b, e);
        const std::vector<int> yb(y.begin() + static_cast<std::ptrdiff_t>(b), y.begin() + static_cast<std::ptrdiff_t>(e));
        const Rng chunk_rng = base.child(c);
        std::vector<AttackResult> runs;
        std::vector<std::vector<int>> preds;
        for (std::size_t r = 0; r < cfg.restarts; ++r) {
            runs.push_back(detail::pgd_block(xb, yb, pipe, threat, cfg, chunk_rng.child(r)));
            Rng ev = rng.child(detail::kEvalStream).child(c);
            preds.push_back(pipe.predict(runs.back().x_adv, ev));
        }
        const std::size_t d = x.cols();
        for (std::size_t i = 0; i < yb.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t r = 1; r < runs.size(); ++r) {
                const bool fooled_r = preds[r][i] != yb[i], fooled_b = preds[best][i] != yb[i];
                if ((fooled_r && !fooled_b) ||
                    (fooled_r == fooled_b && runs[r].loss_trace.back()[i] > runs[best].loss_trace.back()[i]))
                    best = r;
            }
            std::copy_n(runs[best].x_adv.data.begin() + static_cast<std::ptrdiff_t>(i * d), d,
                        out.x_adv.data.begin() + static_cast<std::ptrdiff_t>((b + i) * d));
            out.pred[b + i] = preds[best][i];
            out.success[b + i] = preds[best][i] != yb[i];
            for (std::size_t k = 0; k <= cfg.steps; ++k) out.loss_trace[k][b + i] = runs[best].loss_trace[k][i];
        }
    });
    out.norm = row_norms(tensor_ops::sub(out.x_adv, x), threat.norm);
    return out;
}

/// PGD-EOT whose backward pass treats the purifier as the identity.
inline AttackResult bpda_eot(const Tensor& x, const std::vector<int>& y, const Pipeline& pipe,
                             const ThreatModel& threat, AttackConfig cfg, const Rng& rng)
{
    cfg.mode = GradientMode::BpdaIdentity;
    return pgd_eot(x, y, pipe, threat, cfg, rng);
}

/// PGD-EOT differentiating through every inner purification update, with
/// (full-unroll) or without (detached-unroll) the second-order terms.
inline AttackResult unrolled_attack(const Tensor& x, const std::vector<int>& y, const Pipeline& pipe,
                                    const ThreatModel& threat, const AttackConfig& cfg, const Rng& rng)
{
    if (cfg.mode != GradientMode::FullUnroll && cfg.mode != GradientMode::DetachedUnroll)
        throw Error("unrolled_attack: mode must be full-unroll or detached-unroll, got " + gradient_mode_name(cfg.mode));
    return pgd_eot(x, y, pipe, threat, cfg, rng);
}

/// Predictions for clean rows using the same evaluation streams as pgd_eot.
inline std::vector<int> predict_clean(const Pipeline& pipe, const Tensor& x, const Rng& rng)
{
    std::vector<int> out(x.rows());
    detail::for_each_chunk(x.rows(), [&](std::size_t c, std::size_t b, std::size_t e) {
        Rng ev = rng.child(detail::kEvalStream).child(c);
        const auto p = pipe.predict(detail::row_block(x, b, e), ev);
        std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
    });
    return out;
}

struct AttackSummary {
    AttackConfig config;
    double robust_accuracy = 0.0;
    std::vector<int> pred;
    std::vector<double> norm;
};

struct Evaluation {
    std::string pipeline;
    ThreatModel threat;
    std::vector<int> labels;
    std::vector<int> pred_clean;
    double clean_accuracy = 0.0;
    std::vector<AttackSummary> attacks;
    std::vector<bool> robust;     // correct under every attack
    double robust_accuracy = 0.0; // worst case over attacks; clean accuracy when none
};

inline double accuracy_of(const std::vector<int>& pred, const std::vector<int>& y)
{
    if (pred.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == y[i];
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

inline Evaluation evaluate(const Pipeline& pipe, const Dataset& data, const ThreatModel& threat,
                           const std::vector<AttackConfig>& attacks, const Rng& rng)
{
    if (data.size() == 0) throw Error("evaluate: empty dataset");
    Evaluation ev;
    ev.pipeline = pipe.name();
    ev.threat = threat;
    ev.labels = data.y;
    ev.pred_clean = predict_clean(pipe, data.x, rng);
    ev.clean_accuracy = accuracy_of(ev.pred_clean, data.y);
    ev.robust.assign(data.size(), true);
    for (std::size_t i = 0; i < data.size(); ++i) ev.robust[i] = ev.pred_clean[i] == data.y[i];
    if (!attacks.empty()) ev.robust.assign(data.size(), true);
    for (std::size_t a = 0; a < attacks.size(); ++a) {
        const AttackResult r = pgd_eot(data.x, data.y, pipe, threat, attacks[a], rng);
        AttackSummary s{attacks[a], r.robust_accuracy(), r.pred, r.norm};
        for (std::size_t i = 0; i < data.size(); ++i) ev.robust[i] = ev.robust[i] && !r.success[i];
        ev.attacks.push_back(std::move(s));
    }
    std::size_t ok = 0;
    for (bool b : ev.robust) ok += b;
    ev.robust_accuracy = static_cast<double>(ok) / static_cast<double>(data.size());
    return ev;
}

} // namespace taro

#endif // TARO_ATTACK_HPP
