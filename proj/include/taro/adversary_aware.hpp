#ifndef TARO_ADVERSARY_AWARE_HPP
#define TARO_ADVERSARY_AWARE_HPP

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "taro/attack.hpp"
#include "taro/train.hpp"

namespace taro {

/// Adversarial residuals x_adv - x from successful attacks on an undefended
/// classifier, with the attack that produced them.
struct ResidualCorpus {
    Tensor residuals; // M x d
    Norm norm = Norm::Linf;
    double eps = 0.0;
    std::uint64_t seed = 0;
    std::size_t attack_steps = 0;
    std::size_t attempted = 0;

    std::size_t size() const { return residuals.rank() == 2 ? residuals.rows() : 0; }
    std::size_t dim() const { return residuals.rank() == 2 ? residuals.cols() : 0; }

    friend bool operator==(const ResidualCorpus& a, const ResidualCorpus& b)
    {
        return a.residuals == b.residuals && a.norm == b.norm && a.eps == b.eps && a.seed == b.seed &&
               a.attack_steps == b.attack_steps && a.attempted == b.attempted;
    }
};

struct CorpusSpec {
    Norm norm = Norm::L2;
    double eps = 0.5;
    std::size_t samples = 512;
    AttackConfig attack; // PGD-20 on the bare classifier
};

/// Attacks the first `samples` rows of `data` through the bare classifier and
/// keeps the residuals of the successful ones. With eps = 0 no attack is
/// possible and every attempted row contributes a zero residual.
inline ResidualCorpus generate_residual_corpus(const Dataset& data, const Classifier& clf, const CorpusSpec& spec,
                                               const Rng& rng)
{
    if (data.size() == 0) throw Error("residual corpus: empty dataset");
    if (spec.samples == 0) throw Error("residual corpus: zero samples requested");
    if (!(spec.eps >= 0.0)) throw Error("residual corpus: eps must be nonnegative");
    const std::size_t n = std::min(spec.samples, data.size());
    const Dataset part = data.subset(0, n);

    ResidualCorpus c;
    c.norm = spec.norm;
    c.eps = spec.eps;
    c.seed = rng.seed();
    c.attack_steps = spec.attack.steps;
    c.attempted = n;
    if (spec.eps == 0.0) {
        c.residuals = Tensor::zeros({n, data.dim()});
        return c;
    }

    Pipeline bare{nullptr, std::make_shared<const Classifier>(clf)};
    ThreatModel threat{spec.norm, spec.eps};
    const AttackResult r = pgd_eot(part.x, part.y, bare, threat, spec.attack, rng);
    std::vector<double> kept;
    const std::size_t d = data.dim();
    for (std::size_t i = 0; i < n; ++i) {
        if (!r.success[i]) continue;
        for (std::size_t j = 0; j < d; ++j) kept.push_back(r.x_adv.data[i * d + j] - part.x.data[i * d + j]);
    }
    if (kept.empty())
        throw Error("residual corpus: attack failed on all " + std::to_string(n) + " samples; nothing to train on");
    const std::size_t rows = kept.size() / d;
    c.residuals = Tensor({rows, d}, std::move(kept));
    return c;
}

/// Noise predictor d_phi(delta_t, t) for residuals diffused as
/// delta_t = sqrt(a_t) delta + sqrt(1 - a_t) eps'.
struct PerturbationModel {
    Mlp net; // (d + 1) -> d, last input is t

    std::size_t dim() const { return net.out_dim(); }

    static double alpha(double t) { return cosine_alpha_bar(t); }

    static PerturbationModel init(std::size_t dim, const std::vector<std::size_t>& hidden, Rng& rng)
    {
        std::vector<std::size_t> sizes = {dim + 1};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(dim);
        return PerturbationModel{Mlp::init(sizes, rng, Activation::Tanh)};
    }

    ad::Variable predict_rows(const ad::Variable& delta_t, const Tensor& t, const std::vector<ad::Variable>& p) const
    {
        const ad::Variable tv = delta_t.tape().constant(t);
        return net.forward(ad::concat({delta_t, tv}, 1), p);
    }

    ad::Variable predict(const ad::Variable& delta_t, double t) const
    {
        return predict_rows(delta_t, Tensor::full({delta_t.shape()[0], 1}, t), net.bind(delta_t.tape(), false));
    }

    Tensor predict(const Tensor& delta_t, double t) const
    {
        ad::Tape tape;
        return predict(tape.constant(delta_t), t).value();
    }

    friend bool operator==(const PerturbationModel& a, const PerturbationModel& b) { return a.net == b.net; }
};

struct PertTrainConfig {
    std::vector<std::size_t> hidden = {32, 32};
    std::size_t steps = 1500;
    std::size_t batch = 128;
    double lr = 2e-3;
    std::size_t eval_every = 25;
    double val_fraction = 0.2;
};

namespace detail {

// Mean squared noise-prediction error on residuals `delta` at per-row times t.
inline ad::Variable pert_loss(const PerturbationModel& m, const std::vector<ad::Variable>& p, const Tensor& delta,
                              const Tensor& noise, const Tensor& t)
{
    ad::Tape& tape = p.front().tape();
    const std::size_t n = delta.rows(), d = delta.cols();
    Tensor dt = delta;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = PerturbationModel::alpha(t.data[i]);
        for (std::size_t j = 0; j < d; ++j)
            dt.data[i * d + j] = std::sqrt(a) * delta.data[i * d + j] + std::sqrt(1.0 - a) * noise.data[i * d + j];
    }
    const ad::Variable err = ad::sub(m.predict_rows(tape.constant(dt), t, p), tape.constant(noise));
    return ad::scale(ad::sq_norm(err), 1.0 / static_cast<double>(n));
}

} // namespace detail

/// Trains d_phi on the purifier-side residual x - x_adv, i.e. the negated
/// corpus entries. The last val_fraction of the corpus is held out.
inline PerturbationModel train_perturbation_model(const ResidualCorpus& corpus, const PertTrainConfig& cfg, Rng& rng,
                                                  TrainLog* log = nullptr)
{
    if (corpus.size() == 0) throw Error("train_perturbation_model: corpus is empty");
    if (cfg.batch == 0 || cfg.steps == 0) throw Error("train_perturbation_model: steps and batch must be positive");
    const std::size_t n = corpus.size(), d = corpus.dim();
    std::size_t nv = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n)));
    if (n - nv == 0) nv = 0;
    const Tensor delta = tensor_ops::scale(corpus.residuals, -1.0);
    const Tensor train_part = detail::row_block(delta, 0, n - nv);
    const Tensor val_part = nv ? detail::row_block(delta, n - nv, n) : train_part;

    Rng init_rng = rng.child(0);
    Rng val_rng = rng.child(1);
    Rng step_rng = rng.child(2);
    PerturbationModel model = PerturbationModel::init(d, cfg.hidden, init_rng);

    const Tensor val_noise = val_rng.normal_tensor(val_part.shape);
    Tensor val_t = Tensor::zeros({val_part.rows(), 1});
    for (auto& t : val_t.data) t = val_rng.uniform();
    auto validate = [&]() {
        ad::Tape tape;
        return detail::pert_loss(model, model.net.bind(tape, false), val_part, val_noise, val_t).item();
    };

    TrainLog local;
    local.initial_val_loss = validate();
    local.val_curve.push_back(local.initial_val_loss);
    Adam opt(cfg.lr);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx) i = step_rng.index(train_part.rows());
        const Tensor batch = detail::gather_rows(train_part, idx);
        const Tensor noise = step_rng.normal_tensor(batch.shape);
        Tensor t = Tensor::zeros({cfg.batch, 1});
        for (auto& v : t.data) v = step_rng.uniform();

        ad::Tape tape;
        const auto p = model.net.bind(tape, true);
        const ad::Variable loss = detail::pert_loss(model, p, batch, noise, t);
        if (!std::isfinite(loss.item()))
            throw Error("train_perturbation_model: loss diverged at step " + std::to_string(step));
        const auto g = ad::grad(loss, p);
        std::vector<Tensor> gv;
        for (const auto& v : g) gv.push_back(v.value());
        opt.step(model.net.parameters(), gv);
        if (!model.net.all_finite())
            throw Error("train_perturbation_model: parameters became non-finite at step " + std::to_string(step));
        if (cfg.eval_every && (step + 1) % cfg.eval_every == 0) local.val_curve.push_back(validate());
    }
    local.final_val_loss = validate();
    if (log) *log = local;
    return model;
}

struct AaConfig {
    TaroConfig taro = defaults();
    double lambda_pert = 0.25;

    void validate() const
    {
        taro.validate();
        if (!(lambda_pert >= 0.0)) throw Error("aa config: lambda_pert must be nonnegative");
    }

    static TaroConfig defaults()
    {
        TaroConfig c = TaroConfig::taro2();
        c.gamma = 1.1;
        c.step = 0.1;
        c.timesteps = TimestepSchedule::uniform(0.15, 0.35);
        return c;
    }
};

/// Pieces of one hybrid iteration, exposed for checking.
struct AaTerms {
    ad::Variable x_t;     // aggregated noisy state
    Tensor eps_taro;      // aggregated noise
    ad::Variable u;       // aggregated prediction
    ad::Variable eps_hat; // (x_t - u) / sigma_t
    ad::Variable l_prior;
    ad::Variable d_out; // perturbation model output (absent when the branch is off)
    Tensor eps_prime;
    ad::Variable l_pert;
    Objective objective;
    bool has_pert = false;
};

/// One hybrid iteration at base time t. The perturbation branch, including its
/// noise draw, is skipped when lambda_pert is zero or no model is given.
inline AaTerms taro_aa_terms(const ad::Variable& x, const ad::Variable& x_adv, const TemporalExperts& e, double t,
                             double sigma_t, const AaConfig& cfg, const PerturbationModel* pert, Rng& rng)
{
    if (!(sigma_t > 0.0)) throw Error("taro_aa: base sigma must be positive");
    ad::Tape& tape = x.tape();
    const double gamma = cfg.taro.gamma;
    AaTerms a;
    a.x_t = taro_aggregate(e.noisy, gamma);
    std::vector<ad::Variable> n;
    for (const auto& v : e.noise) n.push_back(tape.constant(v));
    a.eps_taro = taro_aggregate(n, gamma).value();
    a.u = taro_aggregate(e.u, gamma);
    a.eps_hat = ad::scale(ad::sub(a.x_t, a.u), 1.0 / sigma_t);
    a.l_prior = ad::sum(ad::mul(ad::sub(a.eps_hat, tape.constant(a.eps_taro)), x));
    a.objective = Objective{a.l_prior, {a.eps_hat}};
    if (cfg.lambda_pert > 0.0 && pert) {
        a.has_pert = true;
        const double alpha = PerturbationModel::alpha(t);
        a.eps_prime = rng.normal_tensor(x.shape());
        const ad::Variable delta = ad::sub(x, x_adv);
        const ad::Variable delta_t =
            ad::add(ad::scale(delta, std::sqrt(alpha)), tape.constant(tensor_ops::scale(a.eps_prime, std::sqrt(1.0 - alpha))));
        a.d_out = pert->predict(delta_t, t);
        a.l_pert = ad::sum(ad::mul(ad::sub(a.d_out, tape.constant(a.eps_prime)), x));
        a.objective.loss = ad::add(a.l_prior, ad::scale(a.l_pert, cfg.lambda_pert));
        a.objective.frozen.push_back(a.d_out);
    }
    return a;
}

inline Objective taro_aa_objective(const ad::Variable& x, const ad::Variable& x_adv, const TemporalExperts& e,
                                   double t, double sigma_t, const AaConfig& cfg, const PerturbationModel* pert,
                                   Rng& rng)
{
    return taro_aa_terms(x, x_adv, e, t, sigma_t, cfg, pert, rng).objective;
}

/// Hybrid test-time optimization; same modes and stream usage as purify.
inline ad::Variable purify_aa(const ad::Variable& x_adv, const AaConfig& cfg, const Denoiser& denoiser,
                              const PerturbationModel* pert, Rng& rng, Differentiation mode,
                              std::vector<Tensor>* trajectory = nullptr, std::vector<double>* losses = nullptr)
{
    cfg.validate();
    if (!x_adv.value().all_finite()) throw Error("purify: input is not finite");
    if (pert && cfg.lambda_pert > 0.0 && pert->dim() != x_adv.shape()[1])
        throw Error("purify_aa: perturbation model dimension does not match input");
    const TaroConfig& tc = cfg.taro;
    auto loss_fn = [&](const ad::Variable& x, std::size_t i) {
        const double t = tc.timesteps.at(i, tc.iters, tc.noise.t_min, rng);
        const auto times = effective_timesteps(t, tc.kappas_at(t), tc.noise.t_min, tc.noise.t_max, tc.rule);
        const TemporalExperts e = compute_experts(x, times, tc.noise, denoiser, rng);
        const ad::Variable xa = &x.tape() == &x_adv.tape() ? x_adv : x.tape().constant(x_adv.value());
        return taro_aa_objective(x, xa, e, t, tc.noise.sigma(t), cfg, pert, rng);
    };
    return detail::run_optimizer(x_adv, tc.iters, tc.step, tc.optimizer, mode, loss_fn, trajectory, losses);
}

inline PurifyResult purify_aa(const Tensor& x_adv, const AaConfig& cfg, const Denoiser& denoiser,
                              const PerturbationModel* pert, Rng& rng, bool keep_trajectory = false)
{
    ad::Tape tape;
    PurifyResult r;
    r.x = purify_aa(tape.constant(x_adv), cfg, denoiser, pert, rng, Differentiation::None,
                    keep_trajectory ? &r.trajectory : nullptr, &r.losses)
              .value();
    return r;
}

class TaroAaPurifier : public Purifier {
public:
    TaroAaPurifier(AaConfig cfg, std::shared_ptr<const Denoiser> denoiser, std::shared_ptr<const PerturbationModel> pert)
        : cfg_(std::move(cfg)), denoiser_(std::move(denoiser)), pert_(std::move(pert))
    {
        cfg_.validate();
        if (!denoiser_) throw Error("taro-aa purifier: no denoiser");
    }

    using Purifier::apply;
    std::string name() const override { return "taro-aa"; }
    const AaConfig& config() const { return cfg_; }

    ad::Variable apply(const ad::Variable& x, Rng& rng, Differentiation mode) const override
    {
        return purify_aa(x, cfg_, *denoiser_, pert_.get(), rng, mode);
    }

private:
    AaConfig cfg_;
    std::shared_ptr<const Denoiser> denoiser_;
    std::shared_ptr<const PerturbationModel> pert_;
};

} // namespace taro

#endif // TARO_ADVERSARY_AWARE_HPP
