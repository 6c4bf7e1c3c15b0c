#ifndef TARO_TRAIN_HPP
#define TARO_TRAIN_HPP

#include <cmath>
#include <string>
#include <vector>

#include "taro/denoiser.hpp"

namespace taro {

struct DsmConfig {
    std::size_t steps = 2000;
    std::size_t batch = 128;
    double lr = 2e-3;
    double sigma_min = 0.01; // sigma drawn log-uniformly on [sigma_min, sigma_max]
    double sigma_max = 5.0;
    std::size_t eval_every = 100;
    std::size_t val_size = 256;
};

struct TrainLog {
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    std::vector<double> val_curve; // one entry per evaluation, starting at step 0
};

namespace detail {

inline Tensor gather_rows(const Tensor& data, const std::vector<std::size_t>& idx)
{
    const std::size_t d = data.cols();
    Tensor out = Tensor::zeros({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(data.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * d),
                  data.data.begin() + static_cast<std::ptrdiff_t>((idx[i] + 1) * d),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    return out;
}

// EDM-weighted denoising loss, mean over rows.
inline ad::Variable dsm_loss(const MlpDenoiser& model, const std::vector<ad::Variable>& p, const Tensor& clean,
                             const Tensor& noise, const Tensor& sigmas)
{
    ad::Tape& tape = p.front().tape();
    const std::size_t n = clean.rows(), d = clean.cols();
    Tensor noisy = clean;
    Tensor weight = Tensor::zeros({n, 1});
    const double sd = model.sigma_data();
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmas.data[i];
        for (std::size_t j = 0; j < d; ++j) noisy.data[i * d + j] += s * noise.data[i * d + j];
        weight.data[i] = (s * s + sd * sd) / (s * sd * s * sd);
    }
    const ad::Variable out = model.denoise_rows(tape.constant(noisy), sigmas, p);
    const ad::Variable err = ad::sub(out, tape.constant(clean));
    const ad::Variable per_row = ad::sum(ad::mul(err, err), 1);
    return ad::scale(ad::sum(ad::mul(per_row, tape.constant(weight))), 1.0 / static_cast<double>(n));
}

inline double log_uniform(Rng& rng, double lo, double hi) { return std::exp(rng.uniform(std::log(lo), std::log(hi))); }

} // namespace detail

/// Denoising score matching on `data` (N x d). Returns the trained model;
/// `log` receives the validation curve on a fixed noise draw.
inline MlpDenoiser train_dsm(MlpDenoiser model, const Tensor& data, const DsmConfig& cfg, Rng& rng,
                             TrainLog* log = nullptr)
{
    if (data.rank() != 2 || data.rows() == 0) throw Error("train_dsm: dataset is empty");
    if (cfg.batch == 0) throw Error("train_dsm: batch size must be positive");
    if (!(cfg.sigma_min > 0.0) || !(cfg.sigma_max > cfg.sigma_min)) throw Error("train_dsm: invalid sigma range");

    Rng val_rng = rng.child(1);
    Rng step_rng = rng.child(2);
    const std::size_t nv = std::min(cfg.val_size, data.rows());
    std::vector<std::size_t> val_idx;
    for (std::size_t i = 0; i < nv; ++i) val_idx.push_back(val_rng.index(data.rows()));
    const Tensor val_clean = detail::gather_rows(data, val_idx);
    const Tensor val_noise = val_rng.normal_tensor(val_clean.shape);
    Tensor val_sigma = Tensor::zeros({nv, 1});
    for (auto& s : val_sigma.data) s = detail::log_uniform(val_rng, cfg.sigma_min, cfg.sigma_max);

    auto validate = [&]() {
        ad::Tape tape;
        return detail::dsm_loss(model, model.net().bind(tape, false), val_clean, val_noise, val_sigma).item();
    };

    TrainLog local;
    local.initial_val_loss = validate();
    local.val_curve.push_back(local.initial_val_loss);
    Adam opt(cfg.lr);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx) i = step_rng.index(data.rows());
        const Tensor clean = detail::gather_rows(data, idx);
        const Tensor noise = step_rng.normal_tensor(clean.shape);
        Tensor sigmas = Tensor::zeros({cfg.batch, 1});
        for (auto& s : sigmas.data) s = detail::log_uniform(step_rng, cfg.sigma_min, cfg.sigma_max);

        ad::Tape tape;
        const auto p = model.net().bind(tape, true);
        const ad::Variable loss = detail::dsm_loss(model, p, clean, noise, sigmas);
        if (!std::isfinite(loss.item())) throw Error("train_dsm: loss diverged at step " + std::to_string(step));
        const auto g = ad::grad(loss, p);
        std::vector<Tensor> gv;
        for (const auto& v : g) gv.push_back(v.value());
        opt.step(model.net().parameters(), gv);
        if (!model.net().all_finite())
            throw Error("train_dsm: parameters became non-finite at step " + std::to_string(step));
        if (cfg.eval_every && (step + 1) % cfg.eval_every == 0) local.val_curve.push_back(validate());
    }
    local.final_val_loss = validate();
    if (log) *log = local;
    return model;
}

} // namespace taro

#endif // TARO_TRAIN_HPP
