#ifndef TARO_SCHEDULE_HPP
#define TARO_SCHEDULE_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "taro/random.hpp"
#include "taro/tensor.hpp"

namespace taro {

/// Geometric time-to-noise map sigma(t) = sigma_min^(1-t) * sigma_max^t.
struct NoiseSchedule {
    double sigma_min = 0.01;
    double sigma_max = 5.0;
    double t_min = 0.01;
    double t_max = 1.0;

    void validate() const
    {
        if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
            throw Error("schedule: need 0 < sigma_min < sigma_max");
        if (!(t_min >= 0.0) || !(t_max > t_min) || t_max > 1.0)
            throw Error("schedule: need 0 <= t_min < t_max <= 1");
    }

    double sigma(double t) const { return std::pow(sigma_min, 1.0 - t) * std::pow(sigma_max, t); }

    /// sigma sampled at n equally spaced times on [t_min, t_max].
    std::vector<double> table(std::size_t n) const
    {
        std::vector<double> out;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = n == 1 ? t_min : t_min + (t_max - t_min) * static_cast<double>(i) / (n - 1.0);
            out.push_back(sigma(t));
        }
        return out;
    }
};

/// Base timestep per purification iteration.
struct TimestepSchedule {
    enum class Kind { Linear, Uniform };
    Kind kind = Kind::Linear;
    double start = 0.25; // Linear: first base time; Uniform: lower bound
    double end = 0.0;    // Linear: last base time (raised to t_min); Uniform: upper bound

    static TimestepSchedule linear(double from, double to = 0.0) { return {Kind::Linear, from, to}; }
    static TimestepSchedule uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }

    void validate() const
    {
        if (kind == Kind::Uniform && !(start <= end)) throw Error("timesteps: uniform interval needs lo <= hi");
        if (start < 0.0 || start > 1.0 || end < 0.0 || end > 1.0) throw Error("timesteps: times must lie in [0,1]");
    }

    /// Base time of iteration `iter` out of `iters`.
    double at(std::size_t iter, std::size_t iters, double t_min, Rng& rng) const
    {
        if (kind == Kind::Uniform) return rng.uniform(start, end);
        const double last = std::max(end, t_min);
        if (iters <= 1) return start;
        return start + (last - start) * static_cast<double>(iter) / static_cast<double>(iters - 1);
    }
};

/// Cosine signal-retention schedule over 1000 virtual steps, indexed by t in [0,1].
inline double cosine_alpha_bar(double t)
{
    constexpr double s = 0.008;
    constexpr int steps = 1000;
    const int n = std::clamp(static_cast<int>(std::lround(t * steps)), 1, steps);
    auto f = [](double u) {
        const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    return std::clamp(f(static_cast<double>(n) / steps) / f(0.0), 1e-8, 1.0);
}

} // namespace taro

#endif // TARO_SCHEDULE_HPP
