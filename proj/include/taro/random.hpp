#ifndef TARO_RANDOM_HPP
#define TARO_RANDOM_HPP

#include <cstdint>
#include <random>

#include "taro/tensor.hpp"

namespace taro {

/// Seeded generator. Child streams are derived by hashing (seed, key), so
/// results never depend on how many draws another stream consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const { return seed_; }

    Rng child(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key + 0x632be59bd9b4e019ULL))); }

    double normal() { return normal_(engine_); }
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    Tensor normal_tensor(const Shape& shape)
    {
        Tensor t = Tensor::zeros(shape);
        for (auto& v : t.data) v = normal();
        return t;
    }

    std::mt19937_64& engine() { return engine_; }

    static std::uint64_t mix(std::uint64_t z)
    {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

} // namespace taro

#endif // TARO_RANDOM_HPP
