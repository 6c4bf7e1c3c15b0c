#ifndef TARO_MLP_HPP
#define TARO_MLP_HPP

#include <cmath>
#include <string>
#include <vector>

#include "taro/autodiff.hpp"
#include "taro/random.hpp"

namespace taro {

enum class Activation { Tanh, Softplus };

inline std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "softplus"; }

inline Activation parse_activation(const std::string& s)
{
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    throw Error("unknown activation '" + s + "'");
}

/// Fully connected network with smooth hidden activations and a linear
/// output layer. Weights are stored in x out, biases 1 x out.
struct Mlp {
    std::vector<std::size_t> sizes;
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    Activation activation = Activation::Tanh;

    static Mlp init(const std::vector<std::size_t>& sizes, Rng& rng, Activation act = Activation::Tanh)
    {
        if (sizes.size() < 2) throw Error("mlp: need at least input and output sizes");
        Mlp m;
        m.sizes = sizes;
        m.activation = act;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            Tensor w = rng.normal_tensor({sizes[l], sizes[l + 1]});
            const double s = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
            for (auto& v : w.data) v *= s;
            m.weights.push_back(std::move(w));
            m.biases.push_back(Tensor::zeros({1, sizes[l + 1]}));
        }
        return m;
    }

    std::size_t layers() const { return weights.size(); }
    std::size_t in_dim() const { return sizes.front(); }
    std::size_t out_dim() const { return sizes.back(); }

    /// Parameters as tape variables, weights and biases interleaved.
    std::vector<ad::Variable> bind(ad::Tape& tape, bool trainable) const
    {
        std::vector<ad::Variable> p;
        for (std::size_t l = 0; l < layers(); ++l) {
            p.push_back(tape.leaf(weights[l], trainable));
            p.push_back(tape.leaf(biases[l], trainable));
        }
        return p;
    }

    ad::Variable forward(const ad::Variable& x, const std::vector<ad::Variable>& p) const
    {
        if (x.value().rank() != 2 || x.shape()[1] != in_dim())
            throw Error("mlp: input shape " + shape_str(x.shape()) + " does not match input size " +
                        std::to_string(in_dim()));
        ad::Variable h = x;
        const std::size_t n = x.shape()[0];
        for (std::size_t l = 0; l < layers(); ++l) {
            h = ad::add(ad::matmul(h, p[2 * l]), ad::broadcast(p[2 * l + 1], {n, sizes[l + 1]}));
            if (l + 1 < layers()) h = activation == Activation::Tanh ? ad::tanh(h) : ad::softplus(h);
        }
        return h;
    }

    ad::Variable forward(const ad::Variable& x) const { return forward(x, bind(x.tape(), false)); }

    std::vector<Tensor*> parameters()
    {
        std::vector<Tensor*> p;
        for (std::size_t l = 0; l < layers(); ++l) {
            p.push_back(&weights[l]);
            p.push_back(&biases[l]);
        }
        return p;
    }

    bool all_finite() const
    {
        for (std::size_t l = 0; l < layers(); ++l)
            if (!weights[l].all_finite() || !biases[l].all_finite()) return false;
        return true;
    }

    friend bool operator==(const Mlp& a, const Mlp& b)
    {
        return a.sizes == b.sizes && a.weights == b.weights && a.biases == b.biases && a.activation == b.activation;
    }
};

/// Adam over a fixed list of parameter tensors.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps)
    {
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads)
    {
        if (params.size() != grads.size()) throw Error("adam: parameter/gradient count mismatch");
        if (m_.empty())
            for (const auto* p : params) {
                m_.push_back(Tensor::zeros(p->shape));
                v_.push_back(Tensor::zeros(p->shape));
            }
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k]->data;
            const auto& g = grads[k].data;
            auto& m = m_[k].data;
            auto& v = v_[k].data;
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
                v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
                p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, b1_, b2_, eps_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

} // namespace taro

#endif // TARO_MLP_HPP
