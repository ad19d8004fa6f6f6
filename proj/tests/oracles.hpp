#pragma once

// Loop-based reference computations and random fixtures shared by the unit
// tests and the acceptance runner.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/autograd.hpp"
#include "fewshot/coattention.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/stacker.hpp"
#include "fewshot/tensor.hpp"
#include "support.hpp"

namespace fewshot::testing {

/// S[i,j] = Σ_a Σ_b vs[a,i] W[a,b] vq[b,j] over flattened locations.
inline Tensor oracle_affinity(const Tensor& vs, const Tensor& w, const Tensor& vq)
{
    const int c = vs.dim(0);
    const int hw = vs.dim(1) * vs.dim(2);
    Tensor s(Shape{hw, hw});
    for (int i = 0; i < hw; ++i)
        for (int j = 0; j < hw; ++j) {
            double acc = 0.0;
            for (int a = 0; a < c; ++a)
                for (int b = 0; b < c; ++b)
                    acc += vs[static_cast<std::size_t>(a) * hw + i] * w.at(a, b) * vq[static_cast<std::size_t>(b) * hw + j];
            s.at(i, j) = acc;
        }
    return s;
}

/// Softmax of every column, computed directly from the definition.
inline Tensor oracle_column_softmax(const Tensor& m)
{
    const int rows = m.dim(0);
    const int cols = m.dim(1);
    Tensor out(Shape{rows, cols});
    for (int j = 0; j < cols; ++j) {
        double top = m.at(0, j);
        for (int i = 1; i < rows; ++i)
            top = std::max(top, m.at(i, j));
        double z = 0.0;
        for (int i = 0; i < rows; ++i)
            z += std::exp(m.at(i, j) - top);
        for (int i = 0; i < rows; ++i)
            out.at(i, j) = std::exp(m.at(i, j) - top) / z;
    }
    return out;
}

inline Tensor oracle_transpose(const Tensor& m)
{
    Tensor t(Shape{m.dim(1), m.dim(0)});
    for (int i = 0; i < m.dim(0); ++i)
        for (int j = 0; j < m.dim(1); ++j)
            t.at(j, i) = m.at(i, j);
    return t;
}

/// out[:, j] = Σ_i v[:, i] · weights[i, j], reshaped like `v`.
inline Tensor oracle_mix(const Tensor& v, const Tensor& weights)
{
    const int c = v.dim(0);
    const int hw = v.dim(1) * v.dim(2);
    Tensor out(v.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int j = 0; j < hw; ++j) {
            double acc = 0.0;
            for (int i = 0; i < hw; ++i)
                acc += v[static_cast<std::size_t>(ch) * hw + i] * weights.at(i, j);
            out[static_cast<std::size_t>(ch) * hw + j] = acc;
        }
    return out;
}

/// Per-pixel σ(W u + b) and its product with u.
inline std::pair<Tensor, Tensor> oracle_gate(const Tensor& u, const Tensor& w, const Tensor& b)
{
    const int c = u.dim(0);
    const int hw = u.dim(1) * u.dim(2);
    Tensor g(u.shape());
    Tensor out(u.shape());
    for (int p = 0; p < hw; ++p)
        for (int o = 0; o < c; ++o) {
            double acc = b[static_cast<std::size_t>(o)];
            for (int i = 0; i < c; ++i)
                acc += w.at(o, i) * u[static_cast<std::size_t>(i) * hw + p];
            const double s = 1.0 / (1.0 + std::exp(-acc));
            g[static_cast<std::size_t>(o) * hw + p] = s;
            out[static_cast<std::size_t>(o) * hw + p] = s * u[static_cast<std::size_t>(o) * hw + p];
        }
    return {g, out};
}

/// Per-pixel W x + b for a (C,H,W) map and a (O,C) matrix.
inline Tensor oracle_conv1x1(const Tensor& x, const Tensor& w, const Tensor& b)
{
    const int in = x.dim(0);
    const int out_c = w.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    Tensor out(Shape{out_c, x.dim(1), x.dim(2)});
    for (int o = 0; o < out_c; ++o)
        for (int p = 0; p < hw; ++p) {
            double acc = b[static_cast<std::size_t>(o)];
            for (int i = 0; i < in; ++i)
                acc += w.at(o, i) * x[static_cast<std::size_t>(i) * hw + p];
            out[static_cast<std::size_t>(o) * hw + p] = acc;
        }
    return out;
}

/// Learnable tensors of one interaction block and its residual heads, owned as parameters.
struct StageParams {
    Parameter w_co, gate_w, gate_b, fuse_w, fuse_b;
    Parameter reduce_q_w, reduce_q_b, reduce_s_w, reduce_s_b;
    Parameter phi_q_w, phi_q_b, phi_s_w, phi_s_b;

    StageParams(int channels, int semantic_dim, coattention::Variant variant, Rng& rng, double scale = 0.5)
    {
        const int cc = coattention::conditioned_channels(variant, channels, semantic_dim);
        const int out = coattention::output_channels(variant, channels, semantic_dim);
        w_co = random_parameter("w_co", Shape{cc, cc}, rng, scale);
        gate_w = random_parameter("gate_w", Shape{cc, cc}, rng, scale);
        gate_b = random_parameter("gate_b", Shape{cc}, rng, scale);
        fuse_w = random_parameter("fuse_w", Shape{channels, channels + semantic_dim}, rng, scale);
        fuse_b = random_parameter("fuse_b", Shape{channels}, rng, scale);
        reduce_q_w = random_parameter("reduce_q_w", Shape{channels, out}, rng, scale);
        reduce_q_b = random_parameter("reduce_q_b", Shape{channels}, rng, scale);
        reduce_s_w = random_parameter("reduce_s_w", Shape{channels, out}, rng, scale);
        reduce_s_b = random_parameter("reduce_s_b", Shape{channels}, rng, scale);
        phi_q_w = random_parameter("phi_q_w", Shape{channels, channels}, rng, scale);
        phi_q_b = random_parameter("phi_q_b", Shape{channels}, rng, scale);
        phi_s_w = random_parameter("phi_s_w", Shape{channels, channels}, rng, scale);
        phi_s_b = random_parameter("phi_s_b", Shape{channels}, rng, scale);
    }

    coattention::BlockWeights block() const
    {
        coattention::BlockWeights w;
        w.w_co = ag::bind(w_co);
        w.gate_w = ag::bind(gate_w);
        w.gate_b = ag::bind(gate_b);
        w.fuse_w = ag::bind(fuse_w);
        w.fuse_b = ag::bind(fuse_b);
        return w;
    }

    stacker::StageWeights stage() const
    {
        stacker::StageWeights s;
        s.block = block();
        s.reduce_q_w = ag::bind(reduce_q_w);
        s.reduce_q_b = ag::bind(reduce_q_b);
        s.reduce_s_w = ag::bind(reduce_s_w);
        s.reduce_s_b = ag::bind(reduce_s_b);
        s.phi_q_w = ag::bind(phi_q_w);
        s.phi_q_b = ag::bind(phi_q_b);
        s.phi_s_w = ag::bind(phi_s_w);
        s.phi_s_b = ag::bind(phi_s_b);
        return s;
    }

    std::vector<Parameter*> block_parameters() { return {&w_co, &gate_w, &gate_b}; }
};

/// Largest relative error between backprop and central differences of `loss`
/// over every entry of every parameter. `loss` must bind the parameters afresh.
inline double parameter_gradient_error(const std::function<ag::Var()>& loss, const std::vector<Parameter*>& params,
                                       double step = 1e-5, double floor = 1e-4)
{
    ag::GradientMap grads;
    ag::backward(loss(), &grads);
    double worst = 0.0;
    for (Parameter* p : params) {
        auto f = [&]() {
            const ag::NoGradGuard guard;
            return loss().value()[0];
        };
        const Tensor numeric = numeric_gradient(f, p->value, step);
        const auto it = grads.find(p);
        const Tensor analytic = it == grads.end() ? Tensor::zeros_like(p->value) : it->second;
        worst = std::max(worst, max_relative_error(analytic, numeric, floor));
    }
    return worst;
}

inline std::vector<ag::Var> constants(const std::vector<Tensor>& maps)
{
    std::vector<ag::Var> out;
    for (const Tensor& m : maps)
        out.push_back(ag::constant(m));
    return out;
}

}  // namespace fewshot::testing
