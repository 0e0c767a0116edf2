#pragma once

#include <vector>

#include "trisplat/triangle.hpp"

namespace ts {

// One-hidden-layer perceptron, ReLU hidden activation, linear output.
// Zero initialization is the identity point for both decoder heads.
struct MlpCore {
    int in_dim = 0, hidden_dim = 0, out_dim = 0;
    std::vector<double> w1, b1;  // hidden x in, hidden
    std::vector<double> w2, b2;  // out x hidden, out

    MlpCore() = default;
    MlpCore(int in, int hidden, int out) : in_dim(in), hidden_dim(hidden), out_dim(out) {
        w1.assign(static_cast<size_t>(hidden) * in, 0.0);
        b1.assign(hidden, 0.0);
        w2.assign(static_cast<size_t>(out) * hidden, 0.0);
        b2.assign(out, 0.0);
    }

    size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    void forward(const double* in, double* hidden_pre, double* out_linear) const {
        for (int h = 0; h < hidden_dim; ++h) {
            double s = b1[h];
            const double* row = &w1[static_cast<size_t>(h) * in_dim];
            for (int i = 0; i < in_dim; ++i) s += row[i] * in[i];
            hidden_pre[h] = s;
        }
        for (int o = 0; o < out_dim; ++o) {
            double s = b2[o];
            const double* row = &w2[static_cast<size_t>(o) * hidden_dim];
            for (int h = 0; h < hidden_dim; ++h) s += row[h] * std::max(hidden_pre[h], 0.0);
            out_linear[o] = s;
        }
    }

    // Accumulates parameter gradients into g (same shape) and input gradients
    // into d_in. hidden_pre must come from the matching forward call.
    void backward(const double* in, const double* hidden_pre, const double* d_out, MlpCore& g,
                  double* d_in) const {
        std::vector<double> d_hidden(hidden_dim, 0.0);
        for (int o = 0; o < out_dim; ++o) {
            g.b2[o] += d_out[o];
            const double* row = &w2[static_cast<size_t>(o) * hidden_dim];
            double* grow = &g.w2[static_cast<size_t>(o) * hidden_dim];
            for (int h = 0; h < hidden_dim; ++h) {
                double act = std::max(hidden_pre[h], 0.0);
                grow[h] += d_out[o] * act;
                if (hidden_pre[h] > 0) d_hidden[h] += d_out[o] * row[h];
            }
        }
        for (int h = 0; h < hidden_dim; ++h) {
            if (d_hidden[h] == 0.0) continue;
            g.b1[h] += d_hidden[h];
            const double* row = &w1[static_cast<size_t>(h) * in_dim];
            double* grow = &g.w1[static_cast<size_t>(h) * in_dim];
            for (int i = 0; i < in_dim; ++i) {
                grow[i] += d_hidden[h] * in[i];
                if (d_in) d_in[i] += d_hidden[h] * row[i];
            }
        }
    }

    void accumulate(const MlpCore& o, double scale = 1.0) {
        for (size_t i = 0; i < w1.size(); ++i) w1[i] += o.w1[i] * scale;
        for (size_t i = 0; i < b1.size(); ++i) b1[i] += o.b1[i] * scale;
        for (size_t i = 0; i < w2.size(); ++i) w2[i] += o.w2[i] * scale;
        for (size_t i = 0; i < b2.size(); ++i) b2[i] += o.b2[i] * scale;
    }
};

inline constexpr int kGaussianFeatureDim = 8;
inline constexpr int kFusedFeatureDim = kTriangleFeatureDim + kGaussianFeatureDim;  // 32

// Scale/rotation decoders operating on the fused triangle+gaussian feature.
// Head nonlinearities: scale multiplier = 2*sigmoid(.), in (0,2) and 1 at
// zero logits; rotation multiplier = 1 + tanh(.), also identity at zero.
struct DecoderMLP {
    MlpCore scale_mlp{kFusedFeatureDim, 32, 3};
    MlpCore rot_mlp{kFusedFeatureDim, 32, 4};

    // Deterministic small random init for the hidden layers (outputs stay
    // zero so decoding starts at the identity).
    template <typename RngT>
    void randomize_hidden(RngT& rng, double stddev = 0.05) {
        for (double& w : scale_mlp.w1) w = rng.normal(0.0, stddev);
        for (double& w : rot_mlp.w1) w = rng.normal(0.0, stddev);
    }
};

struct DecoderGrads {
    MlpCore scale_mlp{kFusedFeatureDim, 32, 3};
    MlpCore rot_mlp{kFusedFeatureDim, 32, 4};

    void accumulate(const DecoderGrads& o) {
        scale_mlp.accumulate(o.scale_mlp);
        rot_mlp.accumulate(o.rot_mlp);
    }
};

}  // namespace ts
