#pragma once

#include <cstddef>
#include <vector>

#include "trisplat/vec.hpp"

namespace ts {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

// First/second moment pair for one scalar parameter.
struct AdamMoment {
    double m = 0, v = 0;
};

// One Adam update with bias correction at step t (1-based).
inline double adam_step(AdamMoment& st, double grad, double lr, int t,
                        const AdamConfig& cfg = {}) {
    st.m = cfg.beta1 * st.m + (1 - cfg.beta1) * grad;
    st.v = cfg.beta2 * st.v + (1 - cfg.beta2) * grad * grad;
    double mhat = st.m / (1 - std::pow(cfg.beta1, t));
    double vhat = st.v / (1 - std::pow(cfg.beta2, t));
    return -lr * mhat / (std::sqrt(vhat) + cfg.eps);
}

// Moment buffer for a flat parameter vector (the MLPs).
struct AdamBuffer {
    std::vector<AdamMoment> moments;

    void resize(size_t n) { moments.resize(n); }

    void apply(std::vector<double>& params, const std::vector<double>& grads, size_t offset,
               double lr, int t, const AdamConfig& cfg = {}) {
        for (size_t i = 0; i < params.size(); ++i)
            if (grads[i] != 0 || moments[offset + i].m != 0 || moments[offset + i].v != 0)
                params[i] += adam_step(moments[offset + i], grads[i], lr, t, cfg);
    }
};

}  // namespace ts
