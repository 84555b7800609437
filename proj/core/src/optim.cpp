#include "omni/optim.hpp"

#include <cmath>

namespace omni {

double adamw_step(std::vector<Tensor> & params, AdamWState & state, const AdamWConfig & cfg) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].data().size(), 0.0);
            state.v[i].assign(params[i].data().size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw UsageError("adamw: state was initialized for a different parameter set");
    }

    // Global norm and finiteness check before touching anything.
    double sq = 0.0;
    for (auto & p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adamw: non-finite gradient, step refused");
            }
            sq += g * g;
        }
    }
    double gnorm = std::sqrt(sq);
    double clip_scale = 1.0;
    if (cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm) {
        clip_scale = cfg.clip_norm / gnorm;
    }

    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor & p = params[i];
        bool f32 = p.dtype() == Dtype::f32;
        std::vector<double> & m = state.m[i];
        std::vector<double> & v = state.v[i];
        const std::vector<double> * gp = p.has_grad() ? &p.grad() : nullptr;
        for (size_t j = 0; j < p.data().size(); ++j) {
            double g = gp ? (*gp)[j] * clip_scale : 0.0;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            double upd = cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.data()[j]);
            double nv = p.data()[j] - upd;
            p.data()[j] = f32 ? static_cast<double>(static_cast<float>(nv)) : nv;
        }
    }
    return gnorm;
}

} // namespace omni
