#include "kdf/diffnet.hpp"

#include <cmath>

namespace kdf::nn {

void adam_step(EncoderParams& params, const GradientBundle& grads, AdamState& state, double lr,
               double weight_decay, const AdamConfig& config) {
    if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
        throw UsageError("adam_step: parameter, gradient and state shapes differ");
    }
    if (!grads.all_finite()) {
        throw TrainingError("adam_step: non-finite gradient", -1, -1, -1);
    }
    state.steps += 1;
    const double t = static_cast<double>(state.steps);
    const double bias1 = 1.0 - std::pow(config.beta1, t);
    const double bias2 = 1.0 - std::pow(config.beta2, t);

    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    for (std::size_t i = 0; i < EncoderParams::kCount; ++i) {
        if (weight_decay != 0.0) {
            *p[i] *= (1.0 - lr * weight_decay);
        }
        *m[i] = config.beta1 * *m[i] + (1.0 - config.beta1) * *g[i];
        *v[i] = config.beta2 * *v[i] + (1.0 - config.beta2) * g[i]->cwiseProduct(*g[i]);
        const auto m_hat = m[i]->array() / bias1;
        const auto v_hat = v[i]->array() / bias2;
        p[i]->array() -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

} // namespace kdf::nn
