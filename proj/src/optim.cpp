#include "prefixmt/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace prefixmt {

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig cfg)
    : cfg_(cfg), params_(std::move(params)), states_(params_.size()) {}

void AdamW::step(float lr) {
    step(lr, std::vector<uint8_t>(params_.size(), 1));
}

void AdamW::step(float lr, const std::vector<uint8_t>& active) {
    if (active.size() != params_.size())
        throw TensorError("optimizer active mask size mismatch");
    ++invocations_;
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!active[i]) continue;
        Tensor& p = params_[i].tensor;
        if (!p.has_grad())
            throw TensorError("missing gradient on trainable parameter " + params_[i].name);
        TensorState& st = states_[i];
        if (st.m.empty()) {
            st.m.assign(p.size(), 0.0f);
            st.v.assign(p.size(), 0.0f);
        }
        st.t += 1;
        const float b1 = cfg_.beta1, b2 = cfg_.beta2;
        const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(b1), static_cast<double>(st.t)));
        const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(b2), static_cast<double>(st.t)));
        auto vals = p.values_mut();
        auto g = p.grad();
        for (size_t j = 0; j < vals.size(); ++j) {
            st.m[j] = b1 * st.m[j] + (1.0f - b1) * g[j];
            st.v[j] = b2 * st.v[j] + (1.0f - b2) * g[j] * g[j];
            const float mhat = st.m[j] / bc1;
            const float vhat = st.v[j] / bc2;
            vals[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * vals[j]);
        }
    }
}

float poly_decay_lr(int64_t step, int64_t total_steps, float lr0, float power) {
    if (total_steps <= 0) throw TensorError("poly_decay_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) throw TensorError("poly_decay_lr: step out of range");
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * static_cast<float>(std::pow(frac, static_cast<double>(power)));
}

float clip_global_norm(const std::vector<NamedTensor>& params, float max_norm) {
    double norm_sq = 0.0;
    for (const auto& nt : params) {
        if (!nt.tensor.has_grad()) continue;
        for (float g : nt.tensor.grad()) norm_sq += static_cast<double>(g) * g;
    }
    const float norm = static_cast<float>(std::sqrt(norm_sq));
    if (norm > max_norm && norm > 0.0f) {
        const float scale = max_norm / norm;
        for (const auto& nt : params) {
            if (!nt.tensor.has_grad()) continue;
            Tensor t = nt.tensor;
            for (float& g : t.grad_mut()) g *= scale;
        }
    }
    return norm;
}

}  // namespace prefixmt
