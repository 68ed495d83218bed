#pragma once

#include <cstdint>
#include <vector>

#include "prefixmt/model.hpp"
#include "prefixmt/tensor.hpp"

namespace prefixmt {

struct AdamWConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

// Decoupled-weight-decay Adam over a fixed, ordered parameter list. Per-
// tensor step counters keep bias correction right when only a subset steps
// (the single-stage pipeline updates different sets within one batch).
class AdamW {
public:
    struct TensorState {
        int64_t t = 0;
        std::vector<float> m, v;
    };

    AdamW(std::vector<NamedTensor> params, AdamWConfig cfg);

    void step(float lr);
    // active[i] == 0 skips parameter i entirely (state untouched)
    void step(float lr, const std::vector<uint8_t>& active);

    size_t size() const { return params_.size(); }
    const std::vector<NamedTensor>& params() const { return params_; }
    const AdamWConfig& config() const { return cfg_; }
    const TensorState& state(size_t i) const { return states_[i]; }
    TensorState& state_mut(size_t i) { return states_[i]; }
    int64_t invocations() const { return invocations_; }
    void set_invocations(int64_t n) { invocations_ = n; }

private:
    AdamWConfig cfg_;
    std::vector<NamedTensor> params_;
    std::vector<TensorState> states_;
    int64_t invocations_ = 0;
};

// lr0 * (1 - step/total_steps)^power; hits exactly zero at the last step
float poly_decay_lr(int64_t step, int64_t total_steps, float lr0, float power);

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm. Parameters without gradients are skipped.
float clip_global_norm(const std::vector<NamedTensor>& params, float max_norm);

}  // namespace prefixmt
