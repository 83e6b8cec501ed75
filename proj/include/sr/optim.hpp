#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "sr/tensor.hpp"

namespace sr::optim {

struct ScheduleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class OptimizerKind { adam, lamb };
enum class ScheduleKind { cosine, multistep };
enum class Precision { fp32, fp16_mixed };

struct OptimizerHyper {
    OptimizerKind kind = OptimizerKind::lamb;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    // Recipe betas: Adam (0.9, 0.99); Lamb keeps the reference 0.999.
    static OptimizerHyper adam(double lr) { return {OptimizerKind::adam, lr, 0.9, 0.99, 1e-8, 0.0}; }
    static OptimizerHyper lamb(double lr) { return {OptimizerKind::lamb, lr, 0.9, 0.999, 1e-8, 0.0}; }

    void validate() const {
        if (lr <= 0) throw ConfigError("lr: must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("beta: must lie in [0,1)");
        if (eps <= 0) throw ConfigError("eps: must be positive");
        if (weight_decay < 0) throw ConfigError("weight_decay: must be non-negative");
    }
};

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::cosine;
    int64_t total_iters = 1;
    double eta_min = 0.0;
    int64_t warmup_iters = 0;

    void validate() const {
        if (total_iters < 1) throw ConfigError("total_iters: must be >= 1");
        if (warmup_iters < 0 || warmup_iters >= total_iters)
            throw ConfigError("warmup_iters: must satisfy 0 <= warmup < total_iters");
        if (eta_min < 0) throw ConfigError("eta_min: must be non-negative");
    }
};

// Linear scaling rule: lr grows with the batch-size ratio.
inline double scale_lr(double base_lr, int64_t base_bs, int64_t new_bs) {
    if (base_bs <= 0 || new_bs <= 0) throw ConfigError("batch size: must be positive");
    return base_lr * static_cast<double>(new_bs) / static_cast<double>(base_bs);
}

inline double cosine_lr(int64_t t, const ScheduleConfig& sched, double eta_max) {
    if (t < 0 || t > sched.total_iters)
        throw ScheduleError("cosine_lr: iteration " + std::to_string(t) + " outside [0," +
                            std::to_string(sched.total_iters) + "]");
    if (t < sched.warmup_iters)
        return eta_max * static_cast<double>(t) / static_cast<double>(sched.warmup_iters);
    const double tp = static_cast<double>(t - sched.warmup_iters);
    const double Tp = static_cast<double>(sched.total_iters - sched.warmup_iters);
    constexpr double pi = 3.14159265358979323846;
    return sched.eta_min + 0.5 * (eta_max - sched.eta_min) * (1.0 + std::cos(pi * tp / Tp));
}

// Halve at every 20% boundary of the budget.
inline double multistep_lr(int64_t t, const ScheduleConfig& sched, double eta0) {
    if (t < 0 || t > sched.total_iters)
        throw ScheduleError("multistep_lr: iteration " + std::to_string(t) + " outside [0," +
                            std::to_string(sched.total_iters) + "]");
    const int64_t drops = (5 * t) / sched.total_iters;
    return eta0 * std::pow(2.0, -static_cast<double>(drops));
}

inline double schedule_lr(int64_t t, const ScheduleConfig& sched, double eta_max) {
    return sched.kind == ScheduleKind::cosine ? cosine_lr(t, sched, eta_max)
                                              : multistep_lr(t, sched, eta_max);
}

template <typename T>
struct OptimizerState {
    std::vector<Tensor<T>> m;  // first moments, one per parameter tensor
    std::vector<Tensor<T>> v;  // second moments
    int64_t step = 0;

    template <typename Params>
    static OptimizerState init(const std::vector<Params*>& params) {
        OptimizerState s;
        for (const auto* p : params) {
            s.m.emplace_back(p->shape);
            s.v.emplace_back(p->shape);
        }
        return s;
    }
};

namespace detail {
template <typename T>
void update_moments(const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, double b1, double b2) {
    for (size_t i = 0; i < g.data.size(); ++i) {
        m.data[i] = static_cast<T>(b1 * m.data[i] + (1.0 - b1) * g.data[i]);
        v.data[i] = static_cast<T>(b2 * v.data[i] + (1.0 - b2) * g.data[i] * g.data[i]);
    }
}
}  // namespace detail

// Bias-corrected Adam. L2 weight decay folded into the gradient.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads,
               OptimizerState<T>& state, const OptimizerHyper& hyper, double lr_t) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor<T>& w = *params[k];
        const Tensor<T>& g = *grads[k];
        check_same_shape(w, g, "adam_step");
        Tensor<T> geff = g;
        if (hyper.weight_decay != 0.0)
            for (size_t i = 0; i < geff.data.size(); ++i)
                geff.data[i] += static_cast<T>(hyper.weight_decay) * w.data[i];
        detail::update_moments(geff, state.m[k], state.v[k], hyper.beta1, hyper.beta2);
        for (size_t i = 0; i < w.data.size(); ++i) {
            const double mh = state.m[k].data[i] / bc1;
            const double vh = state.v[k].data[i] / bc2;
            w.data[i] -= static_cast<T>(lr_t * mh / (std::sqrt(vh) + hyper.eps));
        }
    }
}

// Lamb: Adam-style bias-corrected ratio, weight decay added to the update
// term, per-tensor trust ratio ||w||/||u|| with a fallback of 1 when either
// norm vanishes. `force_phi_one` pins the trust ratio (test hook).
template <typename T>
void lamb_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads,
               OptimizerState<T>& state, const OptimizerHyper& hyper, double lr_t,
               bool force_phi_one = false) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("lamb_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    std::vector<double> u;
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor<T>& w = *params[k];
        const Tensor<T>& g = *grads[k];
        check_same_shape(w, g, "lamb_step");
        detail::update_moments(g, state.m[k], state.v[k], hyper.beta1, hyper.beta2);
        u.resize(w.data.size());
        double w_norm2 = 0, u_norm2 = 0;
        for (size_t i = 0; i < w.data.size(); ++i) {
            const double mh = state.m[k].data[i] / bc1;
            const double vh = state.v[k].data[i] / bc2;
            u[i] = mh / (std::sqrt(vh) + hyper.eps) + hyper.weight_decay * w.data[i];
            w_norm2 += static_cast<double>(w.data[i]) * w.data[i];
            u_norm2 += u[i] * u[i];
        }
        double phi = 1.0;
        if (!force_phi_one && w_norm2 > 0 && u_norm2 > 0) phi = std::sqrt(w_norm2) / std::sqrt(u_norm2);
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] -= static_cast<T>(lr_t * phi * u[i]);
    }
}

// ---- numeric-precision policy ----

// IEEE binary16 round trip; fp16_mixed passes gradients through this.
inline float to_fp16_and_back(float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    const uint32_t sign = bits & 0x80000000u;
    int32_t exp = static_cast<int32_t>((bits >> 23) & 0xFF) - 127;
    uint32_t mant = bits & 0x7FFFFFu;
    if (exp == 128) return x;  // inf / nan pass through
    if (exp > 15) {            // overflow -> inf
        const uint32_t inf = sign | 0x7F800000u;
        float r;
        std::memcpy(&r, &inf, 4);
        return r;
    }
    if (exp < -24) return sign ? -0.0f : 0.0f;
    int shift = 13;
    if (exp < -14) {  // subnormal half
        shift += (-14 - exp);
        mant |= 0x800000u;
        exp = -15;
    }
    // round to nearest even at the half mantissa boundary
    const uint32_t lsb = 1u << shift;
    const uint32_t round = (lsb >> 1);
    uint32_t half_mant = mant >> shift;
    if ((mant & (lsb - 1)) > round || ((mant & (lsb - 1)) == round && (half_mant & 1))) half_mant += 1;
    // rebuild a float from the half value
    float mag;
    if (exp == -15) {
        mag = std::ldexp(static_cast<float>(half_mant), -24);
    } else {
        mag = std::ldexp(1.0f + static_cast<float>(half_mant) / 1024.0f, exp);
        if (half_mant >= 1024) mag = std::ldexp(1.0f + static_cast<float>(half_mant - 1024) / 1024.0f, exp + 1);
    }
    return sign ? -mag : mag;
}

// Dynamic loss scaling: halve and skip on overflow, double after
// `growth_interval` clean steps.
struct LossScaler {
    double scale = 65536.0;
    int64_t growth_interval = 2000;
    int64_t clean_steps = 0;

    // Grads arrive multiplied by `scale`. Returns false (and halves the scale)
    // when any gradient is non-finite; otherwise unscales in place.
    template <typename T>
    bool unscale_and_check(const std::vector<Tensor<T>*>& grads) {
        bool finite = true;
        for (const auto* g : grads)
            for (const T v : g->data)
                if (!std::isfinite(static_cast<double>(v))) {
                    finite = false;
                    break;
                }
        if (!finite) {
            scale *= 0.5;
            clean_steps = 0;
            return false;
        }
        for (auto* g : grads)
            for (auto& v : g->data) v = static_cast<T>(v / scale);
        clean_steps += 1;
        if (clean_steps >= growth_interval) {
            scale *= 2.0;
            clean_steps = 0;
        }
        return true;
    }
};

}  // namespace sr::optim
