#pragma once

#include <functional>

#include "recast/dit.hpp"

namespace recast {

// Strictly decreasing timestep list from 1 to 0 driving Euler integration.
template <class Real>
struct SamplerSchedule {
    std::vector<Real> timesteps;

    int steps() const { return static_cast<int>(timesteps.size()) - 1; }

    void validate() const {
        if (timesteps.size() < 2) throw ConfigError("schedule needs at least two timesteps");
        if (timesteps.front() != Real(1)) throw ConfigError("schedule must start at t=1");
        if (timesteps.back() != Real(0)) throw ConfigError("schedule must end at t=0");
        for (size_t i = 1; i < timesteps.size(); ++i)
            if (!(timesteps[i] < timesteps[i - 1])) throw ConfigError("schedule must be strictly decreasing");
    }
};

template <class Real>
SamplerSchedule<Real> make_schedule(int n) {
    if (n < 1) throw ConfigError("make_schedule: n must be >= 1");
    SamplerSchedule<Real> s;
    s.timesteps.resize(n + 1);
    for (int i = 0; i <= n; ++i)
        s.timesteps[i] = static_cast<Real>(1.0 - static_cast<double>(i) / n);
    s.timesteps[n] = Real(0);
    s.validate();
    return s;
}

// z_t = (1-t) z_0 + t eps, the straight interpolation path
template <class Real>
Grid<Real> noisy_latent(const Grid<Real>& z0, const Grid<Real>& eps, double t) {
    check_same_shape(z0.shape, eps.shape, "noisy_latent");
    if (!(t >= 0.0 && t <= 1.0)) throw DataError("noisy_latent: t outside [0,1]");
    return add(mul_scalar(z0, static_cast<Real>(1.0 - t)), mul_scalar(eps, static_cast<Real>(t)));
}

// u = eps - z_0, the exact t-derivative of the interpolation path
template <class Real>
Grid<Real> target_velocity(const Grid<Real>& z0, const Grid<Real>& eps) {
    check_same_shape(z0.shape, eps.shape, "target_velocity");
    return sub(eps, z0);
}

enum class LossNorm { Mse, L2 };

inline LossNorm loss_norm_from_string(const std::string& s) {
    if (s == "mse") return LossNorm::Mse;
    if (s == "l2") return LossNorm::L2;
    throw ConfigError("loss_norm must be 'mse' or 'l2', got '" + s + "'");
}

template <class Real>
struct FlowBatchItem {
    Grid<Real> z0;     // clean target latent [f,c,h,w], constant
    Grid<Real> noise;  // same shape, standard normal, constant
    double t = 0.5;
    ConditionedSequence<Real> cond;
};

// Velocity regression loss for one item; the mean over a batch is taken by
// the caller (gradients are seeded with 1/batch).
template <class Real>
Grid<Real> fm_loss(const ParamView<Real>& view, const FlowBatchItem<Real>& item, LossNorm norm) {
    auto z_t = noisy_latent(item.z0, item.noise, item.t);
    auto seq = item.cond.with_target(patchify_op(z_t, item.cond.target_dims()));
    auto v = dit_forward(view, seq, item.t);
    auto u = target_velocity(item.z0, item.noise);
    auto d = sub(v, u);
    if (norm == LossNorm::Mse) return mean_all(mul(d, d));
    return sqrt_g(sum_all(mul(d, d)));
}

// ---------------------------------------------------------------------------
// Euler sampler: z_{t_{i+1}} = z_{t_i} + v(z_{t_i}, t_i) (t_{i+1} - t_i),
// started from seeded standard normal noise
// ---------------------------------------------------------------------------

template <class Real>
using VelocityFn = std::function<Grid<Real>(const Grid<Real>& z, double t)>;

template <class Real>
Grid<Real> euler_sample(const VelocityFn<Real>& velocity, const Shape& zshape,
                        const SamplerSchedule<Real>& sched, uint64_t seed) {
    sched.validate();
    Rng rng(seed);
    Grid<Real> z = Grid<Real>::normal(zshape, rng);
    for (int i = 0; i < sched.steps(); ++i) {
        double t = static_cast<double>(sched.timesteps[i]);
        double dt = static_cast<double>(sched.timesteps[i + 1]) - t;
        auto v = velocity(z, t);
        check_same_shape(z.shape, v.shape, "euler_sample");
        z = add(z, mul_scalar(v, static_cast<Real>(dt)));
    }
    return z;
}

inline Shape pd_shape(const PatchDims& pd) { return {pd.f, pd.c, pd.h, pd.w}; }

// Inference-mode sampling of the DiT over a conditioned sequence. Returns the
// generated target latent [f,c,h,w].
template <class Real>
Grid<Real> sample_flow(const ParamView<Real>& view, const ConditionedSequence<Real>& cond,
                       const SamplerSchedule<Real>& sched, uint64_t seed) {
    auto pd = cond.target_dims();
    VelocityFn<Real> fn = [&](const Grid<Real>& z, double t) {
        auto seq = cond.with_target(patchify_op(z, pd));
        return dit_forward(view, seq, t);
    };
    return euler_sample(fn, pd_shape(pd), sched, seed);
}

}  // namespace recast
