#pragma once

#include <unordered_map>

#include "recast/dit.hpp"

namespace recast {

template <class Real>
struct AdamState {
    Real lr = Real(2e-5);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
    Real clip_norm = Real(0);  // 0 disables global-norm clipping
    int64_t step = 0;
    std::unordered_map<std::string, std::vector<Real>> m, v;

    void update(NamedGrids<Real>& params, std::unordered_map<std::string, std::vector<Real>>& grads) {
        ++step;
        if (clip_norm > Real(0)) {
            double total = 0;
            for (const auto& [name, g] : grads)
                for (Real x : g) total += static_cast<double>(x) * static_cast<double>(x);
            total = std::sqrt(total);
            if (total > static_cast<double>(clip_norm)) {
                Real scale = static_cast<Real>(static_cast<double>(clip_norm) / total);
                for (auto& [name, g] : grads)
                    for (Real& x : g) x *= scale;
            }
        }
        Real bc1 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta1), static_cast<double>(step)));
        Real bc2 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta2), static_cast<double>(step)));
        for (const auto& name : params.names) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const auto& g = git->second;
            auto& grid = params.at(name);
            auto& mv = m[name];
            auto& vv = v[name];
            if (mv.empty()) mv.assign(g.size(), Real(0));
            if (vv.empty()) vv.assign(g.size(), Real(0));
            std::vector<Real> w = grid.values();
            for (size_t i = 0; i < w.size(); ++i) {
                mv[i] = beta1 * mv[i] + (Real(1) - beta1) * g[i];
                vv[i] = beta2 * vv[i] + (Real(1) - beta2) * g[i] * g[i];
                Real mhat = mv[i] / bc1;
                Real vhat = vv[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
            grid = Grid<Real>::from(grid.shape, std::move(w));
        }
    }
};

// Per-sample gradients accumulated into name-keyed buffers, merged in batch
// index order so results do not depend on worker count.
template <class Real>
using GradMap = std::unordered_map<std::string, std::vector<Real>>;

template <class Real>
void accumulate_grads(GradMap<Real>& acc, const std::string& name, const std::vector<Real>& g) {
    auto& dst = acc[name];
    if (dst.empty()) dst.assign(g.size(), Real(0));
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace recast
