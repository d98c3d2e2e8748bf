#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "recast/common.hpp"
#include "recast/rng.hpp"

namespace recast {

template <class Real>
class Tape;

// Dense n-axis value carrier. The payload is immutable once an op has
// produced it; copies share the buffer. A grid is differentiable when it is
// attached to a tape (node >= 0); detached grids act as constants.
template <class Real>
struct Grid {
    Shape shape;
    std::shared_ptr<const std::vector<Real>> data;
    Tape<Real>* tape = nullptr;
    int node = -1;

    Grid() = default;
    Grid(Shape s, std::shared_ptr<const std::vector<Real>> d) : shape(std::move(s)), data(std::move(d)) {}

    int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    const std::vector<Real>& values() const { return *data; }
    Real scalar_value() const {
        if (size() != 1) throw ShapeError("scalar_value: grid is not a scalar");
        return (*data)[0];
    }
    bool attached() const { return tape != nullptr && node >= 0; }

    static Grid from(Shape s, std::vector<Real> v) {
        if (numel(s) != static_cast<int64_t>(v.size()))
            throw ShapeError("Grid::from: data length does not match shape " + shape_str(s));
        return Grid(std::move(s), std::make_shared<const std::vector<Real>>(std::move(v)));
    }
    static Grid zeros(Shape s) {
        auto n = numel(s);
        return Grid(std::move(s), std::make_shared<const std::vector<Real>>(n, Real(0)));
    }
    static Grid full(Shape s, Real v) {
        auto n = numel(s);
        return Grid(std::move(s), std::make_shared<const std::vector<Real>>(n, v));
    }
    static Grid scalar(Real v) { return full({1}, v); }
    static Grid normal(Shape s, Rng& rng) {
        auto n = numel(s);
        std::vector<Real> v(n);
        for (auto& x : v) x = static_cast<Real>(rng.normal());
        return from(std::move(s), std::move(v));
    }
    static Grid uniform(Shape s, Rng& rng, double lo, double hi) {
        auto n = numel(s);
        std::vector<Real> v(n);
        for (auto& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
        return from(std::move(s), std::move(v));
    }
};

// Value-identical grid that blocks gradient flow.
template <class Real>
Grid<Real> detach(const Grid<Real>& x) {
    return Grid<Real>(x.shape, x.data);
}

template <class Real>
bool all_finite(const std::vector<Real>& v) {
    for (Real x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

// NaN/Inf surfacing; ops call this on every output they produce.
inline bool& finite_checks_enabled() {
    static bool on = true;
    return on;
}

template <class Real>
void check_finite(const std::vector<Real>& v, const char* op) {
    if (!finite_checks_enabled()) return;
    if (!all_finite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
}

}  // namespace recast
