#pragma once

#include <functional>
#include <memory>
#include <set>
#include <vector>

#include "recast/grid.hpp"

namespace recast {

// Reverse-mode gradient tape. Ops append records in execution order; backward
// replays them in reverse, so every requires-grad leaf receives its gradient
// exactly once per backward call. Single-writer: one computation builds and
// consumes one tape.
template <class Real>
class Tape {
public:
    struct Record {
        int out;
        // accumulates into parent grad buffers given d(loss)/d(out)
        std::function<void(Tape&, const std::vector<Real>&)> backward;
        int tag;
        bool visited = false;
    };

    int add_node(int64_t n) {
        node_numel_.push_back(n);
        grads_.emplace_back(nullptr);
        is_leaf_.push_back(false);
        return static_cast<int>(node_numel_.size()) - 1;
    }

    void add_record(int out, std::function<void(Tape&, const std::vector<Real>&)> bw) {
        records_.push_back(Record{out, std::move(bw), tag_, false});
    }

    // Registers a grid's payload as a requires-grad leaf on this tape.
    Grid<Real> leaf(const Grid<Real>& g) {
        Grid<Real> out(g.shape, g.data);
        out.tape = this;
        out.node = add_node(g.size());
        is_leaf_[out.node] = true;
        return out;
    }

    // Lazily-created gradient accumulator for a node.
    std::vector<Real>& grad_buf(int node) {
        if (!grads_[node]) grads_[node] = std::make_unique<std::vector<Real>>(node_numel_[node], Real(0));
        return *grads_[node];
    }

    const std::vector<Real>* grad(int node) const { return grads_[node] ? grads_[node].get() : nullptr; }

    // Gradient of a leaf after backward; zeros if the leaf was unreachable.
    std::vector<Real> leaf_grad(const Grid<Real>& g) const {
        if (g.tape != this || g.node < 0) throw ShapeError("leaf_grad: grid not on this tape");
        const auto* p = grad(g.node);
        if (p) return *p;
        return std::vector<Real>(g.size(), Real(0));
    }

    void backward(const Grid<Real>& out, Real seed = Real(1)) {
        if (out.tape != this || out.node < 0) throw ShapeError("backward: output not on this tape");
        if (out.size() != 1) throw ShapeError("backward: output must be scalar");
        grad_buf(out.node)[0] += seed;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            auto& rec = *it;
            if (!grads_[rec.out]) continue;  // never reached by the loss
            rec.visited = true;
            rec.backward(*this, *grads_[rec.out]);
            // out's grad is final here (all consumers already replayed) and
            // no later record reads it, so release unless it is requested state
            if (!is_leaf_[rec.out] && rec.out != out.node) grads_[rec.out].reset();
        }
    }

    // Provenance introspection: which tags had at least one record replayed
    // with a live gradient. Used to verify truncated-backprop contracts.
    void set_tag(int t) { tag_ = t; }
    int tag() const { return tag_; }
    bool tag_reached(int t) const {
        for (const auto& r : records_)
            if (r.tag == t && r.visited) return true;
        return false;
    }
    std::set<int> reached_tags() const {
        std::set<int> s;
        for (const auto& r : records_)
            if (r.visited) s.insert(r.tag);
        return s;
    }

    size_t record_count() const { return records_.size(); }

private:
    std::vector<int64_t> node_numel_;
    std::vector<Record> records_;
    std::vector<std::unique_ptr<std::vector<Real>>> grads_;
    std::vector<bool> is_leaf_;
    int tag_ = 0;
};

// Tape shared by the attached operands; null when all are constants.
// Mixing grids from two different tapes is a usage error.
template <class Real>
Tape<Real>* tape_of(std::initializer_list<const Grid<Real>*> gs) {
    Tape<Real>* t = nullptr;
    for (const auto* g : gs) {
        if (!g->attached()) continue;
        if (t && g->tape != t) throw ShapeError("operands belong to different tapes");
        t = g->tape;
    }
    return t;
}

}  // namespace recast
