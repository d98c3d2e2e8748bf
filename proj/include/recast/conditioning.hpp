#pragma once

#include <memory>
#include <vector>

#include "recast/latents.hpp"

namespace recast {

enum class TokenRole { Target = 0, Source = 1, Mask = 2, Reference = 3 };

// Per-token rotary index triple. Conventions:
//   target/source frames k share frame index k (frame-to-frame correspondence)
//   references sit at frame -1, tiled along the spatial diagonal by
//   (i*th, i*tw) so distinct references never collide
//   the mask carries the designation-frame index from mask_frame_index()
//   height/width are token-grid coordinates
struct RopeIndex {
    int frame = 0;
    int height = 0;
    int width = 0;
    bool operator==(const RopeIndex&) const = default;
};

// Eq.-level mapping from a 1-based designation frame number to the latent
// frame index of the mask token: f_M = (F-1) // 4 + 1.
inline int mask_frame_index(int F, int clip_frames) {
    if (F < 1 || F > clip_frames)
        throw DataError("mask_frame_index: designation frame " + std::to_string(F) + " outside [1, " +
                        std::to_string(clip_frames) + "]");
    return (F - 1) / 4 + 1;
}

struct SegmentInfo {
    TokenRole role;
    int ref_index = -1;   // meaningful for Reference segments
    int frames = 0;       // frame-axis extent of this segment
    int token_offset = 0; // first token of the segment in the assembled order
    int token_count = 0;
};

template <class Real>
struct ConditionedSequence {
    int f = 0;  // target latent frame count
    int j = 0;  // reference count
    int c = 0, h = 0, w = 0, p = 1;
    int designation_frame = 0;  // 1-based F
    int mask_frame = 0;         // f_M

    Grid<Real> target_tokens;            // [f*tpf, token_dim]
    Grid<Real> cond_tokens;              // [(f+1+j)*tpf, token_dim]
    std::vector<SegmentInfo> segments;   // segment 0 is always Target
    std::vector<RopeIndex> rope;         // per token, assembled order
    std::vector<TokenRole> token_roles;  // per token, assembled order

    int th() const { return h / p; }
    int tw() const { return w / p; }
    int tokens_per_frame() const { return th() * tw(); }
    int frame_length() const { return 2 * f + 1 + j; }
    int token_count() const { return frame_length() * tokens_per_frame(); }
    int target_token_count() const { return f * tokens_per_frame(); }

    PatchDims target_dims() const { return PatchDims{f, c, h, w, p}; }

    Grid<Real> full_tokens() const {
        return concat<Real>({target_tokens, cond_tokens}, 0);
    }

    ConditionedSequence with_target(const Grid<Real>& new_target) const {
        if (new_target.shape != target_tokens.shape)
            throw ShapeError("with_target: token shape mismatch");
        ConditionedSequence out = *this;
        out.target_tokens = new_target;
        return out;
    }

    const SegmentInfo& segment(TokenRole role, int ref_index = -1) const {
        for (const auto& s : segments)
            if (s.role == role && (role != TokenRole::Reference || s.ref_index == ref_index)) return s;
        throw ShapeError("segment not present");
    }
};

namespace detail {

inline void append_segment_rope(std::vector<RopeIndex>& rope, std::vector<TokenRole>& roles, TokenRole role,
                                int frames, int th, int tw, int frame0, int dy, int dx) {
    for (int fr = 0; fr < frames; ++fr)
        for (int ty = 0; ty < th; ++ty)
            for (int tx = 0; tx < tw; ++tx) {
                rope.push_back(RopeIndex{frame0 < 0 ? frame0 : frame0 + fr, ty + dy, tx + dx});
                roles.push_back(role);
            }
}

}  // namespace detail

// Builds the unified in-context sequence [target | source | mask | refs...]
// and assigns every token its rotary index triple.
template <class Real>
ConditionedSequence<Real> assemble(const LatentGrid<Real>& x_t, const LatentGrid<Real>& x_s,
                                   const LatentGrid<Real>& x_m, const std::vector<LatentGrid<Real>>& refs,
                                   int F, int clip_frames, int p) {
    if (x_t.f != x_s.f || x_t.c != x_s.c || x_t.h != x_s.h || x_t.w != x_s.w)
        throw ShapeError("assemble: target/source latent shapes differ");
    if (x_m.f != 1 || x_m.c != x_t.c || x_m.h != x_t.h || x_m.w != x_t.w)
        throw ShapeError("assemble: mask latent must be single-frame with matching (c,h,w)");
    if (refs.empty()) throw ShapeError("assemble: at least one reference is required");
    for (const auto& r : refs)
        if (r.f != 1 || r.c != x_t.c || r.h != x_t.h || r.w != x_t.w)
            throw ShapeError("assemble: reference latent must be single-frame with matching (c,h,w)");

    ConditionedSequence<Real> seq;
    seq.f = x_t.f;
    seq.j = static_cast<int>(refs.size());
    seq.c = x_t.c;
    seq.h = x_t.h;
    seq.w = x_t.w;
    seq.p = p;
    seq.designation_frame = F;
    seq.mask_frame = mask_frame_index(F, clip_frames);

    PatchDims pd_t{seq.f, seq.c, seq.h, seq.w, p};
    PatchDims pd_1{1, seq.c, seq.h, seq.w, p};
    pd_t.validate();

    seq.target_tokens = Grid<Real>::from({pd_t.token_count(), pd_t.token_dim()}, patchify_values(x_t.data, pd_t));
    std::vector<Real> cond;
    auto append_tokens = [&](const std::vector<Real>& latent, const PatchDims& pd) {
        auto tok = patchify_values(latent, pd);
        cond.insert(cond.end(), tok.begin(), tok.end());
    };
    append_tokens(x_s.data, pd_t);
    append_tokens(x_m.data, pd_1);
    for (const auto& r : refs) append_tokens(r.data, pd_1);
    seq.cond_tokens =
        Grid<Real>::from({(seq.f + 1 + seq.j) * pd_1.tokens_per_frame(), pd_1.token_dim()}, std::move(cond));

    int th = pd_t.th(), tw = pd_t.tw(), tpf = pd_t.tokens_per_frame();
    int off = 0;
    auto push_seg = [&](TokenRole role, int ref_index, int frames) {
        seq.segments.push_back(SegmentInfo{role, ref_index, frames, off, frames * tpf});
        off += frames * tpf;
    };
    push_seg(TokenRole::Target, -1, seq.f);
    push_seg(TokenRole::Source, -1, seq.f);
    push_seg(TokenRole::Mask, -1, 1);
    for (int i = 0; i < seq.j; ++i) push_seg(TokenRole::Reference, i, 1);

    detail::append_segment_rope(seq.rope, seq.token_roles, TokenRole::Target, seq.f, th, tw, 0, 0, 0);
    detail::append_segment_rope(seq.rope, seq.token_roles, TokenRole::Source, seq.f, th, tw, 0, 0, 0);
    detail::append_segment_rope(seq.rope, seq.token_roles, TokenRole::Mask, 1, th, tw, seq.mask_frame, 0, 0);
    // frame -1 with per-reference diagonal offsets keeps references apart
    for (int i = 0; i < seq.j; ++i)
        detail::append_segment_rope(seq.rope, seq.token_roles, TokenRole::Reference, 1, th, tw, -1, i * th,
                                    i * tw);
    return seq;
}

// Reorders the condition segments (everything after Target) together with
// their tokens, rope indices and roles. Target stays first.
template <class Real>
ConditionedSequence<Real> permute_condition_segments(const ConditionedSequence<Real>& seq,
                                                     const std::vector<int>& order) {
    int ncond = static_cast<int>(seq.segments.size()) - 1;
    if (static_cast<int>(order.size()) != ncond) throw ShapeError("permute_condition_segments: bad order");
    ConditionedSequence<Real> out = seq;
    out.segments.resize(1);
    std::vector<Grid<Real>> parts;
    out.rope.assign(seq.rope.begin(), seq.rope.begin() + seq.target_token_count());
    out.token_roles.assign(seq.token_roles.begin(), seq.token_roles.begin() + seq.target_token_count());
    int off = seq.target_token_count();
    int cond_base = seq.target_token_count();
    for (int idx : order) {
        const SegmentInfo& s = seq.segments.at(1 + idx);
        SegmentInfo ns = s;
        ns.token_offset = off;
        out.segments.push_back(ns);
        parts.push_back(slice(seq.cond_tokens, 0, s.token_offset - cond_base, s.token_count));
        out.rope.insert(out.rope.end(), seq.rope.begin() + s.token_offset,
                        seq.rope.begin() + s.token_offset + s.token_count);
        out.token_roles.insert(out.token_roles.end(), seq.token_roles.begin() + s.token_offset,
                               seq.token_roles.begin() + s.token_offset + s.token_count);
        off += s.token_count;
    }
    out.cond_tokens = concat<Real>(parts, 0);
    return out;
}

// ---------------------------------------------------------------------------
// rotary frequency layout: per-head features split into (frame, height,
// width) blocks in a 2:1:1 ratio, standard inverse-power frequencies per block
// ---------------------------------------------------------------------------

struct RopeFreqs {
    int head_dim = 0;
    double base = 10000.0;

    int frame_pairs() const { return head_dim / 4; }
    int height_pairs() const { return head_dim / 8; }
    int width_pairs() const { return head_dim / 8; }
    int pairs() const { return head_dim / 2; }

    void validate() const {
        if (head_dim <= 0 || head_dim % 8 != 0)
            throw ShapeError("RopeFreqs: head dim must be a positive multiple of 8");
    }

    // rotation angles for one index triple, pair-ordered [frame|height|width]
    std::vector<double> angles(const RopeIndex& idx) const {
        validate();
        std::vector<double> a;
        a.reserve(pairs());
        auto block = [&](int npairs, int index) {
            for (int p = 0; p < npairs; ++p)
                a.push_back(static_cast<double>(index) * std::pow(base, -static_cast<double>(p) / npairs));
        };
        block(frame_pairs(), idx.frame);
        block(height_pairs(), idx.height);
        block(width_pairs(), idx.width);
        return a;
    }
};

// Rotates one token's feature vector by its index triple (reference semantics
// for the batched tape op; negative indices rotate the opposite way).
template <class Real>
std::vector<Real> rope_rotate(const std::vector<Real>& features, const RopeIndex& idx, const RopeFreqs& fr) {
    if (static_cast<int>(features.size()) != fr.head_dim)
        throw ShapeError("rope_rotate: feature dim mismatch");
    auto ang = fr.angles(idx);
    std::vector<Real> out(features.size());
    for (size_t p = 0; p < ang.size(); ++p) {
        double c = std::cos(ang[p]), s = std::sin(ang[p]);
        Real x0 = features[2 * p], x1 = features[2 * p + 1];
        out[2 * p] = static_cast<Real>(x0 * c - x1 * s);
        out[2 * p + 1] = static_cast<Real>(x0 * s + x1 * c);
    }
    return out;
}

// Precomputed cos/sin tables for a token list, shared by every head.
template <class Real>
struct RopeTables {
    std::shared_ptr<const std::vector<Real>> cos_t, sin_t;  // [T, head_dim/2]
};

template <class Real>
RopeTables<Real> build_rope_tables(const std::vector<RopeIndex>& rope, const RopeFreqs& fr) {
    fr.validate();
    int64_t T = static_cast<int64_t>(rope.size());
    int64_t P = fr.pairs();
    auto cs = std::make_shared<std::vector<Real>>(T * P);
    auto sn = std::make_shared<std::vector<Real>>(T * P);
    for (int64_t t = 0; t < T; ++t) {
        auto ang = fr.angles(rope[t]);
        for (int64_t p = 0; p < P; ++p) {
            (*cs)[t * P + p] = static_cast<Real>(std::cos(ang[p]));
            (*sn)[t * P + p] = static_cast<Real>(std::sin(ang[p]));
        }
    }
    return RopeTables<Real>{cs, sn};
}

}  // namespace recast
