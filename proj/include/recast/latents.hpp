#pragma once

#include <string>
#include <vector>

#include "recast/clip.hpp"
#include "recast/ops.hpp"

namespace recast {

// VAE stand-in. A fixed linear pooling that keeps the temporal index
// arithmetic of the real 3D VAE: frame 0 maps to latent frame 0 alone, then
// groups of four frames collapse into one latent frame. Channels 0..2 carry
// RGB unchanged, higher channels are zero, which makes encode/decode exactly
// mutually inverse on blockwise-constant clips.
struct LatentSpec {
    int channels = 4;
    int spatial_stride = 4;
    int temporal_stride = 4;  // kept explicit although Eq.-level index math assumes 4

    int latent_frames(int F) const { return (F - 1) / temporal_stride + 1; }

    // inclusive member range of pixel frames feeding latent frame lf
    void group_of(int lf, int F, int& lo, int& hi) const {
        if (lf == 0) {
            lo = hi = 0;
            return;
        }
        lo = (lf - 1) * temporal_stride + 1;
        hi = std::min(F - 1, lf * temporal_stride);
    }

    // latent frame that pixel frame fr (0-based) lands in
    int latent_frame_of(int fr) const { return fr == 0 ? 0 : (fr - 1) / temporal_stride + 1; }
};

template <class Real>
struct LatentGrid {
    int f = 0, c = 0, h = 0, w = 0;
    std::vector<Real> data;  // [f][c][h][w]
    std::string provenance;

    Shape shape() const { return {f, c, h, w}; }
    Grid<Real> to_grid() const { return Grid<Real>::from(shape(), data); }

    Real at(int fr, int ch, int y, int x) const {
        return data[((static_cast<int64_t>(fr) * c + ch) * h + y) * w + x];
    }
};

namespace detail {

// exact for power-of-two counts of equal values (pairwise tree)
template <class Real>
Real pairwise_sum(Real* buf, int64_t n) {
    while (n > 1) {
        int64_t half = n / 2;
        for (int64_t i = 0; i < half; ++i) buf[i] = buf[2 * i] + buf[2 * i + 1];
        if (n % 2) buf[half] = buf[n - 1];
        n = half + (n % 2);
    }
    return buf[0];
}

}  // namespace detail

template <class Real>
LatentGrid<Real> encode(const Clip& clip, const LatentSpec& spec = {}) {
    if (clip.height % spec.spatial_stride != 0 || clip.width % spec.spatial_stride != 0)
        throw DataError("encode: spatial dims must be divisible by stride " +
                        std::to_string(spec.spatial_stride));
    const int s = spec.spatial_stride;
    LatentGrid<Real> lat;
    lat.f = spec.latent_frames(clip.frames);
    lat.c = spec.channels;
    lat.h = clip.height / s;
    lat.w = clip.width / s;
    lat.provenance = clip.role;
    lat.data.assign(static_cast<size_t>(lat.f) * lat.c * lat.h * lat.w, Real(0));
    std::vector<Real> tbuf(static_cast<size_t>(spec.temporal_stride));
    std::vector<Real> sbuf(static_cast<size_t>(s) * s);
    for (int lf = 0; lf < lat.f; ++lf) {
        int lo, hi;
        spec.group_of(lf, clip.frames, lo, hi);
        int gn = hi - lo + 1;
        for (int ch = 0; ch < 3 && ch < lat.c; ++ch)
            for (int ly = 0; ly < lat.h; ++ly)
                for (int lx = 0; lx < lat.w; ++lx) {
                    for (int g = 0; g < gn; ++g) {
                        for (int dy = 0; dy < s; ++dy)
                            for (int dx = 0; dx < s; ++dx)
                                sbuf[dy * s + dx] =
                                    static_cast<Real>(clip.at(lo + g, ch, ly * s + dy, lx * s + dx));
                        tbuf[g] = detail::pairwise_sum(sbuf.data(), static_cast<int64_t>(s) * s) /
                                  static_cast<Real>(s * s);
                    }
                    Real m = detail::pairwise_sum(tbuf.data(), gn) / static_cast<Real>(gn);
                    lat.data[((static_cast<int64_t>(lf) * lat.c + ch) * lat.h + ly) * lat.w + lx] = m;
                }
    }
    return lat;
}

// Binary mask clips are replicated to all RGB channels by the caller before
// encode; this helper builds that clip from a single-channel mask image.
inline Clip mask_to_clip(const std::vector<float>& mask, int h, int w) {
    Clip c = Clip::make(1, h, w, "mask");
    for (int ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) c.data[ch * h * w + i] = mask[i];
    return c;
}

template <class Real>
Clip decode(const LatentGrid<Real>& lat, int F, const LatentSpec& spec = {}, bool clamp = true) {
    if (spec.latent_frames(F) != lat.f)
        throw DataError("decode: latent frame count " + std::to_string(lat.f) +
                        " inconsistent with F=" + std::to_string(F));
    const int s = spec.spatial_stride;
    Clip clip = Clip::make(F, lat.h * s, lat.w * s, lat.provenance);
    for (int fr = 0; fr < F; ++fr) {
        int lf = spec.latent_frame_of(fr);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < clip.height; ++y)
                for (int x = 0; x < clip.width; ++x) {
                    Real v = ch < lat.c ? lat.at(lf, ch, y / s, x / s) : Real(0);
                    float fv = static_cast<float>(v);
                    if (clamp) fv = std::min(1.0f, std::max(0.0f, fv));
                    clip.at(fr, ch, y, x) = fv;
                }
    }
    return clip;
}

// ---------------------------------------------------------------------------
// patchify: latent [f,c,h,w] -> tokens [f*(h/p)*(w/p), c*p*p]
// token features are laid out [channel][py][px]
// ---------------------------------------------------------------------------

struct PatchDims {
    int f, c, h, w, p;
    int th() const { return h / p; }
    int tw() const { return w / p; }
    int tokens_per_frame() const { return th() * tw(); }
    int token_count() const { return f * tokens_per_frame(); }
    int token_dim() const { return c * p * p; }
    void validate() const {
        if (h % p != 0 || w % p != 0) throw ShapeError("patchify: latent dims not divisible by patch size");
    }
    // latent linear index for (token t, feature d)
    int64_t latent_index(int64_t t, int64_t d) const {
        int64_t fr = t / tokens_per_frame();
        int64_t rem = t % tokens_per_frame();
        int64_t ty = rem / tw(), tx = rem % tw();
        int64_t ch = d / (p * p);
        int64_t py = (d / p) % p, px = d % p;
        return ((fr * c + ch) * h + (ty * p + py)) * w + (tx * p + px);
    }
};

template <class Real>
std::vector<Real> patchify_values(const std::vector<Real>& latent, const PatchDims& pd) {
    pd.validate();
    std::vector<Real> out(static_cast<size_t>(pd.token_count()) * pd.token_dim());
    for (int64_t t = 0; t < pd.token_count(); ++t)
        for (int64_t d = 0; d < pd.token_dim(); ++d) out[t * pd.token_dim() + d] = latent[pd.latent_index(t, d)];
    return out;
}

template <class Real>
std::vector<Real> unpatchify_values(const std::vector<Real>& tokens, const PatchDims& pd) {
    pd.validate();
    std::vector<Real> out(static_cast<size_t>(pd.f) * pd.c * pd.h * pd.w);
    for (int64_t t = 0; t < pd.token_count(); ++t)
        for (int64_t d = 0; d < pd.token_dim(); ++d) out[pd.latent_index(t, d)] = tokens[t * pd.token_dim() + d];
    return out;
}

template <class Real>
Grid<Real> patchify_op(const Grid<Real>& latent, const PatchDims& pd) {
    if (latent.shape != Shape{pd.f, pd.c, pd.h, pd.w}) throw ShapeError("patchify_op: latent shape mismatch");
    auto out = std::make_shared<std::vector<Real>>(patchify_values(latent.values(), pd));
    auto* tp = tape_of<Real>({&latent});
    int xn = latent.attached() ? latent.node : -1;
    return detail::make_out<Real>("patchify", {pd.token_count(), pd.token_dim()}, out, tp,
                                  [xn, pd](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn < 0) return;
                                      auto& dst = t.grad_buf(xn);
                                      for (int64_t tt = 0; tt < pd.token_count(); ++tt)
                                          for (int64_t d = 0; d < pd.token_dim(); ++d)
                                              dst[pd.latent_index(tt, d)] += g[tt * pd.token_dim() + d];
                                  });
}

template <class Real>
Grid<Real> unpatchify_op(const Grid<Real>& tokens, const PatchDims& pd) {
    if (tokens.shape != Shape{pd.token_count(), pd.token_dim()})
        throw ShapeError("unpatchify_op: token shape mismatch");
    auto out = std::make_shared<std::vector<Real>>(unpatchify_values(tokens.values(), pd));
    auto* tp = tape_of<Real>({&tokens});
    int xn = tokens.attached() ? tokens.node : -1;
    return detail::make_out<Real>("unpatchify", {pd.f, pd.c, pd.h, pd.w}, out, tp,
                                  [xn, pd](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn < 0) return;
                                      auto& dst = t.grad_buf(xn);
                                      for (int64_t tt = 0; tt < pd.token_count(); ++tt)
                                          for (int64_t d = 0; d < pd.token_dim(); ++d)
                                              dst[tt * pd.token_dim() + d] += g[pd.latent_index(tt, d)];
                                  });
}

// Differentiable decode: latent [f,c,h,w] -> pixels [F,3,H,W]. Linear, so the
// reward gradient path through it is exact. No clamping here.
template <class Real>
Grid<Real> latent_to_pixels_op(const Grid<Real>& latent, int F, const LatentSpec& spec = {}) {
    if (latent.shape.size() != 4) throw ShapeError("latent_to_pixels: expected [f,c,h,w]");
    int f = latent.shape[0], c = latent.shape[1], h = latent.shape[2], w = latent.shape[3];
    if (spec.latent_frames(F) != f) throw DataError("latent_to_pixels: F inconsistent with latent frames");
    const int s = spec.spatial_stride;
    int H = h * s, W = w * s;
    auto out = detail::alloc<Real>(static_cast<int64_t>(F) * 3 * H * W);
    const auto& lv = latent.values();
    for (int fr = 0; fr < F; ++fr) {
        int lf = spec.latent_frame_of(fr);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    (*out)[((static_cast<int64_t>(fr) * 3 + ch) * H + y) * W + x] =
                        ch < c ? lv[((static_cast<int64_t>(lf) * c + ch) * h + y / s) * w + x / s] : Real(0);
    }
    auto* tp = tape_of<Real>({&latent});
    int xn = latent.attached() ? latent.node : -1;
    return detail::make_out<Real>(
        "latent_to_pixels", {F, 3, H, W}, out, tp,
        [xn, F, f, c, h, w, s, spec, H, W](Tape<Real>& t, const std::vector<Real>& g) {
            if (xn < 0) return;
            auto& dst = t.grad_buf(xn);
            for (int fr = 0; fr < F; ++fr) {
                int lf = spec.latent_frame_of(fr);
                for (int ch = 0; ch < 3 && ch < c; ++ch)
                    for (int y = 0; y < H; ++y)
                        for (int x = 0; x < W; ++x)
                            dst[((static_cast<int64_t>(lf) * c + ch) * h + y / s) * w + x / s] +=
                                g[((static_cast<int64_t>(fr) * 3 + ch) * H + y) * W + x];
            }
        });
}

// Grid [F,3,H,W] of pixel values -> Clip (clamped to the unit range)
template <class Real>
Clip pixels_to_clip(const Grid<Real>& px, const std::string& role = "") {
    if (px.shape.size() != 4 || px.shape[1] != 3) throw ShapeError("pixels_to_clip: expected [F,3,H,W]");
    Clip c = Clip::make(px.shape[0], px.shape[2], px.shape[3], role);
    const auto& v = px.values();
    for (int64_t i = 0; i < px.size(); ++i)
        c.data[i] = std::min(1.0f, std::max(0.0f, static_cast<float>(v[i])));
    return c;
}

template <class Real>
Grid<Real> clip_to_pixels(const Clip& c) {
    std::vector<Real> v(c.data.begin(), c.data.end());
    return Grid<Real>::from({c.frames, 3, c.height, c.width}, std::move(v));
}

}  // namespace recast
