#pragma once

#include "recast/flow.hpp"
#include "recast/optim.hpp"

namespace recast {

// Axis-aligned rectangle in pixel units.
struct Rect {
    double x0 = 0, y0 = 0, w = 0, h = 0;
    bool valid() const { return w > 0 && h > 0; }
};

// Face sub-rectangle in coordinates normalized to a character bounding box.
// Must agree with the renderer's head placement (see spriteworld.hpp).
struct FaceCropSpec {
    double x = 0.30, y = 0.04, w = 0.40, h = 0.30;

    Rect resolve(const Rect& char_box) const {
        if (!char_box.valid()) throw DataError("face crop: empty character box");
        return Rect{char_box.x0 + x * char_box.w, char_box.y0 + y * char_box.h, w * char_box.w,
                    h * char_box.h};
    }
};

// Differentiable identity embedder standing in for a pretrained face network:
// a frozen seeded projection over the mean-centered face crop, unit-normalized.
template <class Real>
struct FaceEmbedder {
    FaceCropSpec crop;
    int crop_h = 8, crop_w = 8;
    int embed_dim = 32;
    Grid<Real> projection;  // [embed_dim, 3*crop_h*crop_w], frozen

    int pixel_count() const { return 3 * crop_h * crop_w; }

    static FaceEmbedder make(uint64_t seed = 0x0facee5eULL) {
        FaceEmbedder fe;
        Rng rng(seed);
        auto p = Grid<Real>::normal({fe.embed_dim, fe.pixel_count()}, rng);
        fe.projection = mul_scalar(p, static_cast<Real>(1.0 / std::sqrt(double(fe.pixel_count()))));
        return fe;
    }

    // frame: [3, H, W] pixel grid (may be tape-attached); char_box locates the
    // character, the face crop is a fixed sub-rectangle of it
    Grid<Real> embed(const Grid<Real>& frame, const Rect& char_box) const {
        Rect face = crop.resolve(char_box);
        auto patch = crop_resize_bilinear(frame, CropBox{face.x0, face.y0, face.w, face.h}, crop_h, crop_w);
        auto flat = reshape(patch, {1, pixel_count()});
        auto centered = sub(flat, broadcast_scalar(mean_all(flat), flat.shape));
        auto e = matmul_bt(centered, projection);  // [1, embed_dim]
        auto nrm = sqrt_g(add_scalar(sum_all(mul(e, e)), static_cast<Real>(1e-20)));
        return div(e, broadcast_scalar(nrm, e.shape));
    }
};

struct RefImage {
    Clip clip;      // single-frame reference
    Rect char_box;  // character bounds within the reference
};

// Mean over frames of the cosine similarity between the generated face
// embedding and the mean reference embedding. Differentiable w.r.t. gen.
template <class Real>
Grid<Real> face_reward_op(const Grid<Real>& gen_pixels, const std::vector<Rect>& gen_boxes,
                          const std::vector<RefImage>& refs, const FaceEmbedder<Real>& fe) {
    if (refs.empty()) throw DataError("face_reward: no references");
    if (gen_pixels.shape.size() != 4 || gen_pixels.shape[1] != 3)
        throw ShapeError("face_reward: expected [F,3,H,W] pixels");
    int F = gen_pixels.shape[0];
    if (static_cast<int>(gen_boxes.size()) != F) throw DataError("face_reward: box count != frame count");

    Grid<Real> ref_mean;
    for (size_t i = 0; i < refs.size(); ++i) {
        auto rp = clip_to_pixels<Real>(refs[i].clip);
        auto frame = reshape(slice(rp, 0, 0, 1), {3, refs[i].clip.height, refs[i].clip.width});
        auto e = fe.embed(frame, refs[i].char_box);
        ref_mean = i == 0 ? e : add(ref_mean, e);
    }
    ref_mean = mul_scalar(ref_mean, static_cast<Real>(1.0 / refs.size()));

    Grid<Real> total;
    int H = gen_pixels.shape[2], W = gen_pixels.shape[3];
    for (int f = 0; f < F; ++f) {
        auto frame = reshape(slice(gen_pixels, 0, f, 1), {3, H, W});
        auto e = fe.embed(frame, gen_boxes[f]);
        auto cosv = dot_all(e, ref_mean);
        total = f == 0 ? cosv : add(total, cosv);
    }
    return mul_scalar(total, static_cast<Real>(1.0 / F));
}

// Plain-value wrapper used by metrics and tests.
template <class Real>
double face_reward(const Clip& gen, const std::vector<Rect>& gen_boxes, const std::vector<RefImage>& refs,
                   const FaceEmbedder<Real>& fe) {
    return static_cast<double>(face_reward_op(clip_to_pixels<Real>(gen), gen_boxes, refs, fe).scalar_value());
}

// Combined post-training loss: lambda*(1 - R_face) + pixel MSE against the
// ground-truth clip. The MSE term is the reward-hacking guard.
template <class Real>
Grid<Real> rl_loss_op(const Grid<Real>& gen_pixels, const Clip& gt, const std::vector<Rect>& gen_boxes,
                      const std::vector<RefImage>& refs, const FaceEmbedder<Real>& fe,
                      Real lambda_face = Real(1)) {
    auto gt_px = clip_to_pixels<Real>(gt);
    check_same_shape(gen_pixels.shape, gt_px.shape, "rl_loss");
    auto r = face_reward_op(gen_pixels, gen_boxes, refs, fe);
    auto reward_term = sub(Grid<Real>::scalar(Real(1)), r);
    return add(mul_scalar(reward_term, lambda_face), mse(gen_pixels, gt_px));
}

template <class Real>
double rl_loss(const Clip& gen, const Clip& gt, const std::vector<Rect>& gen_boxes,
               const std::vector<RefImage>& refs, const FaceEmbedder<Real>& fe, Real lambda_face = Real(1)) {
    return static_cast<double>(
        rl_loss_op(clip_to_pixels<Real>(gen), gt, gen_boxes, refs, fe, lambda_face).scalar_value());
}

// ---------------------------------------------------------------------------
// low-rank adapter
// ---------------------------------------------------------------------------

// Additive W + (alpha/r) B A deltas on every linear layer. B starts at zero,
// so a freshly initialized adapter leaves the model bit-identical.
template <class Real>
struct LowRankAdapter {
    int rank = 64;
    Real alpha = Real(64);
    std::vector<std::string> layers;
    NamedGrids<Real> store;  // "<layer>.A" [r, in], "<layer>.B" [out, r]

    Real scale() const { return alpha / static_cast<Real>(rank); }
};

template <class Real>
LowRankAdapter<Real> init_adapter(const DitParams<Real>& params, int rank, Real alpha, uint64_t seed) {
    if (rank < 1) throw ConfigError("adapter rank must be >= 1");
    LowRankAdapter<Real> ad;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.layers = dit_linear_layers(params.cfg);
    Rng rng(seed ^ 0x10a7a5eedULL);
    for (const auto& base : ad.layers) {
        const auto& w = params.store.at(base + ".w");  // [in, out]
        int in = w.shape[0], out = w.shape[1];
        auto a = Grid<Real>::normal({rank, in}, rng);
        ad.store.add(base + ".A", mul_scalar(a, static_cast<Real>(1.0 / std::sqrt(double(in)))));
        ad.store.add(base + ".B", Grid<Real>::zeros({out, rank}));
    }
    return ad;
}

// Parameter view with frozen base weights and (optionally tape-watched)
// adapter deltas on all linear layers.
template <class Real>
ParamView<Real> adapted_view(const DitParams<Real>& params, const LowRankAdapter<Real>& adapter,
                             Tape<std::type_identity_t<Real>>* tape) {
    ParamView<Real> v = const_view(params);
    v.lora_scale = adapter.scale();
    for (const auto& base : adapter.layers) {
        auto& a = adapter.store.at(base + ".A");
        auto& b = adapter.store.at(base + ".B");
        if (tape)
            v.lora.emplace(base, std::make_pair(tape->leaf(a), tape->leaf(b)));
        else
            v.lora.emplace(base, std::make_pair(detach(a), detach(b)));
    }
    return v;
}

// W <- W + (alpha/r) (B A)^T for the [in, out] storage layout.
template <class Real>
DitParams<Real> merge_adapter(const DitParams<Real>& params, const LowRankAdapter<Real>& adapter) {
    DitParams<Real> merged;
    merged.cfg = params.cfg;
    Real s = adapter.scale();
    for (const auto& name : params.store.names) {
        const auto& g = params.store.at(name);
        bool is_w = name.size() > 2 && name.substr(name.size() - 2) == ".w";
        std::string base = is_w ? name.substr(0, name.size() - 2) : "";
        if (is_w && std::find(adapter.layers.begin(), adapter.layers.end(), base) != adapter.layers.end()) {
            const auto& a = adapter.store.at(base + ".A");  // [r, in]
            const auto& b = adapter.store.at(base + ".B");  // [out, r]
            int in = g.shape[0], out = g.shape[1], r = adapter.rank;
            std::vector<Real> w = g.values();
            detail::CMap<Real> A(a.values().data(), r, in);
            detail::CMap<Real> B(b.values().data(), out, r);
            detail::MMap<Real> W(w.data(), in, out);
            W.noalias() += (B * A).transpose() * s;
            merged.store.add(name, Grid<Real>::from(g.shape, std::move(w)));
        } else {
            merged.store.add(name, Grid<Real>(g.shape, g.data));
        }
    }
    return merged;
}

// ---------------------------------------------------------------------------
// truncated-backprop post-training
// ---------------------------------------------------------------------------

template <class Real>
struct PosttrainItem {
    ConditionedSequence<Real> cond;  // assembled from source/mask/refs
    Clip gt;                         // ground-truth target clip
    std::vector<Rect> boxes;         // per-frame character boxes of the target
    std::vector<RefImage> refs;
    uint64_t noise_seed = 0;
};

template <class Real>
struct PosttrainOptions {
    int K = 3;
    Real lambda_face = Real(1);
    SamplerSchedule<Real> schedule;
    LatentSpec latent;
    // oracle mode: record the whole trajectory with per-step tags and an
    // explicit detach at the truncation boundary (memory-heavier, used by
    // verification); plain mode skips recording before the last K steps
    bool record_full_tape = false;
};

template <class Real>
struct PosttrainItemResult {
    double loss = 0, reward = 0, mse = 0;
    GradMap<Real> adapter_grads;
    std::set<int> reached_tags;  // step tags (1-based) reached by backward
};

// Runs the sampler with the adapted model, truncates gradient flow to the
// final K steps, decodes, and differentiates the combined loss into the
// adapter. Base parameters stay frozen.
template <class Real>
PosttrainItemResult<Real> posttrain_grads(const DitParams<Real>& params, const LowRankAdapter<Real>& adapter,
                                          const PosttrainItem<Real>& item, const PosttrainOptions<Real>& opts,
                                          const FaceEmbedder<Real>& fe, Real grad_seed = Real(1)) {
    opts.schedule.validate();
    int n = opts.schedule.steps();
    if (opts.K < 1) throw ConfigError("posttrain: K must be >= 1 (no gradient path otherwise)");
    if (opts.K > n) throw ConfigError("posttrain: K exceeds sampler steps");

    Tape<Real> tape;
    auto view_g = adapted_view(params, adapter, &tape);
    auto view_c = adapted_view(params, adapter, nullptr);

    auto pd = item.cond.target_dims();
    Rng rng(item.noise_seed);
    Grid<Real> z = Grid<Real>::normal(pd_shape(pd), rng);

    for (int i = 0; i < n; ++i) {
        bool grad_step = i >= n - opts.K;
        if (opts.record_full_tape) {
            tape.set_tag(i + 1);
            if (i == n - opts.K && opts.K < n) z = detach(z);
        }
        const auto& view = (grad_step || opts.record_full_tape) ? view_g : view_c;
        double t = static_cast<double>(opts.schedule.timesteps[i]);
        double dt = static_cast<double>(opts.schedule.timesteps[i + 1]) - t;
        auto seq = item.cond.with_target(patchify_op(z, pd));
        auto v = dit_forward(view, seq, t);
        z = add(z, mul_scalar(v, static_cast<Real>(dt)));
    }
    tape.set_tag(0);

    auto pixels = latent_to_pixels_op(z, item.gt.frames, opts.latent);
    auto r = face_reward_op(pixels, item.boxes, item.refs, fe);
    auto reward_term = sub(Grid<Real>::scalar(Real(1)), r);
    auto pix_mse = mse(pixels, clip_to_pixels<Real>(item.gt));
    auto loss = add(mul_scalar(reward_term, opts.lambda_face), pix_mse);

    tape.backward(loss, grad_seed);

    PosttrainItemResult<Real> res;
    res.loss = static_cast<double>(loss.scalar_value());
    res.reward = static_cast<double>(r.scalar_value());
    res.mse = static_cast<double>(pix_mse.scalar_value());
    for (const auto& name : adapter.store.names) {
        const auto& [a, b] = view_g.lora.at(name.substr(0, name.size() - 2));
        const auto& leaf = name.back() == 'A' ? a : b;
        res.adapter_grads.emplace(name, tape.leaf_grad(leaf));
    }
    res.reached_tags = tape.reached_tags();
    return res;
}

// One optimizer step over a batch of items; only the adapter moves.
template <class Real>
PosttrainItemResult<Real> posttrain_step(const DitParams<Real>& params, LowRankAdapter<Real>& adapter,
                                         AdamState<Real>& opt, const std::vector<PosttrainItem<Real>>& batch,
                                         const PosttrainOptions<Real>& opts, const FaceEmbedder<Real>& fe) {
    if (batch.empty()) throw DataError("posttrain_step: empty batch");
    GradMap<Real> acc;
    PosttrainItemResult<Real> agg;
    std::vector<PosttrainItemResult<Real>> results(batch.size());
    parallel_for(static_cast<int64_t>(batch.size()), [&](int64_t i) {
        results[i] = posttrain_grads(params, adapter, batch[i], opts, fe,
                                     static_cast<Real>(1.0 / batch.size()));
    });
    for (const auto& r : results) {
        agg.loss += r.loss / batch.size();
        agg.reward += r.reward / batch.size();
        agg.mse += r.mse / batch.size();
        for (const auto& [name, g] : r.adapter_grads) accumulate_grads(acc, name, g);
    }
    opt.update(adapter.store, acc);
    return agg;
}

// ---------------------------------------------------------------------------
// adapter checkpoint io (same container as model checkpoints)
// ---------------------------------------------------------------------------

template <class Real>
BlobFile adapter_to_blobs(const LowRankAdapter<Real>& ad, const DitConfig& cfg,
                          std::map<std::string, std::string> meta = {}) {
    BlobFile bf;
    auto kv = cfg.to_kv();
    kv["adapter_rank"] = std::to_string(ad.rank);
    kv["adapter_alpha"] = std::to_string(static_cast<double>(ad.alpha));
    bf.config_text = serialize_kv(kv);
    bf.meta_text = serialize_kv(meta);
    for (const auto& name : ad.store.names) {
        const auto& g = ad.store.at(name);
        std::vector<float> data(g.values().begin(), g.values().end());
        bf.blobs.emplace_back(name, std::make_pair(g.shape, std::move(data)));
    }
    return bf;
}

template <class Real>
LowRankAdapter<Real> adapter_from_blobs(const BlobFile& bf, const DitParams<Real>& params) {
    auto kv = parse_kv(bf.config_text);
    auto cfg = DitConfig::from_kv(kv);
    if (serialize_kv(cfg.to_kv()) != serialize_kv(params.cfg.to_kv()))
        throw DataError("adapter checkpoint: model config mismatch");
    LowRankAdapter<Real> ad;
    ad.rank = std::stoi(kv.at("adapter_rank"));
    ad.alpha = static_cast<Real>(std::stod(kv.at("adapter_alpha")));
    ad.layers = dit_linear_layers(params.cfg);
    size_t bi = 0;
    for (const auto& base : ad.layers) {
        for (const char* suffix : {".A", ".B"}) {
            std::string name = base + suffix;
            if (bi >= bf.blobs.size() || bf.blobs[bi].first != name)
                throw DataError("adapter checkpoint: expected blob " + name);
            const auto& [shape, data] = bf.blobs[bi++].second;
            const auto& w = params.store.at(base + ".w");
            Shape expect = suffix[1] == 'A' ? Shape{ad.rank, w.shape[0]} : Shape{w.shape[1], ad.rank};
            if (shape != expect) throw DataError("adapter checkpoint: shape mismatch for " + name);
            std::vector<Real> v(data.begin(), data.end());
            ad.store.add(name, Grid<Real>::from(shape, std::move(v)));
        }
    }
    return ad;
}

}  // namespace recast
