#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "recast/checkpoint.hpp"
#include "recast/conditioning.hpp"

namespace recast {

struct DitConfig {
    int dim = 128;
    int depth = 4;
    int heads = 4;
    int patch = 2;
    int latent_channels = 4;
    int spatial_stride = 4;
    double rope_base = 10000.0;
    std::string modulation = "scale_shift";  // or "shift"
    // "x0_residual": the head predicts the residual toward the clean latent
    // and the velocity is formed analytically as -residual/t. Keeps the
    // network's required gain bounded near t=0. "velocity" predicts v directly.
    std::string head_mode = "x0_residual";

    int token_dim() const { return latent_channels * patch * patch; }
    int head_dim() const { return dim / heads; }
    int mod_dim() const { return modulation == "scale_shift" ? 2 * dim : dim; }

    void validate() const {
        if (dim <= 0 || depth <= 0 || heads <= 0) throw ConfigError("DitConfig: non-positive size");
        if (dim % heads != 0) throw ConfigError("DitConfig: dim must be divisible by heads");
        if (head_dim() % 8 != 0)
            throw ConfigError("DitConfig: head dim must be a multiple of 8 for the rotary axis blocks");
        if (modulation != "scale_shift" && modulation != "shift")
            throw ConfigError("DitConfig: unknown modulation mode " + modulation);
        if (head_mode != "velocity" && head_mode != "x0_residual")
            throw ConfigError("DitConfig: unknown head mode " + head_mode);
    }

    std::map<std::string, std::string> to_kv() const {
        return {{"dim", std::to_string(dim)},
                {"depth", std::to_string(depth)},
                {"heads", std::to_string(heads)},
                {"patch", std::to_string(patch)},
                {"latent_channels", std::to_string(latent_channels)},
                {"spatial_stride", std::to_string(spatial_stride)},
                {"rope_base", std::to_string(rope_base)},
                {"modulation", modulation},
                {"head_mode", head_mode}};
    }
    static DitConfig from_kv(const std::map<std::string, std::string>& kv) {
        DitConfig c;
        c.dim = std::stoi(kv.at("dim"));
        c.depth = std::stoi(kv.at("depth"));
        c.heads = std::stoi(kv.at("heads"));
        c.patch = std::stoi(kv.at("patch"));
        c.latent_channels = std::stoi(kv.at("latent_channels"));
        c.spatial_stride = std::stoi(kv.at("spatial_stride"));
        c.rope_base = std::stod(kv.at("rope_base"));
        c.modulation = kv.at("modulation");
        if (auto it = kv.find("head_mode"); it != kv.end()) c.head_mode = it->second;
        c.validate();
        return c;
    }
};

template <class Real>
struct NamedGrids {
    std::vector<std::string> names;
    std::unordered_map<std::string, Grid<Real>> grids;

    void add(const std::string& name, Grid<Real> g) {
        names.push_back(name);
        grids.emplace(name, std::move(g));
    }
    Grid<Real>& at(const std::string& name) {
        auto it = grids.find(name);
        if (it == grids.end()) throw DataError("unknown parameter " + name);
        return it->second;
    }
    const Grid<Real>& at(const std::string& name) const {
        auto it = grids.find(name);
        if (it == grids.end()) throw DataError("unknown parameter " + name);
        return it->second;
    }
    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& name : names) n += at(name).size();
        return n;
    }
};

// (name, shape) manifest of every parameter, in checkpoint order
inline std::vector<std::pair<std::string, Shape>> dit_param_manifest(const DitConfig& cfg) {
    const int d = cfg.dim, dt = cfg.token_dim(), md = cfg.mod_dim();
    std::vector<std::pair<std::string, Shape>> m;
    m.push_back({"token_in.w", {dt, d}});
    m.push_back({"token_in.b", {d}});
    m.push_back({"role_embed", {4, d}});
    m.push_back({"time.fc1.w", {d, d}});
    m.push_back({"time.fc1.b", {d}});
    m.push_back({"time.fc2.w", {d, d}});
    m.push_back({"time.fc2.b", {d}});
    for (int i = 0; i < cfg.depth; ++i) {
        std::string p = "block" + std::to_string(i) + ".";
        m.push_back({p + "mod_attn.w", {d, md}});
        m.push_back({p + "mod_attn.b", {md}});
        m.push_back({p + "qkv.w", {d, 3 * d}});
        m.push_back({p + "qkv.b", {3 * d}});
        m.push_back({p + "proj.w", {d, d}});
        m.push_back({p + "proj.b", {d}});
        m.push_back({p + "mod_mlp.w", {d, md}});
        m.push_back({p + "mod_mlp.b", {md}});
        m.push_back({p + "mlp.fc1.w", {d, 4 * d}});
        m.push_back({p + "mlp.fc1.b", {4 * d}});
        m.push_back({p + "mlp.fc2.w", {4 * d, d}});
        m.push_back({p + "mlp.fc2.b", {d}});
    }
    m.push_back({"head.w", {d, dt}});
    m.push_back({"head.b", {dt}});
    return m;
}

// linear-layer base names, the surface the low-rank adapter attaches to
inline std::vector<std::string> dit_linear_layers(const DitConfig& cfg) {
    std::vector<std::string> names = {"token_in", "time.fc1", "time.fc2"};
    for (int i = 0; i < cfg.depth; ++i) {
        std::string p = "block" + std::to_string(i) + ".";
        names.insert(names.end(), {p + "mod_attn", p + "qkv", p + "proj", p + "mod_mlp", p + "mlp.fc1",
                                   p + "mlp.fc2"});
    }
    names.push_back("head");
    return names;
}

template <class Real>
struct DitParams {
    DitConfig cfg;
    NamedGrids<Real> store;
};

// Weight init: fan-in scaled normals, zero biases, zero output head so the
// initial velocity is exactly zero.
template <class Real>
DitParams<Real> init_dit_params(const DitConfig& cfg, uint64_t seed) {
    cfg.validate();
    DitParams<Real> p;
    p.cfg = cfg;
    Rng rng(seed ^ 0xd17f00d5ULL);
    for (const auto& [name, shape] : dit_param_manifest(cfg)) {
        bool is_weight = name.size() > 2 && name.substr(name.size() - 2) == ".w";
        if (name == "head.w" || name == "head.b") {
            p.store.add(name, Grid<Real>::zeros(shape));
        } else if (name == "role_embed") {
            auto g = Grid<Real>::normal(shape, rng);
            p.store.add(name, mul_scalar(g, Real(0.02)));
        } else if (is_weight) {
            double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            auto g = Grid<Real>::normal(shape, rng);
            p.store.add(name, mul_scalar(g, static_cast<Real>(std)));
        } else {
            p.store.add(name, Grid<Real>::zeros(shape));
        }
    }
    return p;
}

// Resolved parameter set for one computation: plain constants for inference,
// tape leaves for training, optionally with low-rank deltas on linear layers.
template <class Real>
struct ParamView {
    const DitConfig* cfg = nullptr;
    std::unordered_map<std::string, Grid<Real>> grids;
    // low-rank pairs keyed by linear-layer base name: (A [r,in], B [out,r])
    std::unordered_map<std::string, std::pair<Grid<Real>, Grid<Real>>> lora;
    Real lora_scale = Real(0);

    const Grid<Real>& at(const std::string& name) const {
        auto it = grids.find(name);
        if (it == grids.end()) throw DataError("ParamView: unknown parameter " + name);
        return it->second;
    }

    Grid<Real> linear(const std::string& base, const Grid<Real>& x) const {
        auto y = add_rowwise(matmul(x, at(base + ".w")), at(base + ".b"));
        auto it = lora.find(base);
        if (it != lora.end()) {
            auto h = matmul_bt(x, it->second.first);        // x A^T -> [.., r]
            auto delta = matmul_bt(h, it->second.second);   // .. B^T -> [.., out]
            y = add(y, mul_scalar(delta, lora_scale));
        }
        return y;
    }
};

template <class Real>
ParamView<Real> const_view(const DitParams<Real>& p) {
    ParamView<Real> v;
    v.cfg = &p.cfg;
    for (const auto& name : p.store.names) v.grids.emplace(name, detach(p.store.at(name)));
    return v;
}

template <class Real>
ParamView<Real> watch_params(const DitParams<Real>& p, Tape<Real>& tape) {
    ParamView<Real> v;
    v.cfg = &p.cfg;
    for (const auto& name : p.store.names) v.grids.emplace(name, tape.leaf(p.store.at(name)));
    return v;
}

template <class Real>
Grid<Real> dit_flatten(const DitParams<Real>& p) {
    std::vector<Real> flat;
    flat.reserve(static_cast<size_t>(p.store.total_size()));
    for (const auto& name : p.store.names) {
        const auto& v = p.store.at(name).values();
        flat.insert(flat.end(), v.begin(), v.end());
    }
    int n = static_cast<int>(flat.size());
    return Grid<Real>::from({n}, std::move(flat));
}

// View whose parameters are slices of one flat vector; gradients flow back to
// the flat grid. Used by whole-model gradient checks. cfg must outlive the view.
template <class Real>
ParamView<Real> view_from_flat(const DitConfig& cfg, const Grid<Real>& flat) {
    ParamView<Real> v;
    v.cfg = &cfg;
    int64_t off = 0;
    for (const auto& [name, shape] : dit_param_manifest(cfg)) {
        int64_t n = numel(shape);
        v.grids.emplace(name, reshape(slice(flat, 0, off, n), shape));
        off += n;
    }
    if (off != flat.size()) throw ShapeError("view_from_flat: flat size does not match the manifest");
    return v;
}

// ---------------------------------------------------------------------------
// timestep embedding: log-spaced sinusoidal features through a two-layer MLP
// ---------------------------------------------------------------------------

template <class Real>
Grid<Real> timestep_features(double t, int d) {
    if (!(t >= 0.0 && t <= 1.0)) throw DataError("timestep out of [0,1]");
    int half = d / 2;
    std::vector<Real> v(static_cast<size_t>(d), Real(0));
    // frequencies span [1, 100]: distinct on a 1e-3 grid of t, smooth enough
    // that nearby t stay close after the MLP
    for (int k = 0; k < half; ++k) {
        double w = std::exp(std::log(1.0) + (std::log(100.0) - std::log(1.0)) *
                                                (half > 1 ? static_cast<double>(k) / (half - 1) : 0.0));
        v[k] = static_cast<Real>(std::sin(w * t));
        v[half + k] = static_cast<Real>(std::cos(w * t));
    }
    return Grid<Real>::from({1, d}, std::move(v));
}

template <class Real>
Grid<Real> timestep_embed(const ParamView<Real>& view, double t) {
    int d = view.cfg->dim;
    auto feat = timestep_features<Real>(t, d);
    auto h = gelu(view.linear("time.fc1", feat));
    auto e = view.linear("time.fc2", h);
    return reshape(e, {d});
}

// ---------------------------------------------------------------------------
// attention probe (mask-query attention restricted to source keys)
// ---------------------------------------------------------------------------

template <class Real>
struct AttnProbe {
    int layer = 0;
    int head = -1;  // -1 = head mean
    bool renormalized = true;
    int frames = 0, th = 0, tw = 0;
    std::vector<std::vector<Real>> maps;  // per source frame, th*tw each; sums to 1 across all frames

    Real total_mass() const {
        Real s = 0;
        for (const auto& m : maps)
            for (Real v : m) s += v;
        return s;
    }
};

namespace detail {

template <class Real>
AttnProbe<Real> extract_probe(const std::vector<Real>& probs, int heads, int64_t T,
                              const ConditionedSequence<Real>& seq, int layer, int head) {
    const SegmentInfo& mask_seg = seq.segment(TokenRole::Mask);
    const SegmentInfo& src_seg = seq.segment(TokenRole::Source);
    AttnProbe<Real> probe;
    probe.layer = layer;
    probe.head = head;
    probe.frames = src_seg.frames;
    probe.th = seq.th();
    probe.tw = seq.tw();
    probe.maps.assign(probe.frames, std::vector<Real>(seq.tokens_per_frame(), Real(0)));
    int h0 = head < 0 ? 0 : head, h1 = head < 0 ? heads : head + 1;
    Real norm = Real(0);
    for (int h = h0; h < h1; ++h)
        for (int q = 0; q < mask_seg.token_count; ++q) {
            const Real* row = probs.data() + (static_cast<int64_t>(h) * T + mask_seg.token_offset + q) * T;
            Real rowsum = Real(0);
            for (int kk = 0; kk < src_seg.token_count; ++kk) rowsum += row[src_seg.token_offset + kk];
            if (rowsum <= Real(0)) continue;
            for (int kk = 0; kk < src_seg.token_count; ++kk) {
                int sf = kk / seq.tokens_per_frame();
                int pos = kk % seq.tokens_per_frame();
                probe.maps[sf][pos] += row[src_seg.token_offset + kk] / rowsum;
            }
            norm += Real(1);
        }
    if (norm > Real(0))
        for (auto& m : probe.maps)
            for (auto& v : m) v /= norm;
    return probe;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

template <class Real>
struct ForwardOptions {
    int probe_layer = -1;                            // capture one layer
    AttnProbe<Real>* probe_out = nullptr;
    std::vector<AttnProbe<Real>>* probes_all = nullptr;  // capture every layer
    int probe_head = -1;
};

// Full-self-attention DiT over the assembled sequence. Returns the predicted
// velocity over the target segment, shaped like the target latent.
template <class Real>
Grid<Real> dit_forward(const ParamView<Real>& view, const ConditionedSequence<Real>& seq, double t,
                       const ForwardOptions<Real>& opts = {}) {
    const DitConfig& cfg = *view.cfg;
    if (seq.c * seq.p * seq.p != cfg.token_dim())
        throw ShapeError("dit_forward: sequence token dim does not match model");
    const int d = cfg.dim, nh = cfg.heads, dh = cfg.head_dim();
    const int64_t T = seq.token_count();

    auto tokens = seq.full_tokens();  // [T, dt]
    auto x = view.linear("token_in", tokens);
    std::vector<int> role_ids(seq.token_roles.size());
    for (size_t i = 0; i < role_ids.size(); ++i) role_ids[i] = static_cast<int>(seq.token_roles[i]);
    x = add(x, embed_rows(view.at("role_embed"), role_ids));

    auto e_row = reshape(timestep_embed(view, t), {1, d});  // [1, d]

    RopeFreqs freqs{dh, cfg.rope_base};
    auto tables = build_rope_tables<Real>(seq.rope, freqs);

    auto modulate = [&](const Grid<Real>& normed, const std::string& base) {
        auto m = view.linear(base, e_row);  // [1, md]
        if (cfg.modulation == "scale_shift") {
            auto scale = reshape(slice(m, 1, 0, d), {d});
            auto shift = reshape(slice(m, 1, d, d), {d});
            return add_rowwise(mul_rowwise(normed, add_scalar(scale, Real(1))), shift);
        }
        return add_rowwise(normed, reshape(m, {d}));
    };

    const Real eps = static_cast<Real>(1e-5);
    for (int layer = 0; layer < cfg.depth; ++layer) {
        std::string p = "block" + std::to_string(layer) + ".";
        auto h = modulate(layer_norm(x, eps), p + "mod_attn");
        auto qkv = view.linear(p + "qkv", h);  // [T, 3d]
        auto split_heads = [&](int64_t off) {
            auto part = slice(qkv, 1, off, d);
            return permute(reshape(part, {static_cast<int>(T), nh, dh}), {1, 0, 2});  // [nh, T, dh]
        };
        auto q = rope_apply(split_heads(0), tables.cos_t, tables.sin_t);
        auto k = rope_apply(split_heads(d), tables.cos_t, tables.sin_t);
        auto v = split_heads(2 * d);
        auto scores = mul_scalar(matmul_bt(q, k), static_cast<Real>(1.0 / std::sqrt(double(dh))));
        auto probs = softmax(scores, 2);  // [nh, T, T]
        if ((opts.probe_layer == layer && opts.probe_out) || opts.probes_all) {
            auto probe = detail::extract_probe<Real>(probs.values(), nh, T, seq, layer, opts.probe_head);
            if (opts.probe_layer == layer && opts.probe_out) *opts.probe_out = probe;
            if (opts.probes_all) opts.probes_all->push_back(probe);
        }
        auto ctx = matmul(probs, v);                                     // [nh, T, dh]
        auto merged = reshape(permute(ctx, {1, 0, 2}), {static_cast<int>(T), d});
        x = add(x, view.linear(p + "proj", merged));
        auto h2 = modulate(layer_norm(x, eps), p + "mod_mlp");
        auto mlp = view.linear(p + "mlp.fc2", gelu(view.linear(p + "mlp.fc1", h2)));
        x = add(x, mlp);
    }

    auto x_target = slice(x, 0, 0, seq.target_token_count());
    auto head_tokens = view.linear("head", layer_norm(x_target, eps));
    if (cfg.head_mode == "x0_residual") {
        double t_eff = std::max(t, 1e-6);
        head_tokens = mul_scalar(head_tokens, static_cast<Real>(-1.0 / t_eff));
    }
    return unpatchify_op(head_tokens, seq.target_dims());
}

// Attention map between the mask queries and the source keys at one layer,
// averaged over heads (or one head) and mask tokens.
template <class Real>
AttnProbe<Real> attention_probe(const DitParams<Real>& params, const ConditionedSequence<Real>& seq, double t,
                                int layer, int head = -1) {
    if (layer < 0 || layer >= params.cfg.depth)
        throw ConfigError("attention_probe: layer " + std::to_string(layer) + " out of range");
    AttnProbe<Real> probe;
    ForwardOptions<Real> opts;
    opts.probe_layer = layer;
    opts.probe_out = &probe;
    opts.probe_head = head;
    auto view = const_view(params);
    dit_forward(view, seq, t, opts);
    return probe;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

template <class Real>
BlobFile dit_to_blobs(const DitParams<Real>& p, std::map<std::string, std::string> meta = {}) {
    BlobFile bf;
    bf.config_text = serialize_kv(p.cfg.to_kv());
    bf.meta_text = serialize_kv(meta);
    for (const auto& name : p.store.names) {
        const auto& g = p.store.at(name);
        std::vector<float> data(g.values().begin(), g.values().end());
        bf.blobs.emplace_back(name, std::make_pair(g.shape, std::move(data)));
    }
    return bf;
}

template <class Real>
DitParams<Real> dit_from_blobs(const BlobFile& bf) {
    DitParams<Real> p;
    p.cfg = DitConfig::from_kv(parse_kv(bf.config_text));
    auto manifest = dit_param_manifest(p.cfg);
    size_t bi = 0;
    for (const auto& [name, shape] : manifest) {
        if (bi >= bf.blobs.size()) throw DataError("checkpoint: missing parameter " + name);
        // optimizer blobs may follow the parameters; params come first in order
        const auto& blob = bf.blobs[bi++];
        if (blob.first != name) throw DataError("checkpoint: expected " + name + ", found " + blob.first);
        if (blob.second.first != shape)
            throw DataError("checkpoint: shape mismatch for " + name + " (" + shape_str(blob.second.first) +
                            " vs " + shape_str(shape) + ")");
        std::vector<Real> v(blob.second.second.begin(), blob.second.second.end());
        p.store.add(name, Grid<Real>::from(shape, std::move(v)));
    }
    return p;
}

}  // namespace recast
