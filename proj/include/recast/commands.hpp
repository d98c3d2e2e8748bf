#pragma once

#include "recast/trainer.hpp"

namespace recast {

// Operator-facing command implementations. The CLI binary is a thin argument
// parser over these; tests call them directly.

inline void write_run_manifest(const std::string& out_dir, const std::string& command,
                               const std::map<std::string, std::string>& fields) {
    nlohmann::json j;
    j["command"] = command;
    for (const auto& [k, v] : fields) j[k] = v;
    std::ofstream f(out_dir + "/run_manifest.json");
    if (!f) throw DataError("cannot write run manifest in " + out_dir);
    f << j.dump(2) << "\n";
}

// clip directory (manifest.json) or single pixmap file
inline Clip load_clip_or_image(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) return load_clip(path);
    return load_image_ppm(path);
}

// ---------------------------------------------------------------------------
// datagen
// ---------------------------------------------------------------------------

struct DatagenResult {
    int count = 0;
    std::string dataset_hash;
};

inline DatagenResult run_datagen(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    auto manifest = sprite::export_dataset(cfg.datagen_count, cfg.seed, out_dir, cfg.sprite_config());
    DatagenResult res;
    res.count = manifest.count;
    res.dataset_hash = file_hash(out_dir + "/manifest.json");
    write_run_manifest(out_dir, "datagen",
                       {{"config_hash", config_hash(cfg)}, {"dataset_hash", res.dataset_hash}});
    return res;
}

// ---------------------------------------------------------------------------
// train / posttrain
// ---------------------------------------------------------------------------

inline TrainResult run_train_cmd(const RunConfig& cfg, const std::string& out_dir,
                                 const std::string& resume_path) {
    auto res = run_training<float>(cfg, out_dir, resume_path);
    write_run_manifest(out_dir, "train",
                       {{"config_hash", config_hash(cfg)},
                        {"dataset_hash", file_hash(cfg.data_dir + "/manifest.json")},
                        {"checkpoint_hash", file_hash(res.checkpoint)},
                        {"steps", std::to_string(res.steps_run)}});
    return res;
}

inline PosttrainResult run_posttrain_cmd(const RunConfig& cfg, const std::string& base_ckpt,
                                         const std::string& out_dir) {
    auto res = run_posttraining<float>(cfg, base_ckpt, out_dir);
    write_run_manifest(out_dir, "posttrain",
                       {{"config_hash", config_hash(cfg)},
                        {"dataset_hash", file_hash(cfg.data_dir + "/manifest.json")},
                        {"base_checkpoint_hash", file_hash(base_ckpt)},
                        {"adapter_hash", file_hash(res.adapter_checkpoint)}});
    return res;
}

// Adopts model geometry from a checkpoint into a run config, so commands that
// consume checkpoints cannot disagree with them.
inline RunConfig adopt_model_config(RunConfig cfg, const DitConfig& model) {
    cfg.model_dim = model.dim;
    cfg.model_depth = model.depth;
    cfg.model_heads = model.heads;
    cfg.model_patch = model.patch;
    cfg.latent_channels = model.latent_channels;
    cfg.latent_stride = model.spatial_stride;
    cfg.rope_base = model.rope_base;
    cfg.modulation = model.modulation;
    cfg.head_mode = model.head_mode;
    return cfg;
}

template <class Real>
DitParams<Real> load_model_maybe_adapted(const std::string& ckpt, const std::string& adapter_path) {
    auto params = dit_from_blobs<Real>(load_blob_file(ckpt));
    if (!adapter_path.empty()) {
        auto adapter = adapter_from_blobs<Real>(load_blob_file(adapter_path), params);
        return merge_adapter(params, adapter);
    }
    return params;
}

// ---------------------------------------------------------------------------
// replace
// ---------------------------------------------------------------------------

struct ReplaceArgs {
    std::string ckpt;
    std::string adapter;  // optional
    std::string source;   // clip directory
    std::string mask;     // single-frame pixmap or clip directory
    int frame = 1;        // 1-based designation frame
    std::vector<std::string> refs;
    std::string out_dir;
    uint64_t seed = 0;
    int sampler_steps = 50;
};

struct ReplaceResult {
    std::string generated_dir;
    int frames = 0;
};

inline ReplaceResult run_replace(const ReplaceArgs& args) {
    namespace fs = std::filesystem;
    if (args.refs.empty()) throw DataError("replace: at least one reference image is required");
    auto params = load_model_maybe_adapted<float>(args.ckpt, args.adapter);
    LatentSpec spec;
    spec.channels = params.cfg.latent_channels;
    spec.spatial_stride = params.cfg.spatial_stride;

    Clip source = load_clip(args.source);
    if (args.frame < 1 || args.frame > source.frames)
        throw DataError("replace: designation frame " + std::to_string(args.frame) + " outside [1, " +
                        std::to_string(source.frames) + "]");
    Clip mask = load_clip_or_image(args.mask);
    if (mask.height != source.height || mask.width != source.width)
        throw DataError("replace: mask resolution does not match the source clip");

    auto z_s = encode<float>(source, spec);
    auto z_m = encode<float>(mask, spec);
    std::vector<LatentGrid<float>> z_refs;
    for (const auto& rp : args.refs) {
        Clip rc = load_clip_or_image(rp);
        if (rc.height != source.height || rc.width != source.width)
            throw DataError("replace: reference resolution does not match the source clip");
        z_refs.push_back(encode<float>(rc, spec));
    }
    auto cond = assemble<float>(z_s, z_s, z_m, z_refs, args.frame, source.frames, params.cfg.patch);

    fs::create_directories(args.out_dir);
    auto view = const_view(params);
    Clip gen = generate_replacement(view, cond, source.frames, spec, args.sampler_steps, args.seed);
    gen.role = "generated";
    ReplaceResult res;
    res.generated_dir = args.out_dir + "/generated";
    res.frames = gen.frames;
    save_clip(gen, res.generated_dir);
    write_run_manifest(args.out_dir, "replace",
                       {{"checkpoint_hash", file_hash(args.ckpt)},
                        {"seed", std::to_string(args.seed)},
                        {"sampler_steps", std::to_string(args.sampler_steps)},
                        {"frame", std::to_string(args.frame)},
                        {"source", args.source}});
    return res;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalResult {
    metrics::MetricReport report;
    std::string report_json, report_text;
};

inline EvalResult run_eval(const RunConfig& user_cfg, const std::string& ckpt, const std::string& adapter,
                           const std::string& dataset_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    auto params = load_model_maybe_adapted<float>(ckpt, adapter);
    RunConfig cfg = adopt_model_config(user_cfg, params.cfg);
    fs::create_directories(out_dir);
    EvalResult res;
    res.report = evaluate_model(params, dataset_dir, cfg);
    res.report_json = out_dir + "/report.json";
    res.report_text = out_dir + "/report.txt";
    std::ofstream jf(res.report_json);
    jf << res.report.to_json().dump(2) << "\n";
    std::ofstream tf(res.report_text);
    tf << res.report.to_text();
    write_run_manifest(out_dir, "eval",
                       {{"checkpoint_hash", file_hash(ckpt)},
                        {"dataset_hash", file_hash(dataset_dir + "/manifest.json")},
                        {"config_hash", config_hash(cfg)}});
    return res;
}

// ---------------------------------------------------------------------------
// attn-viz
// ---------------------------------------------------------------------------

struct AttnVizArgs {
    std::string ckpt;
    std::string sample_dir;  // one dataset sample
    int layer = 0;
    std::string out_dir;
    uint64_t seed = 0;
    int sampler_steps = 8;
    int probe_step = -1;  // -1 = midway
};

struct AttnVizResult {
    std::vector<std::string> heatmaps;
    std::vector<std::string> overlays;
    AttnProbe<float> probe;
};

// nearest upsample of one probe map (token grid) by an integer factor
inline std::vector<float> upsample_map(const std::vector<float>& map, int th, int tw, int factor) {
    std::vector<float> out(static_cast<size_t>(th) * factor * tw * factor);
    for (int y = 0; y < th * factor; ++y)
        for (int x = 0; x < tw * factor; ++x)
            out[static_cast<size_t>(y) * tw * factor + x] =
                map[static_cast<size_t>(y / factor) * tw + (x / factor)];
    return out;
}

inline AttnVizResult run_attnviz(const AttnVizArgs& args) {
    namespace fs = std::filesystem;
    auto params = dit_from_blobs<float>(load_blob_file(args.ckpt));
    if (args.layer < 0 || args.layer >= params.cfg.depth)
        throw ConfigError("attn-viz: layer " + std::to_string(args.layer) + " out of range [0, " +
                          std::to_string(params.cfg.depth - 1) + "]");
    RunConfig cfg = adopt_model_config(RunConfig{}, params.cfg);
    LatentSpec spec = cfg.latent();
    auto sample = load_sample_latents<float>(args.sample_dir, spec);
    auto raw = sprite::load_sample(args.sample_dir);
    auto cond = make_infer_cond(sample, cfg);
    auto view = const_view(params);
    auto sched = make_schedule<float>(args.sampler_steps);
    auto probes = sampling_probes(view, cond, sched, args.seed, args.probe_step);

    AttnVizResult res;
    res.probe = probes.at(args.layer);
    fs::create_directories(args.out_dir);

    float peak = 0.0f;
    for (const auto& m : res.probe.maps)
        for (float v : m) peak = std::max(peak, v);
    if (peak <= 0) peak = 1.0f;

    int p = params.cfg.patch, s = params.cfg.spatial_stride;
    for (int f = 0; f < res.probe.frames; ++f) {
        std::vector<float> norm(res.probe.maps[f].size());
        for (size_t i = 0; i < norm.size(); ++i) norm[i] = res.probe.maps[f][i] / peak;
        auto heat_latent = upsample_map(norm, res.probe.th, res.probe.tw, p);  // latent (h, w)
        char name[48];
        std::snprintf(name, sizeof(name), "%s/heat_f%02d.pgm", args.out_dir.c_str(), f);
        write_pgm(name, heat_latent, res.probe.th * p, res.probe.tw * p);
        res.heatmaps.push_back(name);

        // overlay on the first pixel frame of this latent group
        int lo, hi;
        spec.group_of(f, raw.source.frames, lo, hi);
        auto heat_px = upsample_map(heat_latent, res.probe.th * p, res.probe.tw * p, s);
        Clip overlay = Clip::make(1, raw.source.height, raw.source.width, "overlay");
        for (int y = 0; y < overlay.height; ++y)
            for (int x = 0; x < overlay.width; ++x) {
                float h = heat_px[static_cast<size_t>(y) * overlay.width + x];
                for (int c = 0; c < 3; ++c) {
                    float base = raw.source.at(lo, c, y, x) * 0.55f;
                    overlay.at(0, c, y, x) = std::min(1.0f, base + (c == 0 ? 0.45f * h : 0.0f));
                }
            }
        std::snprintf(name, sizeof(name), "%s/overlay_f%02d.ppm", args.out_dir.c_str(), f);
        write_ppm(name, overlay, 0);
        res.overlays.push_back(name);
    }

    nlohmann::json j;
    j["layer"] = res.probe.layer;
    j["frames"] = res.probe.frames;
    j["th"] = res.probe.th;
    j["tw"] = res.probe.tw;
    auto arr = nlohmann::json::array();
    for (const auto& m : res.probe.maps) arr.push_back(m);
    j["maps"] = arr;
    std::ofstream jf(args.out_dir + "/probe.json");
    jf << j.dump(2) << "\n";
    write_run_manifest(args.out_dir, "attn-viz",
                       {{"checkpoint_hash", file_hash(args.ckpt)},
                        {"layer", std::to_string(args.layer)},
                        {"seed", std::to_string(args.seed)}});
    return res;
}

}  // namespace recast
