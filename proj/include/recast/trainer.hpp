#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "recast/config.hpp"
#include "recast/metrics.hpp"

namespace recast {

// ---------------------------------------------------------------------------
// dataset cache: latents for training, lazy pixels for eval/posttrain
// ---------------------------------------------------------------------------

template <class Real>
struct LoadedSample {
    int F = 1;
    int frames = 1;
    LatentGrid<Real> z_source, z_target, z_mask;
    std::vector<LatentGrid<Real>> z_refs;
    std::vector<Rect> source_boxes, target_boxes, ref_boxes;
    std::vector<bool> ref_face_centric;
    std::string dir;
};

template <class Real>
LoadedSample<Real> load_sample_latents(const std::string& dir, const LatentSpec& spec) {
    auto s = sprite::load_sample(dir);
    LoadedSample<Real> out;
    out.F = s.F;
    out.frames = s.source.frames;
    out.z_source = encode<Real>(s.source, spec);
    out.z_target = encode<Real>(s.target, spec);
    out.z_mask = encode<Real>(s.mask, spec);
    for (const auto& r : s.refs) {
        out.z_refs.push_back(encode<Real>(r.clip, spec));
        out.ref_boxes.push_back(r.box);
        out.ref_face_centric.push_back(r.face_centric);
    }
    out.source_boxes = s.source_boxes;
    out.target_boxes = s.target_boxes;
    out.dir = dir;
    return out;
}

template <class Real>
struct TrainData {
    std::string dir;
    sprite::DatasetManifest manifest;
    std::string dataset_hash;
    std::vector<LoadedSample<Real>> samples;
    int short_frames = 0;  // shortest clip length present (curriculum phase 1)
};

inline std::string file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot hash missing file " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return hash_hex(fnv1a(bytes.data(), bytes.size()));
}

template <class Real>
TrainData<Real> load_train_data(const std::string& dir, const LatentSpec& spec) {
    TrainData<Real> td;
    td.dir = dir;
    td.manifest = sprite::load_dataset_manifest(dir);
    td.dataset_hash = file_hash(dir + "/manifest.json");
    td.samples.resize(td.manifest.count);
    parallel_for(td.manifest.count, [&](int64_t i) {
        td.samples[i] = load_sample_latents<Real>(sprite::sample_dir(dir, static_cast<int>(i)), spec);
    });
    td.short_frames = td.samples.empty() ? 0 : td.samples[0].frames;
    for (const auto& s : td.samples) td.short_frames = std::min(td.short_frames, s.frames);
    return td;
}

// ---------------------------------------------------------------------------
// batch item construction (reference dropout, timestep, noise)
// ---------------------------------------------------------------------------

template <class Real>
FlowBatchItem<Real> make_train_item(const LoadedSample<Real>& s, const RunConfig& cfg, Rng& rng) {
    std::vector<LatentGrid<Real>> refs;
    refs.push_back(s.z_refs.at(0));  // base reference always present
    for (size_t i = 1; i < s.z_refs.size(); ++i)
        if (rng.bernoulli(cfg.ref_dropout)) refs.push_back(s.z_refs[i]);
    FlowBatchItem<Real> item;
    item.cond = assemble<Real>(s.z_target, s.z_source, s.z_mask, refs, s.F, s.frames, cfg.model_patch);
    item.z0 = s.z_target.to_grid();
    item.t = rng.uniform();
    Rng noise_rng(rng.next_u64());
    item.noise = Grid<Real>::normal(item.z0.shape, noise_rng);
    return item;
}

// Conditioned sequence for inference (all references kept).
template <class Real>
ConditionedSequence<Real> make_infer_cond(const LoadedSample<Real>& s, const RunConfig& cfg) {
    return assemble<Real>(s.z_target, s.z_source, s.z_mask, s.z_refs, s.F, s.frames, cfg.model_patch);
}

// ---------------------------------------------------------------------------
// stage-1 training
// ---------------------------------------------------------------------------

template <class Real>
void append_opt_blobs(BlobFile& bf, const AdamState<Real>& opt, const DitParams<Real>& params) {
    for (const auto& name : params.store.names) {
        auto mi = opt.m.find(name);
        auto vi = opt.v.find(name);
        if (mi == opt.m.end() || vi == opt.v.end()) continue;
        const auto& shape = params.store.at(name).shape;
        bf.blobs.emplace_back("opt.m." + name,
                              std::make_pair(shape, std::vector<float>(mi->second.begin(), mi->second.end())));
        bf.blobs.emplace_back("opt.v." + name,
                              std::make_pair(shape, std::vector<float>(vi->second.begin(), vi->second.end())));
    }
}

template <class Real>
void restore_opt_blobs(const BlobFile& bf, const DitParams<Real>& params, AdamState<Real>& opt) {
    for (const auto& name : params.store.names) {
        const auto* m = bf.find("opt.m." + name);
        const auto* v = bf.find("opt.v." + name);
        if (!m || !v) continue;
        opt.m[name] = std::vector<Real>(m->second.begin(), m->second.end());
        opt.v[name] = std::vector<Real>(v->second.begin(), v->second.end());
    }
}

template <class Real>
void save_train_checkpoint(const std::string& path, const DitParams<Real>& params, const AdamState<Real>& opt,
                           int64_t step, const RunConfig& cfg, const std::string& parent) {
    std::map<std::string, std::string> meta;
    meta["step"] = std::to_string(step);
    meta["seed"] = std::to_string(cfg.seed);
    meta["config_hash"] = config_hash(cfg);
    meta["resume_hash"] = resume_hash(cfg);
    meta["parent"] = parent;
    BlobFile bf = dit_to_blobs(params, meta);
    append_opt_blobs(bf, opt, params);
    save_blob_file(bf, path);
}

struct TrainResult {
    int64_t steps_run = 0;
    double final_loss = 0.0;
    std::string checkpoint;
};

// One optimizer step over a seeded batch. Per-item randomness forks from the
// (run seed, step, item) triple, so runs are resumable and thread-count
// independent: per-item gradients merge in batch-index order.
template <class Real>
double train_step(DitParams<Real>& params, AdamState<Real>& opt, const TrainData<Real>& data,
                  const RunConfig& cfg, int64_t step) {
    LossNorm norm = loss_norm_from_string(cfg.loss_norm);
    int B = cfg.batch;
    std::vector<int> pick(B);
    Rng step_rng = Rng::fork(cfg.seed, 0x7121100000000ULL + static_cast<uint64_t>(step));
    bool short_phase = cfg.curriculum_switch >= 0 && step < cfg.curriculum_switch;
    std::vector<int> pool;
    for (int i = 0; i < static_cast<int>(data.samples.size()); ++i)
        if (!short_phase || data.samples[i].frames == data.short_frames) pool.push_back(i);
    if (pool.empty()) throw DataError("train_step: no samples satisfy the curriculum phase");
    for (int b = 0; b < B; ++b) pick[b] = pool[step_rng.below(pool.size())];

    std::vector<double> losses(B, 0.0);
    std::vector<GradMap<Real>> grads(B);
    parallel_for(B, [&](int64_t b) {
        Rng item_rng = Rng::fork(cfg.seed, (static_cast<uint64_t>(step) << 16) | static_cast<uint64_t>(b));
        auto item = make_train_item(data.samples[pick[b]], cfg, item_rng);
        Tape<Real> tape;
        auto view = watch_params(params, tape);
        auto loss = fm_loss(view, item, norm);
        losses[b] = static_cast<double>(loss.scalar_value());
        tape.backward(loss, static_cast<Real>(1.0 / B));
        for (const auto& name : params.store.names) grads[b][name] = tape.leaf_grad(view.at(name));
    });
    GradMap<Real> acc;
    double loss_mean = 0.0;
    for (int b = 0; b < B; ++b) {
        loss_mean += losses[b] / B;
        for (const auto& name : params.store.names) accumulate_grads(acc, name, grads[b][name]);
    }
    if (!std::isfinite(loss_mean)) throw NumericError("train_step: non-finite loss");
    opt.update(params.store, acc);
    return loss_mean;
}

template <class Real>
TrainResult run_training(const RunConfig& cfg, const std::string& out_dir, const std::string& resume_path) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (cfg.data_dir.empty()) throw DataError("train: data.dir not set");
    if (!fs::exists(cfg.data_dir + "/manifest.json")) throw DataError("train: dataset not found at " + cfg.data_dir);
    fs::create_directories(out_dir);

    auto data = load_train_data<Real>(cfg.data_dir, cfg.latent());
    DitParams<Real> params;
    AdamState<Real> opt;
    opt.lr = static_cast<Real>(cfg.lr);
    opt.clip_norm = static_cast<Real>(cfg.clip_norm);
    int64_t start_step = 0;
    std::string parent;
    if (!resume_path.empty()) {
        BlobFile bf = load_blob_file(resume_path);
        auto meta = parse_kv(bf.meta_text);
        if (meta.at("resume_hash") != resume_hash(cfg))
            throw ConfigError("resume: checkpoint was produced with a different config");
        params = dit_from_blobs<Real>(bf);
        restore_opt_blobs(bf, params, opt);
        start_step = std::stoll(meta.at("step"));
        opt.step = start_step;
        parent = file_hash(resume_path);
    } else {
        params = init_dit_params<Real>(cfg.dit(), cfg.seed);
    }

    std::ofstream curve(out_dir + "/loss.csv", start_step > 0 ? std::ios::app : std::ios::out);
    if (!curve) throw DataError("train: cannot write loss curve");

    TrainResult res;
    double last = 0.0;
    for (int64_t step = start_step + 1; step <= cfg.steps; ++step) {
        try {
            last = train_step(params, opt, data, cfg, step);
        } catch (const NumericError& e) {
            std::ofstream abort(out_dir + "/abort.json");
            abort << "{\"step\": " << step << ", \"error\": \"" << e.what() << "\"}\n";
            throw;  // periodic checkpoints remain as the last good state
        }
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            char row[64];
            std::snprintf(row, sizeof(row), "%lld,%.8f\n", static_cast<long long>(step), last);
            curve << row;
            curve.flush();
        }
        if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 && step < cfg.steps)
            save_train_checkpoint(out_dir + "/ckpt_step_" + std::to_string(step) + ".rcpt", params, opt, step,
                                  cfg, parent);
        res.steps_run = step;
    }
    res.final_loss = last;
    res.checkpoint = out_dir + "/model.rcpt";
    save_train_checkpoint(res.checkpoint, params, opt, std::max(start_step, res.steps_run), cfg, parent);
    return res;
}

// ---------------------------------------------------------------------------
// posttrain items from dataset samples (pixel-level, loaded on demand)
// ---------------------------------------------------------------------------

template <class Real>
PosttrainItem<Real> make_posttrain_item(const LoadedSample<Real>& s, const RunConfig& cfg, uint64_t noise_seed) {
    auto raw = sprite::load_sample(s.dir);
    PosttrainItem<Real> item;
    item.cond = make_infer_cond(s, cfg);
    item.gt = raw.target;
    item.boxes = raw.target_boxes;
    for (const auto& r : raw.refs) item.refs.push_back(RefImage{r.clip, r.box});
    item.noise_seed = noise_seed;
    return item;
}

struct PosttrainResult {
    int64_t steps_run = 0;
    double final_reward = 0.0;
    double final_loss = 0.0;
    std::string adapter_checkpoint;
};

template <class Real>
PosttrainResult run_posttraining(const RunConfig& cfg, const std::string& base_ckpt,
                                 const std::string& out_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (!fs::exists(base_ckpt)) throw DataError("posttrain: base checkpoint not found: " + base_ckpt);
    if (cfg.data_dir.empty() || !fs::exists(cfg.data_dir + "/manifest.json"))
        throw DataError("posttrain: dataset not found at " + cfg.data_dir);
    fs::create_directories(out_dir);

    auto params = dit_from_blobs<Real>(load_blob_file(base_ckpt));
    auto data = load_train_data<Real>(cfg.data_dir, cfg.latent());
    auto adapter = init_adapter<Real>(params, cfg.adapter_rank, static_cast<Real>(cfg.adapter_alpha), cfg.seed);
    auto fe = FaceEmbedder<Real>::make();
    AdamState<Real> opt;
    opt.lr = static_cast<Real>(cfg.posttrain_lr);
    opt.clip_norm = static_cast<Real>(cfg.clip_norm);

    PosttrainOptions<Real> opts;
    opts.K = cfg.k;
    opts.lambda_face = static_cast<Real>(cfg.lambda_face);
    opts.schedule = make_schedule<Real>(cfg.posttrain_sampler_steps);
    opts.latent = cfg.latent();

    std::ofstream curve(out_dir + "/reward.csv");
    if (!curve) throw DataError("posttrain: cannot write reward curve");

    PosttrainResult res;
    for (int64_t step = 1; step <= cfg.posttrain_steps; ++step) {
        Rng step_rng = Rng::fork(cfg.seed, 0x90577121000000ULL + static_cast<uint64_t>(step));
        std::vector<PosttrainItem<Real>> batch;
        for (int b = 0; b < cfg.posttrain_batch; ++b) {
            int idx = static_cast<int>(step_rng.below(data.samples.size()));
            batch.push_back(make_posttrain_item(data.samples[idx], cfg, step_rng.next_u64()));
        }
        auto r = posttrain_step(params, adapter, opt, batch, opts, fe);
        res.final_reward = r.reward;
        res.final_loss = r.loss;
        res.steps_run = step;
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            char row[96];
            std::snprintf(row, sizeof(row), "%lld,%.8f,%.8f,%.8f\n", static_cast<long long>(step), r.loss,
                          r.reward, r.mse);
            curve << row;
            curve.flush();
        }
    }
    std::map<std::string, std::string> meta;
    meta["base_checkpoint_hash"] = file_hash(base_ckpt);
    meta["steps"] = std::to_string(cfg.posttrain_steps);
    meta["config_hash"] = config_hash(cfg);
    res.adapter_checkpoint = out_dir + "/adapter.rcpt";
    save_blob_file(adapter_to_blobs(adapter, params.cfg, meta), res.adapter_checkpoint);
    return res;
}

// ---------------------------------------------------------------------------
// generation helpers shared by replace/eval/attn-viz
// ---------------------------------------------------------------------------

template <class Real>
Clip generate_replacement(const ParamView<Real>& view, const ConditionedSequence<Real>& cond, int F,
                          const LatentSpec& spec, int sampler_steps, uint64_t seed) {
    auto sched = make_schedule<Real>(sampler_steps);
    auto z = sample_flow(view, cond, sched, seed);
    LatentGrid<Real> lat;
    lat.f = cond.f;
    lat.c = cond.c;
    lat.h = cond.h;
    lat.w = cond.w;
    lat.data = z.values();
    lat.provenance = "generated";
    return decode(lat, F, spec);
}

// Probes captured at one step of a seeded sampling run (default: mid-way).
template <class Real>
std::vector<AttnProbe<Real>> sampling_probes(const ParamView<Real>& view, const ConditionedSequence<Real>& cond,
                                             const SamplerSchedule<Real>& sched, uint64_t seed,
                                             int probe_step = -1) {
    sched.validate();
    if (probe_step < 0) probe_step = sched.steps() / 2;
    if (probe_step >= sched.steps()) throw ConfigError("sampling_probes: probe step out of range");
    auto pd = cond.target_dims();
    Rng rng(seed);
    Grid<Real> z = Grid<Real>::normal(pd_shape(pd), rng);
    std::vector<AttnProbe<Real>> probes;
    for (int i = 0; i < sched.steps(); ++i) {
        double t = static_cast<double>(sched.timesteps[i]);
        double dt = static_cast<double>(sched.timesteps[i + 1]) - t;
        auto seq = cond.with_target(patchify_op(z, pd));
        ForwardOptions<Real> opts;
        if (i == probe_step) opts.probes_all = &probes;
        auto v = dit_forward(view, seq, t, opts);
        z = add(z, mul_scalar(v, static_cast<Real>(dt)));
    }
    return probes;
}

// Token-grid coverage of the ground-truth character masks, aligned with the
// source latent frames (pixel frames are grouped exactly as encode groups
// them). Values in [0,1] per token.
inline std::vector<std::vector<double>> mask_token_coverage(const std::vector<std::vector<uint8_t>>& masks,
                                                            int H, int W, const LatentSpec& spec, int patch) {
    int F = static_cast<int>(masks.size());
    int f = spec.latent_frames(F);
    int s = spec.spatial_stride;
    int th = H / s / patch, tw = W / s / patch;
    int block = s * patch;
    std::vector<std::vector<double>> cov(f, std::vector<double>(static_cast<size_t>(th) * tw, 0.0));
    for (int lf = 0; lf < f; ++lf) {
        int lo, hi;
        spec.group_of(lf, F, lo, hi);
        for (int ty = 0; ty < th; ++ty)
            for (int tx = 0; tx < tw; ++tx) {
                double acc = 0.0;
                for (int fr = lo; fr <= hi; ++fr)
                    for (int dy = 0; dy < block; ++dy)
                        for (int dx = 0; dx < block; ++dx)
                            acc += masks[fr][static_cast<size_t>(ty * block + dy) * W + (tx * block + dx)];
                cov[lf][static_cast<size_t>(ty) * tw + tx] =
                    acc / (static_cast<double>(hi - lo + 1) * block * block);
            }
    }
    return cov;
}

// Per-frame test of the tracking property: probe mass inside the character
// region (coverage-weighted) vs. the region's area fraction.
template <class Real>
void probe_region_stats(const AttnProbe<Real>& probe, const std::vector<std::vector<double>>& coverage,
                        std::vector<double>& inside_mass, std::vector<double>& area_fraction) {
    inside_mass.assign(probe.frames, 0.0);
    area_fraction.assign(probe.frames, 0.0);
    for (int f = 0; f < probe.frames; ++f) {
        double total = 0.0, inside = 0.0, area = 0.0;
        const auto& cov = coverage.at(f);
        for (size_t i = 0; i < probe.maps[f].size(); ++i) {
            double m = static_cast<double>(probe.maps[f][i]);
            total += m;
            inside += m * cov[i];
            area += cov[i];
        }
        inside_mass[f] = total > 0 ? inside / total : 0.0;
        area_fraction[f] = area / static_cast<double>(probe.maps[f].size());
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

template <class Real>
metrics::MetricReport evaluate_model(const DitParams<Real>& params, const std::string& dataset_dir,
                                     const RunConfig& cfg) {
    auto data = load_train_data<Real>(dataset_dir, cfg.latent());
    if (data.samples.empty()) throw DataError("eval: empty dataset");
    auto fe = FaceEmbedder<Real>::make();
    auto view = const_view(params);
    metrics::MetricReport rep;
    int n = static_cast<int>(data.samples.size());
    rep.psnr_db.resize(n);
    rep.ssim_val.resize(n);
    rep.identity.resize(n);
    rep.sample_names.resize(n);
    parallel_for(n, [&](int64_t i) {
        const auto& s = data.samples[i];
        auto raw = sprite::load_sample(s.dir);
        auto cond = make_infer_cond(s, cfg);
        Clip gen = generate_replacement(view, cond, s.frames, cfg.latent(), cfg.sampler_steps,
                                        Rng::fork(cfg.seed, 0xe7a1000000ULL + static_cast<uint64_t>(i)).next_u64());
        std::vector<RefImage> refs;
        for (const auto& r : raw.refs) refs.push_back(RefImage{r.clip, r.box});
        rep.psnr_db[i] = metrics::psnr(gen, raw.target);
        rep.ssim_val[i] = metrics::ssim(gen, raw.target);
        rep.identity[i] = face_reward(gen, raw.target_boxes, refs, fe);
        char name[16];
        std::snprintf(name, sizeof(name), "s%05d", static_cast<int>(i));
        rep.sample_names[i] = name;
    });
    return rep;
}

}  // namespace recast
