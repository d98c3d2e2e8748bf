#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "recast/clip.hpp"
#include "recast/reward.hpp"

namespace recast {
namespace sprite {

// Character-local geometry, in units of the bounding half-extents. The face
// always occupies the FaceCropSpec sub-rectangle of the bounding box, which
// is what ties the renderer to the identity embedder.
constexpr double kHalfW = 10.0;
constexpr double kHalfH = 14.0;
constexpr int kFaceCells = 4;

struct SpriteCharacter {
    uint64_t id = 0;
    double body[3] = {0, 0, 0};
    double trim[3] = {0, 0, 0};
    double skin[3] = {0, 0, 0};
    double aspect = 1.0;  // body width factor
    double face[kFaceCells * kFaceCells * 3] = {0};
};

inline SpriteCharacter make_character(uint64_t identity_seed) {
    SpriteCharacter ch;
    ch.id = identity_seed;
    Rng rng(identity_seed ^ 0xc4a6ac7e5ULL);
    auto color = [&](double* c, double lo, double hi) {
        for (int i = 0; i < 3; ++i) c[i] = rng.uniform(lo, hi);
    };
    color(ch.body, 0.15, 0.85);
    color(ch.trim, 0.15, 0.85);
    color(ch.skin, 0.45, 0.9);
    ch.aspect = rng.uniform(0.85, 1.15);
    for (int i = 0; i < kFaceCells * kFaceCells; ++i) {
        ch.face[i * 3 + 0] = rng.uniform(0.05, 0.95);
        ch.face[i * 3 + 1] = rng.uniform(0.05, 0.95);
        ch.face[i * 3 + 2] = rng.uniform(0.05, 0.95);
    }
    return ch;
}

// Pose: limb swing phase plus a mild body stretch. Augmented references vary
// these without touching identity fields.
struct Pose {
    double limb = 0.0;     // radians
    double stretch = 1.0;  // extra width factor
};

struct CharState {
    double cx = 0, cy = 0;
    double scale = 1.0;
    Pose pose;
};

inline Rect char_bbox(const CharState& st) {
    return Rect{st.cx - st.scale * kHalfW, st.cy - st.scale * kHalfH, 2 * st.scale * kHalfW,
                2 * st.scale * kHalfH};
}

// Face rectangle: the fixed normalized sub-rectangle of the bounding box.
inline Rect face_rect(const CharState& st) {
    return FaceCropSpec{}.resolve(char_bbox(st));
}

// inside test + color lookup at a continuous point, in one pass
inline bool sprite_sample(const SpriteCharacter& ch, const CharState& st, double px, double py,
                          double* rgb_out) {
    double u = (px - st.cx) / st.scale;
    double v = (py - st.cy) / st.scale;
    Rect fr = face_rect(st);
    // face pattern
    if (px >= fr.x0 && px < fr.x0 + fr.w && py >= fr.y0 && py < fr.y0 + fr.h) {
        int fx = std::min(kFaceCells - 1, static_cast<int>((px - fr.x0) / fr.w * kFaceCells));
        int fy = std::min(kFaceCells - 1, static_cast<int>((py - fr.y0) / fr.h * kFaceCells));
        const double* c = ch.face + (fy * kFaceCells + fx) * 3;
        if (rgb_out) {
            rgb_out[0] = c[0];
            rgb_out[1] = c[1];
            rgb_out[2] = c[2];
        }
        return true;
    }
    // head behind the face
    double hu = u / (0.30 * kHalfW), hv = (v + 0.58 * kHalfH) / (0.26 * kHalfH);
    if (hu * hu + hv * hv <= 1.0) {
        if (rgb_out) {
            rgb_out[0] = ch.skin[0];
            rgb_out[1] = ch.skin[1];
            rgb_out[2] = ch.skin[2];
        }
        return true;
    }
    // torso ellipse with vertical stripes
    double aw = ch.aspect * st.pose.stretch;
    double tu = u / (0.62 * kHalfW * aw), tv = (v - 0.18 * kHalfH) / (0.64 * kHalfH);
    if (tu * tu + tv * tv <= 1.0) {
        int stripe = static_cast<int>(std::floor((u + 4.0 * kHalfW) / (0.38 * kHalfW))) % 2;
        const double* c = stripe ? ch.trim : ch.body;
        if (rgb_out) {
            rgb_out[0] = c[0];
            rgb_out[1] = c[1];
            rgb_out[2] = c[2];
        }
        return true;
    }
    // limbs: two opposite-swing disks
    for (int side = 0; side < 2; ++side) {
        double ang = st.pose.limb + (side ? 3.14159265358979323846 : 0.0);
        double lx = (side ? -1 : 1) * 0.80 * kHalfW;
        double ly = 0.18 * kHalfH + 0.42 * kHalfH * std::sin(ang);
        double du = u - lx, dv = v - ly;
        double r = 0.17 * kHalfW;
        if (du * du + dv * dv <= r * r) {
            if (rgb_out) {
                rgb_out[0] = ch.trim[0];
                rgb_out[1] = ch.trim[1];
                rgb_out[2] = ch.trim[2];
            }
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// scene script: everything that must be identical between the two clips of a
// pair — trajectories, camera, lighting, occluders, bystanders
// ---------------------------------------------------------------------------

struct Wave {
    double kx, ky, phase, amp;
};

struct Trajectory {
    double x0 = 0, y0 = 0, vx = 0, vy = 0;
    double ax = 0, ay = 0, ox = 0, oy = 0, px = 0, py = 0;  // sinusoidal wobble

    double x(int fr) const { return x0 + vx * fr + ax * std::sin(ox * fr + px); }
    double y(int fr) const { return y0 + vy * fr + ay * std::sin(oy * fr + py); }
};

struct Occluder {
    double x_start = 0, x_end = 0;  // sweeping vertical bar
    double width = 10;
    double color[3] = {0.3, 0.3, 0.3};
};

struct Bystander {
    SpriteCharacter character;
    Trajectory traj;
    double scale = 1.0;
    double limb_om = 0.4, limb_ph = 0.0;
};

struct SceneScript {
    int frames = 9, height = 64, width = 112;
    double bg_base[3] = {0.5, 0.5, 0.5};
    Wave bg_waves[2][3];  // two waves per channel
    double drift_x = 0, drift_y = 0;
    double cam_ax = 0, cam_ox = 0, cam_px = 0, cam_ay = 0, cam_oy = 0, cam_py = 0;
    Trajectory traj;
    double scale0 = 1.0, scale_amp = 0, scale_om = 0, scale_ph = 0;
    double limb_om = 0.5, limb_ph = 0;
    double light_base = 1.0, light_amp = 0, light_om = 0, light_ph = 0;
    bool light_ramp = false;
    std::vector<Occluder> occluders;
    std::vector<Bystander> bystanders;

    double cam_x(int fr) const { return cam_ax * std::sin(cam_ox * fr + cam_px); }
    double cam_y(int fr) const { return cam_ay * std::sin(cam_oy * fr + cam_py); }
    double light(int fr) const {
        double l = light_ramp && frames > 1
                       ? light_base - light_amp * static_cast<double>(fr) / (frames - 1)
                       : light_base + light_amp * std::sin(light_om * fr + light_ph);
        return std::min(1.0, std::max(0.45, l));
    }
    CharState main_state(int fr) const {
        CharState st;
        st.cx = traj.x(fr) - cam_x(fr);
        st.cy = traj.y(fr) - cam_y(fr);
        st.scale = scale0 + scale_amp * std::sin(scale_om * fr + scale_ph);
        st.pose.limb = limb_om * fr + limb_ph;
        return st;
    }
};

struct SpriteConfig {
    int frames = 9;
    int long_frames = 21;
    double long_fraction = 0.0;  // fraction of samples rendered at long_frames
    int height = 64;
    int width = 112;
    double occluder_prob = 0.45;
    double bystander_prob = 0.35;
    double light_ramp_prob = 0.30;
    bool force_occluder = false;
    bool force_bystander = false;
    bool force_light_ramp = false;

    void validate() const {
        if (frames < 1 || long_frames < 1) throw ConfigError("spriteworld: frames must be >= 1");
        if (!(long_fraction >= 0.0 && long_fraction <= 1.0))
            throw ConfigError("spriteworld: long_fraction must be in [0,1]");
        if (height % 8 != 0 || width % 8 != 0)
            throw ConfigError("spriteworld: resolution must be divisible by 8 (latent stride x patch)");
    }
};

inline SceneScript make_script(uint64_t seed, const SpriteConfig& cfg) {
    cfg.validate();
    Rng rng(seed ^ 0x5ce9e5c717ULL);
    SceneScript sc;
    sc.frames = cfg.frames;
    sc.height = cfg.height;
    sc.width = cfg.width;
    for (int c = 0; c < 3; ++c) {
        sc.bg_base[c] = rng.uniform(0.3, 0.7);
        for (int w = 0; w < 2; ++w)
            sc.bg_waves[w][c] =
                Wave{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 6.28), rng.uniform(0.04, 0.16)};
    }
    sc.drift_x = rng.uniform(-1.5, 1.5);
    sc.drift_y = rng.uniform(-0.8, 0.8);
    sc.cam_ax = rng.uniform(0.0, 3.0);
    sc.cam_ox = rng.uniform(0.1, 0.5);
    sc.cam_px = rng.uniform(0.0, 6.28);
    sc.cam_ay = rng.uniform(0.0, 1.5);
    sc.cam_oy = rng.uniform(0.1, 0.5);
    sc.cam_py = rng.uniform(0.0, 6.28);
    sc.traj.x0 = rng.uniform(0.3, 0.7) * cfg.width;
    sc.traj.y0 = rng.uniform(0.4, 0.6) * cfg.height;
    sc.traj.vx = rng.uniform(-2.0, 2.0);
    sc.traj.vy = rng.uniform(-0.8, 0.8);
    sc.traj.ax = rng.uniform(0.0, 3.0);
    sc.traj.ox = rng.uniform(0.2, 0.8);
    sc.traj.px = rng.uniform(0.0, 6.28);
    sc.traj.ay = rng.uniform(0.0, 2.0);
    sc.traj.oy = rng.uniform(0.2, 0.8);
    sc.traj.py = rng.uniform(0.0, 6.28);
    sc.scale0 = rng.uniform(0.95, 1.5);
    sc.scale_amp = rng.uniform(0.0, 0.12);
    sc.scale_om = rng.uniform(0.2, 0.6);
    sc.scale_ph = rng.uniform(0.0, 6.28);
    sc.limb_om = rng.uniform(0.3, 0.9);
    sc.limb_ph = rng.uniform(0.0, 6.28);
    bool ramp = cfg.force_light_ramp || rng.bernoulli(cfg.light_ramp_prob);
    sc.light_ramp = ramp;
    sc.light_base = rng.uniform(0.85, 1.0);
    sc.light_amp = ramp ? rng.uniform(0.15, 0.35) : rng.uniform(0.0, 0.08);
    sc.light_om = rng.uniform(0.2, 0.8);
    sc.light_ph = rng.uniform(0.0, 6.28);
    if (cfg.force_occluder || rng.bernoulli(cfg.occluder_prob)) {
        Occluder oc;
        // sweep across the character's mid-clip position so occlusion happens
        double cx_mid = sc.traj.x(cfg.frames / 2);
        oc.width = rng.uniform(6.0, 13.0);
        oc.x_start = cx_mid + rng.uniform(15.0, 30.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
        oc.x_end = 2.0 * cx_mid - oc.x_start;
        for (int c = 0; c < 3; ++c) oc.color[c] = rng.uniform(0.1, 0.6);
        sc.occluders.push_back(oc);
    }
    if (cfg.force_bystander || rng.bernoulli(cfg.bystander_prob)) {
        Bystander b;
        b.character = make_character(rng.next_u64());
        b.traj.x0 = rng.uniform(0.1, 0.9) * cfg.width;
        b.traj.y0 = rng.uniform(0.35, 0.65) * cfg.height;
        b.traj.vx = rng.uniform(-1.5, 1.5);
        b.traj.ax = rng.uniform(0.0, 2.0);
        b.traj.ox = rng.uniform(0.2, 0.8);
        b.traj.px = rng.uniform(0.0, 6.28);
        b.scale = rng.uniform(0.7, 1.1);
        b.limb_om = rng.uniform(0.3, 0.9);
        b.limb_ph = rng.uniform(0.0, 6.28);
        sc.bystanders.push_back(b);
    }
    return sc;
}

// ---------------------------------------------------------------------------
// renderer: background, bystanders, main character, occluders in front
// ---------------------------------------------------------------------------

struct RenderedClip {
    Clip clip;
    std::vector<std::vector<uint8_t>> footprint;  // visible main-character mask per frame
    std::vector<Rect> boxes;                      // main-character bbox per frame
    bool occluded = false;                        // some frame has the character partly hidden
};

inline RenderedClip render_clip(const SceneScript& sc, const SpriteCharacter& main_char,
                                const std::string& role) {
    RenderedClip out;
    out.clip = Clip::make(sc.frames, sc.height, sc.width, role);
    out.footprint.assign(sc.frames, std::vector<uint8_t>(static_cast<size_t>(sc.height) * sc.width, 0));
    out.boxes.resize(sc.frames);
    for (int fr = 0; fr < sc.frames; ++fr) {
        CharState st = sc.main_state(fr);
        out.boxes[fr] = char_bbox(st);
        double light = sc.light(fr);
        double camx = sc.cam_x(fr), camy = sc.cam_y(fr);
        bool any_hidden = false, any_visible = false;
        for (int y = 0; y < sc.height; ++y)
            for (int x = 0; x < sc.width; ++x) {
                double pxp = x + 0.5, pyp = y + 0.5;
                double rgb[3];
                // background, sampled in world coordinates
                double u = (pxp + camx + sc.drift_x * fr) / sc.width;
                double v = (pyp + camy + sc.drift_y * fr) / sc.height;
                for (int c = 0; c < 3; ++c) {
                    double val = sc.bg_base[c];
                    for (int w = 0; w < 2; ++w) {
                        const Wave& wv = sc.bg_waves[w][c];
                        val += wv.amp * std::sin(6.283185307179586 * (wv.kx * u + wv.ky * v) + wv.phase);
                    }
                    rgb[c] = std::min(0.95, std::max(0.05, val));
                }
                for (const auto& b : sc.bystanders) {
                    CharState bs;
                    bs.cx = b.traj.x(fr) - camx;
                    bs.cy = b.traj.y(fr) - camy;
                    bs.scale = b.scale;
                    bs.pose.limb = b.limb_om * fr + b.limb_ph;
                    double c2[3];
                    if (sprite_sample(b.character, bs, pxp, pyp, c2)) {
                        rgb[0] = c2[0];
                        rgb[1] = c2[1];
                        rgb[2] = c2[2];
                    }
                }
                double cmain[3];
                bool on_char = sprite_sample(main_char, st, pxp, pyp, cmain);
                if (on_char) {
                    rgb[0] = cmain[0];
                    rgb[1] = cmain[1];
                    rgb[2] = cmain[2];
                }
                bool covered = false;
                for (const auto& oc : sc.occluders) {
                    double t = sc.frames > 1 ? static_cast<double>(fr) / (sc.frames - 1) : 0.0;
                    double ox = oc.x_start + (oc.x_end - oc.x_start) * t - camx;
                    if (pxp >= ox && pxp < ox + oc.width) {
                        double shade = 0.85 + 0.15 * std::sin(0.7 * pyp);
                        rgb[0] = oc.color[0] * shade;
                        rgb[1] = oc.color[1] * shade;
                        rgb[2] = oc.color[2] * shade;
                        covered = true;
                    }
                }
                if (on_char && !covered) {
                    out.footprint[fr][static_cast<size_t>(y) * sc.width + x] = 1;
                    any_visible = true;
                }
                if (on_char && covered) any_hidden = true;
                for (int c = 0; c < 3; ++c)
                    out.clip.at(fr, c, y, x) = quantize_unit(rgb[c] * light);
            }
        if (any_hidden && any_visible) out.occluded = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// references
// ---------------------------------------------------------------------------

struct SpriteRef {
    Clip clip;
    Rect box;
    SpriteCharacter character;  // provenance; augmentation re-poses this identity
    bool face_centric = false;
};

// Renders the identity at a seeded novel pose/scale/lighting on a plain
// background. Never matches a scene frame pixel-for-pixel (plain background,
// no scene objects).
inline SpriteRef render_reference(const SpriteCharacter& ch, int height, int width, uint64_t seed,
                                  bool face_centric) {
    Rng rng(seed ^ 0x2ef8eefULL);
    SpriteRef ref;
    ref.character = ch;
    ref.face_centric = face_centric;
    ref.clip = Clip::make(1, height, width, face_centric ? "ref_face" : "ref");
    CharState st;
    if (face_centric) {
        st.scale = 0.55 * height / (FaceCropSpec{}.h * 2.0 * kHalfH);
        st.cx = width / 2.0;
        // put the face rectangle's center at the image center
        double face_cy_local = -kHalfH + (FaceCropSpec{}.y + FaceCropSpec{}.h / 2.0) * 2.0 * kHalfH;
        st.cy = height / 2.0 - st.scale * face_cy_local;
    } else {
        st.scale = rng.uniform(1.1, 1.7);
        st.cx = width / 2.0 + rng.uniform(-6.0, 6.0);
        st.cy = height / 2.0 + rng.uniform(-4.0, 4.0);
    }
    st.pose.limb = rng.uniform(0.0, 6.28);
    st.pose.stretch = rng.uniform(0.92, 1.08);
    double light = rng.uniform(0.75, 1.0);
    double bg[3] = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double rgb[3] = {bg[0], bg[1], bg[2]};
            sprite_sample(ch, st, x + 0.5, y + 0.5, rgb);
            for (int c = 0; c < 3; ++c) ref.clip.at(0, c, y, x) = quantize_unit(rgb[c] * light);
        }
    ref.box = char_bbox(st);
    return ref;
}

// Same identity, new pose/scale/lighting.
inline SpriteRef augment_reference(const SpriteRef& ref, uint64_t seed) {
    return render_reference(ref.character, ref.clip.height, ref.clip.width, seed, ref.face_centric);
}

// Base reference always kept; the face-centric extra survives with
// probability p.
template <class T>
std::vector<T> reference_dropout(const std::vector<T>& refs, double p, uint64_t seed) {
    if (refs.empty()) throw DataError("reference_dropout: empty reference list");
    Rng rng(seed ^ 0xd50b0a7ULL);
    std::vector<T> out;
    out.push_back(refs[0]);
    for (size_t i = 1; i < refs.size(); ++i)
        if (rng.bernoulli(p)) out.push_back(refs[i]);
    return out;
}

// ---------------------------------------------------------------------------
// paired sample
// ---------------------------------------------------------------------------

struct SpritePairSample {
    uint64_t seed = 0;
    Clip source, target, mask;
    int F = 1;  // 1-based designation frame
    std::vector<SpriteRef> refs;  // [base, face-centric]
    std::vector<Rect> source_boxes, target_boxes;
    std::vector<std::vector<uint8_t>> source_masks, target_masks;  // held out from the model
    uint64_t id_a = 0, id_b = 0;
    bool occlusion_coverage = false;
};

inline SpritePairSample gen_pair(uint64_t seed, const SpriteConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    SpritePairSample s;
    s.seed = seed;
    SpriteConfig eff = cfg;
    eff.long_fraction = 0.0;
    if (rng.bernoulli(cfg.long_fraction)) eff.frames = cfg.long_frames;
    SceneScript sc = make_script(rng.next_u64(), eff);
    s.id_a = rng.next_u64();
    s.id_b = rng.next_u64();
    if (s.id_b == s.id_a) ++s.id_b;
    SpriteCharacter a = make_character(s.id_a);
    SpriteCharacter b = make_character(s.id_b);

    auto src = render_clip(sc, a, "source");
    auto tgt = render_clip(sc, b, "target");
    s.source = std::move(src.clip);
    s.target = std::move(tgt.clip);
    s.source_boxes = std::move(src.boxes);
    s.target_boxes = std::move(tgt.boxes);
    s.source_masks = std::move(src.footprint);
    s.target_masks = std::move(tgt.footprint);
    s.occlusion_coverage = src.occluded || tgt.occluded;

    s.F = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(eff.frames)));
    s.mask = Clip::make(1, cfg.height, cfg.width, "mask");
    const auto& fp = s.source_masks[s.F - 1];
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < fp.size(); ++i) s.mask.data[c * fp.size() + i] = fp[i] ? 1.0f : 0.0f;

    s.refs.push_back(render_reference(b, cfg.height, cfg.width, rng.next_u64(), false));
    s.refs.push_back(render_reference(b, cfg.height, cfg.width, rng.next_u64(), true));
    return s;
}

// ---------------------------------------------------------------------------
// on-disk dataset
// ---------------------------------------------------------------------------

inline nlohmann::json rect_json(const Rect& r) { return nlohmann::json::array({r.x0, r.y0, r.w, r.h}); }
inline Rect rect_from_json(const nlohmann::json& j) {
    return Rect{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

inline Clip mask_clip_from(const std::vector<std::vector<uint8_t>>& masks, int h, int w,
                           const std::string& role) {
    Clip c = Clip::make(static_cast<int>(masks.size()), h, w, role);
    for (size_t fr = 0; fr < masks.size(); ++fr)
        for (int ch = 0; ch < 3; ++ch)
            for (size_t i = 0; i < masks[fr].size(); ++i)
                c.data[(fr * 3 + ch) * masks[fr].size() + i] = masks[fr][i] ? 1.0f : 0.0f;
    return c;
}

inline std::vector<std::vector<uint8_t>> masks_from_clip(const Clip& c) {
    std::vector<std::vector<uint8_t>> out(c.frames, std::vector<uint8_t>(c.plane(), 0));
    for (int fr = 0; fr < c.frames; ++fr)
        for (int64_t i = 0; i < c.plane(); ++i) out[fr][i] = c.data[fr * c.frame_stride() + i] > 0.5f ? 1 : 0;
    return out;
}

inline std::string sample_dir(const std::string& root, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%05d", index);
    return root + "/samples/" + buf;
}

inline void save_sample(const SpritePairSample& s, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_clip(s.source, dir + "/source");
    save_clip(s.target, dir + "/target");
    save_clip(s.mask, dir + "/mask");
    for (size_t i = 0; i < s.refs.size(); ++i)
        save_clip(s.refs[i].clip, dir + "/ref_" + std::to_string(i));
    save_clip(mask_clip_from(s.source_masks, s.source.height, s.source.width, "gt_mask_source"),
              dir + "/gt_mask_source");
    save_clip(mask_clip_from(s.target_masks, s.target.height, s.target.width, "gt_mask_target"),
              dir + "/gt_mask_target");
    nlohmann::json j;
    j["seed"] = s.seed;
    j["F"] = s.F;
    j["id_a"] = s.id_a;
    j["id_b"] = s.id_b;
    j["occlusion_coverage"] = s.occlusion_coverage;
    j["ref_count"] = s.refs.size();
    auto rects = nlohmann::json::array();
    for (const auto& r : s.source_boxes) rects.push_back(rect_json(r));
    j["source_boxes"] = rects;
    rects = nlohmann::json::array();
    for (const auto& r : s.target_boxes) rects.push_back(rect_json(r));
    j["target_boxes"] = rects;
    rects = nlohmann::json::array();
    for (const auto& r : s.refs) rects.push_back(rect_json(r.box));
    j["ref_boxes"] = rects;
    auto fc = nlohmann::json::array();
    for (const auto& r : s.refs) fc.push_back(r.face_centric);
    j["ref_face_centric"] = fc;
    std::ofstream f(dir + "/sample.json");
    if (!f) throw DataError("cannot write sample.json in " + dir);
    f << j.dump(2) << "\n";
}

inline SpritePairSample load_sample(const std::string& dir) {
    std::ifstream f(dir + "/sample.json");
    if (!f) throw DataError("missing sample.json in " + dir);
    nlohmann::json j = nlohmann::json::parse(f);
    SpritePairSample s;
    s.seed = j.at("seed").get<uint64_t>();
    s.F = j.at("F").get<int>();
    s.id_a = j.at("id_a").get<uint64_t>();
    s.id_b = j.at("id_b").get<uint64_t>();
    s.occlusion_coverage = j.at("occlusion_coverage").get<bool>();
    s.source = load_clip(dir + "/source");
    s.target = load_clip(dir + "/target");
    s.mask = load_clip(dir + "/mask");
    int refs = j.at("ref_count").get<int>();
    for (int i = 0; i < refs; ++i) {
        SpriteRef r;
        r.clip = load_clip(dir + "/ref_" + std::to_string(i));
        r.box = rect_from_json(j.at("ref_boxes").at(i));
        r.face_centric = j.at("ref_face_centric").at(i).get<bool>();
        r.character = make_character(s.id_b);  // identity is reconstructible from its id
        s.refs.push_back(std::move(r));
    }
    for (const auto& rj : j.at("source_boxes")) s.source_boxes.push_back(rect_from_json(rj));
    for (const auto& rj : j.at("target_boxes")) s.target_boxes.push_back(rect_from_json(rj));
    s.source_masks = masks_from_clip(load_clip(dir + "/gt_mask_source"));
    s.target_masks = masks_from_clip(load_clip(dir + "/gt_mask_target"));
    return s;
}

struct DatasetManifest {
    int count = 0;
    uint64_t seed = 0;
    std::string config_hash;
    SpriteConfig config;
};

inline std::string sprite_config_text(const SpriteConfig& c) {
    std::map<std::string, std::string> kv{
        {"frames", std::to_string(c.frames)},
        {"long_frames", std::to_string(c.long_frames)},
        {"long_fraction", std::to_string(c.long_fraction)},
        {"height", std::to_string(c.height)},
        {"width", std::to_string(c.width)},
        {"occluder_prob", std::to_string(c.occluder_prob)},
        {"bystander_prob", std::to_string(c.bystander_prob)},
        {"light_ramp_prob", std::to_string(c.light_ramp_prob)},
        {"force_occluder", c.force_occluder ? "1" : "0"},
        {"force_bystander", c.force_bystander ? "1" : "0"},
        {"force_light_ramp", c.force_light_ramp ? "1" : "0"},
    };
    return serialize_kv(kv);
}

// Writes n deterministic samples plus a top-level manifest. Per-sample seeds
// derive from (seed, index), so generation parallelizes and re-exports are
// byte-identical.
inline DatasetManifest export_dataset(int n, uint64_t seed, const std::string& dir, const SpriteConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (n < 1) throw ConfigError("export_dataset: n must be >= 1");
    fs::create_directories(dir);
    std::vector<SpritePairSample> samples(n);
    parallel_for(n, [&](int64_t i) {
        Rng fork = Rng::fork(seed, static_cast<uint64_t>(i));
        samples[i] = gen_pair(fork.next_u64(), cfg);
        save_sample(samples[i], sample_dir(dir, static_cast<int>(i)));
    });
    DatasetManifest m;
    m.count = n;
    m.seed = seed;
    m.config = cfg;
    std::string cfg_text = sprite_config_text(cfg);
    m.config_hash = hash_hex(fnv1a(cfg_text.data(), cfg_text.size()));
    nlohmann::json j;
    j["count"] = n;
    j["seed"] = seed;
    j["config_hash"] = m.config_hash;
    j["config"] = nlohmann::json::parse(R"({})");
    j["config"]["frames"] = cfg.frames;
    j["config"]["long_frames"] = cfg.long_frames;
    j["config"]["long_fraction"] = cfg.long_fraction;
    j["config"]["height"] = cfg.height;
    j["config"]["width"] = cfg.width;
    j["config"]["occluder_prob"] = cfg.occluder_prob;
    j["config"]["bystander_prob"] = cfg.bystander_prob;
    j["config"]["light_ramp_prob"] = cfg.light_ramp_prob;
    j["config"]["force_occluder"] = cfg.force_occluder;
    j["config"]["force_bystander"] = cfg.force_bystander;
    j["config"]["force_light_ramp"] = cfg.force_light_ramp;
    auto names = nlohmann::json::array();
    for (int i = 0; i < n; ++i) names.push_back(sample_dir("", i).substr(1));
    j["samples"] = names;
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw DataError("cannot write dataset manifest in " + dir);
    f << j.dump(2) << "\n";
    return m;
}

inline DatasetManifest load_dataset_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw DataError("missing dataset manifest in " + dir);
    nlohmann::json j = nlohmann::json::parse(f);
    DatasetManifest m;
    m.count = j.at("count").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    const auto& c = j.at("config");
    m.config.frames = c.at("frames").get<int>();
    m.config.long_frames = c.at("long_frames").get<int>();
    m.config.long_fraction = c.at("long_fraction").get<double>();
    m.config.height = c.at("height").get<int>();
    m.config.width = c.at("width").get<int>();
    m.config.occluder_prob = c.at("occluder_prob").get<double>();
    m.config.bystander_prob = c.at("bystander_prob").get<double>();
    m.config.light_ramp_prob = c.at("light_ramp_prob").get<double>();
    m.config.force_occluder = c.at("force_occluder").get<bool>();
    m.config.force_bystander = c.at("force_bystander").get<bool>();
    m.config.force_light_ramp = c.at("force_light_ramp").get<bool>();
    return m;
}

}  // namespace sprite
}  // namespace recast
