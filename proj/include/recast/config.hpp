#pragma once

#include <cstdio>
#include <string>
#include <variant>
#include <vector>

#include "recast/checkpoint.hpp"
#include "recast/dit.hpp"
#include "recast/flow.hpp"
#include "recast/spriteworld.hpp"

namespace recast {

// Flat typed run configuration. One key=value per line, '#' comments,
// unknown keys rejected. Serialization is canonical (registry order, full
// float precision), so parse(serialize(c)) == c and hashes are stable.
struct RunConfig {
    std::string stage = "pretrain";  // pretrain | posttrain
    uint64_t seed = 0;
    int threads = 1;

    int model_dim = 128;
    int model_depth = 4;
    int model_heads = 4;
    int model_patch = 2;
    int latent_channels = 4;
    int latent_stride = 4;
    double rope_base = 10000.0;
    std::string modulation = "scale_shift";
    std::string head_mode = "x0_residual";

    std::string data_dir;
    std::string eval_dir;
    double ref_dropout = 0.5;

    double lr = 2e-5;
    double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
    int batch = 8;
    int steps = 1000;
    std::string loss_norm = "mse";
    int ckpt_every = 500;
    int log_every = 10;
    int curriculum_switch = -1;  // step at which long clips join; -1 disables

    int sampler_steps = 50;

    int k = 3;
    double lambda_face = 1.0;
    int posttrain_steps = 500;
    double posttrain_lr = 2e-5;
    int posttrain_batch = 8;
    int adapter_rank = 64;
    double adapter_alpha = 64.0;
    int posttrain_sampler_steps = 8;

    int datagen_count = 16;
    int datagen_frames = 9;
    int datagen_long_frames = 21;
    double datagen_long_fraction = 0.0;  // fraction of samples rendered long
    int datagen_height = 64;
    int datagen_width = 112;
    double occluder_prob = 0.45;
    double bystander_prob = 0.35;
    double light_ramp_prob = 0.30;

    bool operator==(const RunConfig&) const = default;

    DitConfig dit() const {
        DitConfig c;
        c.dim = model_dim;
        c.depth = model_depth;
        c.heads = model_heads;
        c.patch = model_patch;
        c.latent_channels = latent_channels;
        c.spatial_stride = latent_stride;
        c.rope_base = rope_base;
        c.modulation = modulation;
        c.head_mode = head_mode;
        return c;
    }
    LatentSpec latent() const {
        LatentSpec s;
        s.channels = latent_channels;
        s.spatial_stride = latent_stride;
        return s;
    }
    sprite::SpriteConfig sprite_config() const {
        sprite::SpriteConfig s;
        s.frames = datagen_frames;
        s.long_frames = datagen_long_frames;
        s.long_fraction = datagen_long_fraction;
        s.height = datagen_height;
        s.width = datagen_width;
        s.occluder_prob = occluder_prob;
        s.bystander_prob = bystander_prob;
        s.light_ramp_prob = light_ramp_prob;
        return s;
    }

    void validate() const {
        if (stage != "pretrain" && stage != "posttrain")
            throw ConfigError("stage must be pretrain or posttrain, got '" + stage + "'");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (lr <= 0 || posttrain_lr <= 0) throw ConfigError("learning rate must be positive");
        if (batch < 1 || posttrain_batch < 1) throw ConfigError("batch size must be >= 1");
        if (!(ref_dropout >= 0.0 && ref_dropout <= 1.0)) throw ConfigError("ref_dropout must be in [0,1]");
        if (sampler_steps < 1 || posttrain_sampler_steps < 1)
            throw ConfigError("sampler steps must be >= 1");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (k > posttrain_sampler_steps) throw ConfigError("k exceeds posttrain sampler steps");
        if (adapter_rank < 1) throw ConfigError("adapter rank must be >= 1");
        if (!(datagen_long_fraction >= 0.0 && datagen_long_fraction <= 1.0))
            throw ConfigError("datagen_long_fraction must be in [0,1]");
        loss_norm_from_string(loss_norm);
        dit().validate();
    }
};

namespace detail {

struct ConfigField {
    const char* key;
    std::variant<int RunConfig::*, double RunConfig::*, uint64_t RunConfig::*, std::string RunConfig::*> ptr;
};

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        {"stage", &RunConfig::stage},
        {"seed", &RunConfig::seed},
        {"threads", &RunConfig::threads},
        {"model.dim", &RunConfig::model_dim},
        {"model.depth", &RunConfig::model_depth},
        {"model.heads", &RunConfig::model_heads},
        {"model.patch", &RunConfig::model_patch},
        {"latent.channels", &RunConfig::latent_channels},
        {"latent.stride", &RunConfig::latent_stride},
        {"model.rope_base", &RunConfig::rope_base},
        {"model.modulation", &RunConfig::modulation},
        {"model.head_mode", &RunConfig::head_mode},
        {"data.dir", &RunConfig::data_dir},
        {"data.eval_dir", &RunConfig::eval_dir},
        {"data.ref_dropout", &RunConfig::ref_dropout},
        {"train.lr", &RunConfig::lr},
        {"train.clip_norm", &RunConfig::clip_norm},
        {"train.batch", &RunConfig::batch},
        {"train.steps", &RunConfig::steps},
        {"train.loss_norm", &RunConfig::loss_norm},
        {"train.ckpt_every", &RunConfig::ckpt_every},
        {"train.log_every", &RunConfig::log_every},
        {"train.curriculum_switch", &RunConfig::curriculum_switch},
        {"sampler.steps", &RunConfig::sampler_steps},
        {"posttrain.k", &RunConfig::k},
        {"posttrain.lambda_face", &RunConfig::lambda_face},
        {"posttrain.steps", &RunConfig::posttrain_steps},
        {"posttrain.lr", &RunConfig::posttrain_lr},
        {"posttrain.batch", &RunConfig::posttrain_batch},
        {"posttrain.adapter_rank", &RunConfig::adapter_rank},
        {"posttrain.adapter_alpha", &RunConfig::adapter_alpha},
        {"posttrain.sampler_steps", &RunConfig::posttrain_sampler_steps},
        {"datagen.count", &RunConfig::datagen_count},
        {"datagen.frames", &RunConfig::datagen_frames},
        {"datagen.long_frames", &RunConfig::datagen_long_frames},
        {"datagen.long_fraction", &RunConfig::datagen_long_fraction},
        {"datagen.height", &RunConfig::datagen_height},
        {"datagen.width", &RunConfig::datagen_width},
        {"datagen.occluder_prob", &RunConfig::occluder_prob},
        {"datagen.bystander_prob", &RunConfig::bystander_prob},
        {"datagen.light_ramp_prob", &RunConfig::light_ramp_prob},
    };
    return fields;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
    std::string out;
    for (const auto& f : detail::config_fields()) {
        out += f.key;
        out += " = ";
        std::visit(
            [&](auto ptr) {
                using M = std::decay_t<decltype(c.*ptr)>;
                if constexpr (std::is_same_v<M, std::string>)
                    out += c.*ptr;
                else if constexpr (std::is_same_v<M, double>)
                    out += detail::format_double(c.*ptr);
                else
                    out += std::to_string(c.*ptr);
            },
            f.ptr);
        out += "\n";
    }
    return out;
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& f : detail::config_fields()) {
            if (key != f.key) continue;
            found = true;
            try {
                std::visit(
                    [&](auto ptr) {
                        using M = std::decay_t<decltype(c.*ptr)>;
                        if constexpr (std::is_same_v<M, std::string>)
                            c.*ptr = value;
                        else if constexpr (std::is_same_v<M, double>)
                            c.*ptr = std::stod(value);
                        else if constexpr (std::is_same_v<M, uint64_t>)
                            c.*ptr = std::stoull(value);
                        else
                            c.*ptr = std::stoi(value);
                    },
                    f.ptr);
            } catch (const std::exception&) {
                throw ConfigError("config line " + std::to_string(lineno) + ": bad value for " + key);
            }
            break;
        }
        if (!found) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

inline std::string config_hash(const RunConfig& c) {
    std::string s = serialize_config(c);
    return hash_hex(fnv1a(s.data(), s.size()));
}

// Hash for resume compatibility: the target step count may grow between
// runs, everything else must match.
inline std::string resume_hash(const RunConfig& c) {
    RunConfig copy = c;
    copy.steps = 0;
    return config_hash(copy);
}

}  // namespace recast
