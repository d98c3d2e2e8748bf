// recast: in-context video character replacement at desk scale.
// Subcommands: datagen | train | posttrain | replace | eval | attn-viz
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "recast/commands.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    int64_t seed = -1;  // -1 = keep config value
    int threads = 0;    // 0 = keep config value
    std::string out_dir = "out";
};

void add_common(CLI::App* cmd, GlobalArgs& g) {
    cmd->add_option("--config", g.config_path, "run configuration file (key = value lines)");
    cmd->add_option("--seed", g.seed, "override the config seed");
    cmd->add_option("--threads", g.threads, "worker threads (1 = bit-exact deterministic mode)");
    cmd->add_option("--out", g.out_dir, "output directory");
}

recast::RunConfig resolve_config(const GlobalArgs& g) {
    recast::RunConfig cfg;
    if (!g.config_path.empty()) cfg = recast::load_config(g.config_path);
    if (g.seed >= 0) cfg.seed = static_cast<uint64_t>(g.seed);
    if (g.threads > 0) cfg.threads = g.threads;
    recast::set_thread_count(cfg.threads);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recast: video character replacement via in-context flow matching"};
    app.require_subcommand(1);

    GlobalArgs g_datagen, g_train, g_posttrain, g_replace, g_eval, g_attnviz;

    auto* cmd_datagen = app.add_subcommand("datagen", "render a paired sprite dataset");
    add_common(cmd_datagen, g_datagen);

    auto* cmd_train = app.add_subcommand("train", "stage-1 in-context training");
    add_common(cmd_train, g_train);
    std::string resume_path;
    cmd_train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* cmd_posttrain = app.add_subcommand("posttrain", "identity-reward adapter post-training");
    add_common(cmd_posttrain, g_posttrain);
    std::string base_ckpt;
    cmd_posttrain->add_option("--ckpt", base_ckpt, "base model checkpoint")->required();

    auto* cmd_replace = app.add_subcommand("replace", "replace the masked character in a source clip");
    add_common(cmd_replace, g_replace);
    recast::ReplaceArgs rep;
    cmd_replace->add_option("--ckpt", rep.ckpt, "model checkpoint")->required();
    cmd_replace->add_option("--adapter", rep.adapter, "optional adapter checkpoint (merged before use)");
    cmd_replace->add_option("--source", rep.source, "source clip directory")->required();
    cmd_replace->add_option("--mask", rep.mask, "designation-frame mask (pixmap file or clip dir)")->required();
    cmd_replace->add_option("--frame", rep.frame, "1-based designation frame number")->required();
    cmd_replace->add_option("--ref", rep.refs, "reference image(s), repeatable")->required();

    auto* cmd_eval = app.add_subcommand("eval", "paired evaluation on a dataset");
    add_common(cmd_eval, g_eval);
    std::string eval_ckpt, eval_adapter, eval_dataset;
    cmd_eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
    cmd_eval->add_option("--adapter", eval_adapter, "optional adapter checkpoint");
    cmd_eval->add_option("--dataset", eval_dataset, "held-out dataset directory")->required();

    auto* cmd_attnviz = app.add_subcommand("attn-viz", "mask-to-source attention heatmaps");
    add_common(cmd_attnviz, g_attnviz);
    recast::AttnVizArgs av;
    cmd_attnviz->add_option("--ckpt", av.ckpt, "model checkpoint")->required();
    cmd_attnviz->add_option("--sample", av.sample_dir, "dataset sample directory")->required();
    cmd_attnviz->add_option("--layer", av.layer, "attention layer to visualize")->required();
    cmd_attnviz->add_option("--probe-step", av.probe_step, "sampler step to capture (-1 = midway)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_datagen->parsed()) {
            auto cfg = resolve_config(g_datagen);
            auto res = recast::run_datagen(cfg, g_datagen.out_dir);
            std::printf("datagen: %d samples -> %s (hash %s)\n", res.count, g_datagen.out_dir.c_str(),
                        res.dataset_hash.c_str());
        } else if (cmd_train->parsed()) {
            auto cfg = resolve_config(g_train);
            auto res = recast::run_train_cmd(cfg, g_train.out_dir, resume_path);
            std::printf("train: %lld steps, final loss %.6f, checkpoint %s\n",
                        static_cast<long long>(res.steps_run), res.final_loss, res.checkpoint.c_str());
        } else if (cmd_posttrain->parsed()) {
            auto cfg = resolve_config(g_posttrain);
            auto res = recast::run_posttrain_cmd(cfg, base_ckpt, g_posttrain.out_dir);
            std::printf("posttrain: %lld steps, final reward %.6f, adapter %s\n",
                        static_cast<long long>(res.steps_run), res.final_reward,
                        res.adapter_checkpoint.c_str());
        } else if (cmd_replace->parsed()) {
            auto cfg = resolve_config(g_replace);
            rep.out_dir = g_replace.out_dir;
            rep.seed = cfg.seed;
            rep.sampler_steps = cfg.sampler_steps;
            auto res = recast::run_replace(rep);
            std::printf("replace: %d frames -> %s\n", res.frames, res.generated_dir.c_str());
        } else if (cmd_eval->parsed()) {
            auto cfg = resolve_config(g_eval);
            auto res = recast::run_eval(cfg, eval_ckpt, eval_adapter, eval_dataset, g_eval.out_dir);
            std::printf("%s", res.report.to_text().c_str());
        } else if (cmd_attnviz->parsed()) {
            auto cfg = resolve_config(g_attnviz);
            av.out_dir = g_attnviz.out_dir;
            av.seed = cfg.seed;
            av.sampler_steps = std::min(cfg.sampler_steps, 8);
            auto res = recast::run_attnviz(av);
            std::printf("attn-viz: %zu heatmaps -> %s\n", res.heatmaps.size(), g_attnviz.out_dir.c_str());
        }
    } catch (const recast::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const recast::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const recast::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const recast::ShapeError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    }
    return 0;
}
