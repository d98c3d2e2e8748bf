#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "recast/commands.hpp"

using namespace recast;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    EXPECT_TRUE(f) << path;
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// tiny geometry shared across the command tests
RunConfig tiny_run_config(const std::string& data_dir) {
    RunConfig cfg;
    cfg.model_dim = 16;
    cfg.model_depth = 1;
    cfg.model_heads = 2;
    cfg.seed = 11;
    cfg.threads = 1;
    cfg.lr = 1e-3;
    cfg.batch = 2;
    cfg.steps = 6;
    cfg.log_every = 2;
    cfg.ckpt_every = 3;
    cfg.sampler_steps = 4;
    cfg.posttrain_sampler_steps = 4;
    cfg.k = 2;
    cfg.posttrain_steps = 2;
    cfg.posttrain_batch = 1;
    cfg.posttrain_lr = 1e-3;
    cfg.adapter_rank = 2;
    cfg.adapter_alpha = 2.0;
    cfg.datagen_count = 3;
    cfg.datagen_frames = 5;
    cfg.datagen_height = 32;
    cfg.datagen_width = 32;
    cfg.data_dir = data_dir;
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string sub(const std::string& s) const { return (path / s).string(); }
};

int run_cli(const std::string& args) {
    std::string cmd = std::string(RECAST_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST(Config, SerializeParseRoundTrip) {
    RunConfig c;
    c.seed = 42;
    c.lr = 3.5e-4;
    c.stage = "posttrain";
    c.data_dir = "/tmp/ds";
    c.lambda_face = 0.625;
    c.datagen_long_fraction = 0.25;
    auto text = serialize_config(c);
    auto parsed = parse_config_text(text);
    EXPECT_EQ(parsed, c);
    EXPECT_EQ(config_hash(parsed), config_hash(c));
}

TEST(Config, UnknownKeyAndBadValueRejected) {
    EXPECT_THROW(parse_config_text("bogus.key = 3\n"), ConfigError);
    EXPECT_THROW(parse_config_text("train.lr = notanumber\n"), ConfigError);
    EXPECT_THROW(parse_config_text("train.lr\n"), ConfigError);
    EXPECT_NO_THROW(parse_config_text("# comment only\n\n  \n"));
    auto c = parse_config_text("train.lr = 0.5  # inline comment\n");
    EXPECT_DOUBLE_EQ(c.lr, 0.5);
}

TEST(Config, ValidationCatchesContractViolations) {
    RunConfig c;
    c.stage = "invalid";
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.k = 9;
    c.posttrain_sampler_steps = 8;
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.model_dim = 30;  // not divisible into rotary blocks
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.loss_norm = "huber";
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Commands, DatagenTrainReplaceEvalPipeline) {
    TempDir tmp("recast_cmd_pipeline");
    auto cfg = tiny_run_config(tmp.sub("data"));
    set_thread_count(1);
    auto dg = run_datagen(cfg, tmp.sub("data"));
    EXPECT_EQ(dg.count, 3);

    auto tr = run_train_cmd(cfg, tmp.sub("run"), "");
    EXPECT_EQ(tr.steps_run, 6);
    EXPECT_TRUE(fs::exists(tr.checkpoint));
    EXPECT_TRUE(fs::exists(tmp.sub("run") + "/ckpt_step_3.rcpt"));

    // loss curve rows == logged steps
    std::string curve = read_file(tmp.sub("run") + "/loss.csv");
    int rows = 0;
    for (char ch : curve)
        if (ch == '\n') ++rows;
    EXPECT_EQ(rows, 3);  // steps 2, 4, 6

    // replace: frame count contract + determinism
    ReplaceArgs rep;
    rep.ckpt = tr.checkpoint;
    rep.source = sprite::sample_dir(tmp.sub("data"), 0) + "/source";
    rep.mask = sprite::sample_dir(tmp.sub("data"), 0) + "/mask";
    rep.refs = {sprite::sample_dir(tmp.sub("data"), 0) + "/ref_0"};
    rep.frame = 2;
    rep.out_dir = tmp.sub("rep1");
    rep.seed = 5;
    rep.sampler_steps = 3;
    auto r1 = run_replace(rep);
    EXPECT_EQ(r1.frames, 5);
    rep.out_dir = tmp.sub("rep2");
    auto r2 = run_replace(rep);
    Clip g1 = load_clip(r1.generated_dir);
    Clip g2 = load_clip(r2.generated_dir);
    EXPECT_EQ(g1.data, g2.data);

    // frame range + resolution validation
    rep.frame = 9;
    EXPECT_THROW(run_replace(rep), DataError);

    // eval: report means equal hand-averaged values and are byte-stable
    auto ev1 = run_eval(cfg, tr.checkpoint, "", tmp.sub("data"), tmp.sub("eval1"));
    auto ev2 = run_eval(cfg, tr.checkpoint, "", tmp.sub("data"), tmp.sub("eval2"));
    EXPECT_EQ(read_file(ev1.report_json), read_file(ev2.report_json));
    EXPECT_EQ(read_file(ev1.report_text), read_file(ev2.report_text));
    double mean = 0;
    for (double v : ev1.report.psnr_db) mean += v;
    mean /= ev1.report.count();
    EXPECT_NEAR(ev1.report.mean_psnr(), mean, 1e-12);

    // posttrain smoke: base weights untouched, adapter written
    RunConfig pt = cfg;
    pt.stage = "posttrain";
    auto before = read_file(tr.checkpoint);
    auto ptres = run_posttrain_cmd(pt, tr.checkpoint, tmp.sub("pt"));
    EXPECT_TRUE(fs::exists(ptres.adapter_checkpoint));
    EXPECT_EQ(read_file(tr.checkpoint), before);
    EXPECT_TRUE(fs::exists(tmp.sub("pt") + "/reward.csv"));

    // attn-viz: heatmap dims match the latent grid, values match the probe
    AttnVizArgs av;
    av.ckpt = tr.checkpoint;
    av.sample_dir = sprite::sample_dir(tmp.sub("data"), 1);
    av.layer = 0;
    av.out_dir = tmp.sub("viz");
    av.sampler_steps = 4;
    auto viz = run_attnviz(av);
    EXPECT_EQ(static_cast<int>(viz.heatmaps.size()), viz.probe.frames);
    // latent dims: 32/4 = 8 -> heat image 8x8 per frame
    std::ifstream hm(viz.heatmaps[0], std::ios::binary);
    std::string magic;
    int w, h, maxv;
    hm >> magic >> w >> h >> maxv;
    EXPECT_EQ(magic, "P5");
    EXPECT_EQ(w, 8);
    EXPECT_EQ(h, 8);
    hm.get();
    std::vector<unsigned char> px(static_cast<size_t>(w) * h);
    hm.read(reinterpret_cast<char*>(px.data()), px.size());
    float peak = 0;
    for (const auto& m : viz.probe.maps)
        for (float v : m) peak = std::max(peak, v);
    for (int ty = 0; ty < viz.probe.th; ++ty)
        for (int tx = 0; tx < viz.probe.tw; ++tx) {
            float expect = viz.probe.maps[0][ty * viz.probe.tw + tx] / peak;
            // token value replicated over the patch block
            float got = px[(ty * 2) * w + tx * 2] / 255.0f;
            EXPECT_NEAR(got, expect, 1.0f / 255.0f + 1e-6f);
        }
    AttnVizArgs bad = av;
    bad.layer = 7;
    EXPECT_THROW(run_attnviz(bad), ConfigError);
}

TEST(Commands, ResumeReproducesUninterruptedRunBitExactly) {
    TempDir tmp("recast_resume_test");
    auto cfg = tiny_run_config(tmp.sub("data"));
    set_thread_count(1);
    run_datagen(cfg, tmp.sub("data"));

    auto full = run_train_cmd(cfg, tmp.sub("full"), "");

    RunConfig half = cfg;
    half.steps = 3;
    auto first = run_train_cmd(half, tmp.sub("resumed"), "");
    auto second = run_train_cmd(cfg, tmp.sub("resumed"), first.checkpoint);

    auto a = load_blob_file(full.checkpoint);
    auto b = load_blob_file(second.checkpoint);
    ASSERT_EQ(a.blobs.size(), b.blobs.size());
    for (size_t i = 0; i < a.blobs.size(); ++i) {
        EXPECT_EQ(a.blobs[i].first, b.blobs[i].first);
        EXPECT_EQ(a.blobs[i].second.second, b.blobs[i].second.second) << a.blobs[i].first;
    }
    // resuming under a different config is rejected
    RunConfig other = cfg;
    other.lr = 9e-3;
    EXPECT_THROW(run_train_cmd(other, tmp.sub("bad"), first.checkpoint), ConfigError);
}

TEST(Commands, EvalOfGroundTruthAgainstItselfHitsCaps) {
    // psnr cap / ssim identity / identity score 1 when the "generation" is
    // the ground truth and the reference is its own frame
    TempDir tmp("recast_gt_eval");
    sprite::SpriteConfig scfg;
    scfg.frames = 5;
    scfg.height = 32;
    scfg.width = 32;
    auto pair = sprite::gen_pair(3, scfg);
    EXPECT_EQ(metrics::psnr(pair.target, pair.target), 100.0);
    EXPECT_EQ(metrics::ssim(pair.target, pair.target), 1.0);
    auto fe = FaceEmbedder<double>::make();
    Clip frame0 = Clip::make(1, pair.target.height, pair.target.width);
    std::copy_n(pair.target.data.begin(), frame0.data.size(), frame0.data.begin());
    std::vector<RefImage> self_ref{{frame0, pair.target_boxes[0]}};
    std::vector<Rect> b0(pair.target.frames, pair.target_boxes[0]);
    Clip rep = Clip::make(pair.target.frames, pair.target.height, pair.target.width);
    for (int f = 0; f < rep.frames; ++f)
        std::copy_n(frame0.data.begin(), frame0.data.size(), rep.data.begin() + f * rep.frame_stride());
    EXPECT_NEAR(face_reward(rep, b0, self_ref, fe), 1.0, 1e-6);
}

TEST(Cli, ExitCodesFollowErrorCategories) {
    TempDir tmp("recast_cli_exit");
    // unknown config key -> 2
    std::ofstream bad(tmp.sub("bad.cfg"));
    bad << "no.such.key = 1\n";
    bad.close();
    EXPECT_EQ(run_cli("datagen --config " + tmp.sub("bad.cfg") + " --out " + tmp.sub("d")), 2);
    // missing dataset -> 3
    std::ofstream ok(tmp.sub("ok.cfg"));
    ok << "model.dim = 16\nmodel.heads = 2\nmodel.depth = 1\ndata.dir = " << tmp.sub("nodata") << "\n";
    ok.close();
    EXPECT_EQ(run_cli("train --config " + tmp.sub("ok.cfg") + " --out " + tmp.sub("t")), 3);
    // k > sampler steps -> 2
    std::ofstream kbad(tmp.sub("kbad.cfg"));
    kbad << "posttrain.k = 10\nposttrain.sampler_steps = 4\n";
    kbad.close();
    EXPECT_EQ(run_cli("posttrain --config " + tmp.sub("kbad.cfg") + " --ckpt /nonexistent --out " +
                      tmp.sub("p")),
              2);
    // missing subcommand -> 2
    EXPECT_EQ(run_cli(""), 2);
    // happy path -> 0
    std::ofstream dg(tmp.sub("dg.cfg"));
    dg << "datagen.count = 1\ndatagen.frames = 5\ndatagen.height = 32\ndatagen.width = 32\n";
    dg.close();
    EXPECT_EQ(run_cli("datagen --config " + tmp.sub("dg.cfg") + " --out " + tmp.sub("ds")), 0);
}
