#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "recast/conditioning.hpp"

using namespace recast;

namespace {

LatentGrid<double> synth_latent(int f, int c, int h, int w, uint64_t seed) {
    LatentGrid<double> g;
    g.f = f;
    g.c = c;
    g.h = h;
    g.w = w;
    g.data.resize(static_cast<size_t>(f) * c * h * w);
    Rng rng(seed);
    for (auto& v : g.data) v = rng.uniform();
    return g;
}

ConditionedSequence<double> make_seq(int f, int j, int F, int clip_frames, int h = 8, int w = 8, int p = 2) {
    auto xt = synth_latent(f, 4, h, w, 1);
    auto xs = synth_latent(f, 4, h, w, 2);
    auto xm = synth_latent(1, 4, h, w, 3);
    std::vector<LatentGrid<double>> refs;
    for (int i = 0; i < j; ++i) refs.push_back(synth_latent(1, 4, h, w, 10 + i));
    return assemble<double>(xt, xs, xm, refs, F, clip_frames, p);
}

}  // namespace

TEST(MaskFrameIndex, PaperExamples) {
    EXPECT_EQ(mask_frame_index(1, 81), 1);
    EXPECT_EQ(mask_frame_index(5, 81), 2);
    EXPECT_EQ(mask_frame_index(81, 81), 21);
}

TEST(MaskFrameIndex, SweepAgainstIndependentReimplementation) {
    for (int F = 1; F <= 81; ++F) {
        int expect = static_cast<int>(std::floor((F - 1) / 4.0)) + 1;
        EXPECT_EQ(mask_frame_index(F, 81), expect) << "F=" << F;
    }
}

TEST(MaskFrameIndex, RangeChecked) {
    EXPECT_THROW(mask_frame_index(0, 9), DataError);
    EXPECT_THROW(mask_frame_index(10, 9), DataError);
}

TEST(Assemble, FrameLengthContractSweep) {
    for (int f = 1; f <= 8; ++f)
        for (int j = 1; j <= 3; ++j) {
            auto seq = make_seq(f, j, 1, 4 * (f - 1) + 1);
            EXPECT_EQ(seq.frame_length(), 2 * f + 1 + j);
            EXPECT_EQ(seq.token_count(), (2 * f + 1 + j) * seq.tokens_per_frame());
            EXPECT_EQ(static_cast<int>(seq.rope.size()), seq.token_count());
            EXPECT_EQ(static_cast<int>(seq.token_roles.size()), seq.token_count());
        }
}

TEST(Assemble, PaperShapeExamples) {
    EXPECT_EQ(make_seq(6, 1, 1, 21).frame_length(), 14);
    EXPECT_EQ(make_seq(21, 2, 1, 81).frame_length(), 45);
    EXPECT_EQ(make_seq(1, 1, 1, 1).frame_length(), 4);
}

TEST(Assemble, ErrorsOnBadInputs) {
    auto xt = synth_latent(2, 4, 8, 8, 1);
    auto xs = synth_latent(3, 4, 8, 8, 2);  // frame count differs
    auto xm = synth_latent(1, 4, 8, 8, 3);
    std::vector<LatentGrid<double>> refs{synth_latent(1, 4, 8, 8, 4)};
    EXPECT_THROW(assemble<double>(xt, xs, xm, refs, 1, 5, 2), ShapeError);
    auto xs2 = synth_latent(2, 4, 8, 8, 5);
    EXPECT_THROW(assemble<double>(xt, xs2, xm, {}, 1, 5, 2), ShapeError);  // j == 0
    auto bad_mask = synth_latent(2, 4, 8, 8, 6);
    EXPECT_THROW(assemble<double>(xt, xs2, bad_mask, refs, 1, 5, 2), ShapeError);
}

TEST(AssignRope, SourceTargetShareFrameIndices) {
    auto seq = make_seq(3, 1, 1, 9);
    const auto& tgt = seq.segment(TokenRole::Target);
    const auto& src = seq.segment(TokenRole::Source);
    for (int i = 0; i < tgt.token_count; ++i) {
        EXPECT_EQ(seq.rope[tgt.token_offset + i].frame, seq.rope[src.token_offset + i].frame);
        EXPECT_EQ(seq.rope[tgt.token_offset + i].height, seq.rope[src.token_offset + i].height);
        EXPECT_EQ(seq.rope[tgt.token_offset + i].width, seq.rope[src.token_offset + i].width);
    }
    // frame index k on frame k, spatial coordinates in token units
    int tpf = seq.tokens_per_frame();
    for (int k = 0; k < 3; ++k) {
        for (int i = 0; i < tpf; ++i) {
            const auto& r = seq.rope[tgt.token_offset + k * tpf + i];
            EXPECT_EQ(r.frame, k);
            EXPECT_EQ(r.height, i / seq.tw());
            EXPECT_EQ(r.width, i % seq.tw());
        }
    }
}

TEST(AssignRope, ReferenceOffsetsAndMaskFrame) {
    auto seq = make_seq(2, 2, 5, 5);
    EXPECT_EQ(seq.mask_frame, 2);  // requested F=5
    const auto& mask = seq.segment(TokenRole::Mask);
    for (int i = 0; i < mask.token_count; ++i) EXPECT_EQ(seq.rope[mask.token_offset + i].frame, 2);
    const auto& r0 = seq.segment(TokenRole::Reference, 0);
    const auto& r1 = seq.segment(TokenRole::Reference, 1);
    EXPECT_EQ(seq.rope[r0.token_offset], (RopeIndex{-1, 0, 0}));
    EXPECT_EQ(seq.rope[r1.token_offset], (RopeIndex{-1, seq.th(), seq.tw()}));
    // distinct references never collide
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& seg : {r0, r1})
        for (int i = 0; i < seg.token_count; ++i) {
            const auto& r = seq.rope[seg.token_offset + i];
            auto key = std::make_tuple(r.frame, r.height, r.width);
            EXPECT_TRUE(seen.insert(key).second) << "collision at ref token " << i;
        }
}

TEST(RopeRotate, ZeroIndexIsIdentity) {
    RopeFreqs fr{16, 10000.0};
    Rng rng(1);
    std::vector<double> feat(16);
    for (auto& v : feat) v = rng.normal();
    auto out = rope_rotate(feat, RopeIndex{0, 0, 0}, fr);
    for (size_t i = 0; i < feat.size(); ++i) EXPECT_DOUBLE_EQ(out[i], feat[i]);
}

TEST(RopeRotate, RotationComposition) {
    RopeFreqs fr{16, 10000.0};
    Rng rng(2);
    std::vector<double> feat(16);
    for (auto& v : feat) v = rng.normal();
    RopeIndex m{2, 1, 3}, n{1, 4, -2}, mn{3, 5, 1};
    auto two_step = rope_rotate(rope_rotate(feat, m, fr), n, fr);
    auto one_step = rope_rotate(feat, mn, fr);
    for (size_t i = 0; i < feat.size(); ++i) EXPECT_NEAR(two_step[i], one_step[i], 1e-12);
}

TEST(RopeRotate, RelativePositionIdentityHundredDraws) {
    RopeFreqs fr{32, 10000.0};
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> q(32), k(32);
        for (auto& v : q) v = rng.normal();
        for (auto& v : k) v = rng.normal();
        RopeIndex m{rng.range(-4, 24), rng.range(0, 12), rng.range(0, 12)};
        RopeIndex n{rng.range(-4, 24), rng.range(0, 12), rng.range(0, 12)};
        RopeIndex diff{m.frame - n.frame, m.height - n.height, m.width - n.width};
        auto qm = rope_rotate(q, m, fr);
        auto kn = rope_rotate(k, n, fr);
        auto qdiff = rope_rotate(q, diff, fr);
        double lhs = 0, rhs = 0;
        for (int i = 0; i < 32; ++i) {
            lhs += qm[i] * kn[i];
            rhs += qdiff[i] * k[i];
        }
        EXPECT_NEAR(lhs, rhs, 1e-5);
    }
}

TEST(RopeRotate, GlobalFrameShiftLeavesLogitsUnchanged) {
    RopeFreqs fr{16, 10000.0};
    Rng rng(4);
    std::vector<double> q(16), k(16);
    for (auto& v : q) v = rng.normal();
    for (auto& v : k) v = rng.normal();
    for (int shift : {1, 5, -3}) {
        RopeIndex m{2, 3, 1}, n{6, 0, 2};
        auto base_q = rope_rotate(q, m, fr);
        auto base_k = rope_rotate(k, n, fr);
        RopeIndex ms{m.frame + shift, m.height, m.width}, ns{n.frame + shift, n.height, n.width};
        auto shift_q = rope_rotate(q, ms, fr);
        auto shift_k = rope_rotate(k, ns, fr);
        double lhs = 0, rhs = 0;
        for (int i = 0; i < 16; ++i) {
            lhs += base_q[i] * base_k[i];
            rhs += shift_q[i] * shift_k[i];
        }
        EXPECT_NEAR(lhs, rhs, 1e-5);
    }
}

TEST(RopeRotate, HeadDimMustSplitIntoAxisBlocks) {
    RopeFreqs fr{12, 10000.0};  // 12 is not a multiple of 8
    std::vector<double> feat(12, 0.0);
    EXPECT_THROW(rope_rotate(feat, RopeIndex{1, 0, 0}, fr), ShapeError);
}

TEST(PermuteConditions, MovesTokensRopeAndRolesTogether) {
    auto seq = make_seq(2, 2, 3, 5);
    auto perm = permute_condition_segments(seq, {3, 0, 2, 1});  // [ref1, source, ref0, mask]
    EXPECT_EQ(perm.token_count(), seq.token_count());
    // the source segment kept its rope indices and roles wherever it moved
    const auto& src_old = seq.segment(TokenRole::Source);
    const auto& src_new = perm.segment(TokenRole::Source);
    for (int i = 0; i < src_old.token_count; ++i) {
        EXPECT_EQ(perm.rope[src_new.token_offset + i], seq.rope[src_old.token_offset + i]);
        EXPECT_EQ(perm.token_roles[src_new.token_offset + i], seq.token_roles[src_old.token_offset + i]);
    }
    // token payloads moved with the segment
    int cond_base_old = seq.target_token_count();
    int dim = seq.cond_tokens.shape[1];
    for (int i = 0; i < src_old.token_count; ++i)
        for (int d = 0; d < dim; ++d)
            EXPECT_EQ(perm.cond_tokens.values()[(src_new.token_offset - cond_base_old + i) * dim + d],
                      seq.cond_tokens.values()[(src_old.token_offset - cond_base_old + i) * dim + d]);
}
