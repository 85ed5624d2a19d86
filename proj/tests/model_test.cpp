#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "avmae/losses.hpp"
#include "avmae/model.hpp"
#include "test_util.hpp"

using namespace avmae;
using testutil::finite_difference_grad;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

PatchGrid toy_audio_grid(uint64_t seed) {
    Rng rng(seed);
    return patchify_audio(testutil::random_tensor({64, 64}, rng), 16, 16);  // 16 patches
}

PatchGrid toy_video_grid(uint64_t seed) {
    Rng rng(seed);
    return patchify_video(testutil::random_tensor({4, 32, 32, 1}, rng), 2, 16, 16);  // 8
}

}  // namespace

TEST(Attention, SingleKeyGivesIdenticalRows) {
    Rng rng(1);
    MultiHeadAttention attn(8, 2, rng);
    Tensor q = random_tensor({5, 8}, rng);
    Tensor kv = random_tensor({1, 8}, rng);
    Tensor out = attn.forward(q, kv);
    // With one key every query collapses onto the same value row.
    for (size_t i = 1; i < out.rows(); ++i) {
        for (size_t j = 0; j < out.cols(); ++j) {
            EXPECT_NEAR(out.at(i, j), out.at(0, j), 1e-14);
        }
    }
}

TEST(Attention, DuplicateKeysLeaveOutputUnchanged) {
    Rng rng(2);
    MultiHeadAttention attn(8, 2, rng);
    Tensor q = random_tensor({4, 8}, rng);
    Tensor kv = random_tensor({3, 8}, rng);
    Tensor doubled = concat_rows({kv, kv});  // every key/value appears twice
    Tensor a = attn.forward(q, kv);
    Tensor b = attn.forward(q, doubled);
    // Softmax merge identity: each duplicate pair splits the original weight
    // evenly over copies of the same value, so the convex combination holds.
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
}

TEST(Attention, CrossBlockShapeAtPaperCounts) {
    Rng rng(3);
    TransformerBlock block(AttentionKind::cross_attention, 8, 1, 1e-6, rng);
    Tensor q = random_tensor({410, 8}, rng);
    Tensor kv = random_tensor({102, 8}, rng);
    Tensor out = block.forward_cross(q, kv);
    EXPECT_EQ(out.shape(), (Shape{410, 8}));
}

TEST(Attention, FullWindowEqualsSelfAttention) {
    const size_t L = 12, d = 8;
    Tensor x;
    {
        Rng rng(4);
        x = random_tensor({L, d}, rng);
    }
    Rng ra(99), rb(99);  // identical init
    TransformerBlock self_block(AttentionKind::self_attention, d, 2, 1e-6, ra);
    TransformerBlock local_block(AttentionKind::local_window, d, 2, 1e-6, rb, L);
    Tensor ys = self_block.forward(x);
    Tensor yl = local_block.forward(x);
    for (size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(ys.at(i), yl.at(i), 1e-10);
}

TEST(Attention, UnitWindowIsPerTokenPath) {
    const size_t L = 6, d = 8;
    Rng rng(5);
    TransformerBlock block(AttentionKind::local_window, d, 2, 1e-6, rng, 1);
    Tensor x = random_tensor({L, d}, rng);
    Tensor y = block.forward(x);
    for (size_t i = 0; i < L; ++i) {
        Tensor row = slice_rows(x, i, 1);
        Tensor yrow = block.forward(row);
        for (size_t j = 0; j < d; ++j) EXPECT_NEAR(y.at(i, j), yrow.at(0, j), 1e-12);
    }
}

TEST(Attention, NoGradientAcrossWindows) {
    const size_t L = 8, d = 8, w = 4;
    Rng rng(6);
    TransformerBlock block(AttentionKind::local_window, d, 2, 1e-6, rng, w);
    Tensor x = random_tensor({L, d}, rng);
    x.set_requires_grad(true);
    {
        Tape tape;
        Tensor y = block.forward(x);
        backward(sum(slice_rows(y, 0, w)));  // loss touches the first window only
    }
    // Attention is blockwise, LN/MLP are per-row: rows in the second window
    // cannot influence the first window's outputs.
    for (size_t i = w; i < L; ++i) {
        for (size_t j = 0; j < d; ++j) EXPECT_EQ(x.grad()[i * d + j], 0.0);
    }
}

TEST(Attention, ShiftedWindowCouplesAcrossBoundary) {
    const size_t L = 8, d = 8, w = 4;
    Rng rng(61);
    TransformerBlock block(AttentionKind::local_window, d, 2, 1e-6, rng, w, true);
    Tensor x = random_tensor({L, d}, rng);
    x.set_requires_grad(true);
    {
        Tape tape;
        Tensor y = block.forward(x);
        backward(sum(slice_rows(y, 2, 1)));
    }
    // With a w/2 shift, row 2 sits in a window spanning original rows 2..5.
    double coupling = 0.0;
    for (size_t j = 0; j < d; ++j) coupling += std::abs(x.grad()[5 * d + j]);
    EXPECT_GT(coupling, 0.0);
}

TEST(Attention, BlockGradientsMatchFiniteDifferences) {
    struct Case {
        AttentionKind kind;
        size_t window;
    };
    for (Case c : {Case{AttentionKind::self_attention, 0},
                   Case{AttentionKind::local_window, 3}}) {
        Rng rng(7);
        TransformerBlock block(c.kind, 6, 2, 1e-6, rng, c.window);
        Tensor x = random_tensor({7, 6}, rng);
        x.set_requires_grad(true);
        Tensor w = random_tensor({7, 6}, rng);
        auto forward = [&]() { return sum(mul(block.forward(x), w)).value(); };
        {
            Tape tape;
            backward(sum(mul(block.forward(x), w)));
        }
        auto fd = finite_difference_grad(forward, x);
        EXPECT_LT(max_rel_error(x.grad(), fd), 1e-5);
    }
    {
        Rng rng(8);
        TransformerBlock block(AttentionKind::cross_attention, 6, 2, 1e-6, rng);
        Tensor q = random_tensor({5, 6}, rng);
        Tensor kv = random_tensor({3, 6}, rng);
        q.set_requires_grad(true);
        kv.set_requires_grad(true);
        Tensor w = random_tensor({5, 6}, rng);
        auto forward = [&]() { return sum(mul(block.forward_cross(q, kv), w)).value(); };
        {
            Tape tape;
            backward(sum(mul(block.forward_cross(q, kv), w)));
        }
        EXPECT_LT(max_rel_error(q.grad(), finite_difference_grad(forward, q)), 1e-5);
        EXPECT_LT(max_rel_error(kv.grad(), finite_difference_grad(forward, kv)), 1e-5);
    }
}

TEST(Encoder, OutputShapeMatchesVisibleCount) {
    Model model(toy_model_config(Mode::diffmavil), 11);
    PatchGrid audio = toy_audio_grid(21);
    MaskingPlan plan = MaskingPlan::from_partition(
        {0, 2, 4, 6, 8, 10, 12, 14, 1, 3, 5, 7, 9}, {11, 13, 15});  // 13 visible
    Tensor um = model.encode(Modality::audio, audio, plan);
    EXPECT_EQ(um.shape(), (Shape{13, 32}));
    for (double v : um.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Encoder, PermutationEquivariance) {
    Model model(toy_model_config(Mode::diffmavil), 12);
    PatchGrid audio = toy_audio_grid(22);
    MaskingPlan p1 = MaskingPlan::from_partition({0, 3, 5, 9}, {1, 2, 4, 6, 7, 8, 10, 11,
                                                                12, 13, 14, 15});
    // Same visible set, rotated order.
    MaskingPlan p2 = MaskingPlan::from_partition({5, 9, 0, 3}, {1, 2, 4, 6, 7, 8, 10, 11,
                                                                12, 13, 14, 15});
    Tensor u1 = model.encode(Modality::audio, audio, p1);
    Tensor u2 = model.encode(Modality::audio, audio, p2);
    // Row for patch 5 in u1 is row 2; in u2 it is row 0, and so on.
    const std::vector<size_t> where_in_p1 = {2, 3, 0, 1};
    for (size_t r = 0; r < 4; ++r) {
        for (size_t j = 0; j < u1.cols(); ++j) {
            EXPECT_NEAR(u2.at(r, j), u1.at(where_in_p1[r], j), 1e-12);
        }
    }
}

TEST(Encoder, ZeroPatchEmbedGivesInputIndependentNormalizedRows) {
    Model model(toy_model_config(Mode::diffmavil), 13);
    Encoder& enc = model.encoder(Modality::audio);
    std::fill(enc.patch_embed().weight().data().begin(),
              enc.patch_embed().weight().data().end(), 0.0);
    PatchGrid g1 = toy_audio_grid(31);
    PatchGrid g2 = toy_audio_grid(32);
    MaskingPlan plan = make_masking_plan(16, 0.8, 5);
    Tensor u1 = model.encode(Modality::audio, g1, plan);
    Tensor u2 = model.encode(Modality::audio, g2, plan);
    for (size_t i = 0; i < u1.size(); ++i) EXPECT_EQ(u1.at(i), u2.at(i));
    // Final LayerNorm with unit gamma / zero beta pins row statistics.
    for (size_t i = 0; i < u1.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (size_t j = 0; j < u1.cols(); ++j) mean += u1.at(i, j);
        mean /= static_cast<double>(u1.cols());
        for (size_t j = 0; j < u1.cols(); ++j) {
            var += (u1.at(i, j) - mean) * (u1.at(i, j) - mean);
        }
        var /= static_cast<double>(u1.cols());
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(Fusion, SegmentLengthsPreserved) {
    Model model(toy_model_config(Mode::diffmavil), 14);
    Rng rng(40);
    Tensor a = random_tensor({13, 32}, rng);
    Tensor v = random_tensor({7, 32}, rng);
    auto [a_mm, v_mm] = model.fuse(a, v);
    EXPECT_EQ(a_mm.shape(), (Shape{13, 32}));
    EXPECT_EQ(v_mm.shape(), (Shape{7, 32}));
}

TEST(Fusion, AttentionSpansBothModalities) {
    Model model(toy_model_config(Mode::diffmavil), 15);
    Rng rng(41);
    Tensor a = random_tensor({6, 32}, rng);
    Tensor v = random_tensor({4, 32}, rng);
    Tensor v_zero = Tensor::zeros({4, 32});
    auto [a_mm1, v_mm1] = model.fuse(a, v);
    auto [a_mm2, v_mm2] = model.fuse(a, v_zero);
    double max_diff = 0.0;
    for (size_t i = 0; i < a_mm1.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(a_mm1.at(i) - a_mm2.at(i)));
    }
    EXPECT_GT(max_diff, 1e-8);  // the video segment influences audio rows
}

TEST(Fusion, IdentityLikeInitCorrelatesWithInput) {
    ModelConfig cfg = toy_model_config(Mode::diffmavil);
    cfg.fusion_blocks = 1;
    Model model(cfg, 16);
    // Zero the residual write-backs, leaving blocks as pure skips.
    for (const ParamRef& p : model.parameters()) {
        if (p.name.find("fusion") != std::string::npos &&
            (p.name.find("attn.o.weight") != std::string::npos ||
             p.name.find("mlp.fc2.weight") != std::string::npos)) {
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
        }
    }
    Rng rng(42);
    Tensor a = random_tensor({5, 32}, rng);
    Tensor v = random_tensor({3, 32}, rng);
    auto [a_mm, v_mm] = model.fuse(a, v);
    for (size_t i = 0; i < a.rows(); ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (size_t j = 0; j < a.cols(); ++j) {
            dot += a.at(i, j) * a_mm.at(i, j);
            na += a.at(i, j) * a.at(i, j);
            nb += a_mm.at(i, j) * a_mm.at(i, j);
        }
        EXPECT_GT(dot / std::sqrt(na * nb), 0.9);
    }
}

TEST(Decoder, ReconstructionShape) {
    // M=32, V=6.
    ModelConfig cfg = toy_model_config(Mode::diffmavil);
    cfg.audio.grid_dims = {4, 8};
    Model model(cfg, 17);
    Rng rng(50);
    PatchGrid grid = patchify_audio(random_tensor({64, 128}, rng), 16, 16);
    ASSERT_EQ(grid.num_patches(), 32u);
    MaskingPlan plan = make_masking_plan(32, 0.8125, 9);
    ASSERT_EQ(plan.visible_count(), 6u);
    DiffusionSchedule sched = build_schedule(1000, 1e-4, 0.02, 0.8);
    Tensor mm = random_tensor({6, 32}, rng);
    Tensor recon = model.decode(Modality::audio, mm, grid, plan, 500, &sched, 77);
    EXPECT_EQ(recon.shape(), (Shape{32, 256}));
}

TEST(Decoder, DiffusedMaskedInputsAtZeroNoise) {
    Model model(toy_model_config(Mode::diffmavil), 18);
    PatchGrid grid = toy_audio_grid(51);
    MaskingPlan plan = make_masking_plan(16, 0.8, 3);
    DiffusionSchedule sched = build_schedule(1000, 1e-4, 0.02, 0.8);
    // At t=1 the diffused tokens stay within noise-std of the raw patches.
    Tensor xt = model.decoder(Modality::audio).masked_token_inputs(grid, plan, 1, &sched, 5);
    Tensor x0 = gather_masked(grid, plan);
    const double sig = std::sqrt(sched.alpha_bar_at(1));
    const double noise_std = std::sqrt(1.0 - sched.alpha_bar_at(1));
    for (size_t i = 0; i < xt.size(); ++i) {
        EXPECT_NEAR(xt.at(i), sig * x0.at(i), 6.0 * noise_std);
    }
}

TEST(Decoder, OutputOrderIndependentOfPlanListOrder) {
    for (Mode mode : {Mode::diffmavil, Mode::mavil_baseline}) {
        for (AttentionKind kind :
             {AttentionKind::self_attention, AttentionKind::cross_attention}) {
            ModelConfig cfg = toy_model_config(mode);
            cfg.video_decoder_attention = kind;
            Model model(cfg, 19);
            PatchGrid grid = toy_video_grid(52);
            DiffusionSchedule sched = build_schedule(100, 1e-4, 0.02, 0.8);

            MaskingPlan p1 = MaskingPlan::from_partition({1, 4, 6}, {0, 2, 3, 5, 7});
            MaskingPlan p2 = MaskingPlan::from_partition({6, 1, 4}, {5, 7, 0, 2, 3});
            Rng rng(53);
            Tensor mm1 = random_tensor({3, 32}, rng);
            // Rows follow plan order: reorder to match p2's visible list.
            Tensor mm2 = gather_rows(mm1, {2, 0, 1});

            Tensor r1 = model.decode(Modality::video, mm1, grid, p1, 50, &sched, 0);
            Tensor r2 = model.decode(Modality::video, mm2, grid, p2, 50, &sched, 0);
            ASSERT_EQ(r1.shape(), r2.shape());
            for (size_t i = 0; i < r1.size(); ++i) {
                ASSERT_NEAR(r1.at(i), r2.at(i), 1e-10)
                    << mode_name(mode) << " kind " << static_cast<int>(kind);
            }
        }
    }
}

TEST(Decoder, SelfAndCrossPathsPassGradientChecks) {
    for (AttentionKind kind : {AttentionKind::self_attention, AttentionKind::cross_attention}) {
        ModelConfig cfg = toy_model_config(Mode::diffmavil);
        cfg.video_decoder_attention = kind;
        cfg.dec_blocks = 1;
        Model model(cfg, 20);
        PatchGrid grid = toy_video_grid(54);
        MaskingPlan plan = make_masking_plan(8, 0.75, 4);
        DiffusionSchedule sched = build_schedule(100, 1e-4, 0.02, 0.8);
        Rng rng(55);
        Tensor mm = random_tensor({static_cast<size_t>(plan.visible_count()), 32}, rng);
        mm.set_requires_grad(true);
        Tensor w = random_tensor({8, 512}, rng);
        auto forward = [&]() {
            return sum(mul(model.decode(Modality::video, mm, grid, plan, 10, &sched, 7), w))
                .value();
        };
        {
            Tape tape;
            backward(sum(mul(model.decode(Modality::video, mm, grid, plan, 10, &sched, 7), w)));
        }
        auto fd = finite_difference_grad(forward, mm);
        EXPECT_LT(max_rel_error(mm.grad(), fd), 1e-4) << "kind " << static_cast<int>(kind);
    }
}

TEST(Model, AudioOnlyModesHaveNoVideoBranch) {
    Model model(toy_model_config(Mode::audiomae), 23);
    EXPECT_THROW(model.encoder(Modality::video), ContractError);
    Rng rng(60);
    Tensor a = random_tensor({4, 32}, rng);
    Tensor v = random_tensor({4, 32}, rng);
    EXPECT_THROW(model.fuse(a, v), ContractError);
    for (const ParamRef& p : model.parameters()) {
        EXPECT_EQ(p.name.find("video"), std::string::npos) << p.name;
        EXPECT_EQ(p.name.find("fusion"), std::string::npos) << p.name;
    }
}

TEST(Model, MaskTokenOnlyInBaselineModes) {
    auto has_param = [](const Model& m, const std::string& needle) {
        for (const ParamRef& p : m.parameters()) {
            if (p.name.find(needle) != std::string::npos) return true;
        }
        return false;
    };
    Model diff(toy_model_config(Mode::diffmavil), 1);
    Model base(toy_model_config(Mode::mavil_baseline), 1);
    EXPECT_TRUE(has_param(diff, "diffused_proj"));
    EXPECT_FALSE(has_param(diff, "mask_token"));
    EXPECT_TRUE(has_param(base, "mask_token"));
    EXPECT_FALSE(has_param(base, "diffused_proj"));
}

TEST(Model, ConfigValidationRejectsBadDims) {
    ModelConfig cfg = toy_model_config(Mode::diffmavil);
    cfg.enc_heads = 5;  // 32 % 5 != 0
    EXPECT_THROW(Model(cfg, 0), ConfigError);
    cfg = toy_model_config(Mode::diffmavil);
    cfg.fusion_blocks = 0;
    EXPECT_THROW(Model(cfg, 0), ConfigError);
    cfg = toy_model_config(Mode::diffmavil);
    cfg.video.grid_dims = {2, 2};
    EXPECT_THROW(Model(cfg, 0), ConfigError);
}
