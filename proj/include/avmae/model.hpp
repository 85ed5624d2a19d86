#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avmae/blocks.hpp"
#include "avmae/diffusion.hpp"
#include "avmae/errors.hpp"
#include "avmae/patches.hpp"
#include "avmae/positional.hpp"
#include "avmae/rng.hpp"

namespace avmae {

enum class Mode { diffmavil, mavil_baseline, audiomae, audiomae_diffusion };

inline bool mode_uses_video(Mode m) {
    return m == Mode::diffmavil || m == Mode::mavil_baseline;
}
inline bool mode_uses_diffusion(Mode m) {
    return m == Mode::diffmavil || m == Mode::audiomae_diffusion;
}

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::diffmavil: return "diffmavil";
        case Mode::mavil_baseline: return "mavil_baseline";
        case Mode::audiomae: return "audiomae";
        case Mode::audiomae_diffusion: return "audiomae_diffusion";
    }
    return "?";
}

struct GridSpec {
    std::vector<size_t> grid_dims;
    size_t patch_dim = 0;

    size_t num_patches() const {
        size_t n = 1;
        for (size_t d : grid_dims) n *= d;
        return n;
    }
};

struct ModelConfig {
    Mode mode = Mode::diffmavil;

    size_t enc_dim = 768;
    size_t enc_blocks = 12;
    size_t enc_heads = 12;
    size_t fusion_blocks = 2;
    size_t fusion_heads = 12;
    size_t dec_dim = 512;
    size_t dec_blocks = 8;
    size_t dec_heads = 16;

    AttentionKind video_decoder_attention = AttentionKind::cross_attention;
    AttentionKind audio_decoder_attention = AttentionKind::local_window;
    size_t decoder_window = 16;
    bool shifted_windows = false;

    enum class CrossDirection { masked_queries, visible_queries };
    CrossDirection cross_attention_direction = CrossDirection::masked_queries;

    // MAViL ordering compatibility: project every patch before masking
    // (numerically identical to mask-then-project; differs only in cost).
    bool project_then_mask = false;

    double masking_ratio = 0.8;
    double ln_eps = 1e-6;

    GridSpec audio;
    GridSpec video;

    bool uses_video() const { return mode_uses_video(mode); }
    bool uses_diffusion() const { return mode_uses_diffusion(mode); }

    void validate() const {
        auto divisible = [](size_t dim, size_t heads, const std::string& field) {
            if (heads == 0 || dim == 0 || dim % heads != 0) {
                throw ConfigError(field + ": dim " + std::to_string(dim) +
                                  " must be divisible by heads " + std::to_string(heads));
            }
        };
        divisible(enc_dim, enc_heads, "model.enc");
        divisible(dec_dim, dec_heads, "model.dec");
        divisible(enc_dim, fusion_heads, "model.fusion");
        if (enc_dim % 2 != 0 || dec_dim % 2 != 0) {
            throw ConfigError("model: embedding dims must be even for sinusoidal tables");
        }
        if (fusion_blocks < 1) throw ConfigError("model.fusion_blocks: must be >= 1");
        if (enc_blocks < 1) throw ConfigError("model.enc_blocks: must be >= 1");
        if (dec_blocks < 1) throw ConfigError("model.dec_blocks: must be >= 1");
        if (audio_decoder_attention == AttentionKind::cross_attention) {
            throw ConfigError("model.audio_decoder_attention: cross is not supported; "
                              "use self or local_window");
        }
        if (video_decoder_attention == AttentionKind::local_window) {
            throw ConfigError("model.video_decoder_attention: use self or cross");
        }
        if (audio_decoder_attention == AttentionKind::local_window && decoder_window < 1) {
            throw ConfigError("model.decoder_window: must be >= 1");
        }
        if (!(masking_ratio > 0.0 && masking_ratio < 1.0)) {
            throw ConfigError("model.masking_ratio: must lie in (0,1)");
        }
        if (audio.grid_dims.size() != 2 || audio.patch_dim == 0) {
            throw ConfigError("model.audio: need a 2-axis grid with patch_dim > 0");
        }
        if (uses_video() && (video.grid_dims.size() != 3 || video.patch_dim == 0)) {
            throw ConfigError("model.video: need a 3-axis grid with patch_dim > 0");
        }
    }
};

// ViT-style encoder over the visible patches of one modality.
class Encoder {
public:
    Encoder() = default;
    Encoder(const GridSpec& grid, size_t dim, size_t n_blocks, size_t heads, double eps,
            Rng& rng)
        : patch_embed_(grid.patch_dim, dim, rng),
          pos_(PositionalEmbedding::for_grid(grid.grid_dims, dim)),
          final_ln_(dim, eps) {
        blocks_.reserve(n_blocks);
        for (size_t b = 0; b < n_blocks; ++b) {
            blocks_.emplace_back(AttentionKind::self_attention, dim, heads, eps, rng);
        }
    }

    Tensor forward(const PatchGrid& grid, const MaskingPlan& plan,
                   bool project_then_mask) const {
        check_plan_matches(plan, grid);
        if (plan.visible_count() == 0) {
            throw PlanError("encode: plan has no visible patches");
        }
        Tensor x;
        if (project_then_mask) {
            x = gather_rows(patch_embed_.forward(grid.patches), plan.visible);
        } else {
            x = patch_embed_.forward(gather_visible(grid, plan));
        }
        x = add(x, gather_rows(pos_.table, plan.visible));
        for (const TransformerBlock& b : blocks_) x = b.forward(x);
        return final_ln_.forward(x);
    }

    Linear& patch_embed() { return patch_embed_; }

    void collect(const std::string& prefix, ParamList& out) const {
        patch_embed_.collect(prefix + ".patch_embed", out);
        for (size_t b = 0; b < blocks_.size(); ++b) {
            blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
        }
        final_ln_.collect(prefix + ".final_ln", out);
    }

private:
    Linear patch_embed_;
    PositionalEmbedding pos_;
    std::vector<TransformerBlock> blocks_;
    LayerNormLayer final_ln_;
};

// Joint transformer over the concatenated visible embeddings of both
// modalities; output is split back into the original segments.
class FusionEncoder {
public:
    FusionEncoder() = default;
    FusionEncoder(size_t dim, size_t n_blocks, size_t heads, double eps, Rng& rng)
        : final_ln_(dim, eps) {
        blocks_.reserve(n_blocks);
        for (size_t b = 0; b < n_blocks; ++b) {
            blocks_.emplace_back(AttentionKind::self_attention, dim, heads, eps, rng);
        }
    }

    std::pair<Tensor, Tensor> forward(const Tensor& a_um, const Tensor& v_um) const {
        if (a_um.rows() == 0 || v_um.rows() == 0) {
            throw PlanError("fuse: both modality sequences must be nonempty");
        }
        Tensor x = concat_rows({a_um, v_um});
        for (const TransformerBlock& b : blocks_) x = b.forward(x);
        x = final_ln_.forward(x);
        return {slice_rows(x, 0, a_um.rows()), slice_rows(x, a_um.rows(), v_um.rows())};
    }

    void collect(const std::string& prefix, ParamList& out) const {
        for (size_t b = 0; b < blocks_.size(); ++b) {
            blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
        }
        final_ln_.collect(prefix + ".final_ln", out);
    }

private:
    std::vector<TransformerBlock> blocks_;
    LayerNormLayer final_ln_;
};

// Decoder for one modality. The masked positions are filled either with
// projected diffused raw patches or with a learnable mask token; rows are
// restored to original patch order before (self/local) or after (cross)
// the transformer stack, and the linear head maps back to patch space.
class Decoder {
public:
    Decoder() = default;
    Decoder(const GridSpec& grid, size_t enc_dim, size_t dec_dim, size_t n_blocks,
            size_t heads, AttentionKind kind, size_t window, bool shifted,
            ModelConfig::CrossDirection direction, bool diffusion, double eps, Rng& rng)
        : kind_(kind),
          direction_(direction),
          diffusion_(diffusion),
          input_proj_(enc_dim, dec_dim, rng),
          pos_(PositionalEmbedding::for_grid(grid.grid_dims, dec_dim)),
          final_ln_(dec_dim, eps),
          head_(dec_dim, grid.patch_dim, rng) {
        if (diffusion_) {
            diffused_proj_ = Linear(grid.patch_dim, dec_dim, rng);
        } else {
            mask_token_ = Tensor::zeros({dec_dim});
            for (size_t i = 0; i < mask_token_.size(); ++i) {
                mask_token_.at(i) = rng.truncated_normal(0.02);
            }
            mask_token_.set_requires_grad(true);
        }
        blocks_.reserve(n_blocks);
        for (size_t b = 0; b < n_blocks; ++b) {
            const bool shift_this = shifted && (b % 2 == 1);
            blocks_.emplace_back(kind, dec_dim, heads, eps, rng, window, shift_this);
        }
    }

    // Pre-projection decoder inputs for the masked positions (diffused raw
    // patches or the broadcast mask token). Exposed for tests. Noise is keyed
    // by original patch index, so the result does not depend on the order of
    // the plan's masked list.
    Tensor masked_token_inputs(const PatchGrid& grid, const MaskingPlan& plan, size_t t,
                               const DiffusionSchedule* sched, uint64_t noise_seed) const {
        if (diffusion_) {
            if (!sched) throw ContractError("decode: diffusion enabled but no schedule");
            Tensor x0 = gather_masked(grid, plan);
            Tensor eps = Tensor::zeros(x0.shape());
            const Rng base(noise_seed);
            for (size_t r = 0; r < plan.masked_count(); ++r) {
                Rng row_rng = base.fork(plan.masked[r]);
                for (size_t j = 0; j < x0.cols(); ++j) eps.at(r, j) = row_rng.normal();
            }
            return diffuse_with_noise(x0, t, *sched, eps);
        }
        return reshape(mask_token_, {1, mask_token_.size()});
    }

    Tensor forward(const Tensor& mm_embeds, const PatchGrid& grid, const MaskingPlan& plan,
                   size_t t, const DiffusionSchedule* sched, uint64_t noise_seed) const {
        check_plan_matches(plan, grid);
        if (mm_embeds.rows() != plan.visible_count()) {
            throw PlanError("decode: " + std::to_string(mm_embeds.rows()) +
                            " visible embeddings for a plan with " +
                            std::to_string(plan.visible_count()) + " visible patches");
        }
        Tensor masked_tokens;
        if (diffusion_) {
            Tensor xt = masked_token_inputs(grid, plan, t, sched, noise_seed);
            masked_tokens = diffused_proj_.forward(xt);
        } else {
            Tensor row = reshape(mask_token_, {1, mask_token_.size()});
            masked_tokens = gather_rows(row, std::vector<size_t>(plan.masked_count(), 0));
        }
        masked_tokens = add(masked_tokens, gather_rows(pos_.table, plan.masked));
        Tensor visible_tokens =
            add(input_proj_.forward(mm_embeds), gather_rows(pos_.table, plan.visible));

        Tensor combined;
        if (kind_ == AttentionKind::cross_attention) {
            if (direction_ == ModelConfig::CrossDirection::masked_queries) {
                Tensor q = masked_tokens;
                for (const TransformerBlock& b : blocks_) q = b.forward_cross(q, visible_tokens);
                combined = restore_order(visible_tokens, final_ln_.forward(q), plan);
            } else {
                Tensor q = visible_tokens;
                for (const TransformerBlock& b : blocks_) q = b.forward_cross(q, masked_tokens);
                combined = restore_order(final_ln_.forward(q), masked_tokens, plan);
            }
        } else {
            Tensor x = restore_order(visible_tokens, masked_tokens, plan);
            for (const TransformerBlock& b : blocks_) x = b.forward(x);
            combined = final_ln_.forward(x);
        }
        return head_.forward(combined);
    }

    void collect(const std::string& prefix, ParamList& out) const {
        input_proj_.collect(prefix + ".input_proj", out);
        if (diffusion_) {
            diffused_proj_.collect(prefix + ".diffused_proj", out);
        } else {
            out.push_back({prefix + ".mask_token", mask_token_});
        }
        for (size_t b = 0; b < blocks_.size(); ++b) {
            blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
        }
        final_ln_.collect(prefix + ".final_ln", out);
        head_.collect(prefix + ".head", out);
    }

private:
    AttentionKind kind_ = AttentionKind::self_attention;
    ModelConfig::CrossDirection direction_ = ModelConfig::CrossDirection::masked_queries;
    bool diffusion_ = true;
    Linear input_proj_;
    Linear diffused_proj_;
    Tensor mask_token_;
    PositionalEmbedding pos_;
    std::vector<TransformerBlock> blocks_;
    LayerNormLayer final_ln_;
    Linear head_;
};

class Model {
public:
    Model() = default;
    Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(init_seed);
        audio_encoder_ = Encoder(cfg_.audio, cfg_.enc_dim, cfg_.enc_blocks, cfg_.enc_heads,
                                 cfg_.ln_eps, rng);
        audio_decoder_ = Decoder(cfg_.audio, cfg_.enc_dim, cfg_.dec_dim, cfg_.dec_blocks,
                                 cfg_.dec_heads, cfg_.audio_decoder_attention,
                                 cfg_.decoder_window, cfg_.shifted_windows,
                                 cfg_.cross_attention_direction, cfg_.uses_diffusion(),
                                 cfg_.ln_eps, rng);
        if (cfg_.uses_video()) {
            video_encoder_ = Encoder(cfg_.video, cfg_.enc_dim, cfg_.enc_blocks,
                                     cfg_.enc_heads, cfg_.ln_eps, rng);
            video_decoder_ = Decoder(cfg_.video, cfg_.enc_dim, cfg_.dec_dim, cfg_.dec_blocks,
                                     cfg_.dec_heads, cfg_.video_decoder_attention, 0, false,
                                     cfg_.cross_attention_direction, cfg_.uses_diffusion(),
                                     cfg_.ln_eps, rng);
            fusion_ = FusionEncoder(cfg_.enc_dim, cfg_.fusion_blocks, cfg_.fusion_heads,
                                    cfg_.ln_eps, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }

    Tensor encode(Modality m, const PatchGrid& grid, const MaskingPlan& plan) const {
        return encoder(m).forward(grid, plan, cfg_.project_then_mask);
    }

    std::pair<Tensor, Tensor> fuse(const Tensor& a_um, const Tensor& v_um) const {
        require_video("fuse");
        return fusion_->forward(a_um, v_um);
    }

    Tensor decode(Modality m, const Tensor& mm_embeds, const PatchGrid& grid,
                  const MaskingPlan& plan, size_t t, const DiffusionSchedule* sched,
                  uint64_t noise_seed) const {
        return decoder(m).forward(mm_embeds, grid, plan, t, sched, noise_seed);
    }

    const Encoder& encoder(Modality m) const {
        if (m == Modality::video) {
            require_video("video encoder");
            return *video_encoder_;
        }
        return audio_encoder_;
    }
    Encoder& encoder(Modality m) {
        return const_cast<Encoder&>(static_cast<const Model*>(this)->encoder(m));
    }
    const Decoder& decoder(Modality m) const {
        if (m == Modality::video) {
            require_video("video decoder");
            return *video_decoder_;
        }
        return audio_decoder_;
    }

    ParamList parameters() const {
        ParamList out;
        audio_encoder_.collect("audio_encoder", out);
        audio_decoder_.collect("audio_decoder", out);
        if (cfg_.uses_video()) {
            video_encoder_->collect("video_encoder", out);
            video_decoder_->collect("video_decoder", out);
            fusion_->collect("fusion", out);
        }
        return out;
    }

private:
    void require_video(const char* what) const {
        if (!cfg_.uses_video()) {
            throw ContractError(std::string(what) + " requested but mode '" +
                                mode_name(cfg_.mode) + "' has no video branch");
        }
    }

    ModelConfig cfg_;
    Encoder audio_encoder_;
    Decoder audio_decoder_;
    std::optional<Encoder> video_encoder_;
    std::optional<Decoder> video_decoder_;
    std::optional<FusionEncoder> fusion_;
};

// Toy dimensions used across tests: small enough for exhaustive gradient
// checks, with every architectural feature exercised.
inline ModelConfig toy_model_config(Mode mode) {
    ModelConfig cfg;
    cfg.mode = mode;
    cfg.enc_dim = 32;
    cfg.enc_blocks = 2;
    cfg.enc_heads = 2;
    cfg.fusion_blocks = 2;
    cfg.fusion_heads = 2;
    cfg.dec_dim = 16;
    cfg.dec_blocks = 2;
    cfg.dec_heads = 2;
    cfg.decoder_window = 4;
    cfg.masking_ratio = 0.8;
    cfg.audio.grid_dims = {4, 4};  // 16 patches of a 64x64 spectrogram
    cfg.audio.patch_dim = 256;
    cfg.video.grid_dims = {2, 2, 2};  // 8 tubelets of a 4x32x32x1 clip
    cfg.video.patch_dim = 512;
    return cfg;
}

}  // namespace avmae
