#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "avmae/diffusion.hpp"
#include "avmae/model.hpp"
#include "avmae/patches.hpp"
#include "avmae/rng.hpp"
#include "avmae/tensor.hpp"

namespace avmae {

struct LossWeights {
    double lambda_inter = 0.01;
    double lambda_intra = 0.01;
    double temperature = 0.1;
    bool mse_masked_only = false;
};

struct LossBreakdown {
    double mse_audio = 0.0;
    double mse_video = 0.0;
    double nce_inter = 0.0;
    double nce_intra_audio = 0.0;
    double nce_intra_video = 0.0;
    double total = 0.0;
    LossWeights weights;
    Tensor total_tensor;  // scalar; backward() target

    bool finite() const {
        return std::isfinite(mse_audio) && std::isfinite(mse_video) &&
               std::isfinite(nce_inter) && std::isfinite(nce_intra_audio) &&
               std::isfinite(nce_intra_video) && std::isfinite(total);
    }
};

// Mean squared error of one modality: mean over patches of the per-patch
// element mean, i.e. the global element mean of (recon - target)^2.
inline Tensor mse_term(const Tensor& recon, const Tensor& target) {
    if (recon.shape() != target.shape()) {
        throw ContractError("mse: reconstruction " + shape_str(recon.shape()) +
                            " does not match target " + shape_str(target.shape()));
    }
    Tensor diff = sub(recon, target);
    return mean(mul(diff, diff));
}

inline Tensor mse_term_masked(const Tensor& recon, const Tensor& target,
                              const MaskingPlan& plan) {
    return mse_term(gather_rows(recon, plan.masked), gather_rows(target, plan.masked));
}

// Summed across modalities per the stage-1 objective.
inline Tensor mse_loss(const Tensor& recon_a, const Tensor& target_a, const Tensor& recon_v,
                       const Tensor& target_v) {
    return add(mse_term(recon_a, target_a), mse_term(recon_v, target_v));
}

// Symmetric InfoNCE over cosine-similarity logits with diagonal positives:
// the average of x->y and y->x cross-entropies. Rows are L2-normalized here.
inline Tensor info_nce(const Tensor& emb_x, const Tensor& emb_y, double temperature) {
    detail::check_rank2(emb_x, "info_nce");
    detail::check_same_shape(emb_x, emb_y, "info_nce");
    const size_t B = emb_x.rows();
    if (B < 2) {
        throw ContractError("info_nce: degenerate batch of " + std::to_string(B) +
                            ", need >= 2 instances");
    }
    if (!(temperature > 0.0)) throw ConfigError("loss.temperature: must be > 0");

    Tensor logits = scale(matmul_nt(l2_normalize_rows(emb_x), l2_normalize_rows(emb_y)),
                          1.0 / temperature);
    std::vector<size_t> diag(B);
    for (size_t i = 0; i < B; ++i) diag[i] = i;
    Tensor ce_xy = scale(sum(log(pick(softmax(logits, 1), diag, diag))),
                         -1.0 / static_cast<double>(B));
    Tensor ce_yx = scale(sum(log(pick(softmax(logits, 0), diag, diag))),
                         -1.0 / static_cast<double>(B));
    return scale(add(ce_xy, ce_yx), 0.5);
}

// One instance of a paired batch: patchified audio, optionally video.
struct BatchInstance {
    PatchGrid audio;
    std::optional<PatchGrid> video;
};

// MAViL stage-1 objective over one batch: two independent masking plans per
// modality (four encoder passes), fusion and diffusion decoding of view 1
// for the MSE terms, inter-modal InfoNCE on (a_emb, v_emb) and intra-modal
// InfoNCE between the two views of each modality. One diffusion timestep is
// drawn per call. Deterministic given (batch, parameters, rng seed).
inline LossBreakdown stage1_objective(const Model& model,
                                      const std::vector<BatchInstance>& batch,
                                      double rho, const DiffusionSchedule* sched,
                                      const LossWeights& weights, Rng& rng) {
    if (batch.empty()) throw ContractError("stage1_objective: empty batch");
    const ModelConfig& cfg = model.config();
    const bool av = cfg.uses_video();
    if (cfg.uses_diffusion() && !sched) {
        throw ContractError("stage1_objective: diffusion mode needs a schedule");
    }
    const size_t B = batch.size();
    const size_t t = sched ? sample_timestep(sched->steps, rng) : 1;

    std::vector<Tensor> a_emb_rows, a_emb2_rows, v_emb_rows, v_emb2_rows;
    Tensor mse_a_sum, mse_v_sum;

    for (size_t i = 0; i < B; ++i) {
        const BatchInstance& inst = batch[i];
        if (av && !inst.video.has_value()) {
            throw ContractError("stage1_objective: instance " + std::to_string(i) +
                                " is missing the video modality");
        }
        const MaskingPlan plan_a1 =
            make_masking_plan(inst.audio.num_patches(), rho, rng.next_u64());
        const MaskingPlan plan_a2 =
            make_masking_plan(inst.audio.num_patches(), rho, rng.next_u64());
        Tensor a_um = model.encode(Modality::audio, inst.audio, plan_a1);
        Tensor a_um2 = model.encode(Modality::audio, inst.audio, plan_a2);
        a_emb_rows.push_back(mean_rows(a_um));
        a_emb2_rows.push_back(mean_rows(a_um2));

        Tensor a_mm;
        if (av) {
            const MaskingPlan plan_v1 =
                make_masking_plan(inst.video->num_patches(), rho, rng.next_u64());
            const MaskingPlan plan_v2 =
                make_masking_plan(inst.video->num_patches(), rho, rng.next_u64());
            Tensor v_um = model.encode(Modality::video, *inst.video, plan_v1);
            Tensor v_um2 = model.encode(Modality::video, *inst.video, plan_v2);
            v_emb_rows.push_back(mean_rows(v_um));
            v_emb2_rows.push_back(mean_rows(v_um2));

            auto [a_mm_i, v_mm_i] = model.fuse(a_um, v_um);
            a_mm = a_mm_i;

            Tensor recon_v = model.decode(Modality::video, v_mm_i, *inst.video, plan_v1, t,
                                          sched, rng.next_u64());
            Tensor term_v = weights.mse_masked_only
                                ? mse_term_masked(recon_v, inst.video->patches, plan_v1)
                                : mse_term(recon_v, inst.video->patches);
            mse_v_sum = mse_v_sum.defined() ? add(mse_v_sum, term_v) : term_v;
        } else {
            a_mm = a_um;
        }

        Tensor recon_a =
            model.decode(Modality::audio, a_mm, inst.audio, plan_a1, t, sched, rng.next_u64());
        Tensor term_a = weights.mse_masked_only
                            ? mse_term_masked(recon_a, inst.audio.patches, plan_a1)
                            : mse_term(recon_a, inst.audio.patches);
        mse_a_sum = mse_a_sum.defined() ? add(mse_a_sum, term_a) : term_a;
    }

    const double inv_B = 1.0 / static_cast<double>(B);
    LossBreakdown out;
    out.weights = weights;

    Tensor total = scale(mse_a_sum, inv_B);
    out.mse_audio = total.value();
    if (av) {
        Tensor mse_v = scale(mse_v_sum, inv_B);
        out.mse_video = mse_v.value();
        total = add(total, mse_v);
    }

    const bool needs_contrastive = weights.lambda_intra > 0.0 || weights.lambda_inter > 0.0;
    if (B < 2) {
        if (needs_contrastive) {
            throw ContractError("stage1_objective: contrastive terms need a batch of >= 2");
        }
        out.total_tensor = total;
        out.total = total.value();
        return out;
    }

    Tensor a_emb = concat_rows(a_emb_rows);
    Tensor a_emb2 = concat_rows(a_emb2_rows);
    Tensor nce_ia = info_nce(a_emb, a_emb2, weights.temperature);
    out.nce_intra_audio = nce_ia.value();
    total = add(total, scale(nce_ia, weights.lambda_intra));

    if (av) {
        Tensor v_emb = concat_rows(v_emb_rows);
        Tensor v_emb2 = concat_rows(v_emb2_rows);
        Tensor nce_iv = info_nce(v_emb, v_emb2, weights.temperature);
        out.nce_intra_video = nce_iv.value();
        total = add(total, scale(nce_iv, weights.lambda_intra));

        Tensor nce_av = info_nce(a_emb, v_emb, weights.temperature);
        out.nce_inter = nce_av.value();
        total = add(total, scale(nce_av, weights.lambda_inter));
    }

    out.total_tensor = total;
    out.total = total.value();
    return out;
}

}  // namespace avmae
