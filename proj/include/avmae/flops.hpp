#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/model.hpp"
#include "avmae/patches.hpp"
#include "avmae/schedulers.hpp"

namespace avmae {

// Analytic cost model for one pre-training run. Conventions:
//   - one multiply-accumulate = 2 FLOPS; a linear layer [L x in] -> [L x out]
//     costs 2*L*in*out + L*out forward;
//   - per-element first-order constants: layernorm 8, softmax 5, gelu 10,
//     residual/positional adds 1, diffusion noising 3;
//   - a training step costs forward + backward, with backward = 2x forward
//     except through layers whose input needs no gradient (patch embeddings
//     and diffused-token projections consume leaf data), where backward
//     only produces weight gradients and costs 1x forward;
//   - counts are split into terms linear in sequence length and the
//     quadratic attention terms (scores, weights, weighted sum).
struct FlopsCount {
    double linear = 0.0;
    double quadratic = 0.0;

    double total() const { return linear + quadratic; }

    FlopsCount& operator+=(const FlopsCount& o) {
        linear += o.linear;
        quadratic += o.quadratic;
        return *this;
    }
    friend FlopsCount operator+(FlopsCount a, const FlopsCount& b) { return a += b; }
    friend FlopsCount operator*(FlopsCount a, double s) {
        a.linear *= s;
        a.quadratic *= s;
        return a;
    }
};

namespace flops_detail {

constexpr double kLayerNormPerElem = 8.0;
constexpr double kSoftmaxPerElem = 5.0;
constexpr double kGeluPerElem = 10.0;
constexpr double kAddPerElem = 1.0;
constexpr double kNoisePerElem = 3.0;

constexpr double kBackwardFull = 3.0;      // forward + 2x backward
constexpr double kBackwardLeafIn = 2.0;    // forward + weight-grad backward
constexpr double kForwardOnly = 1.0;

inline FlopsCount linear_layer(double L, double din, double dout) {
    return {2.0 * L * din * dout + L * dout, 0.0};
}

inline FlopsCount layer_norm(double L, double d) {
    return {kLayerNormPerElem * L * d, 0.0};
}

}  // namespace flops_detail

// Forward cost of one pre-norm transformer block. Self attention requires
// seq_q == seq_kv; local windows cover seq_q in chunks of `window` with a
// shorter trailing remainder; cross attention runs the MLP on the query
// stream only and adds a key/value LayerNorm.
inline FlopsCount flops_transformer_block(size_t seq_q, size_t seq_kv, size_t dim,
                                          size_t heads, AttentionKind kind,
                                          size_t window = 0) {
    using namespace flops_detail;
    if (seq_q == 0 || seq_kv == 0 || dim == 0 || heads == 0) {
        throw ConfigError("flops_transformer_block: dimensions must be positive");
    }
    if (kind == AttentionKind::self_attention && seq_q != seq_kv) {
        throw ConfigError("flops_transformer_block: self attention needs seq_q == seq_kv");
    }
    if (kind == AttentionKind::local_window && window == 0) {
        throw ConfigError("flops_transformer_block: local window needs window >= 1");
    }
    const double Q = static_cast<double>(seq_q);
    const double K = static_cast<double>(seq_kv);
    const double d = static_cast<double>(dim);
    const double h = static_cast<double>(heads);

    // Score-matrix area: Q*K for full attention, sum of w_i^2 for windows.
    double area = Q * K;
    if (kind == AttentionKind::local_window) {
        area = 0.0;
        size_t remaining = seq_q;
        while (remaining > 0) {
            const size_t w = std::min(window, remaining);
            area += static_cast<double>(w) * static_cast<double>(w);
            remaining -= w;
        }
    }

    FlopsCount c;
    c += layer_norm(Q, d);                         // ln1 on queries
    if (kind == AttentionKind::cross_attention) c += layer_norm(K, d);  // ln_kv
    c += linear_layer(Q, d, d);                    // q projection
    c += linear_layer(K, d, d) * 2.0;              // k and v projections
    c.quadratic += 2.0 * area * d;                 // scores
    c.quadratic += area;                           // 1/sqrt(dh) scaling
    c.quadratic += kSoftmaxPerElem * h * area;     // softmax over scores
    c.quadratic += 2.0 * area * d;                 // weighted value sum
    c += linear_layer(Q, d, d);                    // output projection
    c.linear += kAddPerElem * Q * d;               // residual 1
    c += layer_norm(Q, d);                         // ln2
    c += linear_layer(Q, d, 4.0 * d);              // mlp fc1
    c.linear += kGeluPerElem * Q * 4.0 * d;        // gelu
    c += linear_layer(Q, 4.0 * d, d);              // mlp fc2
    c.linear += kAddPerElem * Q * d;               // residual 2
    return c;
}

// Per-module, per-sample training cost at one masking ratio.
struct ModuleFlops {
    FlopsCount audio_encoder;
    FlopsCount audio_decoder;
    FlopsCount video_encoder;
    FlopsCount video_decoder;
    FlopsCount fusion_encoder;
    FlopsCount projections;  // loss path: pooling, normalization, logits, mse
    bool has_video = false;

    double total() const {
        return audio_encoder.total() + audio_decoder.total() + video_encoder.total() +
               video_decoder.total() + fusion_encoder.total() + projections.total();
    }
    ModuleFlops& operator+=(const ModuleFlops& o) {
        audio_encoder += o.audio_encoder;
        audio_decoder += o.audio_decoder;
        video_encoder += o.video_encoder;
        video_decoder += o.video_decoder;
        fusion_encoder += o.fusion_encoder;
        projections += o.projections;
        return *this;
    }
    ModuleFlops& scale(double s) {
        audio_encoder = audio_encoder * s;
        audio_decoder = audio_decoder * s;
        video_encoder = video_encoder * s;
        video_decoder = video_decoder * s;
        fusion_encoder = fusion_encoder * s;
        projections = projections * s;
        return *this;
    }
};

// Full-run workload: model shapes plus schedule and dataset bookkeeping.
struct WorkloadSpec {
    ModelConfig model;
    CurriculumSchedule curriculum;
    size_t dataset_size = 0;
    size_t base_batch = 1;
    bool adaptive_batching = false;
    // Encoder forward passes per step summed over modalities (two masked
    // views of each modality for the contrastive terms).
    size_t contrastive_passes = 4;

    size_t epochs() const { return curriculum.total_epochs; }
    size_t views() const {
        const size_t modalities = model.uses_video() ? 2 : 1;
        if (contrastive_passes % modalities != 0) {
            throw ConfigError("flops.contrastive_passes: must divide evenly across " +
                              std::to_string(modalities) + " modalities");
        }
        return contrastive_passes / modalities;
    }
};

namespace flops_detail {

inline FlopsCount encoder_per_pass(const GridSpec& grid, size_t visible, size_t dim,
                                   size_t n_blocks, size_t heads, bool project_then_mask) {
    const double V = static_cast<double>(visible);
    const double M = static_cast<double>(grid.num_patches());
    const double p = static_cast<double>(grid.patch_dim);
    const double d = static_cast<double>(dim);
    FlopsCount c;
    // Patch embedding consumes leaf data: no input gradient on backward.
    c += linear_layer(project_then_mask ? M : V, p, d) * kBackwardLeafIn;
    c.linear += kAddPerElem * V * d * kBackwardFull;  // positional add
    FlopsCount blocks;
    for (size_t b = 0; b < n_blocks; ++b) {
        blocks += flops_transformer_block(visible, visible, dim, heads,
                                          AttentionKind::self_attention);
    }
    c += blocks * kBackwardFull;
    c += layer_norm(V, d) * kBackwardFull;
    return c;
}

inline FlopsCount decoder_per_pass(const GridSpec& grid, size_t visible, size_t enc_dim,
                                   size_t dec_dim, size_t n_blocks, size_t heads,
                                   AttentionKind kind, size_t window, bool diffusion,
                                   ModelConfig::CrossDirection direction) {
    const size_t M = grid.num_patches();
    const size_t masked = M - visible;
    const double Vd = static_cast<double>(visible);
    const double Md = static_cast<double>(M);
    const double maskedd = static_cast<double>(masked);
    const double p = static_cast<double>(grid.patch_dim);
    const double dd = static_cast<double>(dec_dim);

    FlopsCount c;
    c += linear_layer(Vd, static_cast<double>(enc_dim), dd) * kBackwardFull;  // input proj
    if (diffusion) {
        c.linear += kNoisePerElem * maskedd * p * kForwardOnly;  // x_t, gradient-free
        c += linear_layer(maskedd, p, dd) * kBackwardLeafIn;     // diffused-token proj
    }
    c.linear += kAddPerElem * Md * dd * kBackwardFull;  // positional adds

    FlopsCount blocks;
    double final_ln_rows = Md;
    if (kind == AttentionKind::cross_attention) {
        const size_t q = direction == ModelConfig::CrossDirection::masked_queries ? masked
                                                                                  : visible;
        const size_t kv = M - q;
        for (size_t b = 0; b < n_blocks; ++b) {
            blocks += flops_transformer_block(q, kv, dec_dim, heads, kind);
        }
        final_ln_rows = static_cast<double>(q);
    } else {
        for (size_t b = 0; b < n_blocks; ++b) {
            blocks += flops_transformer_block(M, M, dec_dim, heads, kind, window);
        }
    }
    c += blocks * kBackwardFull;
    c += layer_norm(final_ln_rows, dd) * kBackwardFull;
    c += linear_layer(Md, dd, p) * kBackwardFull;  // reconstruction head
    return c;
}

// Loss-path cost shared per sample: instance pooling and the MSE terms.
inline FlopsCount loss_path_per_sample(const WorkloadSpec& spec, size_t va, size_t vv) {
    const ModelConfig& m = spec.model;
    const double d = static_cast<double>(m.enc_dim);
    FlopsCount c;
    const double views = static_cast<double>(spec.views());
    c.linear += static_cast<double>(va) * d * views * kBackwardFull;  // audio pooling
    c.linear +=
        3.0 * static_cast<double>(m.audio.num_patches()) * static_cast<double>(m.audio.patch_dim) *
        kBackwardFull;  // audio mse
    if (m.uses_video()) {
        c.linear += static_cast<double>(vv) * d * views * kBackwardFull;
        c.linear += 3.0 * static_cast<double>(m.video.num_patches()) *
                    static_cast<double>(m.video.patch_dim) * kBackwardFull;
    }
    return c;
}

// Contrastive logits cost for one batch of size B: row normalization plus
// the B x B similarity matrix and softmaxes, per InfoNCE term.
inline FlopsCount nce_per_batch(const WorkloadSpec& spec, size_t batch) {
    const ModelConfig& m = spec.model;
    const double B = static_cast<double>(batch);
    const double d = static_cast<double>(m.enc_dim);
    const size_t terms = m.uses_video() ? 3 : 1;  // inter + intra per modality
    FlopsCount one;
    one.linear += 2.0 * 3.0 * B * d;              // two L2 normalizations
    one.linear += 2.0 * B * B * d + B * B;        // logits matmul + temperature
    one.linear += 2.0 * kSoftmaxPerElem * B * B;  // both softmax directions
    one.linear += 6.0 * B;                        // log-picks and reduction
    return one * (static_cast<double>(terms) * kBackwardFull);
}

}  // namespace flops_detail

inline size_t visible_count_at(size_t patches, double rho) {
    return static_cast<size_t>(round_half_to_even((1.0 - rho) * static_cast<double>(patches)));
}

// Training cost of one sample at masking ratio rho (loss-path included;
// per-batch contrastive logits excluded, see flops_pretraining).
inline ModuleFlops flops_per_sample(const WorkloadSpec& spec, double rho) {
    using namespace flops_detail;
    const ModelConfig& m = spec.model;
    const double views = static_cast<double>(spec.views());
    ModuleFlops out;
    out.has_video = m.uses_video();

    const size_t va = visible_count_at(m.audio.num_patches(), rho);
    out.audio_encoder = encoder_per_pass(m.audio, va, m.enc_dim, m.enc_blocks, m.enc_heads,
                                         m.project_then_mask) *
                        views;
    out.audio_decoder = decoder_per_pass(m.audio, va, m.enc_dim, m.dec_dim, m.dec_blocks,
                                         m.dec_heads, m.audio_decoder_attention,
                                         m.decoder_window, m.uses_diffusion(),
                                         m.cross_attention_direction);
    size_t vv = 0;
    if (m.uses_video()) {
        vv = visible_count_at(m.video.num_patches(), rho);
        out.video_encoder = encoder_per_pass(m.video, vv, m.enc_dim, m.enc_blocks,
                                             m.enc_heads, m.project_then_mask) *
                            views;
        out.video_decoder = decoder_per_pass(m.video, vv, m.enc_dim, m.dec_dim, m.dec_blocks,
                                             m.dec_heads, m.video_decoder_attention, 0,
                                             m.uses_diffusion(), m.cross_attention_direction);
        FlopsCount fusion;
        for (size_t b = 0; b < m.fusion_blocks; ++b) {
            fusion += flops_transformer_block(va + vv, va + vv, m.enc_dim, m.fusion_heads,
                                              AttentionKind::self_attention);
        }
        fusion += layer_norm(static_cast<double>(va + vv), static_cast<double>(m.enc_dim));
        out.fusion_encoder = fusion * flops_detail::kBackwardFull;
    }
    out.projections = loss_path_per_sample(spec, va, vv);
    return out;
}

// Batch sizes actually run in one epoch: always ceil(D/B) steps. A trailing
// remainder of one sample borrows from the previous batch so no step sees a
// single-sample batch; for B == 2 and odd datasets that is impossible while
// keeping the step count, so the singleton stays (the trainer rejects such
// configurations when contrastive terms are active).
inline std::vector<size_t> epoch_batch_sizes(size_t dataset, size_t batch) {
    std::vector<size_t> sizes;
    if (batch >= dataset) {
        sizes.push_back(dataset);
        return sizes;
    }
    const size_t full = dataset / batch;
    const size_t rem = dataset % batch;
    sizes.assign(full, batch);
    if (rem == 1 && batch >= 3) {
        sizes.back() = batch - 1;
        sizes.push_back(2);
    } else if (rem > 0) {
        sizes.push_back(rem);
    }
    return sizes;
}

// Contrastive-logits cost of one batch (the only batch-size-dependent term).
inline FlopsCount flops_contrastive_batch(const WorkloadSpec& spec, size_t batch) {
    return flops_detail::nce_per_batch(spec, batch);
}

struct FlopsReport {
    ModuleFlops modules;              // totals over the whole run
    std::vector<double> per_epoch;    // per-epoch totals
    double total = 0.0;
    size_t epochs = 0;
    size_t dataset_size = 0;
    bool has_video = false;
};

// Integrates per-sample costs over the masking-ratio schedule. Totals are
// invariant to adaptive batching except for the (tiny) B x B contrastive
// logits terms, which follow the actual batch sequence.
inline FlopsReport flops_pretraining(const WorkloadSpec& spec) {
    spec.model.validate();
    if (spec.dataset_size == 0) throw ConfigError("flops.dataset_size: must be >= 1");
    if (spec.base_batch == 0) throw ConfigError("flops.base_batch: must be >= 1");

    FlopsReport report;
    report.epochs = spec.epochs();
    report.dataset_size = spec.dataset_size;
    report.has_video = spec.model.uses_video();
    BatchPlan plan =
        BatchPlan::make(spec.curriculum, spec.base_batch, spec.dataset_size,
                        spec.adaptive_batching);

    for (size_t e = 0; e < spec.epochs(); ++e) {
        const double rho_e = masking_ratio_at(spec.curriculum, e);
        ModuleFlops per_sample = flops_per_sample(spec, rho_e);
        ModuleFlops epoch = per_sample;
        epoch.scale(static_cast<double>(spec.dataset_size));
        for (size_t b : epoch_batch_sizes(spec.dataset_size, batch_size_at(plan, e))) {
            epoch.projections += flops_detail::nce_per_batch(spec, b);
        }
        report.per_epoch.push_back(epoch.total());
        report.modules += epoch;
    }
    report.total = report.modules.total();
    return report;
}

struct FlopsRatios {
    double audio_encoder = 0.0;
    double audio_decoder = 0.0;
    double video_encoder = 0.0;
    double video_decoder = 0.0;
    double fusion_encoder = 0.0;
    double projections = 0.0;
    double total = 0.0;
};

// Elementwise module ratios candidate/baseline. Mismatched module
// taxonomies (audio-only vs audio-video) cannot be compared.
inline FlopsRatios flops_compare(const FlopsReport& report, const FlopsReport& baseline) {
    if (report.has_video != baseline.has_video) {
        throw ContractError("flops_compare: module taxonomies differ "
                            "(audio-only vs audio-video reports)");
    }
    auto ratio = [](const FlopsCount& a, const FlopsCount& b) {
        if (b.total() == 0.0) return 0.0;
        return a.total() / b.total();
    };
    FlopsRatios r;
    r.audio_encoder = ratio(report.modules.audio_encoder, baseline.modules.audio_encoder);
    r.audio_decoder = ratio(report.modules.audio_decoder, baseline.modules.audio_decoder);
    if (report.has_video) {
        r.video_encoder = ratio(report.modules.video_encoder, baseline.modules.video_encoder);
        r.video_decoder = ratio(report.modules.video_decoder, baseline.modules.video_decoder);
        r.fusion_encoder =
            ratio(report.modules.fusion_encoder, baseline.modules.fusion_encoder);
    }
    r.projections = ratio(report.modules.projections, baseline.modules.projections);
    r.total = report.total / baseline.total;
    return r;
}

}  // namespace avmae
