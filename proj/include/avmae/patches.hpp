#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/rng.hpp"
#include "avmae/tensor.hpp"

namespace avmae {

enum class Modality { audio, video };

inline const char* modality_name(Modality m) {
    return m == Modality::audio ? "audio" : "video";
}

// Nearest-integer rounding with ties to even.
inline long long round_half_to_even(double x) {
    const double fl = std::floor(x);
    const double frac = x - fl;
    if (frac > 0.5) return static_cast<long long>(fl) + 1;
    if (frac < 0.5) return static_cast<long long>(fl);
    const long long lo = static_cast<long long>(fl);
    return (lo % 2 == 0) ? lo : lo + 1;
}

// A patchified spectrogram or video clip. patches holds one flattened patch
// per row, ordered row-major over the grid (time-major for audio,
// temporal-major for video). Patch sizes are kept so unpatchify can invert
// exactly.
struct PatchGrid {
    Modality modality = Modality::audio;
    std::vector<size_t> grid_dims;    // (time, freq) or (temporal, h, w)
    std::vector<size_t> patch_sizes;  // per grid axis
    size_t channels = 1;              // video only; folded into patch_dim
    Tensor patches;                   // [num_patches x patch_dim]

    size_t num_patches() const { return patches.rows(); }
    size_t patch_dim() const { return patches.cols(); }
};

namespace detail {

inline void check_divisible(size_t extent, size_t patch, const char* axis) {
    if (patch == 0 || extent % patch != 0) {
        throw GeometryError(std::string("patchify: axis '") + axis + "' of size " +
                            std::to_string(extent) + " is not divisible by patch size " +
                            std::to_string(patch));
    }
}

}  // namespace detail

// Spectrogram [T x F] -> non-overlapping (pt x pf) patches on a
// (T/pt) x (F/pf) grid, flattened row-major within each patch.
inline PatchGrid patchify_audio(const Tensor& spec, size_t pt, size_t pf) {
    if (spec.rank() != 2) {
        throw GeometryError("patchify_audio: expected rank-2 spectrogram, got " +
                            shape_str(spec.shape()));
    }
    const size_t T = spec.shape()[0], F = spec.shape()[1];
    detail::check_divisible(T, pt, "time");
    detail::check_divisible(F, pf, "freq");
    const size_t gt = T / pt, gf = F / pf;
    const size_t dim = pt * pf;
    Tensor patches = Tensor::zeros({gt * gf, dim});
    for (size_t a = 0; a < gt; ++a) {
        for (size_t b = 0; b < gf; ++b) {
            double* out = patches.data().data() + (a * gf + b) * dim;
            for (size_t i = 0; i < pt; ++i) {
                for (size_t j = 0; j < pf; ++j) {
                    out[i * pf + j] = spec.data()[(a * pt + i) * F + (b * pf + j)];
                }
            }
        }
    }
    PatchGrid g;
    g.modality = Modality::audio;
    g.grid_dims = {gt, gf};
    g.patch_sizes = {pt, pf};
    g.patches = std::move(patches);
    return g;
}

inline Tensor unpatchify_audio(const PatchGrid& g) {
    const size_t gt = g.grid_dims[0], gf = g.grid_dims[1];
    const size_t pt = g.patch_sizes[0], pf = g.patch_sizes[1];
    const size_t T = gt * pt, F = gf * pf;
    Tensor spec = Tensor::zeros({T, F});
    for (size_t a = 0; a < gt; ++a) {
        for (size_t b = 0; b < gf; ++b) {
            const double* in = g.patches.data().data() + (a * gf + b) * (pt * pf);
            for (size_t i = 0; i < pt; ++i) {
                for (size_t j = 0; j < pf; ++j) {
                    spec.data()[(a * pt + i) * F + (b * pf + j)] = in[i * pf + j];
                }
            }
        }
    }
    return spec;
}

// Clip [frames x H x W x C] -> (t_patch x ph x pw) tubelets over all
// channels, grid (frames/t_patch) x (H/ph) x (W/pw), flattened row-major
// over (t, y, x, c) within each patch.
inline PatchGrid patchify_video(const Tensor& clip, size_t t_patch, size_t ph, size_t pw) {
    if (clip.rank() != 4) {
        throw GeometryError("patchify_video: expected rank-4 clip [frames x H x W x C], got " +
                            shape_str(clip.shape()));
    }
    const size_t frames = clip.shape()[0], H = clip.shape()[1], W = clip.shape()[2],
                 C = clip.shape()[3];
    detail::check_divisible(frames, t_patch, "frames");
    detail::check_divisible(H, ph, "height");
    detail::check_divisible(W, pw, "width");
    const size_t gt = frames / t_patch, gh = H / ph, gw = W / pw;
    const size_t dim = t_patch * ph * pw * C;
    Tensor patches = Tensor::zeros({gt * gh * gw, dim});
    const double* src = clip.data().data();
    for (size_t a = 0; a < gt; ++a) {
        for (size_t b = 0; b < gh; ++b) {
            for (size_t c = 0; c < gw; ++c) {
                double* out = patches.data().data() + ((a * gh + b) * gw + c) * dim;
                size_t k = 0;
                for (size_t t = 0; t < t_patch; ++t) {
                    for (size_t y = 0; y < ph; ++y) {
                        for (size_t x = 0; x < pw; ++x) {
                            const size_t base =
                                (((a * t_patch + t) * H + (b * ph + y)) * W + (c * pw + x)) * C;
                            for (size_t ch = 0; ch < C; ++ch) out[k++] = src[base + ch];
                        }
                    }
                }
            }
        }
    }
    PatchGrid g;
    g.modality = Modality::video;
    g.grid_dims = {gt, gh, gw};
    g.patch_sizes = {t_patch, ph, pw};
    g.channels = C;
    g.patches = std::move(patches);
    return g;
}

inline Tensor unpatchify_video(const PatchGrid& g) {
    const size_t gt = g.grid_dims[0], gh = g.grid_dims[1], gw = g.grid_dims[2];
    const size_t tp = g.patch_sizes[0], ph = g.patch_sizes[1], pw = g.patch_sizes[2];
    const size_t C = g.channels;
    const size_t frames = gt * tp, H = gh * ph, W = gw * pw;
    Tensor clip = Tensor::zeros({frames, H, W, C});
    double* dst = clip.data().data();
    const size_t dim = tp * ph * pw * C;
    for (size_t a = 0; a < gt; ++a) {
        for (size_t b = 0; b < gh; ++b) {
            for (size_t c = 0; c < gw; ++c) {
                const double* in = g.patches.data().data() + ((a * gh + b) * gw + c) * dim;
                size_t k = 0;
                for (size_t t = 0; t < tp; ++t) {
                    for (size_t y = 0; y < ph; ++y) {
                        for (size_t x = 0; x < pw; ++x) {
                            const size_t base =
                                (((a * tp + t) * H + (b * ph + y)) * W + (c * pw + x)) * C;
                            for (size_t ch = 0; ch < C; ++ch) dst[base + ch] = in[k++];
                        }
                    }
                }
            }
        }
    }
    return clip;
}

// Partition of {0..M-1} into visible and masked index sets, with the inverse
// permutation that restores original order from [visible || masked].
struct MaskingPlan {
    size_t total = 0;
    double masked_ratio = 0.0;
    std::vector<size_t> visible;
    std::vector<size_t> masked;
    std::vector<size_t> restore_permutation;

    size_t visible_count() const { return visible.size(); }
    size_t masked_count() const { return masked.size(); }

    // Build from an explicit partition (test fixtures, compatibility paths).
    static MaskingPlan from_partition(std::vector<size_t> visible,
                                      std::vector<size_t> masked) {
        MaskingPlan p;
        p.total = visible.size() + masked.size();
        p.visible = std::move(visible);
        p.masked = std::move(masked);
        p.masked_ratio = static_cast<double>(p.masked.size()) / static_cast<double>(p.total);
        std::vector<char> seen(p.total, 0);
        p.restore_permutation.assign(p.total, 0);
        size_t pos = 0;
        for (size_t i : p.visible) {
            if (i >= p.total || seen[i]) throw PlanError("from_partition: bad visible index");
            seen[i] = 1;
            p.restore_permutation[i] = pos++;
        }
        for (size_t i : p.masked) {
            if (i >= p.total || seen[i]) throw PlanError("from_partition: bad masked index");
            seen[i] = 1;
            p.restore_permutation[i] = pos++;
        }
        return p;
    }
};

// Uniform-random plan keeping floor((1-rho)*M) visible tokens, rounded to
// the nearest integer with ties to even. Deterministic given the seed.
inline MaskingPlan make_masking_plan(size_t total, double rho, uint64_t rng_seed) {
    if (total < 1) throw PlanError("make_masking_plan: need at least one patch");
    if (!(rho > 0.0 && rho < 1.0)) {
        throw PlanError("make_masking_plan: masking ratio must lie in (0,1), got " +
                        std::to_string(rho));
    }
    const long long visible_count =
        round_half_to_even((1.0 - rho) * static_cast<double>(total));
    if (visible_count <= 0 || visible_count >= static_cast<long long>(total)) {
        throw PlanError("make_masking_plan: degenerate plan, " +
                        std::to_string(visible_count) + " visible of " +
                        std::to_string(total));
    }
    std::vector<size_t> perm(total);
    for (size_t i = 0; i < total; ++i) perm[i] = i;
    Rng rng(rng_seed);
    rng.shuffle(perm);

    MaskingPlan p;
    p.total = total;
    p.masked_ratio = rho;
    p.visible.assign(perm.begin(), perm.begin() + visible_count);
    p.masked.assign(perm.begin() + visible_count, perm.end());
    p.restore_permutation.assign(total, 0);
    for (size_t pos = 0; pos < total; ++pos) p.restore_permutation[perm[pos]] = pos;
    return p;
}

inline void check_plan_matches(const MaskingPlan& plan, const PatchGrid& grid) {
    if (plan.total != grid.num_patches()) {
        throw PlanError("masking plan covers " + std::to_string(plan.total) +
                        " patches but grid has " + std::to_string(grid.num_patches()));
    }
}

inline Tensor gather_visible(const PatchGrid& grid, const MaskingPlan& plan) {
    check_plan_matches(plan, grid);
    return gather_rows(grid.patches, plan.visible);
}

inline Tensor gather_masked(const PatchGrid& grid, const MaskingPlan& plan) {
    check_plan_matches(plan, grid);
    return gather_rows(grid.patches, plan.masked);
}

// Recombine per-position rows back into original patch order. Inverse of
// (gather_visible, gather_masked); differentiable through both streams.
inline Tensor restore_order(const Tensor& visible_embeds, const Tensor& masked_embeds,
                            const MaskingPlan& plan) {
    if (visible_embeds.rows() != plan.visible_count() ||
        masked_embeds.rows() != plan.masked_count()) {
        throw PlanError("restore_order: row counts (" +
                        std::to_string(visible_embeds.rows()) + ", " +
                        std::to_string(masked_embeds.rows()) +
                        ") do not match plan (" + std::to_string(plan.visible_count()) +
                        ", " + std::to_string(plan.masked_count()) + ")");
    }
    if (visible_embeds.cols() != masked_embeds.cols()) {
        throw ShapeError("restore_order: embedding widths differ, " +
                         shape_str(visible_embeds.shape()) + " vs " +
                         shape_str(masked_embeds.shape()));
    }
    Tensor stacked = concat_rows({visible_embeds, masked_embeds});
    return gather_rows(stacked, plan.restore_permutation);
}

}  // namespace avmae
