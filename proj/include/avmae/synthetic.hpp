#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/rng.hpp"
#include "avmae/tensor.hpp"

namespace avmae {

// Low-dimensional latent shared by both modalities of one synthetic pair.
// The audio atoms and the video blob trajectory are deterministic functions
// of the same z, which is what makes matched pairs contrastive positives.
struct LatentSpec {
    uint64_t seed = 0;
    std::vector<double> z;
};

struct SyntheticConfig {
    size_t audio_time = 64;
    size_t audio_freq = 64;
    size_t video_frames = 4;
    size_t video_height = 32;
    size_t video_width = 32;
    size_t atoms = 3;          // Gabor atoms summed into the spectrogram
    double noise_std = 0.05;
    size_t latent_dim = 6;
};

inline LatentSpec make_latent(uint64_t seed, size_t latent_dim) {
    LatentSpec spec;
    spec.seed = seed;
    Rng rng(seed);
    spec.z.resize(latent_dim);
    for (double& v : spec.z) v = rng.normal();
    return spec;
}

namespace synth_detail {

inline double squash(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Standardize to zero mean / unit variance in place.
inline void standardize(Tensor& t) {
    double mean = 0.0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (double v : t.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.size());
    if (!(var > 0.0)) throw NumericError("synthetic sample has zero variance");
    const double inv_std = 1.0 / std::sqrt(var);
    for (size_t i = 0; i < t.size(); ++i) t.at(i) = (t.at(i) - mean) * inv_std;
}

}  // namespace synth_detail

// Time-frequency center of atom k in grid units (before discretization).
// Atom 0 shares its time center with the video blob's horizontal start, so
// the modalities stay statistically tied through z.
inline std::pair<double, double> atom_center(const LatentSpec& latent,
                                             const SyntheticConfig& cfg, size_t k) {
    const size_t dz = latent.z.size();
    const double zt = latent.z[(2 * k) % dz];
    const double zf = latent.z[(2 * k + 1) % dz];
    const double t_center =
        static_cast<double>(cfg.audio_time) * (0.2 + 0.6 * synth_detail::squash(zt));
    const double f_center =
        static_cast<double>(cfg.audio_freq) * (0.2 + 0.6 * synth_detail::squash(zf));
    return {t_center, f_center};
}

// Spectrogram: sum of Gabor atoms (Gaussian envelope, cosine modulation in
// time) plus seeded white noise, standardized per sample.
inline Tensor generate_spectrogram(const LatentSpec& latent, const SyntheticConfig& cfg) {
    const size_t T = cfg.audio_time, F = cfg.audio_freq;
    Tensor spec = Tensor::zeros({T, F});
    const double sigma_t = 0.08 * static_cast<double>(T);
    const double sigma_f = 0.08 * static_cast<double>(F);
    const size_t dz = latent.z.size();
    for (size_t k = 0; k < cfg.atoms; ++k) {
        const auto [tc, fc] = atom_center(latent, cfg, k);
        const double omega =
            0.05 + 0.15 * synth_detail::squash(latent.z[(k + 2) % dz]);  // cycles per bin
        for (size_t t = 0; t < T; ++t) {
            const double dt = static_cast<double>(t) - tc;
            const double env_t = std::exp(-0.5 * dt * dt / (sigma_t * sigma_t));
            if (env_t < 1e-12) continue;
            for (size_t f = 0; f < F; ++f) {
                const double df = static_cast<double>(f) - fc;
                const double env = env_t * std::exp(-0.5 * df * df / (sigma_f * sigma_f));
                spec.at(t, f) += env * std::cos(2.0 * std::numbers::pi * omega * dt);
            }
        }
    }
    if (cfg.noise_std > 0.0) {
        Rng rng(Rng(latent.seed).fork(0xa0d10));
        for (size_t i = 0; i < spec.size(); ++i) spec.at(i) += cfg.noise_std * rng.normal();
    }
    synth_detail::standardize(spec);
    return spec;
}

// Blob center (x, y) in pixels at frame f, linear trajectory from z.
inline std::pair<double, double> blob_center(const LatentSpec& latent,
                                             const SyntheticConfig& cfg, size_t frame) {
    const size_t dz = latent.z.size();
    const double W = static_cast<double>(cfg.video_width);
    const double H = static_cast<double>(cfg.video_height);
    const double x0 = W * (0.2 + 0.6 * synth_detail::squash(latent.z[0]));
    const double y0 = H * (0.2 + 0.6 * synth_detail::squash(latent.z[1 % dz]));
    const double frames = static_cast<double>(cfg.video_frames);
    const double vx = 0.5 * W * (synth_detail::squash(latent.z[2 % dz]) - 0.5) / frames;
    const double vy = 0.5 * H * (synth_detail::squash(latent.z[3 % dz]) - 0.5) / frames;
    const double fd = static_cast<double>(frame);
    return {x0 + vx * fd, y0 + vy * fd};
}

// Grayscale clip [frames x H x W x 1]: a Gaussian blob moving along the
// z-derived trajectory, plus seeded noise, standardized per sample.
inline Tensor generate_clip(const LatentSpec& latent, const SyntheticConfig& cfg) {
    const size_t N = cfg.video_frames, H = cfg.video_height, W = cfg.video_width;
    Tensor clip = Tensor::zeros({N, H, W, 1});
    const double sigma = 0.15 * static_cast<double>(std::min(H, W));
    for (size_t f = 0; f < N; ++f) {
        const auto [cx, cy] = blob_center(latent, cfg, f);
        for (size_t y = 0; y < H; ++y) {
            for (size_t x = 0; x < W; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                clip.data()[(f * H + y) * W + x] =
                    std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
            }
        }
    }
    if (cfg.noise_std > 0.0) {
        Rng rng(Rng(latent.seed).fork(0x71de0));
        for (size_t i = 0; i < clip.size(); ++i) clip.at(i) += cfg.noise_std * rng.normal();
    }
    synth_detail::standardize(clip);
    return clip;
}

inline std::pair<Tensor, Tensor> generate_pair(const LatentSpec& latent,
                                               const SyntheticConfig& cfg) {
    return {generate_spectrogram(latent, cfg), generate_clip(latent, cfg)};
}

}  // namespace avmae
