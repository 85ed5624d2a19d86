#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "avmae/synthetic.hpp"

using namespace avmae;

TEST(Synthetic, SameSeedGivesBitIdenticalPairs) {
    SyntheticConfig cfg;
    LatentSpec l1 = make_latent(42, cfg.latent_dim);
    LatentSpec l2 = make_latent(42, cfg.latent_dim);
    ASSERT_EQ(l1.z, l2.z);
    auto [a1, v1] = generate_pair(l1, cfg);
    auto [a2, v2] = generate_pair(l2, cfg);
    for (size_t i = 0; i < a1.size(); ++i) ASSERT_EQ(a1.at(i), a2.at(i));
    for (size_t i = 0; i < v1.size(); ++i) ASSERT_EQ(v1.at(i), v2.at(i));
}

TEST(Synthetic, PerSampleStandardization) {
    SyntheticConfig cfg;
    for (uint64_t seed : {1u, 7u, 99u}) {
        auto [a, v] = generate_pair(make_latent(seed, cfg.latent_dim), cfg);
        for (const Tensor* t : {&a, &v}) {
            double mean = 0.0;
            for (double x : t->data()) mean += x;
            mean /= static_cast<double>(t->size());
            double var = 0.0;
            for (double x : t->data()) var += (x - mean) * (x - mean);
            var /= static_cast<double>(t->size());
            EXPECT_LT(std::abs(mean), 1e-10);
            EXPECT_LT(std::abs(var - 1.0), 1e-8);
        }
    }
}

TEST(Synthetic, SingleAtomZeroNoisePeaksAtCenter) {
    SyntheticConfig cfg;
    cfg.atoms = 1;
    cfg.noise_std = 0.0;
    for (uint64_t seed : {3u, 11u, 29u, 57u}) {
        LatentSpec latent = make_latent(seed, cfg.latent_dim);
        Tensor spec = generate_spectrogram(latent, cfg);
        const auto [tc, fc] = atom_center(latent, cfg, 0);
        size_t best = 0;
        for (size_t i = 1; i < spec.size(); ++i) {
            if (spec.at(i) > spec.at(best)) best = i;
        }
        const double bt = static_cast<double>(best / cfg.audio_freq);
        const double bf = static_cast<double>(best % cfg.audio_freq);
        EXPECT_LE(std::abs(bt - tc), 0.5 + 1e-9) << "seed " << seed;
        EXPECT_LE(std::abs(bf - fc), 0.5 + 1e-9) << "seed " << seed;
    }
}

TEST(Synthetic, SharedLatentTiesModalitiesTogether) {
    // Audio time-centroid and video x-centroid both follow z: across 100
    // pairs, matched modalities correlate strongly; mismatched pairs do not.
    SyntheticConfig cfg;
    const size_t n = 100;
    std::vector<double> audio_stat(n), video_stat(n);
    for (size_t i = 0; i < n; ++i) {
        LatentSpec latent = make_latent(1000 + i, cfg.latent_dim);
        auto [a, v] = generate_pair(latent, cfg);
        // Energy-weighted time centroid of the spectrogram.
        double wsum = 0.0, tsum = 0.0;
        for (size_t t = 0; t < cfg.audio_time; ++t) {
            for (size_t f = 0; f < cfg.audio_freq; ++f) {
                const double e = a.at(t, f) * a.at(t, f);
                wsum += e;
                tsum += e * static_cast<double>(t);
            }
        }
        audio_stat[i] = tsum / wsum;
        // Intensity-weighted x centroid of the first frame.
        double xsum = 0.0, isum = 0.0;
        for (size_t y = 0; y < cfg.video_height; ++y) {
            for (size_t x = 0; x < cfg.video_width; ++x) {
                const double e = v.data()[y * cfg.video_width + x] + 3.0;  // shift positive
                isum += e;
                xsum += e * static_cast<double>(x);
            }
        }
        video_stat[i] = xsum / isum;
    }
    auto pearson = [&](const std::vector<double>& xs, const std::vector<double>& ys) {
        double mx = 0, my = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            mx += xs[i];
            my += ys[i];
        }
        mx /= xs.size();
        my /= ys.size();
        double cxy = 0, cxx = 0, cyy = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            cxy += (xs[i] - mx) * (ys[i] - my);
            cxx += (xs[i] - mx) * (xs[i] - mx);
            cyy += (ys[i] - my) * (ys[i] - my);
        }
        return cxy / std::sqrt(cxx * cyy);
    };
    const double matched = pearson(audio_stat, video_stat);
    std::vector<double> shifted(video_stat.begin() + 1, video_stat.end());
    shifted.push_back(video_stat.front());  // mismatch every pair
    const double mismatched = pearson(audio_stat, shifted);
    EXPECT_GT(matched, 0.5);
    EXPECT_GT(matched, std::abs(mismatched) + 0.2);
}

TEST(Synthetic, DistinctSeedsGiveDistinctPairs) {
    SyntheticConfig cfg;
    auto [a1, v1] = generate_pair(make_latent(5, cfg.latent_dim), cfg);
    auto [a2, v2] = generate_pair(make_latent(6, cfg.latent_dim), cfg);
    double diff = 0.0;
    for (size_t i = 0; i < a1.size(); ++i) diff += std::abs(a1.at(i) - a2.at(i));
    EXPECT_GT(diff, 1.0);
}
