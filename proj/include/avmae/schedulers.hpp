#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/patches.hpp"

namespace avmae {

// Per-epoch masking ratio trajectory. The linear kind interpolates so that
// rho_0 = rho1 and rho_{E-1} = rho2 exactly; ratios are piecewise-constant
// within an epoch.
struct CurriculumSchedule {
    enum class Kind { fixed, linear };
    Kind kind = Kind::fixed;
    double rho1 = 0.8;
    double rho2 = 0.8;
    size_t total_epochs = 1;

    static CurriculumSchedule fixed(double rho, size_t epochs) {
        validate_rho(rho, "curriculum.rho");
        validate_epochs(epochs);
        return {Kind::fixed, rho, rho, epochs};
    }

    static CurriculumSchedule linear(double rho_start, double rho_end, size_t epochs) {
        validate_rho(rho_start, "curriculum.rho1");
        validate_rho(rho_end, "curriculum.rho2");
        validate_epochs(epochs);
        return {Kind::linear, rho_start, rho_end, epochs};
    }

    double min_rho() const { return std::min(rho1, rho2); }

    static void validate_rho(double rho, const char* field) {
        if (!(rho > 0.0 && rho < 1.0)) {
            throw ConfigError(std::string(field) + ": masking ratio must lie in (0,1), got " +
                              std::to_string(rho));
        }
    }
    static void validate_epochs(size_t epochs) {
        if (epochs < 1) throw ConfigError("curriculum.total_epochs: must be >= 1");
    }
};

inline double masking_ratio_at(const CurriculumSchedule& s, size_t epoch) {
    if (epoch >= s.total_epochs) {
        throw ContractError("masking_ratio_at: epoch " + std::to_string(epoch) +
                            " outside [0, " + std::to_string(s.total_epochs) + ")");
    }
    if (s.kind == CurriculumSchedule::Kind::fixed || s.total_epochs == 1) return s.rho1;
    const double frac = static_cast<double>(epoch) / static_cast<double>(s.total_epochs - 1);
    return s.rho1 + frac * (s.rho2 - s.rho1);
}

// Adaptive batch sizing: B_e = (1 - min(rho1,rho2)) / (1 - rho_e) * B0,
// rounded half-to-even with a floor of 1, which keeps the per-step visible
// token budget B_e * (1 - rho_e) level across the curriculum.
struct BatchPlan {
    CurriculumSchedule curriculum;
    size_t base_batch = 1;
    size_t dataset_size = 0;
    bool adaptive = true;

    static BatchPlan make(CurriculumSchedule curriculum, size_t base_batch,
                          size_t dataset_size, bool adaptive) {
        if (base_batch < 1) throw ConfigError("batch.base: must be >= 1");
        if (dataset_size < 1) throw ConfigError("dataset.size: must be >= 1");
        return {std::move(curriculum), base_batch, dataset_size, adaptive};
    }
};

inline size_t batch_size_at(const BatchPlan& plan, size_t epoch) {
    if (!plan.adaptive) return plan.base_batch;
    const double rho_e = masking_ratio_at(plan.curriculum, epoch);
    const double scaled = (1.0 - plan.curriculum.min_rho()) / (1.0 - rho_e) *
                          static_cast<double>(plan.base_batch);
    const long long rounded = round_half_to_even(scaled);
    return static_cast<size_t>(std::max(1ll, rounded));
}

inline size_t steps_per_epoch(const BatchPlan& plan, size_t epoch) {
    const size_t B = batch_size_at(plan, epoch);
    return (plan.dataset_size + B - 1) / B;
}

// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay from
// base_lr to min_lr at total_steps.
inline double lr_at(size_t step, size_t total_steps, double base_lr, size_t warmup_steps,
                    double min_lr) {
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return min_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    const double clamped = std::clamp(progress, 0.0, 1.0);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * clamped));
}

}  // namespace avmae
