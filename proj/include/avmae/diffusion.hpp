#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/rng.hpp"
#include "avmae/tensor.hpp"

namespace avmae {

// Exponentiated linear variance schedule. The operative per-step noise
// variance is beta_t^phi; alpha_bar accumulates prod(1 - beta_t^phi) unless
// the raw-beta comparison flag is set.
struct DiffusionSchedule {
    size_t steps = 0;
    double phi = 1.0;
    bool alpha_bar_from_raw_beta = false;
    std::vector<double> beta;      // beta[t-1] is the step-t base variance
    std::vector<double> beta_eff;  // beta^phi
    std::vector<double> alpha_bar;

    double alpha_bar_at(size_t t) const {
        check_step(t);
        return alpha_bar[t - 1];
    }

    void check_step(size_t t) const {
        if (t < 1 || t > steps) {
            throw ContractError("diffusion step t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(steps) + "]");
        }
    }
};

// Linear grid beta[t] = beta_start + (t-1)/(T-1) * (beta_end - beta_start),
// hitting both endpoints exactly; a single-step schedule is just beta_start.
inline DiffusionSchedule build_schedule(size_t T, double beta_start, double beta_end,
                                        double phi, bool alpha_bar_uses_raw_beta = false) {
    if (T < 1) throw ConfigError("diffusion.steps: must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("diffusion.beta: need 0 < beta_start <= beta_end < 1, got [" +
                          std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    }
    if (!(phi > 0.0)) throw ConfigError("diffusion.phi: must be > 0");

    DiffusionSchedule s;
    s.steps = T;
    s.phi = phi;
    s.alpha_bar_from_raw_beta = alpha_bar_uses_raw_beta;
    s.beta.resize(T);
    s.beta_eff.resize(T);
    s.alpha_bar.resize(T);
    double running = 1.0;
    for (size_t t = 1; t <= T; ++t) {
        const double frac =
            (T == 1) ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        const double b = beta_start + frac * (beta_end - beta_start);
        const double be = std::pow(b, phi);
        s.beta[t - 1] = b;
        s.beta_eff[t - 1] = be;
        running *= 1.0 - (alpha_bar_uses_raw_beta ? b : be);
        s.alpha_bar[t - 1] = running;
    }
    return s;
}

// Forward process x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
// with the noise supplied explicitly (test hook: pass zeros for eps).
inline Tensor diffuse_with_noise(const Tensor& x0, size_t t, const DiffusionSchedule& sched,
                                 const Tensor& eps) {
    sched.check_step(t);
    if (eps.shape() != x0.shape()) {
        throw ShapeError("diffuse: noise shape " + shape_str(eps.shape()) +
                         " does not match input " + shape_str(x0.shape()));
    }
    const double ab = sched.alpha_bar_at(t);
    const double sig = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    Tensor out = Tensor::zeros(x0.shape());
    for (size_t i = 0; i < x0.size(); ++i) {
        out.at(i) = sig * x0.at(i) + noise * eps.at(i);
    }
    return out;
}

// One standard-normal draw per element, deterministic per seed.
inline Tensor diffuse(const Tensor& x0, size_t t, const DiffusionSchedule& sched,
                      uint64_t rng_seed) {
    sched.check_step(t);
    Rng rng(rng_seed);
    Tensor eps = Tensor::zeros(x0.shape());
    for (size_t i = 0; i < eps.size(); ++i) eps.at(i) = rng.normal();
    return diffuse_with_noise(x0, t, sched, eps);
}

// t ~ Unif({1, ..., T}).
inline size_t sample_timestep(size_t T, Rng& rng) {
    if (T < 1) throw ConfigError("sample_timestep: T must be >= 1");
    return static_cast<size_t>(rng.uniform_int(T)) + 1;
}

inline size_t sample_timestep(size_t T, uint64_t rng_seed) {
    Rng rng(rng_seed);
    return sample_timestep(T, rng);
}

}  // namespace avmae
