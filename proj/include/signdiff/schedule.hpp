#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "signdiff/tensor.hpp"

namespace signdiff {

/// Per-step variances over timesteps 1..T. Index t-1 holds step t; alpha_bar
/// at t = 0 is 1 by convention.
struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    int steps() const noexcept { return static_cast<int>(beta.size()); }

    void check_step(int t) const {
        if (t < 1 || t > steps())
            throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    double beta_at(int t) const { return check_step(t), beta[t - 1]; }
    double alpha_at(int t) const { return check_step(t), alpha[t - 1]; }
    double alpha_bar_at(int t) const {
        if (t == 0) return 1.0;
        check_step(t);
        return alpha_bar[t - 1];
    }
};

/// Linear beta from beta_first to beta_last, cumulative products for alpha_bar.
inline NoiseSchedule make_schedule(int steps, double beta_first, double beta_last) {
    require(steps >= 1, "make_schedule: T must be at least 1");
    require(beta_first > 0.0 && beta_first <= beta_last && beta_last < 1.0,
            "make_schedule: need 0 < beta_1 <= beta_T < 1");
    NoiseSchedule s;
    s.beta.resize(steps);
    s.alpha.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        s.beta[i] = beta_first + (beta_last - beta_first) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
inline Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    z0.check_same(eps, "q_sample");
    const double ab = s.alpha_bar_at(t);
    Tensor z = z0 * std::sqrt(ab);
    z.axpy(std::sqrt(1.0 - ab), eps);
    return z;
}

/// Inverts q_sample for z0 given the noise.
inline Tensor predict_z0(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& s) {
    const double ab = s.alpha_bar_at(t);
    Tensor z0 = z_t;
    z0.axpy(-std::sqrt(1.0 - ab), eps);
    z0 *= 1.0 / std::sqrt(ab);
    return z0;
}

/// Reverse-step mean from a noise prediction:
///   mu = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)
inline Tensor posterior_mean(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& s) {
    z_t.check_same(eps, "posterior_mean");
    Tensor mu = z_t;
    mu.axpy(-s.beta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t)), eps);
    mu *= 1.0 / std::sqrt(s.alpha_at(t));
    return mu;
}

/// Mean of q(z_{t-1} | z_t, z0) written in terms of z0.
inline Tensor posterior_mean_from_z0(const Tensor& z0, const Tensor& z_t, int t, const NoiseSchedule& s) {
    const double ab = s.alpha_bar_at(t);
    const double ab_prev = s.alpha_bar_at(t - 1);
    Tensor mu = z0 * (std::sqrt(ab_prev) * s.beta_at(t) / (1.0 - ab));
    mu.axpy(std::sqrt(s.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab), z_t);
    return mu;
}

}  // namespace signdiff
