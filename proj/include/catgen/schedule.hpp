#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "numerics.hpp"

namespace catgen {

// Mixing-factor schedule for the categorical forward process. All arrays are
// 1-indexed over t = 1..T; slot 0 holds the t = 0 boundary (alpha_bar_0 = 1).
// Values are precomputed in extended precision and stored as doubles.
struct NoiseSchedule {
    int T = 0;
    double s = 0.008;
    std::vector<double> log_alpha;                 // log(abar_t / abar_{t-1})
    std::vector<double> log_cumprod_alpha;         // log(abar_t)
    std::vector<double> log_1_min_alpha;           // log(1 - alpha_t)
    std::vector<double> log_1_min_cumprod_alpha;   // log(1 - abar_t)

    void validate() const {
        if (T < 1) throw std::invalid_argument("noise schedule: T must be >= 1");
        for (int t = 1; t <= T; ++t) {
            bool ok = std::isfinite(log_alpha[t]) && log_alpha[t] < 0.0 && std::isfinite(log_cumprod_alpha[t]) &&
                      std::isfinite(log_1_min_alpha[t]) && std::isfinite(log_1_min_cumprod_alpha[t]);
            if (!ok) throw std::invalid_argument("noise schedule: non-finite or non-decreasing entry at t=" + std::to_string(t));
        }
    }
};

// abar(t) = f(t)/f(0) with f(t) = cos(((t/T + s)/(1+s)) * pi/2). The raw
// ratio reaches 0 at t = T; clipping happens in build_schedule.
inline double cosine_alpha_bar(double t, int T, double s = 0.008) {
    if (t < 0.0 || t > static_cast<double>(T)) throw std::invalid_argument("cosine_alpha_bar: t out of [0, T]");
    auto f = [&](double u) { return std::cos((u / T + s) / (1.0 + s) * M_PI / 2.0); };
    return f(t) / f(0.0);
}

inline constexpr double kAlphaBarFloor = 1e-8;

// Builds a schedule from explicit abar values for t = 1..T (abar_0 = 1 is
// implicit). Inputs are clipped to [1e-8, 1 - 1e-8] and must be strictly
// decreasing after clipping.
inline NoiseSchedule schedule_from_alpha_bar(const std::vector<double>& alpha_bar, double s_tag = 0.0) {
    int T = static_cast<int>(alpha_bar.size());
    if (T < 1) throw std::invalid_argument("noise schedule: T must be >= 1");
    NoiseSchedule sched;
    sched.T = T;
    sched.s = s_tag;
    sched.log_alpha.assign(static_cast<size_t>(T) + 1, 0.0);
    sched.log_cumprod_alpha.assign(static_cast<size_t>(T) + 1, 0.0);
    sched.log_1_min_alpha.assign(static_cast<size_t>(T) + 1, log_prob_floor());
    sched.log_1_min_cumprod_alpha.assign(static_cast<size_t>(T) + 1, log_prob_floor());

    long double prev_log = 0.0L;  // log abar_0 = 0
    long double acc = 0.0L;
    for (int t = 1; t <= T; ++t) {
        double a = alpha_bar[static_cast<size_t>(t) - 1];
        if (a < kAlphaBarFloor) a = kAlphaBarFloor;
        if (a > 1.0 - kAlphaBarFloor) a = 1.0 - kAlphaBarFloor;
        long double lg = std::log(static_cast<long double>(a));
        if (!(lg < prev_log)) throw std::invalid_argument("noise schedule: alpha_bar must be strictly decreasing");
        sched.log_alpha[t] = static_cast<double>(lg - prev_log);
        acc += static_cast<long double>(sched.log_alpha[t]);
        sched.log_cumprod_alpha[t] = static_cast<double>(acc);
        sched.log_1_min_alpha[t] = log_1_min_a(sched.log_alpha[t]);
        sched.log_1_min_cumprod_alpha[t] = log_1_min_a(sched.log_cumprod_alpha[t]);
        prev_log = lg;
    }
    sched.validate();
    return sched;
}

inline NoiseSchedule build_schedule(int T, double s = 0.008) {
    if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
    std::vector<double> abar(static_cast<size_t>(T));
    for (int t = 1; t <= T; ++t) abar[static_cast<size_t>(t) - 1] = cosine_alpha_bar(static_cast<double>(t), T, s);
    NoiseSchedule sched = schedule_from_alpha_bar(abar, s);
    sched.s = s;
    return sched;
}

}  // namespace catgen
