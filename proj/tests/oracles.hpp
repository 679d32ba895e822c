#pragma once

// Test-side oracles: independent routes (linear-space arithmetic, exhaustive
// enumeration, finite differences, quadrature) used to freeze expected
// values. Nothing here may call back into the log-space kernels it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "catgen/autodiff.hpp"
#include "catgen/schedule.hpp"
#include "catgen/tensor.hpp"

namespace oracles {

// P(next = j | cur = i) for one uniform-resampling step
inline std::vector<std::vector<double>> kernel_matrix(double alpha, int K) {
    std::vector<std::vector<double>> M(static_cast<size_t>(K), std::vector<double>(static_cast<size_t>(K), (1.0 - alpha) / K));
    for (int i = 0; i < K; ++i) M[static_cast<size_t>(i)][static_cast<size_t>(i)] += alpha;
    return M;
}

inline std::vector<double> apply_kernel(const std::vector<std::vector<double>>& M, const std::vector<double>& p) {
    size_t K = p.size();
    std::vector<double> out(K, 0.0);
    for (size_t j = 0; j < K; ++j)
        for (size_t i = 0; i < K; ++i) out[j] += M[j][i] * p[i];
    return out;
}

// marginals started at one-hot x0, for t = 0..T
inline std::vector<std::vector<double>> chain_marginals(const catgen::NoiseSchedule& sc, int K, int x0) {
    std::vector<std::vector<double>> marg(static_cast<size_t>(sc.T) + 1, std::vector<double>(static_cast<size_t>(K), 0.0));
    marg[0][static_cast<size_t>(x0)] = 1.0;
    for (int t = 1; t <= sc.T; ++t)
        marg[static_cast<size_t>(t)] = apply_kernel(kernel_matrix(std::exp(sc.log_alpha[t]), K), marg[static_cast<size_t>(t) - 1]);
    return marg;
}

inline double kl_linear(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) acc += p[i] * (std::log(p[i]) - std::log(q[i]));
    return acc;
}

// central finite differences of a scalar function of one coordinate
inline double fd_derivative(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// worst relative error between analytic grads (already in the tape) and
// central differences, probing a spread of entries per parameter
inline double fd_grad_worst(catgen::ad::Bound& bound, const catgen::ad::Tape& tape,
                            const std::function<double()>& value, int probes = 7) {
    auto params = bound.params();
    auto grads = bound.grads(tape);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        catgen::Tensor& p = *params[pi];
        int64_t stride = std::max<int64_t>(1, p.numel() / probes);
        for (int64_t j = 0; j < p.numel(); j += stride) {
            double save = p[j];
            const double h = 1e-5;
            p[j] = save + h;
            double fp = value();
            p[j] = save - h;
            double fm = value();
            p[j] = save;
            double num = (fp - fm) / (2.0 * h);
            double ana = grads[pi][j];
            worst = std::max(worst, std::fabs(num - ana) / std::max({1e-6, std::fabs(num), std::fabs(ana)}));
        }
    }
    return worst;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

// Simpson rule over [lo, hi]
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n = 400) {
    if (n % 2) ++n;
    double h = (hi - lo) / n;
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

inline double ks_p_value(double d_stat, int64_t n) {
    double lam = (std::sqrt(static_cast<double>(n)) + 0.12 + 0.11 / std::sqrt(static_cast<double>(n))) * d_stat;
    double p = 0.0;
    for (int j = 1; j <= 100; ++j) p += 2.0 * (j % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lam * lam);
    return std::min(1.0, std::max(0.0, p));
}

// log|det J| of a map R^n -> R^n via finite differences and full pivoted
// Gaussian elimination
inline double fd_log_abs_det(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                             std::vector<double> x, double h = 1e-6) {
    size_t n = x.size();
    std::vector<std::vector<double>> J(n, std::vector<double>(n));
    for (size_t j = 0; j < n; ++j) {
        double save = x[j];
        x[j] = save + h;
        std::vector<double> fp = f(x);
        x[j] = save - h;
        std::vector<double> fm = f(x);
        x[j] = save;
        for (size_t i = 0; i < n; ++i) J[i][j] = (fp[i] - fm[i]) / (2.0 * h);
    }
    double log_det = 0.0;
    for (size_t c = 0; c < n; ++c) {
        size_t piv = c;
        for (size_t r = c + 1; r < n; ++r)
            if (std::fabs(J[r][c]) > std::fabs(J[piv][c])) piv = r;
        std::swap(J[c], J[piv]);
        log_det += std::log(std::fabs(J[c][c]));
        for (size_t r = c + 1; r < n; ++r) {
            double m = J[r][c] / J[c][c];
            for (size_t k = c; k < n; ++k) J[r][k] -= m * J[c][k];
        }
    }
    return log_det;
}

}  // namespace oracles
