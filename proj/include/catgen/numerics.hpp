#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "rng.hpp"
#include "tensor.hpp"

namespace catgen {

// Probability floor substituted for exact zeros before entering log space.
// The same sentinel is used everywhere a "log of zero" would otherwise occur.
inline constexpr double kProbFloor = 1e-40;

inline double log_prob_floor() { return std::log(kProbFloor); }

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(e^a + e^b) via the max-shift trick; exact when one argument is -inf.
inline double log_add_exp(double a, double b) {
    double m = std::max(a, b);
    if (!std::isfinite(m)) return m;  // both -inf (or an inf propagates)
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline Tensor log_add_exp(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "log_add_exp");
    Tensor out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = log_add_exp(a[i], b[i]);
    return out;
}

inline Tensor log_add_exp(const Tensor& a, double b) {
    Tensor out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = log_add_exp(a[i], b);
    return out;
}

// log sum_k e^{x_k} along the last axis, max-shifted
inline Tensor log_sum_exp_last(const Tensor& x) {
    int64_t k = x.last();
    int64_t rows = x.rows();
    std::vector<int64_t> out_shape(x.shape.begin(), x.shape.end());
    if (!out_shape.empty()) out_shape.pop_back();
    Tensor out(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = x.data.data() + r * k;
        double m = kNegInf;
        for (int64_t i = 0; i < k; ++i) m = std::max(m, row[i]);
        if (!std::isfinite(m)) {
            out[r] = m;
            continue;
        }
        double s = 0.0;
        for (int64_t i = 0; i < k; ++i) s += std::exp(row[i] - m);
        out[r] = m + std::log(s);
    }
    return out;
}

inline Tensor log_softmax_last(const Tensor& x) {
    Tensor lse = log_sum_exp_last(x);
    int64_t k = x.last();
    Tensor out(x.shape);
    for (int64_t r = 0; r < x.rows(); ++r)
        for (int64_t i = 0; i < k; ++i) out[r * k + i] = x[r * k + i] - lse[r];
    return out;
}

// log(1 - e^a + 1e-40); total over a <= 0, a = 0 yields log(1e-40)
inline double log_1_min_a(double a) { return std::log(1.0 - std::exp(a) + kProbFloor); }

inline Tensor log_1_min_a(const Tensor& a) {
    Tensor out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = log_1_min_a(a[i]);
    return out;
}

// log of the one-hot encoding of x, zeros clamped to the probability floor
inline Tensor index_to_log_onehot(const CategoricalBatch& x, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("index_to_log_onehot: K must be >= 1");
    for (int32_t v : x.values)
        if (v < 0 || v >= num_classes)
            throw std::invalid_argument("index_to_log_onehot: index out of range");
    Tensor out({x.batch, x.dims, static_cast<int64_t>(num_classes)}, log_prob_floor());
    for (int64_t b = 0; b < x.batch; ++b)
        for (int64_t d = 0; d < x.dims; ++d) out.at(b, d, x.at(b, d)) = 0.0;
    return out;
}

inline Tensor onehot(const CategoricalBatch& x, int num_classes) {
    Tensor out({x.batch, x.dims, static_cast<int64_t>(num_classes)}, 0.0);
    for (int64_t b = 0; b < x.batch; ++b)
        for (int64_t d = 0; d < x.dims; ++d) out.at(b, d, x.at(b, d)) = 1.0;
    return out;
}

// argmax over the class axis; ties break to the lowest index
inline CategoricalBatch log_onehot_to_index(const Tensor& log_x) {
    if (log_x.rank() != 3) throw std::invalid_argument("log_onehot_to_index: expected (batch, D, K)");
    CategoricalBatch out(log_x.shape[0], log_x.shape[1], static_cast<int>(log_x.shape[2]));
    int64_t k = log_x.shape[2];
    for (int64_t r = 0; r < out.batch * out.dims; ++r) {
        const double* row = log_x.data.data() + r * k;
        int32_t best = 0;
        for (int64_t i = 1; i < k; ++i)
            if (row[i] > row[best]) best = static_cast<int32_t>(i);
        out.values[static_cast<size_t>(r)] = best;
    }
    return out;
}

// sum_k e^{log_a}(log_a - log_b) over the class axis, per (batch, D)
inline Tensor categorical_kl(const Tensor& log_a, const Tensor& log_b) {
    check_same_shape(log_a, log_b, "categorical_kl");
    int64_t k = log_a.last();
    std::vector<int64_t> out_shape(log_a.shape.begin(), log_a.shape.end());
    if (!out_shape.empty()) out_shape.pop_back();
    Tensor out(out_shape);
    for (int64_t r = 0; r < log_a.rows(); ++r) {
        double acc = 0.0;
        for (int64_t i = 0; i < k; ++i) {
            double la = log_a[r * k + i];
            double p = std::exp(la);
            if (p > 0.0) acc += p * (la - log_b[r * k + i]);
        }
        out[r] = acc;
    }
    return out;
}

// Gumbel-max draw per (batch, D); deterministic given the rng state
inline CategoricalBatch sample_categorical(const Tensor& log_p, Rng& rng) {
    if (log_p.rank() != 3) throw std::invalid_argument("sample_categorical: expected (batch, D, K)");
    CategoricalBatch out(log_p.shape[0], log_p.shape[1], static_cast<int>(log_p.shape[2]));
    int64_t k = log_p.shape[2];
    for (int64_t r = 0; r < out.batch * out.dims; ++r) {
        const double* row = log_p.data.data() + r * k;
        int32_t best = 0;
        double best_v = kNegInf;
        for (int64_t i = 0; i < k; ++i) {
            double v = row[i] + rng.gumbel();
            if (v > best_v) {
                best_v = v;
                best = static_cast<int32_t>(i);
            }
        }
        out.values[static_cast<size_t>(r)] = best;
    }
    return out;
}

// true when exp over the class axis sums to 1 within tol for every row
inline bool is_normalized_log_prob(const Tensor& log_p, double tol = 1e-6) {
    Tensor lse = log_sum_exp_last(log_p);
    for (int64_t i = 0; i < lse.numel(); ++i)
        if (!(std::fabs(lse[i]) <= tol)) return false;
    return true;
}

inline double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
inline double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
inline double log_sigmoid(double z) { return -softplus(-z); }

}  // namespace catgen
