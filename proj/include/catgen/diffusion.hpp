#pragma once

#include <array>
#include <vector>

#include "autodiff.hpp"
#include "nn.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace catgen {

// Time indexing: data lives at t = 0 and forward steps run t = 1..T.
// q_forward_one_step / q_marginal take that t. q_posterior takes the index s
// of the variable it returns: given the state at step s+1 it yields the
// distribution of the state at step s, and s = 0 collapses to log_x0 itself
// (the reconstruction clause of the reverse model). p_pred(x_t, t) therefore
// calls the posterior with s = t - 1.

struct DiffusionModel {
    NoiseSchedule schedule;
    Denoiser* denoiser = nullptr;  // non-owning
    int dims = 0;
    int num_classes = 0;
};

namespace detail {
inline void check_t(const NoiseSchedule& sched, int t, int lo) {
    if (t < lo || t > sched.T)
        throw std::invalid_argument("diffusion: t=" + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                    std::to_string(sched.T) + "]");
}
}  // namespace detail

// log[ alpha_t x + (1 - alpha_t)/K ] applied along the class axis; ts holds
// one timestep per batch row
inline Tensor q_forward_one_step(const NoiseSchedule& sched, const Tensor& log_x, const std::vector<int>& ts) {
    int64_t k = log_x.last();
    int64_t per_batch = log_x.numel() / log_x.shape[0];
    Tensor out(log_x.shape);
    for (int64_t b = 0; b < log_x.shape[0]; ++b) {
        int t = ts[static_cast<size_t>(b)];
        detail::check_t(sched, t, 1);
        double la = sched.log_alpha[t];
        double lb = sched.log_1_min_alpha[t] - std::log(static_cast<double>(k));
        for (int64_t i = 0; i < per_batch; ++i) out[b * per_batch + i] = log_add_exp(log_x[b * per_batch + i] + la, lb);
    }
    return out;
}

inline Tensor q_forward_one_step(const NoiseSchedule& sched, const Tensor& log_x, int t) {
    return q_forward_one_step(sched, log_x, std::vector<int>(static_cast<size_t>(log_x.shape[0]), t));
}

// log[ abar_t x0 + (1 - abar_t)/K ]; t = 0 returns the input unchanged
inline Tensor q_marginal(const NoiseSchedule& sched, const Tensor& log_x0, const std::vector<int>& ts) {
    int64_t k = log_x0.last();
    int64_t per_batch = log_x0.numel() / log_x0.shape[0];
    Tensor out(log_x0.shape);
    for (int64_t b = 0; b < log_x0.shape[0]; ++b) {
        int t = ts[static_cast<size_t>(b)];
        detail::check_t(sched, t, 0);
        if (t == 0) {
            for (int64_t i = 0; i < per_batch; ++i) out[b * per_batch + i] = log_x0[b * per_batch + i];
            continue;
        }
        double la = sched.log_cumprod_alpha[t];
        double lb = sched.log_1_min_cumprod_alpha[t] - std::log(static_cast<double>(k));
        for (int64_t i = 0; i < per_batch; ++i) out[b * per_batch + i] = log_add_exp(log_x0[b * per_batch + i] + la, lb);
    }
    return out;
}

inline Tensor q_marginal(const NoiseSchedule& sched, const Tensor& log_x0, int t) {
    return q_marginal(sched, log_x0, std::vector<int>(static_cast<size_t>(log_x0.shape[0]), t));
}

// Posterior of the state at step s given log_x_t (the state at step s+1) and
// log_x0. Accepts a soft log_x0; s = 0 returns log_x0 exactly.
inline Tensor q_posterior(const NoiseSchedule& sched, const Tensor& log_x0, const Tensor& log_x_t,
                          const std::vector<int>& ss) {
    check_same_shape(log_x0, log_x_t, "q_posterior");
    int64_t k = log_x0.last();
    int64_t per_batch = log_x0.numel() / log_x0.shape[0];
    Tensor out(log_x0.shape);
    for (int64_t b = 0; b < log_x0.shape[0]; ++b) {
        int s = ss[static_cast<size_t>(b)];
        detail::check_t(sched, s + 1, 1);
        if (s == 0) {
            for (int64_t i = 0; i < per_batch; ++i) out[b * per_batch + i] = log_x0[b * per_batch + i];
            continue;
        }
        double c1 = sched.log_cumprod_alpha[s];
        double c2 = sched.log_1_min_cumprod_alpha[s] - std::log(static_cast<double>(k));
        double f1 = sched.log_alpha[s + 1];
        double f2 = sched.log_1_min_alpha[s + 1] - std::log(static_cast<double>(k));
        // unnormalized: q(x_s | x0) * q(x_{s+1} | x_s), the latter evaluated
        // through the symmetric one-step kernel applied to x_{s+1}
        for (int64_t r = b * (per_batch / k); r < (b + 1) * (per_batch / k); ++r) {
            double m = kNegInf;
            std::vector<double> row(static_cast<size_t>(k));
            for (int64_t i = 0; i < k; ++i) {
                double prior = log_add_exp(log_x0[r * k + i] + c1, c2);
                double step = log_add_exp(log_x_t[r * k + i] + f1, f2);
                row[static_cast<size_t>(i)] = prior + step;
                m = std::max(m, row[static_cast<size_t>(i)]);
            }
            double z = 0.0;
            for (int64_t i = 0; i < k; ++i) z += std::exp(row[static_cast<size_t>(i)] - m);
            double lse = m + std::log(z);
            for (int64_t i = 0; i < k; ++i) out[r * k + i] = row[static_cast<size_t>(i)] - lse;
        }
    }
    return out;
}

inline Tensor q_posterior(const NoiseSchedule& sched, const Tensor& log_x0, const Tensor& log_x_t, int s) {
    return q_posterior(sched, log_x0, log_x_t, std::vector<int>(static_cast<size_t>(log_x0.shape[0]), s));
}

// Tape version of the posterior for a predicted (soft) log_x0hat. Rows with
// s = 0 pass log_x0hat through unchanged, which matches the reconstruction
// clause of the reverse parametrization.
inline ad::Var q_posterior(ad::Tape& tape, const NoiseSchedule& sched, ad::Var log_x0hat, const CategoricalBatch& x_t,
                           const std::vector<int>& ss) {
    int64_t B = x_t.batch, D = x_t.dims;
    int64_t k = x_t.num_classes;
    double logK = std::log(static_cast<double>(k));
    Tensor c1({B, D, k});
    Tensor c2({B, D, k});
    Tensor qf({B, D, k});
    for (int64_t b = 0; b < B; ++b) {
        int s = ss[static_cast<size_t>(b)];
        detail::check_t(sched, s + 1, 1);
        for (int64_t d = 0; d < D; ++d)
            for (int64_t i = 0; i < k; ++i) {
                if (s == 0) {
                    c1.at(b, d, i) = 0.0;
                    c2.at(b, d, i) = kNegInf;
                    qf.at(b, d, i) = 0.0;
                } else {
                    c1.at(b, d, i) = sched.log_cumprod_alpha[s];
                    c2.at(b, d, i) = sched.log_1_min_cumprod_alpha[s] - logK;
                    double f1 = sched.log_alpha[s + 1];
                    double f2 = sched.log_1_min_alpha[s + 1] - logK;
                    qf.at(b, d, i) = (x_t.at(b, d) == i) ? log_add_exp(f1, f2) : f2;
                }
            }
    }
    ad::Var prior = tape.log_add_exp(tape.add(log_x0hat, tape.constant(std::move(c1))), tape.constant(std::move(c2)));
    ad::Var unnormed = tape.add(prior, tape.constant(std::move(qf)));
    return tape.log_softmax_last(unnormed);
}

// Reverse-model distribution of the state at step t-1 given x_t.
inline ad::Var p_pred(ad::Tape& tape, ad::Bound& bound, const DiffusionModel& model, const CategoricalBatch& x_t,
                      const std::vector<int>& ts) {
    ad::Var log_x0hat = tape.log_softmax_last(model.denoiser->logits(tape, bound, x_t, ts));
    std::vector<int> ss(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) ss[i] = ts[i] - 1;
    return q_posterior(tape, model.schedule, log_x0hat, x_t, ss);
}

inline ad::Var p_pred(ad::Tape& tape, ad::Bound& bound, const DiffusionModel& model, const CategoricalBatch& x_t, int t) {
    return p_pred(tape, bound, model, x_t, std::vector<int>(static_cast<size_t>(x_t.batch), t));
}

// gradient-free reverse-model distribution
inline Tensor p_pred_value(const DiffusionModel& model, const CategoricalBatch& x_t, const std::vector<int>& ts) {
    Tensor log_x0hat = log_softmax_last(model.denoiser->logits_value(x_t, ts));
    Tensor log_xt = index_to_log_onehot(x_t, model.num_classes);
    std::vector<int> ss(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) ss[i] = ts[i] - 1;
    return q_posterior(model.schedule, log_x0hat, log_xt, ss);
}

inline Tensor p_pred_value(const DiffusionModel& model, const CategoricalBatch& x_t, int t) {
    return p_pred_value(model, x_t, std::vector<int>(static_cast<size_t>(x_t.batch), t));
}

// KL(q(x_{t-1} | x_t, x0) || p(x_{t-1} | x_t)) summed over dimensions,
// per sample. For t = 1 this reduces to -log p(x0 | x1) because x0 is
// one-hot.
inline ad::Var loss_term(ad::Tape& tape, ad::Bound& bound, const DiffusionModel& model, const CategoricalBatch& x0,
                         const CategoricalBatch& x_t, const std::vector<int>& ts) {
    Tensor log_x0 = index_to_log_onehot(x0, model.num_classes);
    Tensor log_xt = index_to_log_onehot(x_t, model.num_classes);
    std::vector<int> ss(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) ss[i] = ts[i] - 1;
    Tensor log_true = q_posterior(model.schedule, log_x0, log_xt, ss);
    ad::Var log_model = p_pred(tape, bound, model, x_t, ts);
    Tensor p_true(log_true.shape);
    for (int64_t i = 0; i < p_true.numel(); ++i) p_true[i] = std::exp(log_true[i]);
    ad::Var kl = tape.mul(tape.constant(std::move(p_true)), tape.sub(tape.constant(std::move(log_true)), log_model));
    return tape.sum_last(tape.sum_last(kl));
}

inline Tensor loss_term_value(const DiffusionModel& model, const CategoricalBatch& x0, const CategoricalBatch& x_t,
                              const std::vector<int>& ts) {
    Tensor log_x0 = index_to_log_onehot(x0, model.num_classes);
    Tensor log_xt = index_to_log_onehot(x_t, model.num_classes);
    std::vector<int> ss(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) ss[i] = ts[i] - 1;
    Tensor log_true = q_posterior(model.schedule, log_x0, log_xt, ss);
    Tensor log_model = p_pred_value(model, x_t, ts);
    Tensor kl = categorical_kl(log_true, log_model);  // (B, D)
    Tensor out({kl.shape[0]});
    for (int64_t b = 0; b < kl.shape[0]; ++b) {
        double acc = 0.0;
        for (int64_t d = 0; d < kl.shape[1]; ++d) acc += kl.at(b, d);
        out[b] = acc;
    }
    return out;
}

// KL(q(x_T | x0) || uniform) summed over dimensions, per sample
inline Tensor prior_kl(const DiffusionModel& model, const Tensor& log_x0) {
    Tensor marg = q_marginal(model.schedule, log_x0, model.schedule.T);
    Tensor log_unif(marg.shape, -std::log(static_cast<double>(marg.last())));
    Tensor kl = categorical_kl(marg, log_unif);  // (B, D)
    Tensor out({kl.shape[0]});
    for (int64_t b = 0; b < kl.shape[0]; ++b) {
        double acc = 0.0;
        for (int64_t d = 0; d < kl.shape[1]; ++d) acc += kl.at(b, d);
        out[b] = acc;
    }
    return out;
}

// Per-timestep squared-loss history driving the importance-sampled timestep
// distribution: uniform until every t has `capacity` recorded values, then
// q(t) proportional to sqrt(mean L_t^2).
struct LossHistory {
    static constexpr int capacity = 10;
    int T = 0;
    std::vector<std::array<double, capacity>> buf;  // index 1..T
    std::vector<int> count;
    std::vector<int> pos;

    explicit LossHistory(int T_ = 0) : T(T_), buf(static_cast<size_t>(T_) + 1), count(static_cast<size_t>(T_) + 1, 0),
                                       pos(static_cast<size_t>(T_) + 1, 0) {}

    void record(int t, double loss) {
        double sq = loss * loss;
        auto& b = buf[static_cast<size_t>(t)];
        b[static_cast<size_t>(pos[static_cast<size_t>(t)])] = sq;
        pos[static_cast<size_t>(t)] = (pos[static_cast<size_t>(t)] + 1) % capacity;
        if (count[static_cast<size_t>(t)] < capacity) ++count[static_cast<size_t>(t)];
    }

    bool warmed_up() const {
        for (int t = 1; t <= T; ++t)
            if (count[static_cast<size_t>(t)] < capacity) return false;
        return true;
    }

    // normalized q(t) over t = 1..T (entry 0 unused)
    std::vector<double> weights() const {
        std::vector<double> w(static_cast<size_t>(T) + 1, 0.0);
        if (!warmed_up()) {
            for (int t = 1; t <= T; ++t) w[static_cast<size_t>(t)] = 1.0 / static_cast<double>(T);
            return w;
        }
        double total = 0.0;
        for (int t = 1; t <= T; ++t) {
            double mean_sq = 0.0;
            for (int i = 0; i < capacity; ++i) mean_sq += buf[static_cast<size_t>(t)][static_cast<size_t>(i)];
            mean_sq /= capacity;
            w[static_cast<size_t>(t)] = std::sqrt(mean_sq);
            total += w[static_cast<size_t>(t)];
        }
        if (total <= 0.0) {
            for (int t = 1; t <= T; ++t) w[static_cast<size_t>(t)] = 1.0 / static_cast<double>(T);
            return w;
        }
        for (int t = 1; t <= T; ++t) w[static_cast<size_t>(t)] /= total;
        return w;
    }
};

struct TimestepDraw {
    int t = 1;
    double q = 1.0;  // probability of this draw; the loss weight is 1/q
};

inline TimestepDraw sample_t_importance(const LossHistory& hist, Rng& rng) {
    std::vector<double> w = hist.weights();
    double u = rng.uniform();
    double acc = 0.0;
    for (int t = 1; t <= hist.T; ++t) {
        acc += w[static_cast<size_t>(t)];
        if (u <= acc || t == hist.T) return {t, w[static_cast<size_t>(t)]};
    }
    return {hist.T, w[static_cast<size_t>(hist.T)]};
}

enum class ElboMode { full, sampled };

namespace detail {
// exact expectation over x_t is feasible only for tiny instances
inline bool enumerable(const DiffusionModel& model) {
    double combos = std::pow(static_cast<double>(model.num_classes), static_cast<double>(model.dims));
    return combos <= 256.0 && model.schedule.T <= 16;
}
}  // namespace detail

// Evidence lower bound on log P(x0), in nats per sample (negative numbers).
// full mode: sums the expected loss over every t plus the prior term; the
// expectation over x_t is exact on enumerable instances and single-draw
// Monte Carlo otherwise. sampled mode: one importance-sampled t per sample,
// reweighted by 1/q(t).
inline Tensor elbo(const DiffusionModel& model, const CategoricalBatch& x0, ElboMode mode, Rng& rng,
                   const LossHistory* hist = nullptr) {
    int64_t B = x0.batch;
    Tensor total({B});
    Tensor log_x0 = index_to_log_onehot(x0, model.num_classes);
    if (mode == ElboMode::full) {
        if (detail::enumerable(model)) {
            int64_t combos = 1;
            for (int d = 0; d < model.dims; ++d) combos *= model.num_classes;
            for (int t = 1; t <= model.schedule.T; ++t) {
                Tensor marg = q_marginal(model.schedule, log_x0, t);
                for (int64_t c = 0; c < combos; ++c) {
                    CategoricalBatch xt(B, x0.dims, model.num_classes);
                    int64_t rem = c;
                    std::vector<int> digits(static_cast<size_t>(x0.dims));
                    for (int d = static_cast<int>(x0.dims) - 1; d >= 0; --d) {
                        digits[static_cast<size_t>(d)] = static_cast<int>(rem % model.num_classes);
                        rem /= model.num_classes;
                    }
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t d = 0; d < x0.dims; ++d) xt.at(b, d) = digits[static_cast<size_t>(d)];
                    Tensor loss = loss_term_value(model, x0, xt, std::vector<int>(static_cast<size_t>(B), t));
                    for (int64_t b = 0; b < B; ++b) {
                        double logw = 0.0;
                        for (int64_t d = 0; d < x0.dims; ++d) logw += marg.at(b, d, xt.at(b, d));
                        total[b] += std::exp(logw) * loss[b];
                    }
                }
            }
        } else {
            for (int t = 1; t <= model.schedule.T; ++t) {
                CategoricalBatch xt = sample_categorical(q_marginal(model.schedule, log_x0, t), rng);
                Tensor loss = loss_term_value(model, x0, xt, std::vector<int>(static_cast<size_t>(B), t));
                for (int64_t b = 0; b < B; ++b) total[b] += loss[b];
            }
        }
    } else {
        LossHistory empty(model.schedule.T);
        const LossHistory& h = hist ? *hist : empty;
        std::vector<int> ts(static_cast<size_t>(B));
        Tensor weights({B});
        for (int64_t b = 0; b < B; ++b) {
            TimestepDraw draw = sample_t_importance(h, rng);
            ts[static_cast<size_t>(b)] = draw.t;
            weights[b] = 1.0 / draw.q;
        }
        Tensor marg = q_marginal(model.schedule, log_x0, ts);
        CategoricalBatch xt = sample_categorical(marg, rng);
        Tensor loss = loss_term_value(model, x0, xt, ts);
        for (int64_t b = 0; b < B; ++b) total[b] += weights[b] * loss[b];
    }
    Tensor prior = prior_kl(model, log_x0);
    for (int64_t b = 0; b < B; ++b) total[b] = -(total[b] + prior[b]);
    return total;
}

inline double bits_per_dim(double elbo_nats, int64_t dims) {
    return -elbo_nats / (static_cast<double>(dims) * std::log(2.0));
}

// x_T from the uniform base, then T reverse steps through the model
inline CategoricalBatch ancestral_sample(const DiffusionModel& model, int64_t n, Rng& rng, int64_t chunk = 4096) {
    CategoricalBatch out(n, model.dims, model.num_classes);
    for (int64_t start = 0; start < n; start += chunk) {
        int64_t B = std::min(chunk, n - start);
        CategoricalBatch x(B, model.dims, model.num_classes);
        for (auto& v : x.values) v = static_cast<int32_t>(rng.below(model.num_classes));
        for (int t = model.schedule.T; t >= 1; --t) x = sample_categorical(p_pred_value(model, x, t), rng);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t d = 0; d < model.dims; ++d) out.at(start + b, d) = x.at(b, d);
    }
    return out;
}

// most-likely x0 from a single reverse step at t = 1
inline CategoricalBatch denoise_once(const DiffusionModel& model, const CategoricalBatch& x1) {
    Tensor log_x0hat = log_softmax_last(
        model.denoiser->logits_value(x1, std::vector<int>(static_cast<size_t>(x1.batch), 1)));
    return log_onehot_to_index(log_x0hat);
}

}  // namespace catgen
