#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "density.hpp"
#include "diffusion.hpp"
#include "optim.hpp"
#include "train.hpp"

namespace catgen {

// Brute-force re-derivations of every closed-form formula the library
// implements, run through independent routes (linear-space matrices,
// exhaustive enumeration, finite differences, quadrature, Monte Carlo).

struct VerifyCheck {
    std::string name;
    double max_err = 0.0;
    double threshold = 0.0;
    bool pass = false;
    double seconds = 0.0;
};

namespace verify_detail {

using Clock = std::chrono::steady_clock;

struct Suite {
    std::vector<VerifyCheck> checks;
    Rng rng{20240607};

    void run(const std::string& name, double threshold, const std::function<double()>& body) {
        VerifyCheck c;
        c.name = name;
        c.threshold = threshold;
        auto t0 = Clock::now();
        try {
            c.max_err = body();
            c.pass = c.max_err <= threshold;
        } catch (const std::exception& e) {
            c.max_err = std::numeric_limits<double>::infinity();
            c.pass = false;
        }
        c.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        checks.push_back(c);
    }
};

inline std::vector<std::vector<double>> kernel_matrix(double alpha, int K) {
    std::vector<std::vector<double>> M(static_cast<size_t>(K), std::vector<double>(static_cast<size_t>(K), (1.0 - alpha) / K));
    for (int i = 0; i < K; ++i) M[static_cast<size_t>(i)][static_cast<size_t>(i)] += alpha;
    return M;
}

// marginals of the chain started at one-hot x0, all t, in linear space
inline std::vector<std::vector<double>> chain_marginals(const NoiseSchedule& sc, int K, int x0) {
    std::vector<std::vector<double>> marg(static_cast<size_t>(sc.T) + 1, std::vector<double>(static_cast<size_t>(K), 0.0));
    marg[0][static_cast<size_t>(x0)] = 1.0;
    for (int t = 1; t <= sc.T; ++t) {
        auto M = kernel_matrix(std::exp(sc.log_alpha[t]), K);
        for (int j = 0; j < K; ++j)
            for (int i = 0; i < K; ++i)
                marg[static_cast<size_t>(t)][static_cast<size_t>(j)] += M[static_cast<size_t>(j)][static_cast<size_t>(i)] *
                                                                        marg[static_cast<size_t>(t) - 1][static_cast<size_t>(i)];
    }
    return marg;
}

inline double ks_p_value(double d_stat, int64_t n) {
    double lam = (std::sqrt(static_cast<double>(n)) + 0.12 + 0.11 / std::sqrt(static_cast<double>(n))) * d_stat;
    double p = 0.0;
    for (int j = 1; j <= 100; ++j) p += 2.0 * (j % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lam * lam);
    return std::min(1.0, std::max(0.0, p));
}

// worst relative error between tape gradients and central differences over a
// probe of parameter entries
inline double fd_check(ad::Bound& bound, const ad::Tape& tape, const std::function<double()>& value) {
    auto params = bound.params();
    auto grads = bound.grads(tape);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        int64_t stride = std::max<int64_t>(1, p.numel() / 5);
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

}  // namespace verify_detail

inline std::vector<VerifyCheck> run_verify(bool quick) {
    using namespace verify_detail;
    Suite s;
    const int64_t mc_n = quick ? 20000 : 100000;
    const int constraint_n = quick ? 1000 : 10000;

    s.run("logspace-identities", 1e-9, [&] {
        double worst = 0.0;
        for (int rep = 0; rep < 200; ++rep) {
            double a = -8.0 * s.rng.uniform(), b = -8.0 * s.rng.uniform();
            worst = std::max(worst, std::fabs(log_add_exp(a, b) - std::log(std::exp(a) + std::exp(b))));
            if (log_add_exp(a, b) != log_add_exp(b, a)) worst = std::max(worst, 1.0);
            if (log_add_exp(a, kNegInf) != a) worst = std::max(worst, 1.0);
        }
        for (int rep = 0; rep < 100; ++rep) {
            Tensor x({4, 3, 5});
            for (double& v : x.data) v = 3.0 * s.rng.normal();
            Tensor lp = log_softmax_last(x);
            Tensor lse = log_sum_exp_last(lp);
            for (int64_t i = 0; i < lse.numel(); ++i) worst = std::max(worst, std::fabs(lse[i]));
        }
        return worst;
    });

    s.run("log1m-roundtrip", 1e-9, [&] {
        double worst = 0.0;
        for (int i = 0; i <= 2000; ++i) {
            double a = -50.0 + (50.0 - 1e-6) * i / 2000.0;
            worst = std::max(worst, std::fabs(std::exp(log_1_min_a(a)) - (1.0 - std::exp(a))));
        }
        return worst;
    });

    s.run("onehot-roundtrip", 0.0, [&] {
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            int K = 2 + static_cast<int>(s.rng.below(6));
            CategoricalBatch x(8, 3, K);
            for (auto& v : x.values) v = static_cast<int32_t>(s.rng.below(K));
            CategoricalBatch back = log_onehot_to_index(index_to_log_onehot(x, K));
            for (size_t i = 0; i < x.values.size(); ++i)
                if (back.values[i] != x.values[i]) worst = 1.0;
        }
        Tensor unif({1, 1, 5}, std::log(0.2));
        if (log_onehot_to_index(unif).values[0] != 0) worst = 1.0;  // tie rule
        return worst;
    });

    s.run("categorical-kl", 1e-9, [&] {
        double worst = 0.0;
        // hand case: a = (.5,.5), b = (.9,.1)
        Tensor la({1, 1, 2});
        la[0] = la[1] = std::log(0.5);
        Tensor lb({1, 1, 2});
        lb[0] = std::log(0.9);
        lb[1] = std::log(0.1);
        double expect = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
        worst = std::max(worst, std::fabs(categorical_kl(la, lb)[0] - expect));
        worst = std::max(worst, std::fabs(categorical_kl(la, la)[0]));
        // nonnegativity on random pairs
        for (int rep = 0; rep < 200; ++rep) {
            Tensor a({1, 2, 4}), b({1, 2, 4});
            for (double& v : a.data) v = s.rng.normal();
            for (double& v : b.data) v = s.rng.normal();
            Tensor kl = categorical_kl(log_softmax_last(a), log_softmax_last(b));
            for (int64_t i = 0; i < kl.numel(); ++i)
                if (kl[i] < -1e-9) worst = std::max(worst, -kl[i]);
        }
        return worst;
    });

    s.run("sample-categorical-freq", 4.0, [&] {
        std::vector<double> p = {0.2, 0.3, 0.5};
        Tensor lp({1, 1, 3});
        for (int i = 0; i < 3; ++i) lp[i] = std::log(p[static_cast<size_t>(i)]);
        std::vector<int64_t> gm_count(3, 0), icdf_count(3, 0);
        for (int64_t i = 0; i < mc_n; ++i) {
            gm_count[static_cast<size_t>(sample_categorical(lp, s.rng).values[0])]++;
            // independent inverse-CDF sampler
            double u = s.rng.uniform(), acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                acc += p[static_cast<size_t>(k)];
                if (u <= acc || k == 2) {
                    icdf_count[static_cast<size_t>(k)]++;
                    break;
                }
            }
        }
        double worst = 0.0;
        for (int k = 0; k < 3; ++k) {
            double sig = std::sqrt(p[static_cast<size_t>(k)] * (1 - p[static_cast<size_t>(k)]) / static_cast<double>(mc_n));
            worst = std::max(worst, std::fabs(gm_count[static_cast<size_t>(k)] / static_cast<double>(mc_n) - p[static_cast<size_t>(k)]) / sig);
            worst = std::max(worst, std::fabs(icdf_count[static_cast<size_t>(k)] / static_cast<double>(mc_n) - p[static_cast<size_t>(k)]) / sig);
        }
        return worst;
    });

    s.run("schedule-identities", 1e-9, [&] {
        double worst = 0.0;
        std::vector<int> Ts = {1, 7, 100, 1000};
        if (!quick) Ts.push_back(4000);
        for (int T : Ts) {
            NoiseSchedule sc = build_schedule(T);
            for (int t = 1; t <= T; ++t) {
                worst = std::max(worst, std::fabs(log_add_exp(sc.log_cumprod_alpha[t], sc.log_1_min_cumprod_alpha[t])));
                bool finite = std::isfinite(sc.log_alpha[t]) && std::isfinite(sc.log_1_min_alpha[t]) &&
                              std::isfinite(sc.log_cumprod_alpha[t]) && std::isfinite(sc.log_1_min_cumprod_alpha[t]);
                if (!finite || sc.log_alpha[t] >= 0.0) worst = std::max(worst, 1.0);
                if (t > 1 && !(sc.log_cumprod_alpha[t] < sc.log_cumprod_alpha[t - 1])) worst = std::max(worst, 1.0);
            }
        }
        NoiseSchedule sc = build_schedule(100);
        worst = std::max(worst, std::fabs(std::exp(sc.log_cumprod_alpha[50]) - cosine_alpha_bar(50, 100)));
        return worst;
    });

    s.run("schedule-cumsum", 1e-12, [&] {
        double worst = 0.0;
        std::vector<int> Ts = {1, 7, 100, 1000};
        if (!quick) Ts.push_back(4000);
        for (int T : Ts) {
            NoiseSchedule sc = build_schedule(T);
            long double acc = 0.0L;
            for (int t = 1; t <= T; ++t) {
                acc += static_cast<long double>(sc.log_alpha[t]);
                worst = std::max(worst, static_cast<double>(std::fabs(acc - static_cast<long double>(sc.log_cumprod_alpha[t]))));
            }
        }
        return worst;
    });

    s.run("kernel-composition", 1e-10, [&] {
        double worst = 0.0;
        for (int K : {2, 3, 4})
            for (int T : {2, 4, 8}) {
                NoiseSchedule sc = build_schedule(T, 0.004 + 0.05 * s.rng.uniform());
                for (int x0 = 0; x0 < K; ++x0) {
                    auto marg = chain_marginals(sc, K, x0);
                    CategoricalBatch xb(1, 1, K);
                    xb.at(0, 0) = x0;
                    Tensor lx0 = index_to_log_onehot(xb, K);
                    for (int t = 1; t <= T; ++t) {
                        Tensor m = q_marginal(sc, lx0, t);
                        for (int j = 0; j < K; ++j)
                            worst = std::max(worst, std::fabs(std::exp(m.at(0, 0, j)) - marg[static_cast<size_t>(t)][static_cast<size_t>(j)]));
                    }
                }
            }
        return worst;
    });

    s.run("posterior-bayes", 1e-10, [&] {
        double worst = 0.0;
        for (int K : {2, 3, 4}) {
            int T = 8;
            NoiseSchedule sc = build_schedule(T);
            for (int x0 = 0; x0 < K; ++x0) {
                auto marg = chain_marginals(sc, K, x0);
                CategoricalBatch xb(1, 1, K);
                xb.at(0, 0) = x0;
                Tensor lx0 = index_to_log_onehot(xb, K);
                for (int st = 1; st < T; ++st) {
                    auto M = kernel_matrix(std::exp(sc.log_alpha[st + 1]), K);
                    for (int xt = 0; xt < K; ++xt) {
                        CategoricalBatch xtb(1, 1, K);
                        xtb.at(0, 0) = xt;
                        Tensor post = q_posterior(sc, lx0, index_to_log_onehot(xtb, K), st);
                        for (int i = 0; i < K; ++i) {
                            double bayes = M[static_cast<size_t>(xt)][static_cast<size_t>(i)] * marg[static_cast<size_t>(st)][static_cast<size_t>(i)] /
                                           marg[static_cast<size_t>(st) + 1][static_cast<size_t>(xt)];
                            worst = std::max(worst, std::fabs(std::exp(post.at(0, 0, i)) - bayes));
                        }
                    }
                }
                // delta branch must be bit-exact
                CategoricalBatch x1b(1, 1, K);
                x1b.at(0, 0) = (x0 + 1) % K;
                Tensor p0 = q_posterior(sc, lx0, index_to_log_onehot(x1b, K), 0);
                for (int64_t i = 0; i < p0.numel(); ++i)
                    if (p0[i] != lx0[i]) worst = std::max(worst, 1.0);
            }
        }
        return worst;
    });

    s.run("kernel-symmetry", 1e-15, [&] {
        double worst = 0.0;
        NoiseSchedule sc = build_schedule(6);
        for (int K = 2; K <= 5; ++K)
            for (int t = 1; t <= 6; ++t)
                for (int a = 0; a < K; ++a)
                    for (int b = 0; b < K; ++b) {
                        CategoricalBatch xa(1, 1, K), xb(1, 1, K);
                        xa.at(0, 0) = a;
                        xb.at(0, 0) = b;
                        double lhs = q_forward_one_step(sc, index_to_log_onehot(xa, K), t).at(0, 0, b);
                        double rhs = q_forward_one_step(sc, index_to_log_onehot(xb, K), t).at(0, 0, a);
                        worst = std::max(worst, std::fabs(lhs - rhs));
                    }
        return worst;
    });

    s.run("posterior-normalized-soft", 1e-9, [&] {
        double worst = 0.0;
        NoiseSchedule sc = build_schedule(10);
        for (int rep = 0; rep < 100; ++rep) {
            Tensor soft({2, 3, 4});
            for (double& v : soft.data) v = 2.0 * s.rng.normal();
            soft = log_softmax_last(soft);
            CategoricalBatch xt(2, 3, 4);
            for (auto& v : xt.values) v = static_cast<int32_t>(s.rng.below(4));
            int st = 1 + static_cast<int>(s.rng.below(9));
            Tensor post = q_posterior(sc, soft, index_to_log_onehot(xt, 4), st);
            Tensor lse = log_sum_exp_last(post);
            for (int64_t i = 0; i < lse.numel(); ++i) worst = std::max(worst, std::fabs(lse[i]));
        }
        return worst;
    });

    s.run("loss-linear-space", 1e-9, [&] {
        double worst = 0.0;
        int K = 2, D = 2, T = 4;
        Rng mr(5);
        MlpDenoiser den(D, K, T, 12, 1, mr);
        for (double& v : den.output.w.data) v = 0.4 * mr.normal();
        DiffusionModel dm{build_schedule(T), &den, D, K};
        for (int rep = 0; rep < 20; ++rep) {
            CategoricalBatch x0(3, D, K), xt(3, D, K);
            for (auto& v : x0.values) v = static_cast<int32_t>(s.rng.below(K));
            for (auto& v : xt.values) v = static_cast<int32_t>(s.rng.below(K));
            for (int t = 1; t <= T; ++t) {
                std::vector<int> ts(3, t);
                Tensor impl = loss_term_value(dm, x0, xt, ts);
                // independent linear-space route straight from the closed form
                Tensor logits = den.logits_value(xt, ts);
                for (int64_t b = 0; b < 3; ++b) {
                    double total = 0.0;
                    for (int64_t d = 0; d < D; ++d) {
                        std::vector<double> x0hat(static_cast<size_t>(K));
                        double mx = -1e300, z = 0.0;
                        for (int k = 0; k < K; ++k) mx = std::max(mx, logits.at(b, d, k));
                        for (int k = 0; k < K; ++k) z += std::exp(logits.at(b, d, k) - mx);
                        for (int k = 0; k < K; ++k) x0hat[static_cast<size_t>(k)] = std::exp(logits.at(b, d, k) - mx) / z;
                        auto theta_post = [&](const std::vector<double>& start) {
                            std::vector<double> th(static_cast<size_t>(K));
                            double abar = std::exp(dm.schedule.log_cumprod_alpha[t - 1]);
                            double al = std::exp(dm.schedule.log_alpha[t]);
                            double tot = 0.0;
                            if (t == 1) return start;
                            for (int k = 0; k < K; ++k) {
                                double a_part = al * (xt.at(b, d) == k ? 1.0 : 0.0) + (1.0 - al) / K;
                                double b_part = abar * start[static_cast<size_t>(k)] + (1.0 - abar) / K;
                                th[static_cast<size_t>(k)] = a_part * b_part;
                                tot += th[static_cast<size_t>(k)];
                            }
                            for (double& v : th) v /= tot;
                            return th;
                        };
                        std::vector<double> x0vec(static_cast<size_t>(K), 0.0);
                        x0vec[static_cast<size_t>(x0.at(b, d))] = 1.0;
                        std::vector<double> pt = theta_post(x0vec);
                        std::vector<double> pm = theta_post(x0hat);
                        for (int k = 0; k < K; ++k)
                            if (pt[static_cast<size_t>(k)] > 0.0)
                                total += pt[static_cast<size_t>(k)] * (std::log(pt[static_cast<size_t>(k)]) - std::log(pm[static_cast<size_t>(k)]));
                    }
                    worst = std::max(worst, std::fabs(impl[b] - total));
                }
            }
        }
        return worst;
    });

    s.run("elbo-exact-likelihood", 1e-9, [&] {
        Rng mr(7);
        MlpDenoiser den(1, 2, 3, 8, 1, mr);
        for (double& v : den.output.w.data) v = 0.5 * mr.normal();
        for (double& v : den.output.b.data) v = 0.5 * mr.normal();
        DiffusionModel dm{build_schedule(3), &den, 1, 2};
        double worst = 0.0;
        for (int x0 = 0; x0 < 2; ++x0) {
            CategoricalBatch xb(1, 1, 2);
            xb.at(0, 0) = x0;
            Rng er(1);
            double bound = elbo(dm, xb, ElboMode::full, er)[0];
            double px0 = 0.0;
            for (int x1 = 0; x1 < 2; ++x1)
                for (int x2 = 0; x2 < 2; ++x2)
                    for (int x3 = 0; x3 < 2; ++x3) {
                        auto prob = [&](int xt, int t, int xtm1) {
                            CategoricalBatch xtb(1, 1, 2);
                            xtb.at(0, 0) = xt;
                            return std::exp(p_pred_value(dm, xtb, t).at(0, 0, xtm1));
                        };
                        px0 += 0.5 * prob(x3, 3, x2) * prob(x2, 2, x1) * prob(x1, 1, x0);
                    }
            worst = std::max(worst, bound - std::log(px0));  // must not exceed
        }
        return std::max(0.0, worst);
    });

    s.run("argmax-constraint", 0.0, [&] {
        int D = 3, K = 5;
        Rng mr(3);
        ThresholdPosterior tp(D, K);
        for (double& v : tp.noise.mu.data) v = 0.3 * mr.normal();
        for (double& v : tp.noise.log_sigma.data) v = 0.2 * mr.normal();
        GumbelPosterior gp(D, K);
        for (double& v : gp.phi.data) v = mr.normal();
        GumbelThresholdPosterior gtp(D, K, 8, 2, mr);
        for (double& v : gtp.phi.data) v = mr.normal();
        double bad = 0.0;
        int reps = constraint_n / 8;
        for (int rep = 0; rep < reps; ++rep) {
            CategoricalBatch x(8, D, K);
            for (auto& v : x.values) v = static_cast<int32_t>(s.rng.below(K));
            for (PosteriorModel* pm : {static_cast<PosteriorModel*>(&tp), static_cast<PosteriorModel*>(&gp),
                                       static_cast<PosteriorModel*>(&gtp)}) {
                ad::Tape tape;
                ad::Bound bound;
                PosteriorDraw d = pm->sample(tape, bound, x, s.rng);
                CategoricalBatch got = argmax_map(tape.val(d.v));
                for (size_t i = 0; i < got.values.size(); ++i)
                    if (got.values[i] != x.values[i]) bad += 1.0;
                for (int64_t b = 0; b < 8; ++b)
                    if (!std::isfinite(tape.val(d.log_q)[b])) bad += 1.0;
            }
        }
        return bad;
    });

    s.run("gumbel-argmax-law", 4.0, [&] {
        std::vector<double> phi = {0.3, -0.5, 1.1, 0.0};
        std::vector<int64_t> count(4, 0);
        for (int64_t i = 0; i < mc_n; ++i) {
            int best = 0;
            double bv = -1e300;
            for (int k = 0; k < 4; ++k) {
                double g = gumbel_sample(phi[static_cast<size_t>(k)], s.rng);
                if (g > bv) {
                    bv = g;
                    best = k;
                }
            }
            count[static_cast<size_t>(best)]++;
        }
        double Z = 0.0;
        for (double p : phi) Z += std::exp(p);
        double worst = 0.0;
        for (int k = 0; k < 4; ++k) {
            double p = std::exp(phi[static_cast<size_t>(k)]) / Z;
            double sig = std::sqrt(p * (1 - p) / static_cast<double>(mc_n));
            worst = std::max(worst, std::fabs(count[static_cast<size_t>(k)] / static_cast<double>(mc_n) - p) / sig);
        }
        return worst;
    });

    s.run("gumbel-max-ks", 0.99, [&] {
        // statistic reported as 1 - p; passes when p > 0.01
        std::vector<double> phi = {0.2, -0.4, 0.9};
        double phi_max = std::log(std::exp(phi[0]) + std::exp(phi[1]) + std::exp(phi[2]));
        std::vector<double> maxes(static_cast<size_t>(mc_n));
        for (int64_t i = 0; i < mc_n; ++i) {
            double m = -1e300;
            for (double p : phi) m = std::max(m, gumbel_sample(p, s.rng));
            maxes[static_cast<size_t>(i)] = m;
        }
        std::sort(maxes.begin(), maxes.end());
        double d_stat = 0.0;
        for (int64_t i = 0; i < mc_n; ++i) {
            double F = gumbel_cdf(maxes[static_cast<size_t>(i)], phi_max);
            d_stat = std::max(d_stat, std::fabs(F - (i + 1) / static_cast<double>(mc_n)));
            d_stat = std::max(d_stat, std::fabs(F - i / static_cast<double>(mc_n)));
        }
        return 1.0 - ks_p_value(d_stat, mc_n);
    });

    s.run("gumbel-moments-and-truncation", 0.02, [&] {
        double sum = 0.0;
        int64_t n = mc_n;
        for (int64_t i = 0; i < n; ++i) sum += gumbel_sample(0.0, s.rng);
        double gamma = 0.5772156649015329;
        double worst = std::fabs(sum / static_cast<double>(n) - gamma);
        double T = 0.7;
        for (int i = 0; i < 5000; ++i)
            if (!(trunc_gumbel_sample(0.3, T, s.rng) < T)) worst = std::max(worst, 1.0);
        return worst;
    });

    s.run("gumbel-density-vs-cdf", 1e-4, [&] {
        double worst = 0.0;
        const double h = 1e-5;
        for (double g : {-0.8, 0.2, 1.5}) {
            double num = (gumbel_cdf(g + h, 0.3) - gumbel_cdf(g - h, 0.3)) / (2 * h);
            worst = std::max(worst, std::fabs(num - std::exp(gumbel_log_pdf(g, 0.3))));
            double T = 1.8;
            double numt = (trunc_gumbel_cdf(g + h, 0.3, T) - trunc_gumbel_cdf(g - h, 0.3, T)) / (2 * h);
            worst = std::max(worst, std::fabs(numt - std::exp(trunc_gumbel_log_pdf(g, 0.3, T))));
        }
        return worst;
    });

    s.run("threshold-bijectivity", 1e-8, [&] {
        double worst = 0.0;
        double T = 0.4;
        double prev = -1e300;
        for (int i = 0; i <= 400; ++i) {
            double u = -20.0 + 40.0 * i / 400.0;
            auto [v, ld] = softplus_threshold(u, T);
            if (!(v < T)) worst = std::max(worst, 1.0);
            if (!(v > prev)) worst = std::max(worst, 1.0);  // strictly increasing
            prev = v;
            // the inverse loses digits once v is within ~1e-7 of T, and
            // central differences cannot resolve slopes below ~1e-4
            if (u < T + 15.0) worst = std::max(worst, std::fabs(softplus_threshold_inverse(v, T) - u));
            if (u < T + 8.0) {
                const double h = 1e-4;
                double num = (softplus_threshold(u + h, T).v - softplus_threshold(u - h, T).v) / (2 * h);
                worst = std::max(worst, std::fabs(std::log(num) - ld));
            }
        }
        worst = std::max(worst, std::fabs(softplus_threshold(T, T).v - (T - std::log(2.0))));
        return worst;
    });

    s.run("cartesian-roundtrip", 0.0, [&] {
        double bad = 0.0;
        for (int K : {2, 3, 10, 27, 200, 256})
            for (int M : {2, 3, 6, 10}) {
                int dm = cartesian_digits(K, M);
                // dm is the least d with M^d >= K
                int64_t cap = 1;
                for (int j = 0; j < dm; ++j) cap *= M;
                int64_t cap_prev = cap / M;
                if (!(cap >= K && (dm == 1 || cap_prev < K))) bad += 1.0;
                CategoricalBatch x(K, 1, K);
                for (int i = 0; i < K; ++i) x.at(i, 0) = i;
                CartesianDecodeResult dec = cartesian_decode(cartesian_encode(x, M), K, M);
                if (!dec.all_valid) bad += 1.0;
                for (int i = 0; i < K; ++i)
                    if (dec.x.at(i, 0) != i) bad += 1.0;
            }
        if (cartesian_digits(256, 2) != 8 || cartesian_digits(27, 2) != 5 || cartesian_digits(10, 10) != 1) bad += 1.0;
        // out-of-alphabet digits must be flagged
        CategoricalBatch digits(1, 3, 10);
        digits.at(0, 0) = 9;
        digits.at(0, 1) = 9;
        digits.at(0, 2) = 9;
        if (cartesian_decode(digits, 200, 10).all_valid) bad += 1.0;
        return bad;
    });

    s.run("dequantization-floor", 0.0, [&] {
        double bad = 0.0;
        Rng mr(9);
        UniformDequant ud;
        VariationalDequant vd(2, 4, 8, 2, mr);
        for (int rep = 0; rep < 50; ++rep) {
            CategoricalBatch x(4, 2, 4);
            for (auto& v : x.values) v = static_cast<int32_t>(s.rng.below(4));
            for (PosteriorModel* pm : {static_cast<PosteriorModel*>(&ud), static_cast<PosteriorModel*>(&vd)}) {
                ad::Tape tape;
                ad::Bound bound;
                PosteriorDraw d = pm->sample(tape, bound, x, s.rng);
                const Tensor& v = tape.val(d.v);
                for (int64_t b = 0; b < 4; ++b)
                    for (int64_t dd = 0; dd < 2; ++dd)
                        for (int64_t k = 0; k < 4; ++k) {
                            double want = x.at(b, dd) == k ? 1.0 : 0.0;
                            if (std::floor(v.at(b, dd, k)) != want) bad += 1.0;
                        }
                if (pm == static_cast<PosteriorModel*>(&ud))
                    for (int64_t b = 0; b < 4; ++b)
                        if (tape.val(d.log_q)[b] != 0.0) bad += 1.0;
            }
        }
        return bad;
    });

    s.run("flow-invertibility", 1e-6, [&] {
        double worst = 0.0;
        Rng mr(21);
        FlowModel fm(6, 3, 8, mr);
        mr = Rng(22);
        // jitter so the flow is not the identity
        fm.visit_params("f", [&](const std::string&, Tensor& t) {
            for (double& v : t.data) v += 0.2 * mr.normal();
        });
        for (int rep = 0; rep < 20; ++rep) {
            Tensor z({4, 6});
            for (double& v : z.data) v = s.rng.normal();
            Tensor v = z;
            for (auto it = fm.blocks.rbegin(); it != fm.blocks.rend(); ++it) {
                v = it->mix.generate(v);
                v = it->cpl.generate(v);
            }
            ad::Tape tape;
            ad::Bound bound;
            ad::Var logdet = tape.constant(Tensor({4}));
            ad::Var u = tape.constant(v);
            for (const auto& blk : fm.blocks) {
                u = blk.cpl.normalize(tape, bound, u, logdet);
                u = blk.mix.normalize(tape, bound, u, logdet);
            }
            for (int64_t i = 0; i < z.numel(); ++i) worst = std::max(worst, std::fabs(tape.val(u)[i] - z[i]));
        }
        return worst;
    });

    s.run("gradient-checks", 1e-4, [&] {
        double worst = 0.0;
        {
            TrainConfig cfg;
            cfg.model = ModelKind::multinomial_diffusion;
            cfg.T = 6;
            cfg.dataset.K = 3;
            cfg.denoiser_hidden = 10;
            cfg.denoiser_blocks = 1;
            ModelBundle mb = build_model(cfg);
            Rng jr(5);
            for (double& v : mb.denoiser->output.w.data) v = 0.3 * jr.normal();
            CategoricalBatch x0(4, 2, 3), xt(4, 2, 3);
            Rng rr(9);
            for (auto& v : x0.values) v = static_cast<int32_t>(rr.below(3));
            for (auto& v : xt.values) v = static_cast<int32_t>(rr.below(3));
            std::vector<int> ts = {1, 3, 6, 2};
            ad::Tape tape;
            ad::Bound bound;
            ad::Var loss = tape.sum_all(loss_term(tape, bound, mb.diff, x0, xt, ts));
            tape.backward(loss);
            worst = std::max(worst, fd_check(bound, tape, [&] {
                ad::Tape t2;
                ad::Bound b2;
                return t2.val(t2.sum_all(loss_term(t2, b2, mb.diff, x0, xt, ts)))[0];
            }));
        }
        for (PosteriorKind kind : {PosteriorKind::softplus, PosteriorKind::gumbel, PosteriorKind::gumbel_threshold,
                                   PosteriorKind::variational_deq}) {
            TrainConfig cfg;
            cfg.model = ModelKind::argmax_flow;
            cfg.posterior = kind;
            cfg.dataset.K = 4;
            cfg.flow_blocks = 2;
            cfg.flow_hidden = 8;
            cfg.posterior_hidden = 6;
            cfg.posterior_layers = 2;
            ModelBundle mb = build_model(cfg);
            Rng jr(17);
            mb.visit_params([&](const std::string&, Tensor& t) {
                for (double& v : t.data) v += 0.1 * jr.normal();
            });
            CategoricalBatch x(4, 2, 4);
            Rng rr(3);
            for (auto& v : x.values) v = static_cast<int32_t>(rr.below(4));
            ad::Tape tape;
            ad::Bound bound;
            Rng r0(123);
            ad::Var loss = tape.sum_all(mb.amf.elbo(tape, bound, x, r0));
            tape.backward(loss);
            worst = std::max(worst, fd_check(bound, tape, [&] {
                Rng r(123);
                ad::Tape t2;
                ad::Bound b2;
                return t2.val(t2.sum_all(mb.amf.elbo(t2, b2, x, r)))[0];
            }));
        }
        return worst;
    });

    s.run("adam-quadratic", 1e-3, [&] {
        Tensor x({1});
        x[0] = 0.0;
        Adam adam;
        double target = 0.5;
        for (int i = 0; i < 400; ++i) {
            Tensor g({1});
            g[0] = x[0] - target;
            adam.step({&x}, {g}, 0.02);
        }
        return std::fabs(x[0] - target);
    });

    s.run("density-quadrature", 1e-2, [&] {
        Rng mr(31);
        FlowModel fm(2, 2, 6, mr);
        fm.visit_params("f", [&](const std::string&, Tensor& t) {
            for (double& v : t.data) v += 0.15 * mr.normal();
        });
        // Simpson on [-9, 9]^2
        int N = quick ? 120 : 240;
        double lo = -9.0, hi = 9.0, hstep = (hi - lo) / N;
        auto w1 = [&](int i) { return (i == 0 || i == N) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0); };
        double total = 0.0;
        for (int i = 0; i <= N; ++i) {
            Tensor row({static_cast<int64_t>(N) + 1, 2});
            for (int j = 0; j <= N; ++j) {
                row.at(j, 0) = lo + i * hstep;
                row.at(j, 1) = lo + j * hstep;
            }
            Tensor lp = fm.log_prob_value(row);
            for (int j = 0; j <= N; ++j) total += w1(i) * w1(j) * std::exp(lp[j]);
        }
        total *= hstep * hstep / 9.0;
        return std::fabs(total - 1.0);
    });

    return s.checks;
}

inline int run_verify_cli(bool quick) {
    std::vector<VerifyCheck> checks = run_verify(quick);
    bool all = true;
    for (const auto& c : checks) {
        std::printf("%-28s max_err %11.4e  (<= %8.1e)  %-4s  %6.2fs\n", c.name.c_str(), c.max_err, c.threshold,
                    c.pass ? "ok" : "FAIL", c.seconds);
        all = all && c.pass;
    }
    std::printf("%s\n", all ? "verify: all checks passed" : "verify: FAILURES present");
    return all ? 0 : 1;
}

}  // namespace catgen
