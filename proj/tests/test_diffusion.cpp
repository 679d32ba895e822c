#include <catch2/catch_amalgamated.hpp>

#include "catgen/diffusion.hpp"
#include "oracles.hpp"

using namespace catgen;

namespace {

// predicts the true x0 with (clamped) one-hot logits
struct OracleDenoiser : Denoiser {
    CategoricalBatch target;
    ad::Var logits(ad::Tape& tape, ad::Bound&, const CategoricalBatch&, const std::vector<int>&) override {
        return tape.constant(index_to_log_onehot(target, target.num_classes));
    }
};

struct UniformDenoiser : Denoiser {
    int K;
    explicit UniformDenoiser(int k) : K(k) {}
    ad::Var logits(ad::Tape& tape, ad::Bound&, const CategoricalBatch& x_t, const std::vector<int>&) override {
        return tape.constant(Tensor({x_t.batch, x_t.dims, static_cast<int64_t>(K)}, 0.0));
    }
};

struct ConstClassDenoiser : Denoiser {
    int K, cls;
    ConstClassDenoiser(int k, int c) : K(k), cls(c) {}
    ad::Var logits(ad::Tape& tape, ad::Bound&, const CategoricalBatch& x_t, const std::vector<int>&) override {
        CategoricalBatch t(x_t.batch, x_t.dims, K);
        for (auto& v : t.values) v = static_cast<int32_t>(cls);
        return tape.constant(index_to_log_onehot(t, K));
    }
};

CategoricalBatch random_batch(int64_t B, int64_t D, int K, Rng& rng) {
    CategoricalBatch x(B, D, K);
    for (auto& v : x.values) v = static_cast<int32_t>(rng.below(K));
    return x;
}

}  // namespace

TEST_CASE("one-step kernel at the noise-free and all-noise limits") {
    int K = 4;
    CategoricalBatch x(1, 1, K);
    x.at(0, 0) = 2;
    Tensor lx = index_to_log_onehot(x, K);

    NoiseSchedule clean = schedule_from_alpha_bar({1.0});  // clipped to 1 - 1e-8
    Tensor out = q_forward_one_step(clean, lx, 1);
    for (int k = 0; k < K; ++k)
        CHECK(std::exp(out.at(0, 0, k)) == Catch::Approx(k == 2 ? 1.0 : 0.0).margin(1e-7));

    NoiseSchedule noisy = schedule_from_alpha_bar({1e-12});  // clipped to 1e-8
    out = q_forward_one_step(noisy, lx, 1);
    for (int k = 0; k < K; ++k) CHECK(std::exp(out.at(0, 0, k)) == Catch::Approx(0.25).margin(1e-7));
}

TEST_CASE("one-step kernel hand example: K=3, alpha=0.9") {
    NoiseSchedule sc = schedule_from_alpha_bar({0.9});
    CategoricalBatch x(1, 1, 3);
    x.at(0, 0) = 0;
    Tensor out = q_forward_one_step(sc, index_to_log_onehot(x, 3), 1);
    CHECK(std::exp(out.at(0, 0, 0)) == Catch::Approx(0.9 + 0.1 / 3.0).margin(1e-12));
    CHECK(std::exp(out.at(0, 0, 1)) == Catch::Approx(0.1 / 3.0).margin(1e-12));
    CHECK(std::exp(out.at(0, 0, 2)) == Catch::Approx(0.1 / 3.0).margin(1e-12));
    CHECK_THROWS_AS(q_forward_one_step(sc, index_to_log_onehot(x, 3), 2), std::invalid_argument);
}

TEST_CASE("marginal equals composed one-step kernels") {
    Rng rng(3);
    for (int K : {2, 3, 4})
        for (int T : {2, 4, 8}) {
            NoiseSchedule sc = build_schedule(T, 0.004 + 0.05 * rng.uniform());
            for (int x0 = 0; x0 < K; ++x0) {
                auto marg = oracles::chain_marginals(sc, K, x0);
                CategoricalBatch xb(1, 1, K);
                xb.at(0, 0) = x0;
                Tensor lx0 = index_to_log_onehot(xb, K);
                for (int t = 1; t <= T; ++t) {
                    Tensor m = q_marginal(sc, lx0, t);
                    for (int k = 0; k < K; ++k)
                        CHECK(std::fabs(std::exp(m.at(0, 0, k)) - marg[static_cast<size_t>(t)][static_cast<size_t>(k)]) <= 1e-10);
                }
            }
        }
}

TEST_CASE("marginal endpoints") {
    NoiseSchedule sc = build_schedule(100);
    CategoricalBatch x(1, 1, 5);
    x.at(0, 0) = 1;
    Tensor lx = index_to_log_onehot(x, 5);
    // t = 0 is the identity, bitwise
    Tensor m0 = q_marginal(sc, lx, 0);
    CHECK(m0.data == lx.data);
    // t = T is near uniform
    Tensor mT = q_marginal(sc, lx, 100);
    for (int k = 0; k < 5; ++k) CHECK(std::exp(mT.at(0, 0, k)) == Catch::Approx(0.2).margin(1e-7));
}

TEST_CASE("posterior equals the enumerated Bayes rule") {
    for (int K : {2, 3, 4}) {
        int T = 8;
        NoiseSchedule sc = build_schedule(T);
        for (int x0 = 0; x0 < K; ++x0) {
            auto marg = oracles::chain_marginals(sc, K, x0);
            CategoricalBatch xb(1, 1, K);
            xb.at(0, 0) = x0;
            Tensor lx0 = index_to_log_onehot(xb, K);
            for (int s = 1; s < T; ++s) {
                auto M = oracles::kernel_matrix(std::exp(sc.log_alpha[s + 1]), K);
                for (int xt = 0; xt < K; ++xt) {
                    CategoricalBatch xtb(1, 1, K);
                    xtb.at(0, 0) = xt;
                    Tensor post = q_posterior(sc, lx0, index_to_log_onehot(xtb, K), s);
                    for (int i = 0; i < K; ++i) {
                        double bayes = M[static_cast<size_t>(xt)][static_cast<size_t>(i)] *
                                       marg[static_cast<size_t>(s)][static_cast<size_t>(i)] /
                                       marg[static_cast<size_t>(s) + 1][static_cast<size_t>(xt)];
                        CHECK(std::fabs(std::exp(post.at(0, 0, i)) - bayes) <= 1e-10);
                    }
                }
            }
        }
    }
}

TEST_CASE("posterior s = 0 returns log_x0 bitwise") {
    NoiseSchedule sc = build_schedule(10);
    CategoricalBatch x0(2, 3, 4), x1(2, 3, 4);
    Rng rng(5);
    for (auto& v : x0.values) v = static_cast<int32_t>(rng.below(4));
    for (auto& v : x1.values) v = static_cast<int32_t>(rng.below(4));
    Tensor lx0 = index_to_log_onehot(x0, 4);
    Tensor post = q_posterior(sc, lx0, index_to_log_onehot(x1, 4), 0);
    CHECK(post.data == lx0.data);
}

TEST_CASE("posterior is normalized for soft predictions") {
    NoiseSchedule sc = build_schedule(12);
    Rng rng(7);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor soft({2, 2, 5});
        for (double& v : soft.data) v = 2.0 * rng.normal();
        soft = log_softmax_last(soft);
        CategoricalBatch xt = random_batch(2, 2, 5, rng);
        int s = 1 + static_cast<int>(rng.below(11));
        Tensor post = q_posterior(sc, soft, index_to_log_onehot(xt, 5), s);
        Tensor lse = log_sum_exp_last(post);
        for (int64_t i = 0; i < lse.numel(); ++i) CHECK(std::fabs(lse[i]) <= 1e-9);
    }
}

TEST_CASE("one-step kernel is symmetric in its endpoints") {
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
                    CHECK(lhs == rhs);
                }
}

TEST_CASE("tape posterior path agrees with the plain kernels") {
    NoiseSchedule sc = build_schedule(9);
    Rng rng(11);
    int K = 4, D = 2;
    OracleDenoiser den;
    den.target = random_batch(3, D, K, rng);
    DiffusionModel dm{sc, &den, D, K};
    CategoricalBatch xt = random_batch(3, D, K, rng);
    for (int t = 2; t <= 9; ++t) {
        ad::Tape tape;
        ad::Bound bound;
        Tensor via_tape = tape.val(p_pred(tape, bound, dm, xt, t));
        Tensor plain = q_posterior(sc, index_to_log_onehot(den.target, K), index_to_log_onehot(xt, K), t - 1);
        for (int64_t i = 0; i < plain.numel(); ++i) CHECK(via_tape[i] == Catch::Approx(plain[i]).margin(1e-9));
    }
    // plain evaluation path agrees with the tape path
    Tensor plain_pred = p_pred_value(dm, xt, 5);
    ad::Tape tape;
    ad::Bound bound;
    Tensor tape_pred = tape.val(p_pred(tape, bound, dm, xt, 5));
    for (int64_t i = 0; i < plain_pred.numel(); ++i) CHECK(plain_pred[i] == Catch::Approx(tape_pred[i]).margin(1e-12));
}

TEST_CASE("perfect denoiser gives zero loss for t >= 2") {
    NoiseSchedule sc = build_schedule(8);
    Rng rng(13);
    int K = 3, D = 2;
    OracleDenoiser den;
    den.target = random_batch(4, D, K, rng);
    DiffusionModel dm{sc, &den, D, K};
    Tensor lx0 = index_to_log_onehot(den.target, K);
    for (int t = 2; t <= 8; ++t) {
        CategoricalBatch xt = sample_categorical(q_marginal(sc, lx0, t), rng);
        Tensor loss = loss_term_value(dm, den.target, xt, std::vector<int>(4, t));
        for (int64_t b = 0; b < 4; ++b) CHECK(loss[b] <= 1e-9);
    }
}

TEST_CASE("t = 1 loss with a uniform prediction is D log K") {
    NoiseSchedule sc = build_schedule(8);
    Rng rng(17);
    int K = 5, D = 3;
    UniformDenoiser den(K);
    DiffusionModel dm{sc, &den, D, K};
    CategoricalBatch x0 = random_batch(4, D, K, rng);
    CategoricalBatch x1 = random_batch(4, D, K, rng);
    Tensor loss = loss_term_value(dm, x0, x1, std::vector<int>(4, 1));
    for (int64_t b = 0; b < 4; ++b)
        CHECK(loss[b] == Catch::Approx(D * std::log(static_cast<double>(K))).margin(1e-7));
}

TEST_CASE("loss matches an independent linear-space computation") {
    int K = 2, D = 2, T = 4;
    NoiseSchedule sc = build_schedule(T);
    Rng rng(19);
    Rng mr(5);
    MlpDenoiser den(D, K, T, 12, 1, mr);
    for (double& v : den.output.w.data) v = 0.4 * mr.normal();
    DiffusionModel dm{sc, &den, D, K};
    for (int rep = 0; rep < 10; ++rep) {
        CategoricalBatch x0 = random_batch(3, D, K, rng);
        CategoricalBatch xt = random_batch(3, D, K, rng);
        for (int t = 1; t <= T; ++t) {
            std::vector<int> ts(3, t);
            Tensor impl = loss_term_value(dm, x0, xt, ts);
            Tensor logits = den.logits_value(xt, ts);
            for (int64_t b = 0; b < 3; ++b) {
                double total = 0.0;
                for (int64_t d = 0; d < D; ++d) {
                    // softmax of the prediction in plain arithmetic
                    std::vector<double> x0hat(static_cast<size_t>(K));
                    double mx = std::max(logits.at(b, d, 0), logits.at(b, d, 1));
                    double z = 0.0;
                    for (int k = 0; k < K; ++k) z += std::exp(logits.at(b, d, k) - mx);
                    for (int k = 0; k < K; ++k) x0hat[static_cast<size_t>(k)] = std::exp(logits.at(b, d, k) - mx) / z;
                    auto theta_post = [&](const std::vector<double>& start) {
                        if (t == 1) return start;
                        std::vector<double> th(static_cast<size_t>(K));
                        double abar = std::exp(sc.log_cumprod_alpha[t - 1]);
                        double al = std::exp(sc.log_alpha[t]);
                        double tot = 0.0;
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
                    total += oracles::kl_linear(theta_post(x0vec), theta_post(x0hat));
                }
                CHECK(std::fabs(impl[b] - total) <= 1e-9);
            }
        }
    }
}

TEST_CASE("prior KL hand case and positivity") {
    // T = 1, abar = 0.5, K = 2: q(x_T | x0) = (0.75, 0.25)
    NoiseSchedule sc = schedule_from_alpha_bar({0.5});
    UniformDenoiser den(2);
    DiffusionModel dm{sc, &den, 1, 2};
    CategoricalBatch x0(1, 1, 2);
    x0.at(0, 0) = 0;
    double expect = 0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
    Tensor pk = prior_kl(dm, index_to_log_onehot(x0, 2));
    CHECK(pk[0] == Catch::Approx(expect).margin(1e-9));
    CHECK(pk[0] >= 0.0);

    // a long schedule drives the prior term to ~0
    NoiseSchedule sc2 = build_schedule(100);
    DiffusionModel dm2{sc2, &den, 1, 2};
    CHECK(prior_kl(dm2, index_to_log_onehot(x0, 2))[0] <= 1e-6);
}

TEST_CASE("perfect denoiser gives a near-zero bound gap") {
    NoiseSchedule sc = build_schedule(16);
    Rng rng(23);
    int K = 3, D = 2;
    OracleDenoiser den;
    den.target = random_batch(4, D, K, rng);
    DiffusionModel dm{sc, &den, D, K};
    Tensor e = elbo(dm, den.target, ElboMode::full, rng);
    Tensor pk = prior_kl(dm, index_to_log_onehot(den.target, K));
    for (int64_t b = 0; b < 4; ++b) CHECK(std::fabs(e[b] + pk[b]) <= 1e-7);
}

TEST_CASE("full-mode bound never exceeds the exact log-likelihood") {
    Rng mr(7);
    MlpDenoiser den(1, 2, 3, 8, 1, mr);
    for (double& v : den.output.w.data) v = 0.5 * mr.normal();
    for (double& v : den.output.b.data) v = 0.5 * mr.normal();
    DiffusionModel dm{build_schedule(3), &den, 1, 2};
    for (int x0v = 0; x0v < 2; ++x0v) {
        CategoricalBatch xb(1, 1, 2);
        xb.at(0, 0) = x0v;
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
                    px0 += 0.5 * prob(x3, 3, x2) * prob(x2, 2, x1) * prob(x1, 1, x0v);
                }
        CHECK(bound <= std::log(px0) + 1e-9);
    }
}

TEST_CASE("bits per dim conversion") {
    CHECK(bits_per_dim(-std::log(8.0) * 2.0, 2) == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("importance sampler warm-up and weighting") {
    LossHistory hist(5);
    std::vector<double> w = hist.weights();
    double total = 0.0;
    for (int t = 1; t <= 5; ++t) {
        CHECK(w[static_cast<size_t>(t)] == Catch::Approx(0.2).margin(1e-12));
        total += w[static_cast<size_t>(t)];
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-12));
    CHECK(!hist.warmed_up());

    // fill; give t = 3 a dominant loss
    for (int t = 1; t <= 5; ++t)
        for (int i = 0; i < LossHistory::capacity; ++i) hist.record(t, t == 3 ? 10.0 : 1.0);
    CHECK(hist.warmed_up());
    w = hist.weights();
    total = 0.0;
    for (int t = 1; t <= 5; ++t) {
        total += w[static_cast<size_t>(t)];
        if (t != 3) CHECK(w[3] > w[static_cast<size_t>(t)]);
    }
    CHECK(std::fabs(total - 1.0) <= 1e-12);
    CHECK(w[3] == Catch::Approx(10.0 / (10.0 + 4.0)).margin(1e-12));

    // ring buffer: overwrite t = 3 history with small losses
    for (int i = 0; i < LossHistory::capacity; ++i) hist.record(3, 1.0);
    w = hist.weights();
    CHECK(w[3] == Catch::Approx(0.2).margin(1e-12));

    Rng rng(29);
    std::vector<int64_t> counts(6, 0);
    for (int i = 0; i < 20000; ++i) counts[static_cast<size_t>(sample_t_importance(hist, rng).t)]++;
    for (int t = 1; t <= 5; ++t) CHECK(std::fabs(counts[static_cast<size_t>(t)] / 20000.0 - 0.2) <= 0.02);
}

TEST_CASE("sampled-mode bound is finite and reweighted") {
    NoiseSchedule sc = build_schedule(10);
    Rng rng(31);
    UniformDenoiser den(3);
    DiffusionModel dm{sc, &den, 2, 3};
    CategoricalBatch x0 = random_batch(16, 2, 3, rng);
    Tensor e = elbo(dm, x0, ElboMode::sampled, rng);
    for (int64_t b = 0; b < e.numel(); ++b) CHECK(std::isfinite(e[b]));
}

TEST_CASE("ancestral sampling with a uniform denoiser is uniform") {
    NoiseSchedule sc = build_schedule(10);
    UniformDenoiser den(2);
    DiffusionModel dm{sc, &den, 1, 2};
    Rng rng(37);
    CategoricalBatch s = ancestral_sample(dm, 20000, rng);
    int64_t ones = 0;
    for (auto v : s.values) ones += v;
    double frac = static_cast<double>(ones) / static_cast<double>(s.values.size());
    CHECK(std::fabs(frac - 0.5) <= 4.0 * std::sqrt(0.25 / 20000.0));
}

TEST_CASE("ancestral sampling with a constant-class denoiser collapses") {
    NoiseSchedule sc = build_schedule(10);
    ConstClassDenoiser den(4, 2);
    DiffusionModel dm{sc, &den, 2, 4};
    Rng rng(41);
    CategoricalBatch s = ancestral_sample(dm, 64, rng);
    for (auto v : s.values) CHECK(v == 2);
}

TEST_CASE("denoise_once picks the prediction argmax with low-index ties") {
    NoiseSchedule sc = build_schedule(4);
    UniformDenoiser den(3);  // all-equal logits: tie
    DiffusionModel dm{sc, &den, 2, 3};
    CategoricalBatch x1(2, 2, 3);
    CategoricalBatch out = denoise_once(dm, x1);
    for (auto v : out.values) CHECK(v == 0);

    OracleDenoiser oracle;
    Rng rng(43);
    oracle.target = random_batch(3, 2, 4, rng);
    DiffusionModel dm2{sc, &oracle, 2, 4};
    CategoricalBatch noisy = random_batch(3, 2, 4, rng);
    CategoricalBatch restored = denoise_once(dm2, noisy);
    CHECK(restored.values == oracle.target.values);
}

TEST_CASE("out-of-range timesteps are validation errors") {
    NoiseSchedule sc = build_schedule(5);
    CategoricalBatch x(1, 1, 2);
    Tensor lx = index_to_log_onehot(x, 2);
    CHECK_THROWS_AS(q_forward_one_step(sc, lx, 0), std::invalid_argument);
    CHECK_THROWS_AS(q_forward_one_step(sc, lx, 6), std::invalid_argument);
    CHECK_THROWS_AS(q_marginal(sc, lx, -1), std::invalid_argument);
    CHECK_THROWS_AS(q_posterior(sc, lx, lx, 5), std::invalid_argument);
    CHECK_THROWS_AS(q_posterior(sc, lx, lx, -1), std::invalid_argument);
}
