#pragma once

#include <memory>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "nn.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace catgen {

// per-dimension argmax over the class axis; ties break to the lowest index
inline CategoricalBatch argmax_map(const Tensor& v) {
    if (v.rank() != 3) throw std::invalid_argument("argmax_map: expected (batch, D, K)");
    CategoricalBatch out(v.shape[0], v.shape[1], static_cast<int>(v.shape[2]));
    int64_t k = v.shape[2];
    for (int64_t r = 0; r < out.batch * out.dims; ++r) {
        const double* row = v.data.data() + r * k;
        int32_t best = 0;
        for (int64_t i = 1; i < k; ++i)
            if (row[i] > row[best]) best = static_cast<int32_t>(i);
        out.values[static_cast<size_t>(r)] = best;
    }
    return out;
}

// ---- thresholding ----

// v = T - softplus(T - u), a bijection R -> (-inf, T); log_det is the log
// derivative dv/du = sigmoid(T - u)
struct ThresholdResult {
    double v;
    double log_det;
};

inline ThresholdResult softplus_threshold(double u, double T) {
    return {T - softplus(T - u), log_sigmoid(T - u)};
}

inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline double softplus_threshold_inverse(double v, double T) { return T - softplus_inverse(T - v); }

// ---- Gumbel distribution primitives ----

inline double gumbel_log_pdf(double g, double phi) {
    double d = phi - g;
    return d - std::exp(d);
}
inline double gumbel_cdf(double g, double phi) { return std::exp(-std::exp(phi - g)); }
inline double gumbel_sample(double phi, Rng& rng) { return phi - std::log(-std::log(rng.uniform_open())); }

inline double trunc_gumbel_log_pdf(double g, double phi, double T) {
    if (!(g < T)) return kNegInf;
    return phi - g - std::exp(phi - g) + std::exp(phi - T);
}
inline double trunc_gumbel_cdf(double g, double phi, double T) {
    if (g >= T) return 1.0;
    return std::exp(-std::exp(phi - g) + std::exp(phi - T));
}
inline double trunc_gumbel_sample(double phi, double T, Rng& rng) {
    return phi - std::log(std::exp(phi - T) - std::log(rng.uniform_open()));
}

// location parameters matching the empirical class frequencies of a batch,
// Laplace-smoothed so absent classes stay finite
inline Tensor init_gumbel_locations(const CategoricalBatch& batch, double lambda = 1.0) {
    if (batch.batch < 1) throw std::invalid_argument("init_gumbel_locations: empty batch");
    int64_t D = batch.dims;
    int64_t K = batch.num_classes;
    Tensor phi({D, K});
    for (int64_t d = 0; d < D; ++d) {
        std::vector<double> count(static_cast<size_t>(K), lambda);
        for (int64_t b = 0; b < batch.batch; ++b) count[static_cast<size_t>(batch.at(b, d))] += 1.0;
        double total = static_cast<double>(batch.batch) + lambda * static_cast<double>(K);
        for (int64_t kk = 0; kk < K; ++kk) phi.at(d, kk) = std::log(count[static_cast<size_t>(kk)]) - std::log(total);
    }
    return phi;
}

// ---- posterior samplers ----

struct PosteriorDraw {
    ad::Var v;      // (batch, D, K)
    ad::Var log_q;  // (batch,)
};

struct PosteriorModel {
    virtual ~PosteriorModel() = default;
    virtual PosteriorDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) = 0;
    virtual void visit_params(const std::string& /*prefix*/, const ParamVisitor& /*fn*/) {}
    // true when the surjection is the argmax (otherwise rounding of onehot+u)
    virtual bool argmax_support() const { return true; }
};

namespace detail {

inline Tensor onehot_mask(const CategoricalBatch& x) { return onehot(x, x.num_classes); }

inline Tensor inv_mask(const Tensor& mask) {
    Tensor out(mask.shape);
    for (int64_t i = 0; i < mask.numel(); ++i) out[i] = 1.0 - mask[i];
    return out;
}

}  // namespace detail

// u ~ q(u | x), then every non-x coordinate is mapped below v_x = u_x.
// log_q follows by change of variables through the triangular map.
struct ThresholdPosterior : PosteriorModel {
    CondDiagGaussian noise;

    ThresholdPosterior() = default;
    ThresholdPosterior(int D, int K) : noise(D, K, K) {}

    PosteriorDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) override {
        int64_t K = x.num_classes;
        NoiseDraw nd = noise.sample(tape, bound, x, rng);
        ad::Var mask = tape.constant(detail::onehot_mask(x));
        ad::Var inv = tape.constant(detail::inv_mask(tape.val(mask)));
        ad::Var t_bd = tape.sum_last(tape.mul(nd.u, mask));  // (B, D) = u_x
        ad::Var t_exp = tape.expand_last(t_bd, K);
        ad::Var tail = tape.sub(t_exp, tape.softplus(tape.sub(t_exp, nd.u)));
        ad::Var v = tape.add(tape.mul(mask, nd.u), tape.mul(inv, tail));
        // log sigmoid(T - u) = -softplus(u - T), per non-x coordinate
        ad::Var log_det = tape.neg(tape.softplus(tape.sub(nd.u, t_exp)));
        ad::Var corr = tape.sum_last(tape.sum_last(tape.mul(inv, log_det)));
        return {v, tape.sub(nd.log_q, corr)};
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override { noise.visit(prefix + ".noise", fn); }
};

// Shared Gumbel construction: u01 in (0,1)^(B,D,K) is pushed through the
// (truncated) inverse CDFs so that coordinate x carries the maximum. Returns
// v and the chain's own log-density (the noise density is the caller's).
inline PosteriorDraw gumbel_chain(ad::Tape& tape, ad::Var phi_b, ad::Var u01, const CategoricalBatch& x) {
    int64_t K = x.num_classes;
    ad::Var mask = tape.constant(detail::onehot_mask(x));
    ad::Var inv = tape.constant(detail::inv_mask(tape.val(mask)));
    ad::Var phi_max = tape.log_sum_exp_last(phi_b);  // (B, D)
    ad::Var u_x = tape.sum_last(tape.mul(u01, mask));
    ad::Var v_max = tape.sub(phi_max, tape.log(tape.neg(tape.log(u_x))));
    ad::Var t_exp = tape.expand_last(v_max, K);
    ad::Var inner = tape.add(tape.exp(tape.sub(phi_b, t_exp)), tape.neg(tape.log(u01)));
    ad::Var v_trunc = tape.sub(phi_b, tape.log(inner));
    ad::Var v = tape.add(tape.mul(mask, t_exp), tape.mul(inv, v_trunc));
    ad::Var dmax = tape.sub(phi_max, v_max);
    ad::Var lg_max = tape.sub(dmax, tape.exp(dmax));  // (B, D)
    ad::Var dv = tape.sub(phi_b, v);
    ad::Var lt = tape.add(tape.sub(dv, tape.exp(dv)), tape.exp(tape.sub(phi_b, t_exp)));
    ad::Var log_q = tape.add(lg_max, tape.sum_last(tape.mul(inv, lt)));  // (B, D)
    return {v, tape.sum_last(log_q)};
}

// q(v | x) = Gumbel(phi) restricted to argmax v = x; uniform base noise
struct GumbelPosterior : PosteriorModel {
    Tensor phi;  // (D, K)

    GumbelPosterior() = default;
    GumbelPosterior(int D, int K) : phi(Tensor({static_cast<int64_t>(D), static_cast<int64_t>(K)})) {}

    PosteriorDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) override {
        Tensor u({x.batch, x.dims, static_cast<int64_t>(x.num_classes)});
        for (int64_t i = 0; i < u.numel(); ++i) u[i] = rng.uniform_open();
        ad::Var phi_b = tape.broadcast_batch(bound.of(tape, phi), x.batch);
        return gumbel_chain(tape, phi_b, tape.constant(std::move(u)), x);
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override { fn(prefix + ".phi", phi); }
};

// Same chain, but the (0,1) noise comes from a learned flow squashed by a
// sigmoid. With use_flow = false it degenerates to GumbelPosterior.
struct GumbelThresholdPosterior : PosteriorModel {
    Tensor phi;  // (D, K)
    CondCouplingFlow flow;
    bool use_flow = true;

    GumbelThresholdPosterior() = default;
    GumbelThresholdPosterior(int D, int K, int hidden, int n_layers, Rng& rng, bool use_flow_ = true)
        : phi(Tensor({static_cast<int64_t>(D), static_cast<int64_t>(K)})), flow(D, K, hidden, n_layers, rng),
          use_flow(use_flow_) {}

    PosteriorDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) override {
        ad::Var phi_b = tape.broadcast_batch(bound.of(tape, phi), x.batch);
        if (!use_flow) {
            Tensor u({x.batch, x.dims, static_cast<int64_t>(x.num_classes)});
            for (int64_t i = 0; i < u.numel(); ++i) u[i] = rng.uniform_open();
            return gumbel_chain(tape, phi_b, tape.constant(std::move(u)), x);
        }
        NoiseDraw nd = flow.sample(tape, bound, x, rng);  // w over R^K
        ad::Var u01 = tape.sigmoid(nd.u);
        // density of u: q_w(w) / sigmoid'(w); -log sigmoid'(w) = sp(w) + sp(-w)
        ad::Var jac = tape.add(tape.softplus(nd.u), tape.softplus(tape.neg(nd.u)));
        ad::Var log_qu = tape.add(nd.log_q, tape.sum_last(tape.sum_last(jac)));
        PosteriorDraw chain = gumbel_chain(tape, phi_b, u01, x);
        return {chain.v, tape.add(chain.log_q, log_qu)};
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override {
        fn(prefix + ".phi", phi);
        if (use_flow) flow.visit(prefix + ".flow", fn);
    }
};

// v = onehot(x) + u with u ~ U(0,1)^K; density 1, so log_q = 0
struct UniformDequant : PosteriorModel {
    PosteriorDraw sample(ad::Tape& tape, ad::Bound& /*bound*/, const CategoricalBatch& x, Rng& rng) override {
        Tensor v = onehot(x, x.num_classes);
        for (int64_t i = 0; i < v.numel(); ++i) v[i] += rng.uniform();
        return {tape.constant(std::move(v)), tape.constant(Tensor({x.batch}))};
    }
    bool argmax_support() const override { return false; }
};

// v = onehot(x) + sigmoid(w) with w from a learned conditional flow
struct VariationalDequant : PosteriorModel {
    CondCouplingFlow flow;

    VariationalDequant() = default;
    VariationalDequant(int D, int K, int hidden, int n_layers, Rng& rng) : flow(D, K, hidden, n_layers, rng) {}

    PosteriorDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) override {
        NoiseDraw nd = flow.sample(tape, bound, x, rng);
        ad::Var u01 = tape.sigmoid(nd.u);
        ad::Var jac = tape.add(tape.softplus(nd.u), tape.softplus(tape.neg(nd.u)));
        ad::Var log_q = tape.add(nd.log_q, tape.sum_last(tape.sum_last(jac)));
        ad::Var v = tape.add(u01, tape.constant(onehot(x, x.num_classes)));
        return {v, log_q};
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override { flow.visit(prefix + ".flow", fn); }
    bool argmax_support() const override { return false; }
};

// ---- Cartesian product re-encoding ----
// Binary codes could alternatively be packed one digit per signed scalar
// dimension; here every base-M digit keeps its own M-way argmax slot.

// number of base-M digits needed for K classes
inline int cartesian_digits(int K, int M) {
    if (M < 2) throw std::invalid_argument("cartesian: base must be >= 2");
    if (K < 1) throw std::invalid_argument("cartesian: K must be >= 1");
    int d = 1;
    int64_t cap = M;
    while (cap < K) {
        cap *= M;
        ++d;
    }
    return d;
}

// base-M digits per symbol, most-significant first
inline CategoricalBatch cartesian_encode(const CategoricalBatch& x, int M) {
    int dm = cartesian_digits(x.num_classes, M);
    CategoricalBatch out(x.batch, x.dims * dm, M);
    for (int64_t b = 0; b < x.batch; ++b)
        for (int64_t d = 0; d < x.dims; ++d) {
            int64_t rem = x.at(b, d);
            for (int j = dm - 1; j >= 0; --j) {
                out.at(b, d * dm + j) = static_cast<int32_t>(rem % M);
                rem /= M;
            }
        }
    return out;
}

struct CartesianDecodeResult {
    CategoricalBatch x;
    std::vector<uint8_t> valid;  // per (batch, dim); 0 marks out-of-alphabet codes
    bool all_valid = true;
};

inline CartesianDecodeResult cartesian_decode(const CategoricalBatch& digits, int K, int M) {
    int dm = cartesian_digits(K, M);
    if (digits.dims % dm != 0) throw std::invalid_argument("cartesian_decode: dims not a multiple of digit count");
    if (digits.num_classes != M) throw std::invalid_argument("cartesian_decode: base mismatch");
    int64_t D = digits.dims / dm;
    CartesianDecodeResult res;
    res.x = CategoricalBatch(digits.batch, D, K);
    res.valid.assign(static_cast<size_t>(digits.batch * D), 1);
    for (int64_t b = 0; b < digits.batch; ++b)
        for (int64_t d = 0; d < D; ++d) {
            int64_t value = 0;
            for (int j = 0; j < dm; ++j) value = value * M + digits.at(b, d * dm + j);
            if (value >= K) {
                res.valid[static_cast<size_t>(b * D + d)] = 0;
                res.all_valid = false;
                value = K - 1;  // placeholder; callers must honor the flag
            }
            res.x.at(b, d) = static_cast<int32_t>(value);
        }
    return res;
}

}  // namespace catgen
