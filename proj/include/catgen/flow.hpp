#pragma once

#include <memory>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace catgen {

// Affine coupling over (B, n). The normalizing direction (data -> base)
// scales and shifts one half conditioned on the other; conditioners are
// zero-initialized at the output so the layer starts as the identity.
struct CouplingLayer {
    int64_t n = 0;
    int64_t half = 0;
    bool swap = false;
    Linear c1, c2;

    CouplingLayer() = default;
    CouplingLayer(int64_t n_, int hidden, bool swap_, Rng& rng) : n(n_), half(n_ / 2), swap(swap_) {
        int64_t keep = swap ? (n - half) : half;
        int64_t trans = n - keep;
        c1.init(rng, keep, hidden);
        c2.init_zero(hidden, 2 * trans);
    }

    ad::Var normalize(ad::Tape& tape, ad::Bound& bound, ad::Var x, ad::Var& logdet) const {
        ad::Var keep = swap ? tape.slice_last(x, half, n) : tape.slice_last(x, 0, half);
        ad::Var trans = swap ? tape.slice_last(x, 0, half) : tape.slice_last(x, half, n);
        int64_t tw = tape.val(trans).last();
        ad::Var h = tape.tanh(c1(tape, bound, keep));
        ad::Var st = c2(tape, bound, h);
        ad::Var s = tape.tanh(tape.slice_last(st, 0, tw));
        ad::Var t = tape.slice_last(st, tw, 2 * tw);
        trans = tape.add(tape.mul(trans, tape.exp(s)), t);
        logdet = tape.add(logdet, tape.sum_last(s));
        return swap ? tape.concat_last(trans, keep) : tape.concat_last(keep, trans);
    }

    Tensor generate(const Tensor& u) const {
        int64_t B = u.shape[0];
        int64_t keep_lo = swap ? half : 0, keep_hi = swap ? n : half;
        int64_t trans_lo = swap ? 0 : half, trans_hi = swap ? half : n;
        int64_t kw = keep_hi - keep_lo, tw = trans_hi - trans_lo;
        Tensor keep({B, kw});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < kw; ++i) keep[b * kw + i] = u[b * n + keep_lo + i];
        Tensor h = linear_apply(c1, keep);
        for (int64_t i = 0; i < h.numel(); ++i) h[i] = std::tanh(h[i]);
        Tensor st = linear_apply(c2, h);
        Tensor out = u;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < tw; ++i) {
                double s = std::tanh(st[b * 2 * tw + i]);
                double t = st[b * 2 * tw + tw + i];
                out[b * n + trans_lo + i] = (u[b * n + trans_lo + i] - t) * std::exp(-s);
            }
        return out;
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        c1.visit(prefix + ".c1", fn);
        c2.visit(prefix + ".c2", fn);
    }
};

// Invertible linear mixing parametrized as W = A * B with A unit lower
// triangular and B upper triangular with exp(d) on the diagonal, so
// log|det W| = sum d. Starts as the identity.
struct LuLinear {
    int64_t n = 0;
    Tensor l_raw, u_raw, d_raw;

    LuLinear() = default;
    explicit LuLinear(int64_t n_) : n(n_), l_raw({n_, n_}), u_raw({n_, n_}), d_raw({n_}) {}

    ad::Var normalize(ad::Tape& tape, ad::Bound& bound, ad::Var x, ad::Var& logdet) const {
        Tensor lower({n, n});
        Tensor upper({n, n});
        Tensor eye({n, n});
        for (int64_t i = 0; i < n; ++i) {
            eye[i * n + i] = 1.0;
            for (int64_t j = 0; j < i; ++j) lower[i * n + j] = 1.0;
            for (int64_t j = i + 1; j < n; ++j) upper[i * n + j] = 1.0;
        }
        ad::Var a = tape.add(tape.mul(bound.of(tape, const_cast<Tensor&>(l_raw)), tape.constant(std::move(lower))),
                             tape.constant(std::move(eye)));
        ad::Var d = bound.of(tape, const_cast<Tensor&>(d_raw));
        ad::Var bm = tape.add(tape.mul(bound.of(tape, const_cast<Tensor&>(u_raw)), tape.constant(std::move(upper))),
                              tape.diag_embed(tape.exp(d)));
        ad::Var w = tape.matmul(a, bm);
        ad::Var out = tape.matmul(x, w);
        int64_t B = tape.val(x).shape[0];
        logdet = tape.add(logdet, tape.broadcast_batch(tape.sum_all(d), B));
        return out;
    }

    Tensor generate(const Tensor& u) const {
        // solve x (A B) = u row by row: first y B = u, then x A = y
        int64_t B_rows = u.shape[0];
        Tensor a({n, n});
        Tensor bm({n, n});
        for (int64_t i = 0; i < n; ++i) {
            a[i * n + i] = 1.0;
            for (int64_t j = 0; j < i; ++j) a[i * n + j] = l_raw[i * n + j];
            for (int64_t j = i + 1; j < n; ++j) bm[i * n + j] = u_raw[i * n + j];
            bm[i * n + i] = std::exp(d_raw[i]);
        }
        Tensor out({B_rows, n});
        std::vector<double> y(static_cast<size_t>(n));
        for (int64_t r = 0; r < B_rows; ++r) {
            for (int64_t j = 0; j < n; ++j) {
                double acc = u[r * n + j];
                for (int64_t p = 0; p < j; ++p) acc -= y[static_cast<size_t>(p)] * bm[p * n + j];
                y[static_cast<size_t>(j)] = acc / bm[j * n + j];
            }
            for (int64_t j = n - 1; j >= 0; --j) {
                double acc = y[static_cast<size_t>(j)];
                for (int64_t p = j + 1; p < n; ++p) acc -= out[r * n + p] * a[p * n + j];
                out[r * n + j] = acc;
            }
        }
        return out;
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".l", l_raw);
        fn(prefix + ".u", u_raw);
        fn(prefix + ".d", d_raw);
    }
};

// Density over R^n with exact log-probabilities and a generative sampler.
struct DensityModel {
    virtual ~DensityModel() = default;
    virtual int64_t dim() const = 0;
    virtual ad::Var log_prob(ad::Tape& tape, ad::Bound& bound, ad::Var v) = 0;  // (B,n) -> (B,)
    virtual Tensor sample(int64_t batch, Rng& rng) = 0;
    virtual void visit_params(const std::string& /*prefix*/, const ParamVisitor& /*fn*/) {}

    Tensor log_prob_value(const Tensor& v) {
        ad::Tape tape;
        ad::Bound bound;
        return tape.val(log_prob(tape, bound, tape.constant(v)));
    }
};

// Standard-Gaussian base pushed through interleaved coupling and LU mixing
// blocks. Identity at initialization.
struct FlowModel : DensityModel {
    int64_t n = 0;
    struct Block {
        CouplingLayer cpl;
        LuLinear mix;
    };
    std::vector<Block> blocks;

    FlowModel() = default;
    FlowModel(int64_t n_, int n_blocks, int hidden, Rng& rng) : n(n_) {
        blocks.reserve(static_cast<size_t>(n_blocks));
        for (int i = 0; i < n_blocks; ++i) {
            Block blk;
            blk.cpl = CouplingLayer(n_, hidden, (i % 2) == 1, rng);
            blk.mix = LuLinear(n_);
            blocks.push_back(std::move(blk));
        }
    }

    int64_t dim() const override { return n; }

    ad::Var log_prob(ad::Tape& tape, ad::Bound& bound, ad::Var v) override {
        int64_t B = tape.val(v).shape[0];
        ad::Var logdet = tape.constant(Tensor({B}));
        ad::Var u = v;
        for (const Block& blk : blocks) {
            u = blk.cpl.normalize(tape, bound, u, logdet);
            u = blk.mix.normalize(tape, bound, u, logdet);
        }
        ad::Var sq = tape.sum_last(tape.mul(u, u));
        ad::Var base = tape.add(tape.mul(sq, -0.5), -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI));
        return tape.add(base, logdet);
    }

    Tensor sample(int64_t batch, Rng& rng) override {
        Tensor x({batch, n});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
            x = it->mix.generate(x);
            x = it->cpl.generate(x);
        }
        return x;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override {
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].cpl.visit(prefix + ".block" + std::to_string(i) + ".coupling", fn);
            blocks[i].mix.visit(prefix + ".block" + std::to_string(i) + ".mix", fn);
        }
    }
};

// Fixed diagonal Gaussian density; handy as an analytic reference model.
struct FixedGaussianDensity : DensityModel {
    Tensor mean;  // (n,)

    explicit FixedGaussianDensity(Tensor mean_) : mean(std::move(mean_)) {}

    int64_t dim() const override { return mean.shape[0]; }

    ad::Var log_prob(ad::Tape& tape, ad::Bound& /*bound*/, ad::Var v) override {
        int64_t B = tape.val(v).shape[0];
        ad::Var centered = tape.sub(v, tape.broadcast_batch(tape.constant(mean), B));
        ad::Var sq = tape.sum_last(tape.mul(centered, centered));
        return tape.add(tape.mul(sq, -0.5), -0.5 * static_cast<double>(dim()) * std::log(2.0 * M_PI));
    }

    Tensor sample(int64_t batch, Rng& rng) override {
        int64_t n = dim();
        Tensor x({batch, n});
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t i = 0; i < n; ++i) x[b * n + i] = mean[i] + rng.normal();
        return x;
    }
};

}  // namespace catgen
