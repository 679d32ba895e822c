#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace catgen {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct Linear {
    Tensor w, b;  // (in, out), (out)

    void init(Rng& rng, int64_t fan_in, int64_t fan_out, double scale = -1.0) {
        if (scale < 0.0) scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        w = Tensor({fan_in, fan_out});
        b = Tensor({fan_out});
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = scale * rng.normal();
    }
    void init_zero(int64_t fan_in, int64_t fan_out) {
        w = Tensor({fan_in, fan_out});
        b = Tensor({fan_out});
    }

    ad::Var operator()(ad::Tape& tape, ad::Bound& bound, ad::Var x) const {
        return tape.affine(x, bound.of(tape, const_cast<Tensor&>(w)), bound.of(tape, const_cast<Tensor&>(b)));
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

// plain (off-tape) application of a Linear block
inline Tensor linear_apply(const Linear& lin, const Tensor& x) {
    int64_t m = x.shape[0], in = lin.w.shape[0], out = lin.w.shape[1];
    Tensor y({m, out});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < in; ++p) {
            double a = x[i * in + p];
            if (a == 0.0) continue;
            for (int64_t j = 0; j < out; ++j) y[i * out + j] += a * lin.w[p * out + j];
        }
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < out; ++j) y[i * out + j] += lin.b[j];
    return y;
}

// Fixed sinusoidal features of the (normalized) timestep.
inline std::vector<double> time_features(int t, int T, int n_freq = 8) {
    std::vector<double> f;
    double tau = static_cast<double>(t) / static_cast<double>(T);
    f.push_back(tau);
    double freq = 1.0;
    for (int j = 0; j < n_freq; ++j) {
        f.push_back(std::sin(M_PI * freq * tau));
        f.push_back(std::cos(M_PI * freq * tau));
        freq *= 2.0;
    }
    return f;
}

// Network producing per-class logits for the clean signal from a noisy
// categorical state and its timestep.
struct Denoiser {
    virtual ~Denoiser() = default;
    // x_t: (batch, dims) indices; ts: per-sample timestep. Returns raw
    // logits, shape (batch, dims, K).
    virtual ad::Var logits(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x_t, const std::vector<int>& ts) = 0;
    // gradient-free forward pass; the default goes through a throwaway tape
    virtual Tensor logits_value(const CategoricalBatch& x_t, const std::vector<int>& ts) {
        ad::Tape tape;
        ad::Bound bound;
        return tape.val(logits(tape, bound, x_t, ts));
    }
    virtual void visit_params(const std::string& /*prefix*/, const ParamVisitor& /*fn*/) {}
};

// Residual MLP over the flattened one-hot state plus sinusoidal time features.
struct MlpDenoiser : Denoiser {
    int dims = 0;
    int num_classes = 0;
    int hidden = 128;
    int n_blocks = 2;
    int T = 100;
    int time_dim = 17;

    Linear input;
    std::vector<Linear> blocks;
    Linear output;

    MlpDenoiser() = default;
    MlpDenoiser(int D, int K, int T_, int hidden_, int n_blocks_, Rng& rng)
        : dims(D), num_classes(K), hidden(hidden_), n_blocks(n_blocks_), T(T_) {
        input.init(rng, static_cast<int64_t>(D) * K + time_dim, hidden);
        blocks.resize(static_cast<size_t>(n_blocks));
        for (auto& blk : blocks) blk.init(rng, hidden, hidden);
        // zero output layer: the untrained model predicts the uniform vector
        output.init_zero(hidden, static_cast<int64_t>(D) * K);
    }

    Tensor features(const CategoricalBatch& x_t, const std::vector<int>& ts) const {
        int64_t B = x_t.batch;
        Tensor in({B, static_cast<int64_t>(dims) * num_classes + time_dim});
        int64_t w = in.shape[1];
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t d = 0; d < dims; ++d) in[b * w + d * num_classes + x_t.at(b, d)] = 1.0;
            std::vector<double> tf = time_features(ts[static_cast<size_t>(b)], T);
            for (int j = 0; j < time_dim; ++j) in[b * w + dims * num_classes + j] = tf[static_cast<size_t>(j)];
        }
        return in;
    }

    ad::Var logits(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x_t, const std::vector<int>& ts) override {
        int64_t B = x_t.batch;
        ad::Var h = tape.tanh(input(tape, bound, tape.constant(features(x_t, ts))));
        for (const auto& blk : blocks) h = tape.add(h, tape.tanh(blk(tape, bound, h)));
        ad::Var out = output(tape, bound, h);
        return tape.reshape(out, {B, static_cast<int64_t>(dims), static_cast<int64_t>(num_classes)});
    }

    Tensor logits_value(const CategoricalBatch& x_t, const std::vector<int>& ts) override {
        int64_t B = x_t.batch;
        Tensor h = linear_apply(input, features(x_t, ts));
        for (double& v : h.data) v = std::tanh(v);
        for (const auto& blk : blocks) {
            Tensor r = linear_apply(blk, h);
            for (int64_t i = 0; i < h.numel(); ++i) h[i] += std::tanh(r[i]);
        }
        Tensor out = linear_apply(output, h);
        return out.reshaped({B, static_cast<int64_t>(dims), static_cast<int64_t>(num_classes)});
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) override {
        input.visit(prefix + ".input", fn);
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
        output.visit(prefix + ".output", fn);
    }
};

struct NoiseDraw {
    ad::Var u;      // (batch, dims, noise_dim)
    ad::Var log_q;  // (batch,)
};

// Diagonal Gaussian noise with per-(dimension, class) location/scale tables.
struct CondDiagGaussian {
    int dims = 0;
    int num_classes = 0;
    int noise_dim = 0;
    Tensor mu, log_sigma;  // (dims * num_classes, noise_dim)

    CondDiagGaussian() = default;
    CondDiagGaussian(int D, int K, int noise) : dims(D), num_classes(K), noise_dim(noise) {
        mu = Tensor({static_cast<int64_t>(D) * K, noise});
        log_sigma = Tensor({static_cast<int64_t>(D) * K, noise});
    }

    std::vector<int32_t> row_ids(const CategoricalBatch& x) const {
        std::vector<int32_t> rows(static_cast<size_t>(x.batch * x.dims));
        for (int64_t b = 0; b < x.batch; ++b)
            for (int64_t d = 0; d < x.dims; ++d)
                rows[static_cast<size_t>(b * x.dims + d)] = static_cast<int32_t>(d * num_classes + x.at(b, d));
        return rows;
    }

    NoiseDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) const {
        int64_t R = x.batch * x.dims;
        auto rows = row_ids(x);
        ad::Var mu_g = tape.gather_rows(bound.of(tape, const_cast<Tensor&>(mu)), rows);
        ad::Var ls_g = tape.gather_rows(bound.of(tape, const_cast<Tensor&>(log_sigma)), rows);
        Tensor eps({R, static_cast<int64_t>(noise_dim)});
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
        // reparametrized sample; (u - mu)/sigma == eps, so the density only
        // needs eps and log_sigma
        Tensor base({R, static_cast<int64_t>(noise_dim)});
        for (int64_t i = 0; i < base.numel(); ++i) base[i] = -0.5 * eps[i] * eps[i] - 0.5 * std::log(2.0 * M_PI);
        ad::Var u = tape.add(mu_g, tape.mul(tape.exp(ls_g), tape.constant(std::move(eps))));
        ad::Var lq = tape.sum_last(tape.sub(tape.constant(std::move(base)), ls_g));  // (R,)
        lq = tape.sum_last(tape.reshape(lq, {x.batch, x.dims}));
        return {tape.reshape(u, {x.batch, x.dims, static_cast<int64_t>(noise_dim)}), lq};
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".mu", mu);
        fn(prefix + ".log_sigma", log_sigma);
    }
};

// Coupling flow over R^K per position, conditioned on the position's class
// and dimension index. Used as a learnable noise source; sampling direction
// carries the log-density of the draw.
struct CondCouplingFlow {
    int dims = 0;
    int num_classes = 0;
    int hidden = 32;
    int n_layers = 4;

    struct Layer {
        Linear c1, c2;
        bool swap = false;
    };
    std::vector<Layer> layers;

    CondCouplingFlow() = default;
    CondCouplingFlow(int D, int K, int hidden_, int n_layers_, Rng& rng)
        : dims(D), num_classes(K), hidden(hidden_), n_layers(n_layers_) {
        if (K < 2) throw std::invalid_argument("cond coupling flow: K must be >= 2");
        int half = K / 2;
        layers.resize(static_cast<size_t>(n_layers));
        for (int i = 0; i < n_layers; ++i) {
            bool swap = (i % 2) == 1;
            int keep = swap ? (K - half) : half;        // width of the conditioning half
            int trans = K - keep;                        // width of the transformed half
            layers[static_cast<size_t>(i)].swap = swap;
            layers[static_cast<size_t>(i)].c1.init(rng, keep + K + D, hidden);
            layers[static_cast<size_t>(i)].c2.init_zero(hidden, 2 * trans);
        }
    }

    // conditioning features: one-hot class and one-hot dimension, per row
    Tensor cond_features(const CategoricalBatch& x) const {
        int64_t R = x.batch * x.dims;
        Tensor c({R, static_cast<int64_t>(num_classes + dims)});
        for (int64_t b = 0; b < x.batch; ++b)
            for (int64_t d = 0; d < x.dims; ++d) {
                int64_t r = b * x.dims + d;
                c[r * (num_classes + dims) + x.at(b, d)] = 1.0;
                c[r * (num_classes + dims) + num_classes + d] = 1.0;
            }
        return c;
    }

    NoiseDraw sample(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) const {
        int64_t R = x.batch * x.dims;
        int64_t K = num_classes;
        Tensor z({R, K});
        for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
        Tensor base({R});
        for (int64_t r = 0; r < R; ++r) {
            double acc = 0.0;
            for (int64_t i = 0; i < K; ++i) acc += -0.5 * z[r * K + i] * z[r * K + i] - 0.5 * std::log(2.0 * M_PI);
            base[r] = acc;
        }
        ad::Var cond = tape.constant(cond_features(x));
        ad::Var w = tape.constant(std::move(z));
        ad::Var log_q = tape.constant(std::move(base));  // (R,)
        int half = static_cast<int>(K) / 2;
        for (const auto& layer : layers) {
            int64_t keep_w = layer.swap ? (K - half) : half;
            ad::Var keep = layer.swap ? tape.slice_last(w, half, K) : tape.slice_last(w, 0, half);
            ad::Var trans = layer.swap ? tape.slice_last(w, 0, half) : tape.slice_last(w, half, K);
            int64_t tw = K - keep_w;
            ad::Var h = tape.tanh(layer.c1(tape, bound, tape.concat_last(keep, cond)));
            ad::Var st = layer.c2(tape, bound, h);
            ad::Var s = tape.tanh(tape.slice_last(st, 0, tw));
            ad::Var t = tape.slice_last(st, tw, 2 * tw);
            trans = tape.add(tape.mul(trans, tape.exp(s)), t);
            log_q = tape.sub(log_q, tape.sum_last(s));
            w = layer.swap ? tape.concat_last(trans, keep) : tape.concat_last(keep, trans);
        }
        ad::Var lq = tape.sum_last(tape.reshape(log_q, {x.batch, x.dims}));
        return {tape.reshape(w, {x.batch, x.dims, K}), lq};
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        for (size_t i = 0; i < layers.size(); ++i) {
            layers[i].c1.visit(prefix + ".layer" + std::to_string(i) + ".c1", fn);
            layers[i].c2.visit(prefix + ".layer" + std::to_string(i) + ".c2", fn);
        }
    }
};

}  // namespace catgen
