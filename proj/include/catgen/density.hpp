#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flow.hpp"
#include "numerics.hpp"
#include "surjections.hpp"

namespace catgen {

// Generative model for categorical data: a continuous density over
// R^(enc_D x enc_K) composed with a per-dimension argmax (or a rounding
// surjection for the dequantization baselines). Optionally re-encodes the
// K-ary data into base-M digits first.
struct ArgmaxFlowModel {
    int dims = 0;
    int num_classes = 0;
    int cartesian_base = 0;  // 0 disables re-encoding
    int enc_dims = 0;
    int enc_classes = 0;
    std::unique_ptr<DensityModel> density;      // over R^(enc_dims * enc_classes)
    std::unique_ptr<PosteriorModel> posterior;  // q(v | x)

    void set_shape(int D, int K, int M) {
        dims = D;
        num_classes = K;
        cartesian_base = M;
        if (M > 0) {
            enc_dims = D * cartesian_digits(K, M);
            enc_classes = M;
        } else {
            enc_dims = D;
            enc_classes = K;
        }
    }

    CategoricalBatch encode(const CategoricalBatch& x) const {
        return cartesian_base > 0 ? cartesian_encode(x, cartesian_base) : x;
    }

    // Single-sample evidence lower bound, log p(v) - log q(v|x), per sample.
    // The support constraint makes the reconstruction term vanish; a
    // violation here means a sampler bug and raises.
    ad::Var elbo(ad::Tape& tape, ad::Bound& bound, const CategoricalBatch& x, Rng& rng) const {
        CategoricalBatch xe = encode(x);
        PosteriorDraw draw = posterior->sample(tape, bound, xe, rng);
        check_support(tape.val(draw.v), xe);
        ad::Var v2 = tape.reshape(draw.v, {xe.batch, static_cast<int64_t>(enc_dims) * enc_classes});
        ad::Var logp = density->log_prob(tape, bound, v2);
        return tape.sub(logp, draw.log_q);
    }

    Tensor elbo_value(const CategoricalBatch& x, Rng& rng) const {
        ad::Tape tape;
        ad::Bound bound;
        return tape.val(elbo(tape, bound, x, rng));
    }

    // log-mean-exp over S single-sample bounds, per sample
    Tensor iwbo(const CategoricalBatch& x, int S, Rng& rng) const {
        if (S < 1) throw std::invalid_argument("iwbo: S must be >= 1");
        int64_t B = x.batch;
        Tensor draws({static_cast<int64_t>(S), B});
        for (int s = 0; s < S; ++s) {
            Tensor e = elbo_value(x, rng);
            for (int64_t b = 0; b < B; ++b) draws.at(s, b) = e[b];
        }
        Tensor out({B});
        for (int64_t b = 0; b < B; ++b) {
            double m = kNegInf;
            for (int s = 0; s < S; ++s) m = std::max(m, draws.at(s, b));
            double acc = 0.0;
            for (int s = 0; s < S; ++s) acc += std::exp(draws.at(s, b) - m);
            out[b] = m + std::log(acc) - std::log(static_cast<double>(S));
        }
        return out;
    }

    // v ~ p(v), x = argmax v; out-of-alphabet Cartesian codes are resampled
    CategoricalBatch sample(int64_t n, Rng& rng, int max_retries = 100) const {
        CategoricalBatch out(n, dims, num_classes);
        int64_t done = 0;
        int attempts = 0;
        while (done < n) {
            if (++attempts > max_retries)
                throw std::runtime_error("argmax flow sample: exceeded retries on out-of-alphabet codes");
            int64_t want = n - done;
            Tensor v = density->sample(want, rng);
            CategoricalBatch xe = decode_samples(v, want);
            if (cartesian_base > 0) {
                CartesianDecodeResult dec = cartesian_decode(xe, num_classes, cartesian_base);
                for (int64_t b = 0; b < want && done < n; ++b) {
                    bool row_ok = true;
                    for (int64_t d = 0; d < dims; ++d)
                        if (!dec.valid[static_cast<size_t>(b * dims + d)]) row_ok = false;
                    if (!row_ok) continue;
                    for (int64_t d = 0; d < dims; ++d) out.at(done, d) = dec.x.at(b, d);
                    ++done;
                }
            } else {
                for (int64_t b = 0; b < want; ++b)
                    for (int64_t d = 0; d < dims; ++d) out.at(done + b, d) = xe.at(b, d);
                done += want;
            }
        }
        return out;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& fn) {
        density->visit_params(prefix + ".density", fn);
        posterior->visit_params(prefix + ".posterior", fn);
    }

  private:
    CategoricalBatch decode_samples(const Tensor& v, int64_t B) const {
        Tensor v3 = v.reshaped({B, static_cast<int64_t>(enc_dims), static_cast<int64_t>(enc_classes)});
        return argmax_map(v3);
    }

    void check_support(const Tensor& v, const CategoricalBatch& xe) const {
        Tensor v3 = v.reshaped({xe.batch, static_cast<int64_t>(enc_dims), static_cast<int64_t>(enc_classes)});
        if (posterior->argmax_support()) {
            CategoricalBatch got = argmax_map(v3);
            for (size_t i = 0; i < got.values.size(); ++i)
                if (got.values[i] != xe.values[i])
                    throw std::logic_error("argmax flow: posterior sample violates the argmax constraint");
        } else {
            for (int64_t b = 0; b < xe.batch; ++b)
                for (int64_t d = 0; d < enc_dims; ++d)
                    for (int64_t k = 0; k < enc_classes; ++k) {
                        double f = std::floor(v3.at(b, d, k));
                        double want = (xe.at(b, d) == k) ? 1.0 : 0.0;
                        if (f != want)
                            throw std::logic_error("argmax flow: dequantization sample leaves the unit cell");
                    }
        }
    }
};

}  // namespace catgen
