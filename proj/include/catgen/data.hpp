#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace catgen {

enum class DatasetKind { eight_gaussians, char_corpus };

struct ToyDatasetSpec {
    DatasetKind kind = DatasetKind::eight_gaussians;
    int K = 8;
    int D = 2;
    int64_t n_train = 4096;
    int64_t n_val = 1024;
    double range_lo = -4.0;
    double range_hi = 4.0;
    int length = 16;                     // char corpus sequence length
    std::vector<std::string> patterns;   // char corpus word patterns
    uint64_t seed = 0;

    void validate() const {
        if (K < 2) throw std::invalid_argument("dataset: K must be >= 2");
        if (n_train < 1 || n_val < 1) throw std::invalid_argument("dataset: sizes must be positive");
        if (kind == DatasetKind::eight_gaussians && !(range_hi > range_lo))
            throw std::invalid_argument("dataset: empty quantization range");
        if (kind == DatasetKind::char_corpus && K > 27)
            throw std::invalid_argument("dataset: char corpus alphabet is at most 27");
    }
};

inline const std::vector<std::string>& default_patterns() {
    static const std::vector<std::string> p = {
        "the cat sat on the mat ",
        "a quick brown fox jumps ",
        "pack my box with jugs ",
        "we all live in a submarine ",
    };
    return p;
}

// 'a'..'z' -> 0..25, ' ' -> 26
inline int char_to_index(char c) {
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c == ' ') return 26;
    throw std::invalid_argument(std::string("char corpus: unsupported character '") + c + "'");
}
inline char index_to_char(int i) {
    if (i >= 0 && i < 26) return static_cast<char>('a' + i);
    if (i == 26) return ' ';
    return '?';
}

// Mixture of 8 unit-weight Gaussians on a radius-3 ring, each coordinate
// quantized to K equal bins over [lo, hi] (clamped at the edges). Mode
// angles are offset by pi/8 so that at the default K = 8 grid the centers
// fall inside bins rather than on bin edges.
inline CategoricalBatch eight_gaussians(int64_t n, int K, double lo, double hi, Rng& rng) {
    if (K < 2) throw std::invalid_argument("eight_gaussians: K must be >= 2");
    CategoricalBatch out(n, 2, K);
    const double radius = 3.0, sigma = 0.15;
    for (int64_t i = 0; i < n; ++i) {
        int64_t mode = rng.below(8);
        double angle = 2.0 * M_PI * (static_cast<double>(mode) + 0.5) / 8.0;
        double x = radius * std::cos(angle) + sigma * rng.normal();
        double y = radius * std::sin(angle) + sigma * rng.normal();
        auto quantize = [&](double v) {
            int64_t bin = static_cast<int64_t>(std::floor((v - lo) / (hi - lo) * K));
            if (bin < 0) bin = 0;
            if (bin >= K) bin = K - 1;
            return static_cast<int32_t>(bin);
        };
        out.at(i, 0) = quantize(x);
        out.at(i, 1) = quantize(y);
    }
    return out;
}

// Sequences built by tiling one of the word patterns to the requested
// length; the pattern is drawn per sample.
inline CategoricalBatch char_corpus(const std::vector<std::string>& patterns, int length, int64_t n, Rng& rng) {
    const auto& pats = patterns.empty() ? default_patterns() : patterns;
    CategoricalBatch out(n, length, 27);
    for (int64_t i = 0; i < n; ++i) {
        const std::string& p = pats[static_cast<size_t>(rng.below(static_cast<int64_t>(pats.size())))];
        for (int d = 0; d < length; ++d) out.at(i, d) = static_cast<int32_t>(char_to_index(p[static_cast<size_t>(d) % p.size()]));
    }
    return out;
}

// Each position is independently resampled uniformly over the other K-1
// classes with the given probability.
inline CategoricalBatch corrupt(const CategoricalBatch& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("corrupt: rate must be in [0, 1]");
    CategoricalBatch out = x;
    for (auto& v : out.values) {
        if (rng.uniform() < rate) {
            int32_t nv = static_cast<int32_t>(rng.below(x.num_classes - 1));
            if (nv >= v) ++nv;
            v = nv;
        }
    }
    return out;
}

inline CategoricalBatch generate(const ToyDatasetSpec& spec, int64_t n, Rng& rng) {
    spec.validate();
    switch (spec.kind) {
        case DatasetKind::eight_gaussians: return eight_gaussians(n, spec.K, spec.range_lo, spec.range_hi, rng);
        case DatasetKind::char_corpus: return char_corpus(spec.patterns, spec.length, n, rng);
    }
    throw std::invalid_argument("dataset: unknown kind");
}

struct Dataset {
    CategoricalBatch train;
    CategoricalBatch val;
};

// pure function of (spec, spec.seed)
inline Dataset make_dataset(const ToyDatasetSpec& spec) {
    Rng rng(spec.seed);
    Dataset ds;
    ds.train = generate(spec, spec.n_train, rng);
    ds.val = generate(spec, spec.n_val, rng);
    return ds;
}

inline std::string to_text(const CategoricalBatch& x, int64_t row) {
    std::string s;
    for (int64_t d = 0; d < x.dims; ++d) s += index_to_char(x.at(row, d));
    return s;
}

}  // namespace catgen
