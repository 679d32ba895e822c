#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace catgen {

// Dense row-major tensor of doubles. Rank 0 is a scalar with one element.
// Only the shapes this library actually needs are supported; there is no
// general broadcasting.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)), data(numel_of(shape), fill) {}
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t e : s) {
            if (e < 0) throw std::invalid_argument("tensor: negative extent");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor(std::vector<int64_t>{}, std::vector<double>{v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    // extent of the last axis; scalars count as a single row of length 1
    int64_t last() const { return shape.empty() ? 1 : shape.back(); }
    int64_t rows() const { return last() == 0 ? 0 : numel() / last(); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) {
        assert(rank() == 2);
        return data[static_cast<size_t>(i * shape[1] + j)];
    }
    double at(int64_t i, int64_t j) const {
        assert(rank() == 2);
        return data[static_cast<size_t>(i * shape[1] + j)];
    }
    double& at(int64_t i, int64_t j, int64_t k) {
        assert(rank() == 3);
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        assert(rank() == 3);
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    Tensor reshaped(std::vector<int64_t> s) const {
        if (numel_of(s) != numel()) throw std::invalid_argument("tensor: reshape changes element count");
        Tensor out;
        out.shape = std::move(s);
        out.data = data;
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Integer class indices, batch x dims, values in [0, num_classes).
struct CategoricalBatch {
    int64_t batch = 0;
    int64_t dims = 0;
    int num_classes = 0;
    std::vector<int32_t> values;  // batch * dims entries

    CategoricalBatch() = default;
    CategoricalBatch(int64_t b, int64_t d, int k) : batch(b), dims(d), num_classes(k), values(static_cast<size_t>(b * d), 0) {}

    int32_t& at(int64_t b, int64_t d) { return values[static_cast<size_t>(b * dims + d)]; }
    int32_t at(int64_t b, int64_t d) const { return values[static_cast<size_t>(b * dims + d)]; }

    void validate() const {
        for (int32_t v : values)
            if (v < 0 || v >= num_classes)
                throw std::invalid_argument("categorical batch: index " + std::to_string(v) + " out of range for K=" +
                                            std::to_string(num_classes));
    }
};

}  // namespace catgen
