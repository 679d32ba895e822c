#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace catgen {

// Line-oriented dataset file: one header line "K D n seed", then n lines of
// D space-separated integer indices.
inline void write_dataset(const std::string& path, const CategoricalBatch& x, uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << x.num_classes << " " << x.dims << " " << x.batch << " " << seed << "\n";
    for (int64_t b = 0; b < x.batch; ++b) {
        for (int64_t d = 0; d < x.dims; ++d) {
            if (d) out << " ";
            out << x.at(b, d);
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct DatasetFile {
    CategoricalBatch data;
    uint64_t seed = 0;
};

inline DatasetFile read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    int64_t n = 0, d = 0;
    int kk = 0;
    uint64_t seed = 0;
    if (!(in >> kk >> d >> n >> seed)) throw std::runtime_error("bad dataset header in " + path);
    if (kk < 1 || d < 1 || n < 0) throw std::runtime_error("bad dataset header values in " + path);
    DatasetFile f;
    f.seed = seed;
    f.data = CategoricalBatch(n, d, kk);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t j = 0; j < d; ++j) {
            int32_t v;
            if (!(in >> v)) throw std::runtime_error("truncated dataset file " + path);
            if (v < 0 || v >= kk) throw std::runtime_error("dataset value out of range in " + path);
            f.data.at(b, j) = v;
        }
    return f;
}

struct CsvWriter {
    std::ofstream out;

    CsvWriter(const std::string& path, const std::string& header) : out(path) {
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
        out << header << "\n";
    }
    template <typename... Ts>
    void row(const Ts&... fields) {
        bool first = true;
        ((out << (first ? "" : ","), first = false, out << fields), ...);
        out << "\n";
    }
};

// grid of non-negative values scaled so the maximum maps to 255
inline void write_pgm(const std::string& path, const Tensor& grid) {
    if (grid.rank() != 2) throw std::invalid_argument("write_pgm: expected a 2-d grid");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    double mx = 0.0;
    for (double v : grid.data) mx = std::max(mx, v);
    if (mx <= 0.0) mx = 1.0;
    out << "P5\n" << grid.shape[1] << " " << grid.shape[0] << "\n255\n";
    for (double v : grid.data) {
        unsigned char byte = static_cast<unsigned char>(std::min(255.0, std::max(0.0, v / mx * 255.0)));
        out.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

inline void write_csv_grid(const std::string& path, const Tensor& grid) {
    if (grid.rank() != 2) throw std::invalid_argument("write_csv_grid: expected a 2-d grid");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (int64_t i = 0; i < grid.shape[0]; ++i) {
        for (int64_t j = 0; j < grid.shape[1]; ++j) {
            if (j) out << ",";
            out << grid.at(i, j);
        }
        out << "\n";
    }
}

}  // namespace catgen
