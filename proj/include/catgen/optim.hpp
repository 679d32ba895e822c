#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace catgen {

// Adam with bias correction. State is lazily sized on the first step and
// must then be reused with the same parameter list.
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<Tensor> m, v;

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
        if (params.size() != grads.size()) throw std::invalid_argument("adam: params/grads size mismatch");
        if (m.empty()) {
            for (const Tensor* p : params) {
                m.emplace_back(p->shape);
                v.emplace_back(p->shape);
            }
        }
        if (m.size() != params.size()) throw std::invalid_argument("adam: state does not match parameter list");
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            check_same_shape(p, g, "adam");
            for (int64_t j = 0; j < p.numel(); ++j) {
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
                double mh = m[i][j] / bc1;
                double vh = v[i][j] / bc2;
                p[j] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }
};

}  // namespace catgen
