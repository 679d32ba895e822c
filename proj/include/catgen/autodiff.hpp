#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "numerics.hpp"
#include "tensor.hpp"

namespace catgen::ad {

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// list is already a topological order and backward() is a single reverse
// sweep. A tape is single-threaded; separate tapes may run concurrently.

enum class Op : uint8_t {
    Leaf,
    Add,
    AddScalar,
    Sub,
    Mul,
    MulScalar,
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    LogAddExp,
    LogSoftmaxLast,
    LogSumExpLast,
    SumLast,
    SumAll,
    MeanAll,
    ExpandLast,
    BroadcastBatch,
    MatMul,
    Affine,
    GatherRows,
    ConcatLast,
    SliceLast,
    Reshape,
    DiagEmbed,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::AddScalar: return "add_scalar";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::MulScalar: return "mul_scalar";
        case Op::Neg: return "neg";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softplus: return "softplus";
        case Op::LogAddExp: return "log_add_exp";
        case Op::LogSoftmaxLast: return "log_softmax";
        case Op::LogSumExpLast: return "log_sum_exp";
        case Op::SumLast: return "sum_last";
        case Op::SumAll: return "sum_all";
        case Op::MeanAll: return "mean_all";
        case Op::ExpandLast: return "expand_last";
        case Op::BroadcastBatch: return "broadcast_batch";
        case Op::MatMul: return "matmul";
        case Op::Affine: return "affine";
        case Op::GatherRows: return "gather_rows";
        case Op::ConcatLast: return "concat_last";
        case Op::SliceLast: return "slice_last";
        case Op::Reshape: return "reshape";
        case Op::DiagEmbed: return "diag_embed";
    }
    return "?";
}

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1;
    double scalar = 0.0;
    int64_t extent = 0;  // expand/broadcast width, slice lo
    std::vector<int32_t> rows;
    Tensor val;
    Tensor grad;
};

class Tape {
  public:
    std::vector<Node> nodes;

    const Tensor& val(Var v) const { return nodes[static_cast<size_t>(v.id)].val; }
    const Tensor& grad(Var v) const { return nodes[static_cast<size_t>(v.id)].grad; }
    const std::vector<int64_t>& shape(Var v) const { return val(v).shape; }

    Var leaf(Tensor t) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(t);
        return push(std::move(n));
    }
    Var constant(Tensor t) { return leaf(std::move(t)); }
    Var constant_like(Var v, double fill) { return leaf(Tensor(val(v).shape, fill)); }

    Var add(Var a, Var b) {
        check_same_shape(val(a), val(b), "ad::add");
        Node n = binary(Op::Add, a, b);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] + val(b)[i];
        return push(std::move(n));
    }
    Var add(Var a, double s) {
        Node n = unary(Op::AddScalar, a);
        n.scalar = s;
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] + s;
        return push(std::move(n));
    }
    Var sub(Var a, Var b) {
        check_same_shape(val(a), val(b), "ad::sub");
        Node n = binary(Op::Sub, a, b);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] - val(b)[i];
        return push(std::move(n));
    }
    Var mul(Var a, Var b) {
        check_same_shape(val(a), val(b), "ad::mul");
        Node n = binary(Op::Mul, a, b);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] * val(b)[i];
        return push(std::move(n));
    }
    Var mul(Var a, double s) {
        Node n = unary(Op::MulScalar, a);
        n.scalar = s;
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] * s;
        return push(std::move(n));
    }
    Var neg(Var a) {
        Node n = unary(Op::Neg, a);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = -val(a)[i];
        return push(std::move(n));
    }
    Var exp(Var a) {
        Node n = unary(Op::Exp, a);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::exp(val(a)[i]);
        return push(std::move(n));
    }
    Var log(Var a) {
        Node n = unary(Op::Log, a);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::log(val(a)[i]);
        return push(std::move(n));
    }
    Var tanh(Var a) {
        Node n = unary(Op::Tanh, a);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::tanh(val(a)[i]);
        return push(std::move(n));
    }
    Var sigmoid(Var a) {
        Node n = unary(Op::Sigmoid, a);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = catgen::sigmoid(val(a)[i]);
        return push(std::move(n));
    }
    Var softplus(Var a) {
        Node n = unary(Op::Softplus, a);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = catgen::softplus(val(a)[i]);
        return push(std::move(n));
    }
    Var log_add_exp(Var a, Var b) {
        check_same_shape(val(a), val(b), "ad::log_add_exp");
        Node n = binary(Op::LogAddExp, a, b);
        for (int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = catgen::log_add_exp(val(a)[i], val(b)[i]);
        return push(std::move(n));
    }
    Var log_softmax_last(Var a) {
        Node n = unary(Op::LogSoftmaxLast, a);
        n.val = catgen::log_softmax_last(val(a));
        return push(std::move(n));
    }
    Var log_sum_exp_last(Var a) {
        Node n;
        n.op = Op::LogSumExpLast;
        n.a = a.id;
        n.val = catgen::log_sum_exp_last(val(a));
        return push(std::move(n));
    }
    Var sum_last(Var a) {
        Node n;
        n.op = Op::SumLast;
        n.a = a.id;
        std::vector<int64_t> s(shape(a).begin(), shape(a).end());
        if (!s.empty()) s.pop_back();
        n.val = Tensor(s);
        int64_t k = val(a).last();
        for (int64_t r = 0; r < val(a).rows(); ++r) {
            double acc = 0.0;
            for (int64_t i = 0; i < k; ++i) acc += val(a)[r * k + i];
            n.val[r] = acc;
        }
        return push(std::move(n));
    }
    Var sum_all(Var a) {
        Node n;
        n.op = Op::SumAll;
        n.a = a.id;
        double acc = 0.0;
        for (int64_t i = 0; i < val(a).numel(); ++i) acc += val(a)[i];
        n.val = Tensor::scalar(acc);
        return push(std::move(n));
    }
    Var mean_all(Var a) {
        Node n;
        n.op = Op::MeanAll;
        n.a = a.id;
        double acc = 0.0;
        for (int64_t i = 0; i < val(a).numel(); ++i) acc += val(a)[i];
        n.val = Tensor::scalar(acc / static_cast<double>(val(a).numel()));
        return push(std::move(n));
    }
    Var expand_last(Var a, int64_t k) {
        Node n;
        n.op = Op::ExpandLast;
        n.a = a.id;
        n.extent = k;
        std::vector<int64_t> s(shape(a).begin(), shape(a).end());
        s.push_back(k);
        n.val = Tensor(s);
        for (int64_t r = 0; r < val(a).numel(); ++r)
            for (int64_t i = 0; i < k; ++i) n.val[r * k + i] = val(a)[r];
        return push(std::move(n));
    }
    Var broadcast_batch(Var a, int64_t b) {
        Node n;
        n.op = Op::BroadcastBatch;
        n.a = a.id;
        n.extent = b;
        std::vector<int64_t> s;
        s.push_back(b);
        for (int64_t e : shape(a)) s.push_back(e);
        n.val = Tensor(s);
        int64_t m = val(a).numel();
        for (int64_t r = 0; r < b; ++r)
            for (int64_t i = 0; i < m; ++i) n.val[r * m + i] = val(a)[i];
        return push(std::move(n));
    }
    Var matmul(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
            throw std::invalid_argument("ad::matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
        Node n = binary_shape(Op::MatMul, a, b, {A.shape[0], B.shape[1]});
        matmul_into(n.val, A, B);
        return push(std::move(n));
    }
    // x (m,k) @ w (k,n) + bias (n)
    Var affine(Var x, Var w, Var bias) {
        const Tensor& X = val(x);
        const Tensor& W = val(w);
        const Tensor& B = val(bias);
        if (X.rank() != 2 || W.rank() != 2 || X.shape[1] != W.shape[0] || B.rank() != 1 || B.shape[0] != W.shape[1])
            throw std::invalid_argument("ad::affine: incompatible shapes");
        Node n = binary_shape(Op::Affine, x, w, {X.shape[0], W.shape[1]});
        n.c = bias.id;
        matmul_into(n.val, X, W);
        int64_t m = X.shape[0], cols = W.shape[1];
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < cols; ++j) n.val[i * cols + j] += B[j];
        return push(std::move(n));
    }
    // table viewed as (R, L); out row i copies table row rows[i]
    Var gather_rows(Var table, std::vector<int32_t> row_ids) {
        const Tensor& T = val(table);
        int64_t L = T.last();
        int64_t R = T.rows();
        for (int32_t r : row_ids)
            if (r < 0 || r >= R) throw std::invalid_argument("ad::gather_rows: row id out of range");
        Node n;
        n.op = Op::GatherRows;
        n.a = table.id;
        n.val = Tensor({static_cast<int64_t>(row_ids.size()), L});
        for (size_t i = 0; i < row_ids.size(); ++i)
            for (int64_t j = 0; j < L; ++j) n.val[static_cast<int64_t>(i) * L + j] = T[row_ids[i] * L + j];
        n.rows = std::move(row_ids);
        return push(std::move(n));
    }
    Var concat_last(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        std::vector<int64_t> la(A.shape.begin(), A.shape.end() - 1);
        std::vector<int64_t> lb(B.shape.begin(), B.shape.end() - 1);
        if (A.rank() == 0 || B.rank() == 0 || la != lb)
            throw std::invalid_argument("ad::concat_last: incompatible shapes");
        int64_t ka = A.last(), kb = B.last();
        std::vector<int64_t> s = la;
        s.push_back(ka + kb);
        Node n = binary_shape(Op::ConcatLast, a, b, s);
        for (int64_t r = 0; r < A.rows(); ++r) {
            for (int64_t i = 0; i < ka; ++i) n.val[r * (ka + kb) + i] = A[r * ka + i];
            for (int64_t i = 0; i < kb; ++i) n.val[r * (ka + kb) + ka + i] = B[r * kb + i];
        }
        return push(std::move(n));
    }
    Var slice_last(Var a, int64_t lo, int64_t hi) {
        const Tensor& A = val(a);
        if (A.rank() == 0 || lo < 0 || hi > A.last() || lo >= hi)
            throw std::invalid_argument("ad::slice_last: bad range");
        std::vector<int64_t> s(A.shape.begin(), A.shape.end() - 1);
        s.push_back(hi - lo);
        Node n;
        n.op = Op::SliceLast;
        n.a = a.id;
        n.extent = lo;
        n.val = Tensor(s);
        int64_t k = A.last(), w = hi - lo;
        for (int64_t r = 0; r < A.rows(); ++r)
            for (int64_t i = 0; i < w; ++i) n.val[r * w + i] = A[r * k + lo + i];
        return push(std::move(n));
    }
    Var reshape(Var a, std::vector<int64_t> s) {
        Node n;
        n.op = Op::Reshape;
        n.a = a.id;
        n.val = val(a).reshaped(std::move(s));
        return push(std::move(n));
    }
    // (n,) -> (n,n) with the input on the diagonal
    Var diag_embed(Var a) {
        const Tensor& A = val(a);
        if (A.rank() != 1) throw std::invalid_argument("ad::diag_embed: expected rank-1 input");
        int64_t n_ = A.shape[0];
        Node n;
        n.op = Op::DiagEmbed;
        n.a = a.id;
        n.val = Tensor({n_, n_});
        for (int64_t i = 0; i < n_; ++i) n.val[i * n_ + i] = A[i];
        return push(std::move(n));
    }

    // Populates grads of every node reachable from loss. loss must be scalar.
    void backward(Var loss) {
        if (val(loss).numel() != 1) throw std::invalid_argument("ad::backward: loss must be scalar");
        for (Node& n : nodes) n.grad = Tensor(n.val.shape);
        nodes[static_cast<size_t>(loss.id)].grad[0] = 1.0;
        for (int64_t id = loss.id; id >= 0; --id) {
            Node& n = nodes[static_cast<size_t>(id)];
            step_backward(n);
        }
    }

    // id and op of the first node whose value contains a non-finite entry
    std::string first_non_finite() const {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (!nodes[i].val.all_finite())
                return std::string(op_name(nodes[i].op)) + " (node " + std::to_string(i) + ")";
        return "";
    }

  private:
    Var push(Node n) {
        nodes.push_back(std::move(n));
        return Var{static_cast<int>(nodes.size()) - 1};
    }
    Node unary(Op op, Var a) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.val = Tensor(shape(a));
        return n;
    }
    Node binary(Op op, Var a, Var b) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = b.id;
        n.val = Tensor(shape(a));
        return n;
    }
    Node binary_shape(Op op, Var a, Var b, std::vector<int64_t> s) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = b.id;
        n.val = Tensor(std::move(s));
        return n;
    }

    static void matmul_into(Tensor& out, const Tensor& A, const Tensor& B) {
        int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
        for (int64_t i = 0; i < m; ++i) {
            double* orow = out.data.data() + i * n;
            for (int64_t p = 0; p < k; ++p) {
                double a = A[i * k + p];
                if (a == 0.0) continue;
                const double* brow = B.data.data() + p * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += a * brow[j];
            }
        }
    }

    void step_backward(Node& n) {
        if (n.op == Op::Leaf) return;
        const Tensor& g = n.grad;
        Tensor& ga = nodes[static_cast<size_t>(n.a)].grad;
        const Tensor& av = nodes[static_cast<size_t>(n.a)].val;
        switch (n.op) {
            case Op::Add: {
                Tensor& gb = nodes[static_cast<size_t>(n.b)].grad;
                for (int64_t i = 0; i < g.numel(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::AddScalar:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                break;
            case Op::Sub: {
                Tensor& gb = nodes[static_cast<size_t>(n.b)].grad;
                for (int64_t i = 0; i < g.numel(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                Tensor& gb = nodes[static_cast<size_t>(n.b)].grad;
                const Tensor& bv = nodes[static_cast<size_t>(n.b)].val;
                for (int64_t i = 0; i < g.numel(); ++i) {
                    ga[i] += g[i] * bv[i];
                    gb[i] += g[i] * av[i];
                }
                break;
            }
            case Op::MulScalar:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.scalar;
                break;
            case Op::Neg:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] -= g[i];
                break;
            case Op::Exp:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.val[i];
                break;
            case Op::Log:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / av[i];
                break;
            case Op::Tanh:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
                break;
            case Op::Sigmoid:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
                break;
            case Op::Softplus:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * catgen::sigmoid(av[i]);
                break;
            case Op::LogAddExp: {
                Tensor& gb = nodes[static_cast<size_t>(n.b)].grad;
                const Tensor& bv = nodes[static_cast<size_t>(n.b)].val;
                for (int64_t i = 0; i < g.numel(); ++i) {
                    if (!std::isfinite(n.val[i])) continue;
                    ga[i] += g[i] * std::exp(av[i] - n.val[i]);
                    gb[i] += g[i] * std::exp(bv[i] - n.val[i]);
                }
                break;
            }
            case Op::LogSoftmaxLast: {
                int64_t k = n.val.last();
                for (int64_t r = 0; r < n.val.rows(); ++r) {
                    double gsum = 0.0;
                    for (int64_t i = 0; i < k; ++i) gsum += g[r * k + i];
                    for (int64_t i = 0; i < k; ++i) ga[r * k + i] += g[r * k + i] - std::exp(n.val[r * k + i]) * gsum;
                }
                break;
            }
            case Op::LogSumExpLast: {
                int64_t k = av.last();
                for (int64_t r = 0; r < av.rows(); ++r) {
                    if (!std::isfinite(n.val[r])) continue;
                    for (int64_t i = 0; i < k; ++i) ga[r * k + i] += g[r] * std::exp(av[r * k + i] - n.val[r]);
                }
                break;
            }
            case Op::SumLast: {
                int64_t k = av.last();
                for (int64_t r = 0; r < av.rows(); ++r)
                    for (int64_t i = 0; i < k; ++i) ga[r * k + i] += g[r];
                break;
            }
            case Op::SumAll:
                for (int64_t i = 0; i < av.numel(); ++i) ga[i] += g[0];
                break;
            case Op::MeanAll: {
                double w = 1.0 / static_cast<double>(av.numel());
                for (int64_t i = 0; i < av.numel(); ++i) ga[i] += g[0] * w;
                break;
            }
            case Op::ExpandLast: {
                int64_t k = n.extent;
                for (int64_t r = 0; r < av.numel(); ++r)
                    for (int64_t i = 0; i < k; ++i) ga[r] += g[r * k + i];
                break;
            }
            case Op::BroadcastBatch: {
                int64_t m = av.numel();
                for (int64_t r = 0; r < n.extent; ++r)
                    for (int64_t i = 0; i < m; ++i) ga[i] += g[r * m + i];
                break;
            }
            case Op::MatMul: {
                Tensor& gb = nodes[static_cast<size_t>(n.b)].grad;
                const Tensor& bv = nodes[static_cast<size_t>(n.b)].val;
                int64_t m = av.shape[0], k = av.shape[1], c = bv.shape[1];
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = g.data.data() + i * c;
                        const double* brow = bv.data.data() + p * c;
                        for (int64_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
                for (int64_t p = 0; p < k; ++p)
                    for (int64_t i = 0; i < m; ++i) {
                        double a = av[i * k + p];
                        if (a == 0.0) continue;
                        const double* grow = g.data.data() + i * c;
                        double* brow = gb.data.data() + p * c;
                        for (int64_t j = 0; j < c; ++j) brow[j] += a * grow[j];
                    }
                break;
            }
            case Op::Affine: {
                Tensor& gw = nodes[static_cast<size_t>(n.b)].grad;
                const Tensor& wv = nodes[static_cast<size_t>(n.b)].val;
                Tensor& gbias = nodes[static_cast<size_t>(n.c)].grad;
                int64_t m = av.shape[0], k = av.shape[1], c = wv.shape[1];
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = g.data.data() + i * c;
                        const double* wrow = wv.data.data() + p * c;
                        for (int64_t j = 0; j < c; ++j) acc += grow[j] * wrow[j];
                        ga[i * k + p] += acc;
                    }
                for (int64_t p = 0; p < k; ++p)
                    for (int64_t i = 0; i < m; ++i) {
                        double a = av[i * k + p];
                        if (a == 0.0) continue;
                        const double* grow = g.data.data() + i * c;
                        double* wrow = gw.data.data() + p * c;
                        for (int64_t j = 0; j < c; ++j) wrow[j] += a * grow[j];
                    }
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < c; ++j) gbias[j] += g[i * c + j];
                break;
            }
            case Op::GatherRows: {
                int64_t L = av.last();
                for (size_t i = 0; i < n.rows.size(); ++i)
                    for (int64_t j = 0; j < L; ++j) ga[n.rows[i] * L + j] += g[static_cast<int64_t>(i) * L + j];
                break;
            }
            case Op::ConcatLast: {
                Tensor& gb = nodes[static_cast<size_t>(n.b)].grad;
                const Tensor& bv = nodes[static_cast<size_t>(n.b)].val;
                int64_t ka = av.last(), kb = bv.last();
                for (int64_t r = 0; r < av.rows(); ++r) {
                    for (int64_t i = 0; i < ka; ++i) ga[r * ka + i] += g[r * (ka + kb) + i];
                    for (int64_t i = 0; i < kb; ++i) gb[r * kb + i] += g[r * (ka + kb) + ka + i];
                }
                break;
            }
            case Op::SliceLast: {
                int64_t k = av.last(), w = n.val.last(), lo = n.extent;
                for (int64_t r = 0; r < av.rows(); ++r)
                    for (int64_t i = 0; i < w; ++i) ga[r * k + lo + i] += g[r * w + i];
                break;
            }
            case Op::Reshape:
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                break;
            case Op::DiagEmbed: {
                int64_t m = av.shape[0];
                for (int64_t i = 0; i < m; ++i) ga[i] += g[i * m + i];
                break;
            }
            case Op::Leaf:
                break;
        }
    }
};

// Binds parameter tensors to tape leaves, memoized by address so a parameter
// used several times in one forward pass accumulates into a single node.
struct Bound {
    std::vector<std::pair<Tensor*, Var>> entries;

    Var of(Tape& tape, Tensor& p) {
        for (auto& e : entries)
            if (e.first == &p) return e.second;
        Var v = tape.leaf(p);
        entries.emplace_back(&p, v);
        return v;
    }

    // gradients in binding order, matching params()
    std::vector<Tensor> grads(const Tape& tape) const {
        std::vector<Tensor> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(tape.grad(e.second));
        return out;
    }
    std::vector<Tensor*> params() const {
        std::vector<Tensor*> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.first);
        return out;
    }
};

}  // namespace catgen::ad
