#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "composeq/errors.hpp"

namespace composeq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Raw row-major kernels. All accumulate into C; callers zero C first.
// ---------------------------------------------------------------------------

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void gemm_tn(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Reverse-mode tape. A Tensor is a shared handle to a node; the parent links
// of the nodes form the (topologically ordered) graph of a forward pass.
// ---------------------------------------------------------------------------

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool backward_run = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TensorNode&)> backward_fn;

    std::vector<double>& grad_buf() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->data.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev,
                        bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> d(shape_numel(shape));
        for (auto& x : d) x = dist(rng);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->data.size(); }
    std::size_t rows() const { return n_->shape.at(0); }
    std::size_t cols() const { return n_->shape.at(1); }

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }
    double item() const {
        if (n_->data.size() != 1)
            throw ShapeError("item() on non-scalar tensor " + shape_str(n_->shape));
        return n_->data[0];
    }
    double at(std::size_t i, std::size_t j) const {
        return n_->data[i * cols() + j];
    }

    bool requires_grad() const { return n_->requires_grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<double>& grad() const { return n_->grad; }
    std::vector<double>& grad_buf() { return n_->grad_buf(); }
    void zero_grad() { n_->grad.clear(); }

    std::shared_ptr<TensorNode> node() const { return n_; }

    // Reverse pass from a scalar root; each fan-out consumer accumulates
    // additively into its parents. Callable once per forward graph.
    void backward() const {
        if (n_->data.size() != 1)
            throw ShapeError("backward() requires a scalar root, got " +
                             shape_str(n_->shape));
        if (!std::isfinite(n_->data[0]))
            throw NumericsError("backward() on non-finite loss value");
        if (n_->backward_run)
            throw NumericsError("backward() called twice on the same graph");
        n_->backward_run = true;

        // Iterative post-order DFS over parent links.
        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> visited;
        std::vector<std::pair<TensorNode*, std::size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        visited.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorNode* p = node->parents[idx++].get();
                if (p->requires_grad && visited.insert(p).second)
                    stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        n_->grad_buf()[0] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode* node = *it;
            if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
        }
    }

private:
    std::shared_ptr<TensorNode> n_;
};

// Builds an op result node; parent links and the backward closure are only
// attached when some input actually tracks gradients.
inline Tensor make_op(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = needs;
    if (needs) {
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise and matrix ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& r) {
        if (an->requires_grad) {
            auto& g = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& r) {
        if (an->requires_grad) {
            auto& g = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i] * an->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, c](TensorNode& r) {
        auto& g = an->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i] * c;
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an](TensorNode& r) {
        auto& g = an->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (an->data[i] > 0.0) g[i] += r.grad[i];
    });
}

// x[r x c] + row-broadcast bias[c]
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.shape().size() != 2 || bias.shape().size() != 1 ||
        x.cols() != bias.shape()[0])
        throw ShapeError("add_bias: " + shape_str(x.shape()) + " vs " +
                         shape_str(bias.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] = x.data()[i * c + j] + bias.data()[j];
    auto xn = x.node(), bn = bias.node();
    return make_op(x.shape(), std::move(out), {x, bias}, [xn, bn, r, c](TensorNode& res) {
        if (xn->requires_grad) {
            auto& g = xn->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buf();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += res.grad[i * c + j];
        }
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& r) {
        if (an->requires_grad)  // dA += G * B^T
            gemm_nt(r.grad.data(), bn->data.data(), an->grad_buf().data(), m, n, k);
        if (bn->requires_grad)  // dB += A^T * G
            gemm_tn(an->data.data(), r.grad.data(), bn->grad_buf().data(), m, k, n);
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2)
        throw ShapeError("transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
    auto an = a.node();
    return make_op({c, r}, std::move(out), {a}, [an, r, c](TensorNode& res) {
        auto& g = an->grad_buf();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += res.grad[j * r + i];
    });
}

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    auto an = a.node();
    return make_op({1}, {s}, {a}, [an](TensorNode& r) {
        auto& g = an->grad_buf();
        for (auto& v : g) v += r.grad[0];
    });
}

// out = sum_i w[i] * mats[i]; the scalar-mixture primitive used by the
// composed layer. dw[i] = <mats[i], dOut>.
inline Tensor mix(const std::vector<Tensor>& mats, const Tensor& w) {
    if (mats.empty()) throw ConfigError("mix: empty matrix list");
    if (w.shape().size() != 1 || w.shape()[0] != mats.size())
        throw ConfigError("mix: weight vector " + shape_str(w.shape()) +
                          " does not match " + std::to_string(mats.size()) +
                          " matrices");
    for (const auto& m : mats) check_same_shape(mats[0], m, "mix");
    const std::size_t n = mats[0].size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < mats.size(); ++i) {
        const double wi = w.data()[i];
        const auto& d = mats[i].data();
        for (std::size_t j = 0; j < n; ++j) out[j] += wi * d[j];
    }
    std::vector<Tensor> parents = mats;
    parents.push_back(w);
    auto wn = w.node();
    std::vector<std::shared_ptr<TensorNode>> mat_nodes;
    for (const auto& m : mats) mat_nodes.push_back(m.node());
    return make_op(mats[0].shape(), std::move(out), parents,
                   [mat_nodes, wn, n](TensorNode& r) {
        for (std::size_t i = 0; i < mat_nodes.size(); ++i) {
            auto& mn = *mat_nodes[i];
            if (mn.requires_grad) {
                const double wi = wn->data[i];
                auto& g = mn.grad_buf();
                for (std::size_t j = 0; j < n; ++j) g[j] += wi * r.grad[j];
            }
        }
        if (wn->requires_grad) {
            auto& gw = wn->grad_buf();
            for (std::size_t i = 0; i < mat_nodes.size(); ++i) {
                double acc = 0.0;
                const auto& d = mat_nodes[i]->data;
                for (std::size_t j = 0; j < n; ++j) acc += d[j] * r.grad[j];
                gw[i] += acc;
            }
        }
    });
}

}  // namespace composeq
