#pragma once

#include <opera/matrix.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace opera {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline thread_local int no_grad_depth = 0;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized like value whenever requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense double-precision tensor taking part in reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage and gradient
/// slot. Values are treated as immutable once created; only parameters are
/// updated in place by the optimizer, through `values_mut()`.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("Tensor: shape " + shape_string(shape) + " holds " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(values.size()));
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        if (requires_grad) node->grad.assign(node->value.size(), 0.0);
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        const std::size_t n = v.size();
        return from({n}, std::move(v), requires_grad);
    }

    static Tensor from_matrix(const Matrix& m, bool requires_grad = false) {
        return from({m.rows, m.cols}, m.values, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return rank() >= 2 ? node_->shape[1] : 1; }

    std::span<const double> values() const { return node_->value; }
    std::span<double> values_mut() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() { return node_->grad; }

    double item() const {
        if (numel() != 1) throw ShapeError("Tensor::item on shape " + shape_string(shape()));
        return node_->value[0];
    }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf(); }

    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    // Same values, no history, no gradient.
    Tensor detach() const { return from(shape(), node_->value, false); }

    Matrix to_matrix() const { return Matrix(rows(), cols(), node_->value); }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    template <class Rule>
    friend Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs, Rule&& rule);
};

// Builds an op output; records `rule` on the tape when any input needs a gradient.
template <class Rule>
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs, Rule&& rule) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const Tensor& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->grad.assign(node->value.size(), 0.0);
        for (const Tensor& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward = std::forward<Rule>(rule);
    }
    return Tensor(std::move(node));
}

/// Topologically ordered record of the operations reachable from a root.
///
/// Built on demand from the dynamic graph; `replay()` walks it in reverse,
/// visiting each node once. `clear()` drops the recorded rules and parent
/// links of interior nodes so the graph can be released.
class Tape {
public:
    explicit Tape(const Tensor& root) {
        std::unordered_set<detail::Node*> seen;
        // Iterative post-order DFS.
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        if (root.requires_grad()) {
            stack.emplace_back(root.node(), 0);
            seen.insert(root.node());
        }
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order_.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::size_t size() const { return order_.size(); }

    void replay() const {
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

    void clear() {
        for (detail::Node* node : order_) {
            if (!node->is_leaf()) {
                node->backward = nullptr;
                node->parents.clear();
            }
        }
        order_.clear();
    }

private:
    std::vector<detail::Node*> order_;
};

/// Accumulates d(loss)/d(x) into the grad slot of every requires-grad tensor
/// reachable from `loss`. Gradients add to whatever is already there.
inline void backward(const Tensor& loss, bool retain_graph = false) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a single-element tensor, got " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) return;
    Tape tape(loss);
    loss.node()->grad[0] += 1.0;
    tape.replay();
    if (!retain_graph) tape.clear();
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

// out[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * bp[j];
        }
    }
}

// out[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* o = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            o[j] += s;
        }
    }
}

// out[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* o = out + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * bi[j];
        }
    }
}

}  // namespace detail

/// C = A * B for A[m x k], B[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) detail::gemm_nt(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        if (pb.requires_grad) detail::gemm_tn(pa.value.data(), self.grad.data(), pb.grad.data(), m, k, n);
    });
}

/// C = A * B^T for A[m x k], B[n x k].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul_nt");
    detail::require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()) + "^T");
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        // dA = dC * B, dB = dC^T * A
        if (pa.requires_grad) detail::gemm_nn(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        if (pb.requires_grad) detail::gemm_tn(self.grad.data(), pa.value.data(), pb.grad.data(), m, n, k);
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    });
}

// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= s;
    return make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
    });
}

// X[m x n] + b[n], broadcast over rows.
inline Tensor add_row_vector(const Tensor& x, const Tensor& b) {
    detail::require_rank(x, 2, "add_row_vector");
    detail::require_rank(b, 1, "add_row_vector");
    const std::size_t m = x.rows(), n = x.cols();
    if (b.numel() != n) {
        throw ShapeError("add_row_vector: " + shape_string(x.shape()) + " + " + shape_string(b.shape()));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
    return make_result(x.shape(), std::move(out), {x, b}, [m, n](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pb = *self.parents[1];
        if (px.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
    });
}

// Columns [begin, end) of X[m x n].
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    detail::require_rank(x, 2, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    if (begin > end || end > n) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_string(x.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(m * w);
    const auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(i * n + begin), w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
    return make_result({m, w}, std::move(out), {x}, [m, n, w, begin](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) px.grad[i * n + begin + j] += self.grad[i * w + j];
    });
}

// Entries where keep == 0 are replaced by `fill`; no gradient flows through them.
inline Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> keep, double fill) {
    if (keep.size() != x.numel()) {
        throw ShapeError("masked_fill: mask of " + std::to_string(keep.size()) + " entries for " +
                         shape_string(x.shape()));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!keep[i]) out[i] = fill;
    std::vector<std::uint8_t> kept(keep.begin(), keep.end());
    return make_result(x.shape(), std::move(out), {x}, [kept = std::move(kept)](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (kept[i]) px.grad[i] += self.grad[i];
    });
}

/// Row-wise softmax with max subtraction. Entries equal to -inf are treated as
/// masked and come out as exact zeros; a row with no finite entry is rejected.
inline Tensor softmax_rows(const Tensor& x) {
    detail::require_rank(x, 2, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    const auto xv = x.values();
    std::vector<double> out(m * n);
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * n;
        double mx = neg_inf;
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        if (mx == neg_inf) throw std::domain_error("softmax_rows: row " + std::to_string(i) + " is fully masked");
        double total = 0.0;
        double* o = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = row[j] == neg_inf ? 0.0 : std::exp(row[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    return make_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.value.data() + i * n;
            const double* g = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
            double* d = px.grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) d[j] += y[j] * (g[j] - dot);
        }
    });
}

/// Per-row normalization to zero mean and unit variance (population variance,
/// eps added under the root), followed by an affine gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    detail::require_rank(x, 2, "layer_norm");
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.numel() != n || beta.numel() != n) {
        throw ShapeError("layer_norm: input " + shape_string(x.shape()) + " with gamma " +
                         shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
    }
    const auto xv = x.values();
    const auto gv = gamma.values();
    const auto bv = beta.values();
    std::vector<double> xhat(m * n);
    std::vector<double> inv_std(m);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mean) * inv_std[i];
            out[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                           auto& px = *self.parents[0];
                           auto& pg = *self.parents[1];
                           auto& pb = *self.parents[2];
                           const double inv_n = 1.0 / static_cast<double>(n);
                           std::vector<double> g(n);
                           for (std::size_t i = 0; i < m; ++i) {
                               const double* dy = self.grad.data() + i * n;
                               const double* xh = xhat.data() + i * n;
                               if (pg.requires_grad)
                                   for (std::size_t j = 0; j < n; ++j) pg.grad[j] += dy[j] * xh[j];
                               if (pb.requires_grad)
                                   for (std::size_t j = 0; j < n; ++j) pb.grad[j] += dy[j];
                               if (!px.requires_grad) continue;
                               double mean_g = 0.0, mean_gx = 0.0;
                               for (std::size_t j = 0; j < n; ++j) {
                                   g[j] = dy[j] * pg.value[j];
                                   mean_g += g[j];
                                   mean_gx += g[j] * xh[j];
                               }
                               mean_g *= inv_n;
                               mean_gx *= inv_n;
                               double* dx = px.grad.data() + i * n;
                               for (std::size_t j = 0; j < n; ++j) dx[j] += inv_std[i] * (g[j] - mean_g - xh[j] * mean_gx);
                           }
                       });
}

inline Tensor sum(const Tensor& x) {
    const auto xv = x.values();
    const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result({1}, {total}, {x}, [](detail::Node& self) {
        auto& px = *self.parents[0];
        for (double& g : px.grad) g += self.grad[0];
    });
}

// Column sums of X[m x n] -> [n].
inline Tensor column_sum(const Tensor& x) {
    detail::require_rank(x, 2, "column_sum");
    const std::size_t m = x.rows(), n = x.cols();
    const auto xv = x.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
    return make_result({n}, std::move(out), {x}, [m, n](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) px.grad[i * n + j] += self.grad[j];
    });
}

// Inner product of two equal-length vectors.
inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel() || a.rank() != 1 || b.rank() != 1) {
        throw ShapeError("dot: " + shape_string(a.shape()) + " . " + shape_string(b.shape()));
    }
    const auto av = a.values();
    const auto bv = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    return make_result({1}, {s}, {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double g = self.grad[0];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g * pb.value[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < pb.grad.size(); ++i) pb.grad[i] += g * pa.value[i];
    });
}

// out[i] = X[i][index[i]] for X[m x n].
inline Tensor gather_rows(const Tensor& x, std::span<const int> index) {
    detail::require_rank(x, 2, "gather_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (index.size() != m) {
        throw ShapeError("gather_rows: " + std::to_string(index.size()) + " indices for " + shape_string(x.shape()));
    }
    std::vector<std::size_t> cols(m);
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= n) {
            throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " at row " + std::to_string(i) +
                                    " outside [0, " + std::to_string(n) + ")");
        }
        cols[i] = static_cast<std::size_t>(index[i]);
        out[i] = x.values()[i * n + cols[i]];
    }
    return make_result({m}, std::move(out), {x}, [n, cols = std::move(cols)](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < cols.size(); ++i) px.grad[i * n + cols[i]] += self.grad[i];
    });
}

// log(clamp(x, lo, hi)); zero gradient where the clamp is active.
inline Tensor log_clamped(const Tensor& x, double lo, double hi) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::log(std::clamp(xv[i], lo, hi));
    return make_result(x.shape(), std::move(out), {x}, [lo, hi](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = px.value[i];
            if (v > lo && v < hi) px.grad[i] += self.grad[i] / v;
        }
    });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// Every evaluation of `f` runs with tape recording disabled.
template <class F>
std::vector<double> finite_diff_gradient(F&& f, std::vector<double> x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
    NoGradGuard guard;
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = f(std::as_const(x));
        x[i] = orig - h;
        const double down = f(std::as_const(x));
        x[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// max|a - b| / max(max|a|, max|b|); 0 when both vectors vanish.
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: length mismatch");
    double diff = 0.0, scale_ab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale_ab = std::max({scale_ab, std::abs(a[i]), std::abs(b[i])});
    }
    return scale_ab == 0.0 ? 0.0 : diff / scale_ab;
}

}  // namespace opera
