// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "msvit/errors.hpp"

namespace msvit::ad {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (a->value.shape() != b->value.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a->value.shape()) + " vs " +
                                    shape_str(b->value.shape()));
    }
}

void check_rank(const char* op, const Var& a, std::size_t rank) {
    if (a->value.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_str(a->value.shape()));
    }
}

Var make_node(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
    auto node = std::make_shared<Node>();
    node->op = op;
    node->value = std::move(value);
    node->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Var& v) { return v->requires_grad; });
    if (node->requires_grad) {
        node->inputs = std::move(inputs);
        node->backward = std::move(fn);
    }
    return node;
}

Tensor* grad_of(Node& node, std::size_t i) {
    Node& in = *node.inputs[i];
    return in.requires_grad ? &in.grad_ref() : nullptr;
}

// Register-tiled kernels. Tiling only regroups independent outputs; every
// output still accumulates its terms one by one in ascending order, so the
// result is identical to the plain triple loop.
constexpr std::size_t kTileR = 4;
constexpr std::size_t kTileC = 32;

// acc[r][j] (+)= sum over t of lhs(t, r) * rhs(t, j), t ascending.
template <class Lhs>
void tile_kernel(std::size_t steps, std::size_t rows, std::size_t cols, Lhs lhs,
                 const double* rhs, std::size_t rhs_stride, double* out, std::size_t out_stride) {
    if (rows == kTileR && cols == kTileC) {
        double acc[kTileR][kTileC];
        for (std::size_t r = 0; r < kTileR; ++r)
            for (std::size_t j = 0; j < kTileC; ++j) acc[r][j] = out[r * out_stride + j];
        for (std::size_t t = 0; t < steps; ++t) {
            const double* br = rhs + t * rhs_stride;
            for (std::size_t r = 0; r < kTileR; ++r) {
                const double a = lhs(t, r);
                for (std::size_t j = 0; j < kTileC; ++j) acc[r][j] += a * br[j];
            }
        }
        for (std::size_t r = 0; r < kTileR; ++r)
            for (std::size_t j = 0; j < kTileC; ++j) out[r * out_stride + j] = acc[r][j];
        return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
        double* o = out + r * out_stride;
        for (std::size_t t = 0; t < steps; ++t) {
            const double a = lhs(t, r);
            const double* br = rhs + t * rhs_stride;
            for (std::size_t j = 0; j < cols; ++j) o[j] += a * br[j];
        }
    }
}

// out[n x m] += a[n x k] * b[k x m]; each output sums over k in ascending order.
void gemm_acc(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
              double* out) {
    for (std::size_t i0 = 0; i0 < n; i0 += kTileR) {
        const std::size_t rows = std::min(kTileR, n - i0);
        const double* ab = a + i0 * k;
        for (std::size_t j0 = 0; j0 < m; j0 += kTileC) {
            const std::size_t cols = std::min(kTileC, m - j0);
            tile_kernel(
                k, rows, cols, [ab, k](std::size_t t, std::size_t r) { return ab[r * k + t]; },
                b + j0, m, out + i0 * m + j0, m);
        }
    }
}

// out[k x m] += a^T b with a [n x k], b [n x m]; sums over n ascending.
void gemm_at_b_acc(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
                   double* out) {
    for (std::size_t p0 = 0; p0 < k; p0 += kTileR) {
        const std::size_t rows = std::min(kTileR, k - p0);
        const double* ap = a + p0;
        for (std::size_t j0 = 0; j0 < m; j0 += kTileC) {
            const std::size_t cols = std::min(kTileC, m - j0);
            tile_kernel(
                n, rows, cols, [ap, k](std::size_t t, std::size_t r) { return ap[t * k + r]; },
                b + j0, m, out + p0 * m + j0, m);
        }
    }
}

std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols) {
    std::vector<double> t(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
    return t;
}

// out[n x k] += g[n x m] * b^T with b [k x m].
void gemm_a_bt_acc(std::size_t n, std::size_t k, std::size_t m, const double* g, const double* b,
                   double* out) {
    const std::vector<double> bt = transpose(b, k, m);
    gemm_acc(n, m, k, g, bt.data(), out);
}

// Head slice [n x dh] of rows base.. of x [* x d], transposed to [dh x n].
void transpose_head(const double* x, std::size_t base, std::size_t n, std::size_t d,
                    std::size_t off, std::size_t dh, std::vector<double>& out) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* xj = x + (base + j) * d + off;
        for (std::size_t t = 0; t < dh; ++t) out[t * n + j] = xj[t];
    }
}

double sigmoid_scalar(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double broadcast_at(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

void check_broadcast(const char* op, const Var& v, const Var& p) {
    if (p->value.size() != 1 && p->value.shape() != v->value.shape()) {
        throw std::invalid_argument(std::string(op) + ": parameter shape " +
                                    shape_str(p->value.shape()) + " incompatible with " +
                                    shape_str(v->value.shape()));
    }
}

struct Taps {
    std::size_t lo, hi;
    double w;  // weight of hi
};

std::vector<Taps> interp_taps(std::size_t in, std::size_t out) {
    std::vector<Taps> taps(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double src = out == 1 ? 0.5 * static_cast<double>(in - 1)
                                    : static_cast<double>(o) * static_cast<double>(in - 1) /
                                          static_cast<double>(out - 1);
        std::size_t lo = static_cast<std::size_t>(std::floor(src));
        lo = std::min(lo, in - 1);
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

void check_resize(const Shape& s, std::size_t out_h, std::size_t out_w) {
    if (s.size() != 3) {
        throw std::invalid_argument("bilinear_resize: expected H x W x C grid, got " + shape_str(s));
    }
    if (s[0] == 0 || s[1] == 0 || out_h == 0 || out_w == 0) {
        throw std::invalid_argument("bilinear_resize: zero-size grid or output");
    }
}

}  // namespace

Tensor& Node::grad_ref() {
    if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->op = "constant";
    node->value = std::move(value);
    return node;
}

Var parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->op = "parameter";
    node->value = std::move(value);
    node->requires_grad = true;
    return node;
}

namespace {

std::vector<Node*> topo_order(std::span<const Var> roots) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    for (const Var& root : roots) {
        if (!root->requires_grad || seen.count(root.get())) continue;
        seen.insert(root.get());
        stack.emplace_back(root.get(), 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                Node* child = node->inputs[next++].get();
                if (child->requires_grad && !seen.count(child)) {
                    seen.insert(child);
                    stack.emplace_back(child, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    return order;
}

}  // namespace

void backward(std::span<const Var> roots, std::span<const Tensor> seeds) {
    if (roots.size() != seeds.size()) {
        throw std::invalid_argument("backward: roots and seeds differ in count");
    }
    const std::vector<Node*> order = topo_order(roots);
    for (Node* n : order) {
        if (n->backward) n->grad = Tensor();
    }
    for (std::size_t r = 0; r < roots.size(); ++r) {
        if (!roots[r]->requires_grad) continue;
        if (seeds[r].size() != roots[r]->value.size()) {
            throw std::invalid_argument("backward: seed shape does not match root");
        }
        Tensor& g = roots[r]->grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seeds[r][i];
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

void backward(const Var& root, const Tensor& seed) {
    const Var roots[] = {root};
    const Tensor seeds[] = {seed};
    backward(roots, seeds);
}

void backward(const Var& root) {
    if (root->value.size() != 1) {
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_str(root->value.shape()));
    }
    backward(root, Tensor(root->value.shape(), 1.0));
}

std::vector<Tensor> grad(const Var& loss, const std::vector<Var>& params) {
    if (loss->value.size() != 1) {
        throw std::invalid_argument("grad: loss must be a scalar, got shape " +
                                    shape_str(loss->value.shape()));
    }
    for (const Var& p : params) p->grad = Tensor();
    backward(loss);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Var& p : params) {
        out.push_back(p->grad.empty() ? Tensor(p->value.shape(), 0.0) : p->grad);
    }
    return out;
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_node("add", std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (Tensor* g = grad_of(n, k))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make_node("sub", std::move(out), {a, b}, [](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        if (Tensor* g = grad_of(n, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make_node("mul", std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        if (Tensor* g = grad_of(n, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (double& x : out.data()) x *= c;
    return make_node("scale", std::move(out), {a}, [c](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = a->value;
    for (double& x : out.data()) x += c;
    return make_node("add_scalar", std::move(out), {a}, [](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var square(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data()) x *= x;
    return make_node("square", std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.inputs[0]->value;
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * x[i] * n.grad[i];
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data()) x = sigmoid_scalar(x);
    return make_node("sigmoid", std::move(out), {a}, [](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = n.value[i];
            g[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

Var gelu(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data()) x = 0.5 * x * (1.0 + std::erf(x / kSqrt2));
    return make_node("gelu", std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.inputs[0]->value;
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xi = x[i];
            const double d = 0.5 * (1.0 + std::erf(xi / kSqrt2)) +
                             xi * kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
            g[i] += n.grad[i] * d;
        }
    });
}

Var relu(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data()) x = std::max(0.0, x);
    return make_node("relu", std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.inputs[0]->value;
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) g[i] += n.grad[i];
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out = a->value;
    for (double& x : out.data()) x = std::clamp(x, lo, hi);
    return make_node("clamp", std::move(out), {a}, [lo, hi](Node& n) {
        const Tensor& x = n.inputs[0]->value;
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] >= lo && x[i] <= hi) g[i] += n.grad[i];
    });
}

Var ste_threshold(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.data()) x = x > 0.5 ? 1.0 : 0.0;
    return make_node("ste_threshold", std::move(out), {a}, [](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a->value.data()) s += x;
    return make_node("sum", Tensor::scalar(s), {a}, [](Node& n) {
        Tensor& g = *grad_of(n, 0);
        const double up = n.grad[0];
        for (double& x : g.data()) x += up;
    });
}

Var mean(const Var& a) {
    const std::size_t count = a->value.size();
    if (count == 0) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (double x : a->value.data()) s += x;
    return make_node("mean", Tensor::scalar(s / static_cast<double>(count)), {a},
                     [count](Node& n) {
                         Tensor& g = *grad_of(n, 0);
                         const double up = n.grad[0] / static_cast<double>(count);
                         for (double& x : g.data()) x += up;
                     });
}

Var row_mean(const Var& a) {
    check_rank("row_mean", a, 2);
    const std::size_t rows = a->value.dim(0), cols = a->value.dim(1);
    Tensor out(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += a->value.at(r, c);
        out[r] = s / static_cast<double>(cols);
    }
    return make_node("row_mean", std::move(out), {a}, [rows, cols](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double up = n.grad[r] / static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += up;
        }
    });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    check_rank("matmul", a, 2);
    check_rank("matmul", b, 2);
    const std::size_t n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
    if (b->value.dim(0) != k) {
        throw std::invalid_argument("matmul: inner dimensions differ " +
                                    shape_str(a->value.shape()) + " x " +
                                    shape_str(b->value.shape()));
    }
    Tensor out(Shape{n, m}, 0.0);
    gemm_acc(n, k, m, a->value.ptr(), b->value.ptr(), out.ptr());
    return make_node("matmul", std::move(out), {a, b}, [n, k, m](Node& n_) {
        if (Tensor* g = grad_of(n_, 0))
            gemm_a_bt_acc(n, k, m, n_.grad.ptr(), n_.inputs[1]->value.ptr(), g->ptr());
        if (Tensor* g = grad_of(n_, 1))
            gemm_at_b_acc(n, k, m, n_.inputs[0]->value.ptr(), n_.grad.ptr(), g->ptr());
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    check_rank("linear", x, 2);
    check_rank("linear", w, 2);
    const std::size_t n = x->value.dim(0), k = x->value.dim(1), m = w->value.dim(1);
    if (w->value.dim(0) != k || b->value.size() != m) {
        throw std::invalid_argument("linear: shapes " + shape_str(x->value.shape()) + " x " +
                                    shape_str(w->value.shape()) + " + " +
                                    shape_str(b->value.shape()));
    }
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(b->value.ptr(), b->value.ptr() + m, out.ptr() + i * m);
    gemm_acc(n, k, m, x->value.ptr(), w->value.ptr(), out.ptr());
    return make_node("linear", std::move(out), {x, w, b}, [n, k, m](Node& nd) {
        if (Tensor* g = grad_of(nd, 0))
            gemm_a_bt_acc(n, k, m, nd.grad.ptr(), nd.inputs[1]->value.ptr(), g->ptr());
        if (Tensor* g = grad_of(nd, 1))
            gemm_at_b_acc(n, k, m, nd.inputs[0]->value.ptr(), nd.grad.ptr(), g->ptr());
        if (Tensor* g = grad_of(nd, 2)) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* gr = nd.grad.ptr() + i * m;
                for (std::size_t j = 0; j < m; ++j) (*g)[j] += gr[j];
            }
        }
    });
}

Var add_tiled(const Var& x, const Var& t) {
    check_rank("add_tiled", x, 2);
    check_rank("add_tiled", t, 2);
    const std::size_t rows = x->value.dim(0), cols = x->value.dim(1), period = t->value.dim(0);
    if (t->value.dim(1) != cols || period == 0 || rows % period != 0) {
        throw std::invalid_argument("add_tiled: cannot tile " + shape_str(t->value.shape()) +
                                    " over " + shape_str(x->value.shape()));
    }
    Tensor out = x->value;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += t->value.at(r % period, c);
    return make_node("add_tiled", std::move(out), {x, t}, [rows, cols, period](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        if (Tensor* g = grad_of(n, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g->at(r % period, c) += n.grad.at(r, c);
    });
}

Var row_scale(const Var& x, const Var& a) {
    check_rank("row_scale", x, 2);
    const std::size_t rows = x->value.dim(0), cols = x->value.dim(1);
    if (a->value.size() != rows) {
        throw std::invalid_argument("row_scale: " + std::to_string(a->value.size()) +
                                    " scales for " + std::to_string(rows) + " rows");
    }
    Tensor out = x->value;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) *= a->value[r];
    return make_node("row_scale", std::move(out), {x, a}, [rows, cols](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& av = n.inputs[1]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g->at(r, c) += av[r] * n.grad.at(r, c);
        if (Tensor* g = grad_of(n, 1))
            for (std::size_t r = 0; r < rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < cols; ++c) s += n.grad.at(r, c) * xv.at(r, c);
                (*g)[r] += s;
            }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    check_rank("layer_norm", x, 2);
    const std::size_t rows = x->value.dim(0), cols = x->value.dim(1);
    if (gamma->value.size() != cols || beta->value.size() != cols) {
        throw std::invalid_argument("layer_norm: affine parameters must have " +
                                    std::to_string(cols) + " elements");
    }
    Tensor out(Shape{rows, cols});
    Tensor xhat(Shape{rows, cols});
    std::vector<double> rstd(rows);
    const double inv = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += x->value.at(r, c);
        mu *= inv;
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double dlt = x->value.at(r, c) - mu;
            var += dlt * dlt;
        }
        var *= inv;
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (x->value.at(r, c) - mu) * rstd[r];
            xhat.at(r, c) = h;
            out.at(r, c) = gamma->value[c] * h + beta->value[c];
        }
    }
    return make_node("layer_norm", std::move(out), {x, gamma, beta},
                     [rows, cols, inv, xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
                         const Tensor& gm = n.inputs[1]->value;
                         Tensor* gx = grad_of(n, 0);
                         Tensor* gg = grad_of(n, 1);
                         Tensor* gb = grad_of(n, 2);
                         for (std::size_t r = 0; r < rows; ++r) {
                             double mean_d = 0.0, mean_dx = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) {
                                 const double up = n.grad.at(r, c);
                                 if (gg) (*gg)[c] += up * xhat.at(r, c);
                                 if (gb) (*gb)[c] += up;
                                 const double d = up * gm[c];
                                 mean_d += d;
                                 mean_dx += d * xhat.at(r, c);
                             }
                             if (!gx) continue;
                             mean_d *= inv;
                             mean_dx *= inv;
                             for (std::size_t c = 0; c < cols; ++c) {
                                 const double d = n.grad.at(r, c) * gm[c];
                                 gx->at(r, c) += rstd[r] * (d - mean_d - xhat.at(r, c) * mean_dx);
                             }
                         }
                     });
}

// ---------------------------------------------------------------------- shape

Var reshape(const Var& a, Shape shape) {
    if (shape_numel(shape) != a->value.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a->value.shape()) +
                                    " as " + shape_str(shape));
    }
    return make_node("reshape", a->value.reshaped(std::move(shape)), {a}, [](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
    const Shape& s = a->value.shape();
    if (s.empty()) throw std::invalid_argument("gather_rows: scalar input");
    const std::size_t inner = s[0] ? a->value.size() / s[0] : 0;
    Shape out_shape = s;
    out_shape[0] = rows.size();
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= s[0]) {
            throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]) +
                                    " out of range " + std::to_string(s[0]));
        }
        std::copy_n(a->value.ptr() + rows[r] * inner, inner, out.ptr() + r * inner);
    }
    return make_node("gather_rows", std::move(out), {a},
                     [inner, rows = std::move(rows)](Node& n) {
                         Tensor& g = *grad_of(n, 0);
                         for (std::size_t r = 0; r < rows.size(); ++r) {
                             double* dst = g.ptr() + rows[r] * inner;
                             const double* src = n.grad.ptr() + r * inner;
                             for (std::size_t c = 0; c < inner; ++c) dst[c] += src[c];
                         }
                     });
}

Var take(const Var& a, std::vector<std::size_t> flat_index) {
    Tensor out(Shape{flat_index.size()});
    for (std::size_t i = 0; i < flat_index.size(); ++i) {
        if (flat_index[i] >= a->value.size()) {
            throw std::out_of_range("take: index " + std::to_string(flat_index[i]) +
                                    " out of range " + std::to_string(a->value.size()));
        }
        out[i] = a->value[flat_index[i]];
    }
    return make_node("take", std::move(out), {a}, [idx = std::move(flat_index)](Node& n) {
        Tensor& g = *grad_of(n, 0);
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += n.grad[i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    Shape tail(parts[0]->value.shape().begin() + 1, parts[0]->value.shape().end());
    std::size_t rows = 0;
    for (const Var& p : parts) {
        const Shape& s = p->value.shape();
        if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
            throw std::invalid_argument("concat_rows: incompatible shape " + shape_str(s));
        }
        rows += s[0];
    }
    Shape out_shape = parts[0]->value.shape();
    out_shape[0] = rows;
    Tensor out(out_shape);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        offsets.push_back(off);
        std::copy(p->value.ptr(), p->value.ptr() + p->value.size(), out.ptr() + off);
        off += p->value.size();
    }
    return make_node("concat_rows", std::move(out), parts, [offsets](Node& n) {
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            if (Tensor* g = grad_of(n, k)) {
                const double* src = n.grad.ptr() + offsets[k];
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += src[i];
            }
        }
    });
}

// ----------------------------------------------------------------- image ops

Tensor bilinear_resize(const Tensor& grid, std::size_t out_h, std::size_t out_w) {
    check_resize(grid.shape(), out_h, out_w);
    const std::size_t h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
    const auto ty = interp_taps(h, out_h);
    const auto tx = interp_taps(w, out_w);
    Tensor out(Shape{out_h, out_w, c});
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const Taps& y = ty[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const Taps& x = tx[ox];
            const double w00 = (1 - y.w) * (1 - x.w), w01 = (1 - y.w) * x.w;
            const double w10 = y.w * (1 - x.w), w11 = y.w * x.w;
            for (std::size_t ch = 0; ch < c; ++ch) {
                out[(oy * out_w + ox) * c + ch] = w00 * grid[(y.lo * w + x.lo) * c + ch] +
                                                  w01 * grid[(y.lo * w + x.hi) * c + ch] +
                                                  w10 * grid[(y.hi * w + x.lo) * c + ch] +
                                                  w11 * grid[(y.hi * w + x.hi) * c + ch];
            }
        }
    }
    return out;
}

Var bilinear_resize(const Var& grid, std::size_t out_h, std::size_t out_w) {
    Tensor out = bilinear_resize(grid->value, out_h, out_w);
    const std::size_t h = grid->value.dim(0), w = grid->value.dim(1), c = grid->value.dim(2);
    return make_node("bilinear_resize", std::move(out), {grid}, [=](Node& n) {
        Tensor& g = *grad_of(n, 0);
        const auto ty = interp_taps(h, out_h);
        const auto tx = interp_taps(w, out_w);
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Taps& y = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Taps& x = tx[ox];
                const double w00 = (1 - y.w) * (1 - x.w), w01 = (1 - y.w) * x.w;
                const double w10 = y.w * (1 - x.w), w11 = y.w * x.w;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double up = n.grad[(oy * out_w + ox) * c + ch];
                    g[(y.lo * w + x.lo) * c + ch] += w00 * up;
                    g[(y.lo * w + x.hi) * c + ch] += w01 * up;
                    g[(y.hi * w + x.lo) * c + ch] += w10 * up;
                    g[(y.hi * w + x.hi) * c + ch] += w11 * up;
                }
            }
        }
    });
}

// ------------------------------------------------------- losses/distributions

Var cross_entropy(const Var& logits, std::span<const int> labels) {
    check_rank("cross_entropy", logits, 2);
    const std::size_t b = logits->value.dim(0), c = logits->value.dim(1);
    if (labels.size() != b) throw std::invalid_argument("cross_entropy: label count mismatch");
    Tensor probs(Shape{b, c});
    double total = 0.0;
    std::vector<int> lab(labels.begin(), labels.end());
    for (std::size_t i = 0; i < b; ++i) {
        if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= c) {
            throw std::out_of_range("cross_entropy: label out of range");
        }
        double mx = logits->value.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits->value.at(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs.at(i, j) = std::exp(logits->value.at(i, j) - mx);
            s += probs.at(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= s;
        total += (std::log(s) + mx) - logits->value.at(i, static_cast<std::size_t>(lab[i]));
    }
    return make_node("cross_entropy", Tensor::scalar(total / static_cast<double>(b)), {logits},
                     [b, c, probs = std::move(probs), lab = std::move(lab)](Node& n) {
                         Tensor& g = *grad_of(n, 0);
                         const double up = n.grad[0] / static_cast<double>(b);
                         for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t j = 0; j < c; ++j) {
                                 const double onehot =
                                     static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                                 g.at(i, j) += up * (probs.at(i, j) - onehot);
                             }
                     });
}

Var relaxed_bernoulli_cdf(const Var& v, const Var& pi, double tau) {
    check_broadcast("relaxed_bernoulli_cdf", v, pi);
    constexpr double lo = 1e-12, hi = 1.0 - 1e-12;
    Tensor out(v->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = std::clamp(v->value[i], lo, hi);
        const double p = std::clamp(broadcast_at(pi->value, i), lo, hi);
        const double z = tau * (std::log(x) - std::log1p(-x)) - (std::log(p) - std::log1p(-p));
        out[i] = sigmoid_scalar(z);
    }
    return make_node("relaxed_bernoulli_cdf", std::move(out), {v, pi}, [tau](Node& n) {
        const Tensor& vv = n.inputs[0]->value;
        const Tensor& pv = n.inputs[1]->value;
        Tensor* gv = grad_of(n, 0);
        Tensor* gp = grad_of(n, 1);
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            const double f = n.value[i];
            const double dz = n.grad[i] * f * (1.0 - f);
            const double x = vv[i];
            if (gv && x > lo && x < hi) (*gv)[i] += dz * tau / (x * (1.0 - x));
            const double p = broadcast_at(pv, i);
            if (gp && p > lo && p < hi) {
                (*gp)[pv.size() == 1 ? 0 : i] -= dz / (p * (1.0 - p));
            }
        }
    });
}

Var gaussian_cdf(const Var& v, const Var& mean, double std_dev) {
    if (!(std_dev > 0.0)) throw std::invalid_argument("gaussian_cdf: std must be positive");
    check_broadcast("gaussian_cdf", v, mean);
    Tensor out(v->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z = (v->value[i] - broadcast_at(mean->value, i)) / std_dev;
        out[i] = 0.5 * std::erfc(-z / kSqrt2);
    }
    return make_node("gaussian_cdf", std::move(out), {v, mean}, [std_dev](Node& n) {
        const Tensor& vv = n.inputs[0]->value;
        const Tensor& mv = n.inputs[1]->value;
        Tensor* gv = grad_of(n, 0);
        Tensor* gm = grad_of(n, 1);
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            const double z = (vv[i] - broadcast_at(mv, i)) / std_dev;
            const double d = n.grad[i] * kInvSqrt2Pi * std::exp(-0.5 * z * z) / std_dev;
            if (gv) (*gv)[i] += d;
            if (gm) (*gm)[mv.size() == 1 ? 0 : i] -= d;
        }
    });
}

Var masked_attention(const Var& q, const Var& k, const Var& v, const Var& act,
                     std::size_t seq_len, std::size_t heads) {
    check_rank("masked_attention", q, 2);
    check_same_shape("masked_attention", q, k);
    check_same_shape("masked_attention", q, v);
    const std::size_t rows = q->value.dim(0), d = q->value.dim(1);
    if (seq_len == 0 || rows % seq_len != 0 || act->value.size() != rows) {
        throw std::invalid_argument("masked_attention: inconsistent sequence layout");
    }
    if (heads == 0 || d % heads != 0) {
        throw std::invalid_argument("masked_attention: width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t nseq = rows / seq_len, dh = d / heads, n = seq_len;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* qv = q->value.ptr();
    const double* kv = k->value.ptr();
    const double* vv = v->value.ptr();
    const double* av = act->value.ptr();

    Tensor out(Shape{rows, d}, 0.0);
    // Normalised unweighted exponentials u_ij = e_ij / sum_p act_p e_ip.
    std::vector<double> u(nseq * heads * n * n);
    std::vector<double> s(n), kt(n * dh);
    for (std::size_t b = 0; b < nseq; ++b) {
        const std::size_t base = b * n;
        bool any_active = false;
        for (std::size_t j = 0; j < n; ++j) any_active |= av[base + j] > 0.0;
        if (!any_active) {
            throw std::invalid_argument("masked_attention: sequence " + std::to_string(b) +
                                        " has no active key");
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            transpose_head(kv, base, n, d, off, dh, kt);
            for (std::size_t i = 0; i < n; ++i) {
                const double* qi = qv + (base + i) * d + off;
                std::fill(s.begin(), s.end(), 0.0);
                for (std::size_t t = 0; t < dh; ++t) {
                    const double qt = qi[t];
                    const double* kr = kt.data() + t * n;
                    for (std::size_t j = 0; j < n; ++j) s[j] += qt * kr[j];
                }
                double mx = -INFINITY;
                for (std::size_t j = 0; j < n; ++j) {
                    s[j] *= sc;
                    if (av[base + j] > 0.0) mx = std::max(mx, s[j]);
                }
                double* ui = u.data() + ((b * heads + h) * n + i) * n;
                double z = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    ui[j] = std::exp(std::min(s[j] - mx, 700.0));
                    z += av[base + j] * ui[j];
                }
                double* oi = out.ptr() + (base + i) * d + off;
                for (std::size_t j = 0; j < n; ++j) {
                    ui[j] /= z;
                    const double a_ij = av[base + j] * ui[j];
                    if (a_ij == 0.0) continue;
                    const double* vj = vv + (base + j) * d + off;
                    for (std::size_t t = 0; t < dh; ++t) oi[t] += a_ij * vj[t];
                }
            }
        }
    }

    return make_node(
        "masked_attention", std::move(out), {q, k, v, act},
        [nseq, heads, n, d, dh, sc, u = std::move(u)](Node& nd) {
            const double* qv = nd.inputs[0]->value.ptr();
            const double* kv = nd.inputs[1]->value.ptr();
            const double* vv = nd.inputs[2]->value.ptr();
            const double* av = nd.inputs[3]->value.ptr();
            Tensor* gq = grad_of(nd, 0);
            Tensor* gk = grad_of(nd, 1);
            Tensor* gv = grad_of(nd, 2);
            Tensor* ga = grad_of(nd, 3);
            std::vector<double> da(n), ds(n), vt(n * dh);
            for (std::size_t b = 0; b < nseq; ++b) {
                const std::size_t base = b * n;
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * dh;
                    transpose_head(vv, base, n, d, off, dh, vt);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* go = nd.grad.ptr() + (base + i) * d + off;
                        bool nonzero = false;
                        for (std::size_t t = 0; t < dh; ++t) nonzero |= go[t] != 0.0;
                        if (!nonzero) continue;
                        const double* ui = u.data() + ((b * heads + h) * n + i) * n;
                        std::fill(da.begin(), da.end(), 0.0);
                        for (std::size_t t = 0; t < dh; ++t) {
                            const double gt = go[t];
                            const double* vr = vt.data() + t * n;
                            for (std::size_t j = 0; j < n; ++j) da[j] += gt * vr[j];
                        }
                        double r = 0.0;
                        for (std::size_t j = 0; j < n; ++j) r += av[base + j] * ui[j] * da[j];
                        const double* qi = qv + (base + i) * d + off;
                        for (std::size_t j = 0; j < n; ++j) {
                            const double centred = da[j] - r;
                            const double a_ij = av[base + j] * ui[j];
                            ds[j] = a_ij * centred * sc;
                            if (ga) (*ga)[base + j] += ui[j] * centred;
                            if (gv && a_ij != 0.0) {
                                double* gvj = gv->ptr() + (base + j) * d + off;
                                for (std::size_t t = 0; t < dh; ++t) gvj[t] += a_ij * go[t];
                            }
                        }
                        if (gq) {
                            double* gqi = gq->ptr() + (base + i) * d + off;
                            for (std::size_t j = 0; j < n; ++j) {
                                if (ds[j] == 0.0) continue;
                                const double* kj = kv + (base + j) * d + off;
                                for (std::size_t t = 0; t < dh; ++t) gqi[t] += ds[j] * kj[t];
                            }
                        }
                        if (gk) {
                            for (std::size_t j = 0; j < n; ++j) {
                                if (ds[j] == 0.0) continue;
                                double* gkj = gk->ptr() + (base + j) * d + off;
                                for (std::size_t t = 0; t < dh; ++t) gkj[t] += ds[j] * qi[t];
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace msvit::ad
