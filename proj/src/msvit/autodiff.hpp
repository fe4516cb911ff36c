// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over Tensor.
//
// A Var is a shared handle to a graph Node. Ops build new nodes whose
// backward closure scatters the node's gradient into its inputs. The graph
// is owned by the handles: dropping the last Var on the loss frees it.
//
// All reductions run in a fixed left-to-right order so that two runs over
// the same inputs are bit-identical.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "msvit/tensor.hpp"

namespace msvit::ad {

struct Node;
using Var = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;  // empty until first written
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;

    // Gradient buffer, zero-initialised on first use.
    Tensor& grad_ref();
    bool has_grad() const { return !grad.empty() || value.empty(); }
};

Var constant(Tensor value);
// Leaf that accumulates gradient.
Var parameter(Tensor value);

// Reverse pass from a scalar root. Intermediate gradients are reset first,
// leaf gradients accumulate across calls.
void backward(const Var& root);
// Reverse pass from an arbitrary root with an explicit upstream gradient.
void backward(const Var& root, const Tensor& seed);
// Reverse pass from several roots at once (each with its own seed).
void backward(std::span<const Var> roots, std::span<const Tensor> seeds);

// Fresh gradients of a scalar loss with respect to the given leaves. Leaves
// that do not reach the loss get zeros. Throws std::invalid_argument if the
// loss is not a scalar.
std::vector<Tensor> grad(const Var& loss, const std::vector<Var>& params);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// Forward: 1 where a > 0.5, else 0. Backward: identity.
Var ste_threshold(const Var& a);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
// [rows x cols] -> [rows], mean over the last axis.
Var row_mean(const Var& a);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
// x [n x k] * w [k x m] + b [m]
Var linear(const Var& x, const Var& w, const Var& b);
// x [(g*n) x m] + tile(t [n x m], g)
Var add_tiled(const Var& x, const Var& t);
// y[i, :] = a[i] * x[i, :]
Var row_scale(const Var& x, const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// ---- shape ----
Var reshape(const Var& a, Shape shape);
// Gather along the first axis.
Var gather_rows(const Var& a, std::vector<std::size_t> rows);
// Gather flat elements into a rank-1 result.
Var take(const Var& a, std::vector<std::size_t> flat_index);
// Concatenate along the first axis; trailing dims must agree.
Var concat_rows(const std::vector<Var>& parts);

// ---- image ops ----
// grid [H x W x C] -> [out_h x out_w x C], separable bilinear with the
// align-corners convention. A size-1 output samples the input centre.
Var bilinear_resize(const Var& grid, std::size_t out_h, std::size_t out_w);
Tensor bilinear_resize(const Tensor& grid, std::size_t out_h, std::size_t out_w);

// ---- losses & distributions ----
// Mean softmax cross-entropy; logits [B x C].
Var cross_entropy(const Var& logits, std::span<const int> labels);

// sigma(tau * logit(v) - logit(pi)); pi has v's shape or a single element
// broadcast over v. Inputs are clamped to [1e-12, 1 - 1e-12].
Var relaxed_bernoulli_cdf(const Var& v, const Var& pi, double tau);
// Phi((v - mean) / std); mean has v's shape or a single element.
Var gaussian_cdf(const Var& v, const Var& mean, double std_dev);

// Multi-head attention over `rows / seq_len` independent sequences with
// per-key activity weights:
//   A_ij = act_j exp(q_i.k_j / sqrt(dh)) / sum_p act_p exp(q_i.k_p / sqrt(dh)).
// q, k, v: [rows x d]; act: [rows]. Every sequence needs one key with act > 0.
Var masked_attention(const Var& q, const Var& k, const Var& v, const Var& act,
                     std::size_t seq_len, std::size_t heads);

}  // namespace msvit::ad
