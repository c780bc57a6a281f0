#pragma once

// Minimal tape-based reverse-mode differentiation over batched tensors.
//
// A Tape records every operation applied to its Vars. Nodes whose inputs are
// all constants carry no backward closure, so a forward pass over constants
// costs nothing beyond the arithmetic. Calling backward() on a scalar Var
// accumulates d(root)/d(node) into every node that requires a gradient.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gcl/tensor.hpp"

namespace gcl {

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    double item() const;
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const noexcept { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);

    // Records an op output. The closure is kept only if some input needs a
    // gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

    void backward(Var root);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

    // Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
    Tensor grad(Var v) const;

    // Accumulation target used by backward closures.
    Tensor& grad_slot(Var v);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

enum class Similarity { cosine, dot };

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var reshape(Var a, Shape shape);

Var relu(Var a);
Var sigmoid(Var a);

// Inverted dropout with a mask drawn from `seed`. Identity when !training.
Var dropout(Var a, double p, std::uint64_t seed, bool training);

// x[B,in] * W[out,in]^T + b[out]
Var linear(Var x, Var weight, Var bias);

// x[B,C,H,W], weight[O,C,k,k], bias[O]
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);

// x[B,Ci,H,W], weight[Ci,Co,k,k], bias[Co] -> [B,Co,out_h,out_w].
// Adjoint of conv2d with the same geometry.
Var conv_transpose2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad,
                     std::size_t out_h, std::size_t out_w);

// Rows [begin, end) of a tensor viewed as [rows, ...].
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
// Gathers rows of table[R,D] by index -> [indices.size(), D].
Var gather_rows(Var table, std::span<const std::size_t> indices);
// Mean over rows of [R,D] -> [1,D].
Var mean_rows(Var a);

// Scalar reductions.
Var sum(Var a);
Var mean_squared_error(Var a, Var b);
// mean over rows of the row-wise L1 norm of a [R,D] tensor.
Var l1_row_mean(Var a);
// mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

// Contrastive objective. anchors[B,D], positives[B*P,D], negatives[B*M,D];
// the positives of anchor i occupy rows [i*P, (i+1)*P), likewise negatives.
// Returns the mean over anchors and positives of
//   -log( exp(s+/tau) / (exp(s+/tau) + sum_m exp(s-_m/tau)) ).
Var info_nce(Var anchors, Var positives, Var negatives, std::size_t per_anchor_pos,
             std::size_t per_anchor_neg, double tau, Similarity similarity);

// Mean over all unordered pairs (i<j) with labels[i]==labels[j] of the mean
// squared difference between rows i and j. Zero when no pair exists.
Var same_class_pair_mse(Var a, std::span<const std::size_t> labels);

} // namespace ops
} // namespace gcl
