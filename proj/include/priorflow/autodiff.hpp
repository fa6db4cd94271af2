// Copyright 2026 The priorflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over row-major double matrices.
//
// A Tape records every operation of one forward pass. Values are stored in
// creation order, so a reverse sweep over the tape is a valid topological
// order for backpropagation. Parameters live outside the tape and receive
// their gradients through Tape::param() leaves.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace priorflow::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a value recorded on a tape. Cheap to copy.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    // Gradient after Tape::backward(); an empty matrix means "never reached".
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    // With grad_enabled == false parameters enter as constants and no
    // backward closures are recorded.
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var constant_scalar(double v);
    // Leaf that receives a gradient but is not bound to a Parameter.
    Var leaf(Matrix value);
    Var param(Parameter& p);

    // Seeds d(root)/d(root) = seed (root must be 1x1) and sweeps backwards.
    void backward(const Var& root, double seed = 1.0);

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    // Op-author interface.
    Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
    Var push(Matrix value, std::span<const Var> parents, Backward backward);
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
    Matrix& grad_ref(std::size_t id);
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
    };

    bool grad_enabled_;
    std::deque<Node> nodes_;
};

// ---- elementwise / structural ops -------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);               // elementwise
Var scale(Var a, double s);
Var add_const(Var a, double c);
Var mul_scalar(Var a, Var s);        // s is 1x1
Var add_rowvec(Var a, Var row);      // row is 1 x cols(a)
Var reciprocal(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var clamp(Var a, double lo, double hi);

Var matmul(Var a, Var b);            // a * b
Var matmul_nt(Var a, Var b);         // a * b^T

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
// out.row(i) = table.row(indices[i]); backward scatter-adds.
Var gather_rows(Var table, std::span<const int> indices);
// Multiplies row i by mask[i] (a constant, usually 0/1).
Var mask_rows(Var a, std::span<const double> mask);
// [x_{l-k/2} ... x_{l+k/2}] concatenated along columns, zero beyond the ends.
Var shift_stack(Var a, int kernel);
Var mean_rows(Var a);

Var sum(Var a);
Var sum_squares(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Fused multi-head scaled dot-product self-attention over rows.
// key_valid[j] == false excludes key j from every softmax.
Var attention(Var q, Var k, Var v, int heads, std::span<const char> key_valid);

// Sum over rows of -log softmax(logits)[target]; rows with target < 0 skipped.
Var cross_entropy_sum(Var logits, std::span<const int> targets);

Var dropout(Var a, double rate, std::uint64_t seed);

}  // namespace priorflow::ad
