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

#include "doctest.h"
#include "gradcheck.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <limits>

using namespace priorflow;
using testutil::Matrix;
using testutil::max_grad_error;
using testutil::Parameter;
using testutil::random_matrix;
using testutil::Tape;
using testutil::Var;

namespace {

constexpr double kTol = 1e-4;

// Contracts an output against a fixed pseudo-random weight so every output
// entry receives a distinct upstream gradient.
Var contract(Tape& t, Var y) {
    std::mt19937_64 rng(1234);
    return ad::sum(ad::mul(y, t.constant(random_matrix(static_cast<int>(y.rows()), static_cast<int>(y.cols()), rng))));
}

double check(const std::function<Var(Tape&)>& op, std::vector<Parameter*> params) {
    return max_grad_error([&](Tape& t) { return contract(t, op(t)); }, params);
}

Parameter param(const char* name, int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    return Parameter{name, random_matrix(rows, cols, rng, scale), {}};
}

}  // namespace

TEST_CASE("binary elementwise ops") {
    Parameter a = param("a", 4, 5, 1), b = param("b", 4, 5, 2);
    CHECK(check([&](Tape& t) { return ad::add(t.param(a), t.param(b)); }, {&a, &b}) < kTol);
    CHECK(check([&](Tape& t) { return ad::sub(t.param(a), t.param(b)); }, {&a, &b}) < kTol);
    CHECK(check([&](Tape& t) { return ad::mul(t.param(a), t.param(b)); }, {&a, &b}) < kTol);
    CHECK(check([&](Tape& t) { return ad::mul(t.param(a), t.param(a)); }, {&a}) < kTol);
}

TEST_CASE("unary and scalar ops") {
    Parameter a = param("a", 3, 4, 3);
    Parameter s = param("s", 1, 1, 4);
    Parameter row = param("row", 1, 4, 5);
    CHECK(check([&](Tape& t) { return ad::scale(t.param(a), -2.5); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::add_const(t.param(a), 3.0); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::mul_scalar(t.param(a), t.param(s)); }, {&a, &s}) < kTol);
    CHECK(check([&](Tape& t) { return ad::add_rowvec(t.param(a), t.param(row)); }, {&a, &row}) < kTol);
    CHECK(check([&](Tape& t) { return ad::sigmoid(t.param(a)); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::relu(t.param(a)); }, {&a}) < kTol);
    Parameter pos = param("pos", 3, 4, 6);
    pos.value = (pos.value.array().abs() + 0.5).matrix();
    CHECK(check([&](Tape& t) { return ad::reciprocal(t.param(pos)); }, {&pos}) < kTol);
}

TEST_CASE("clamp passes gradient only inside the range") {
    Parameter a{"a", Matrix{{-2.0, -0.3, 0.4, 2.0}}, {}};
    a.zero_grad();
    Tape t;
    Var y = ad::sum(ad::clamp(t.param(a), -1.0, 1.0));
    t.backward(y);
    CHECK(a.grad(0, 0) == 0.0);
    CHECK(a.grad(0, 1) == 1.0);
    CHECK(a.grad(0, 2) == 1.0);
    CHECK(a.grad(0, 3) == 0.0);
}

TEST_CASE("matrix products") {
    Parameter a = param("a", 4, 5, 7), b = param("b", 5, 3, 8), c = param("c", 6, 5, 9);
    CHECK(check([&](Tape& t) { return ad::matmul(t.param(a), t.param(b)); }, {&a, &b}) < kTol);
    CHECK(check([&](Tape& t) { return ad::matmul_nt(t.param(a), t.param(c)); }, {&a, &c}) < kTol);
}

TEST_CASE("structural ops") {
    Parameter a = param("a", 4, 3, 10), b = param("b", 4, 2, 11), c = param("c", 2, 3, 12);
    CHECK(check([&](Tape& t) {
              const std::array<Var, 2> p{t.param(a), t.param(b)};
              return ad::concat_cols(p);
          },
                {&a, &b}) < kTol);
    CHECK(check([&](Tape& t) {
              const std::array<Var, 3> p{t.param(a), t.param(c), t.param(a)};
              return ad::concat_rows(p);
          },
                {&a, &c}) < kTol);
    CHECK(check([&](Tape& t) { return ad::slice_cols(t.param(a), 1, 2); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::slice_rows(t.param(a), 1, 2); }, {&a}) < kTol);
    const std::vector<int> idx{3, 0, 3, 1, 1};
    CHECK(check([&](Tape& t) { return ad::gather_rows(t.param(a), idx); }, {&a}) < kTol);
    const std::vector<double> mask{1.0, 0.0, 1.0, 0.0};
    CHECK(check([&](Tape& t) { return ad::mask_rows(t.param(a), mask); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::shift_stack(t.param(a), 3); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::mean_rows(t.param(a)); }, {&a}) < kTol);
}

TEST_CASE("shift_stack pads with zeros at sequence ends") {
    Tape t(false);
    const Matrix x{{1.0}, {2.0}, {3.0}};
    const Matrix y = ad::shift_stack(t.constant(x), 3).value();
    REQUIRE(y.rows() == 3);
    REQUIRE(y.cols() == 3);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == 1.0);
    CHECK(y(0, 2) == 2.0);
    CHECK(y(2, 0) == 2.0);
    CHECK(y(2, 1) == 3.0);
    CHECK(y(2, 2) == 0.0);
}

TEST_CASE("reductions and normalization") {
    Parameter a = param("a", 4, 6, 13), g = param("g", 1, 6, 14), b = param("b", 1, 6, 15);
    CHECK(max_grad_error([&](Tape& t) { return ad::sum(t.param(a)); }, {&a}) < kTol);
    CHECK(max_grad_error([&](Tape& t) { return ad::sum_squares(t.param(a)); }, {&a}) < kTol);
    CHECK(check([&](Tape& t) { return ad::layer_norm(t.param(a), t.param(g), t.param(b)); }, {&a, &g, &b}) < kTol);
}

TEST_CASE("attention gradients, with and without masked keys") {
    Parameter q = param("q", 5, 8, 16), k = param("k", 5, 8, 17), v = param("v", 5, 8, 18);
    const std::vector<char> all(5, 1);
    const std::vector<char> some{1, 1, 0, 1, 0};
    CHECK(check([&](Tape& t) { return ad::attention(t.param(q), t.param(k), t.param(v), 2, all); }, {&q, &k, &v}) <
          kTol);
    CHECK(check([&](Tape& t) { return ad::attention(t.param(q), t.param(k), t.param(v), 2, some); }, {&q, &k, &v}) <
          kTol);
}

TEST_CASE("attention ignores masked keys entirely") {
    std::mt19937_64 rng(19);
    Matrix q = random_matrix(4, 4, rng), k = random_matrix(4, 4, rng), v = random_matrix(4, 4, rng);
    const std::vector<char> valid{1, 1, 1, 0};
    Tape t(false);
    const Matrix base = ad::attention(t.constant(q), t.constant(k), t.constant(v), 2, valid).value();
    k.row(3).setConstant(50.0);
    v.row(3).setConstant(-50.0);
    const Matrix moved = ad::attention(t.constant(q), t.constant(k), t.constant(v), 2, valid).value();
    CHECK((base - moved).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-head attention matches a direct softmax oracle") {
    std::mt19937_64 rng(20);
    const Matrix q = random_matrix(3, 2, rng), k = random_matrix(3, 2, rng), v = random_matrix(3, 2, rng);
    const std::vector<char> valid(3, 1);
    Tape t(false);
    const Matrix got = ad::attention(t.constant(q), t.constant(k), t.constant(v), 1, valid).value();
    Matrix scores = q * k.transpose() / std::sqrt(2.0);
    for (int i = 0; i < 3; ++i) {
        const double m = scores.row(i).maxCoeff();
        double z = 0.0;
        for (int j = 0; j < 3; ++j) z += std::exp(scores(i, j) - m);
        for (int j = 0; j < 3; ++j) scores(i, j) = std::exp(scores(i, j) - m) / z;
    }
    const Matrix want = scores * v;
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross entropy") {
    Parameter logits = param("logits", 4, 6, 21);
    const std::vector<int> targets{0, 5, -1, 2};
    CHECK(max_grad_error([&](Tape& t) { return ad::cross_entropy_sum(t.param(logits), targets); }, {&logits}) < kTol);

    Tape t(false);
    const Matrix uniform = Matrix::Zero(2, 64);
    const std::vector<int> tg{3, 17};
    CHECK(ad::cross_entropy_sum(t.constant(uniform), tg).scalar() == doctest::Approx(2.0 * std::log(64.0)));
    const std::vector<int> skipped{-1, -1};
    CHECK(ad::cross_entropy_sum(t.constant(uniform), skipped).scalar() == 0.0);
}

TEST_CASE("dropout is seeded and inverted-scaled") {
    Tape t(false);
    const Matrix ones = Matrix::Ones(50, 40);
    const Matrix a = ad::dropout(t.constant(ones), 0.25, 99).value();
    const Matrix b = ad::dropout(t.constant(ones), 0.25, 99).value();
    CHECK(a == b);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        CHECK((x == 0.0 || std::abs(x - 1.0 / 0.75) < 1e-12));
    }
    CHECK(ad::dropout(t.constant(ones), 0.0, 1).value() == ones);
}

TEST_CASE("gradients accumulate across parameter reuse and over tapes") {
    Parameter a{"a", Matrix{{2.0}}, {}};
    a.zero_grad();
    for (int round = 0; round < 2; ++round) {
        Tape t;
        Var x = t.param(a);
        t.backward(ad::mul(x, ad::add(x, x)));  // 2 a^2 -> 4a = 8
    }
    CHECK(a.grad(0, 0) == doctest::Approx(16.0));
}

TEST_CASE("no-grad tapes record no gradient") {
    Parameter a = param("a", 2, 2, 22);
    a.zero_grad();
    Tape t(false);
    Var y = ad::sum_squares(t.param(a));
    CHECK(std::isfinite(y.scalar()));
    CHECK_THROWS(t.backward(y));
}

TEST_CASE("shape mismatches throw") {
    Tape t(false);
    CHECK_THROWS_AS(ad::add(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(3, 2))), ad::ShapeError);
    CHECK_THROWS_AS(ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), ad::ShapeError);
    CHECK_THROWS_AS(ad::mul_scalar(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(1, 2))), ad::ShapeError);
}
