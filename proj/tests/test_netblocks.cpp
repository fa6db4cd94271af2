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
#include "priorflow/netblocks.hpp"

#include <cmath>

using namespace priorflow;
using namespace priorflow::nn;
using testutil::max_grad_error;
using testutil::random_matrix;

namespace {

constexpr double kTol = 1e-4;

std::vector<Parameter*> all_params(ParamStore& store) {
    std::vector<Parameter*> out;
    for (auto& p : store.all()) out.push_back(&p);
    return out;
}

BlockConfig tiny_block() { return BlockConfig{8, 2, 12, 1, 0.0, 3}; }

}  // namespace

TEST_CASE("fft block keeps shape and handles empty input") {
    ParamStore store;
    std::mt19937_64 rng(1);
    const FftBlock block(store, "b", BlockConfig{32, 4, 64, 1, 0.0, 3}, rng);
    RunContext ctx;
    Tape t(false);
    CHECK(block.forward(t, t.constant(random_matrix(17, 32, rng)), ctx).value().rows() == 17);
    CHECK(block.forward(t, t.constant(random_matrix(17, 32, rng)), ctx).value().cols() == 32);
    CHECK(block.forward(t, t.constant(Matrix(0, 32)), ctx).value().rows() == 0);
    CHECK_THROWS_AS(block.forward(t, t.constant(Matrix::Zero(3, 31)), ctx), ad::ShapeError);
}

TEST_CASE("fft block with zeroed output projections is the identity") {
    ParamStore store;
    std::mt19937_64 rng(2);
    const FftBlock block(store, "b", tiny_block(), rng);
    block.attn_out().weight()->value.setZero();
    block.ffn_out().weight()->value.setZero();
    RunContext ctx;
    Tape t(false);
    const Matrix x = random_matrix(5, 8, rng);
    CHECK(block.forward(t, t.constant(x), ctx).value() == x);
}

TEST_CASE("padding rows never influence non-padding outputs") {
    ParamStore store;
    std::mt19937_64 rng(3);
    const FftBlock block(store, "b", BlockConfig{8, 2, 12, 1, 0.0, 3}, rng);
    RunContext ctx;
    const std::vector<char> valid{1, 1, 1, 1, 0, 0};
    Matrix x = random_matrix(6, 8, rng);
    Tape t(false);
    const Matrix a = block.forward(t, t.constant(x), valid, ctx).value();
    x.bottomRows(2) = random_matrix(2, 8, rng, 100.0);
    const Matrix b = block.forward(t, t.constant(x), valid, ctx).value();
    CHECK(a.topRows(4) == b.topRows(4));
}

TEST_CASE("fft block gradients match finite differences") {
    ParamStore store;
    std::mt19937_64 rng(4);
    const FftBlock block(store, "b", tiny_block(), rng);
    Parameter& x = store.create("x", random_matrix(4, 8, rng));
    Parameter& w = store.create("w", random_matrix(4, 8, rng));
    const std::vector<char> valid{1, 1, 1, 0};
    const double err = max_grad_error(
        [&](Tape& t) {
            RunContext ctx;
            return ad::sum(ad::mul(block.forward(t, t.param(x), valid, ctx), t.param(w)));
        },
        all_params(store));
    CHECK(err < kTol);
}

TEST_CASE("duration predictor gradients match finite differences") {
    ParamStore store;
    std::mt19937_64 rng(5);
    const DurationPredictor dp(store, "dp", 8, 6, rng);
    Parameter& h = store.create("h", random_matrix(4, 8, rng));
    const std::vector<int> truth{1, 3, 2, 7};
    const double err = max_grad_error(
        [&](Tape& t) {
            RunContext ctx;
            return duration_loss(dp.forward(t, t.param(h), ctx), truth);
        },
        all_params(store));
    CHECK(err < kTol);
}

TEST_CASE("inference durations round exp and floor at one") {
    CHECK(inference_duration(0.0) == 1);
    CHECK(inference_duration(std::log(80.0)) == 80);
    CHECK(inference_duration(-5.0) == 1);
    CHECK(inference_duration(std::log(2.4)) == 2);
    CHECK(inference_duration(std::log(2.6)) == 3);
    CHECK(inference_duration(1e6) == 1000);
}

TEST_CASE("length regulation repeats embeddings in order") {
    Tape t(false);
    const Matrix e{{1.0, 2.0}, {3.0, 4.0}};
    const std::vector<int> d{2, 1};
    const Matrix out = length_regulate(t.constant(e), d).value();
    CHECK(out == Matrix{{1.0, 2.0}, {1.0, 2.0}, {3.0, 4.0}});
    const std::vector<int> ones{1, 1};
    CHECK(length_regulate(t.constant(e), ones).value() == e);
    const std::vector<int> bad{2, 0};
    CHECK_THROWS(length_regulate(t.constant(e), bad));
    const std::vector<int> short_d{2};
    CHECK_THROWS(length_regulate(t.constant(e), short_d));
    CHECK(within_phoneme_offsets(d) == std::vector<int>{0, 1, 0});
    CHECK(expand_indices(d) == std::vector<int>{0, 0, 1});
}

TEST_CASE("length regulation gradient sums over repeated frames") {
    ParamStore store;
    std::mt19937_64 rng(6);
    Parameter& e = store.create("e", random_matrix(3, 4, rng));
    Parameter& w = store.create("w", random_matrix(6, 4, rng));
    const std::vector<int> d{1, 3, 2};
    CHECK(max_grad_error([&](Tape& t) { return ad::sum(ad::mul(length_regulate(t.param(e), d), t.param(w))); },
                         {&e}) < kTol);
}

TEST_CASE("duration loss values") {
    Tape t(false);
    const std::vector<int> d{1, 4, 9};
    Matrix exact(3, 1);
    for (int i = 0; i < 3; ++i) exact(i, 0) = std::log(static_cast<double>(d[static_cast<std::size_t>(i)]));
    CHECK(duration_loss(t.constant(exact), d).scalar() == 0.0);
    const std::vector<int> one{1};
    CHECK(duration_loss(t.constant(Matrix::Zero(1, 1)), one).scalar() == 0.0);
    CHECK(duration_loss(t.constant(Matrix::Ones(1, 1)), one).scalar() == doctest::Approx(1.0));
}

TEST_CASE("embedding table rows, MASK row and codebook") {
    ParamStore store;
    std::mt19937_64 rng(7);
    const EmbeddingTable table(store, "emb", 10, 4, rng);
    CHECK(table.vocab() == 10);
    CHECK(table.mask_index() == 10);
    CHECK(table.parameter().value.rows() == 11);
    Tape t(false);
    const std::vector<int> idx{3, 10};
    const Matrix got = table.lookup(t, idx).value();
    CHECK(got.row(0) == table.parameter().value.row(3));
    CHECK(got.row(1) == table.parameter().value.row(10));
    CHECK(table.codebook(t).value().rows() == 10);
}

TEST_CASE("realize_tau modes") {
    ParamStore store;
    std::mt19937_64 rng(8);
    TauParam fixed = TauParam::create(store, "tf", TauMode::fixed, 4, rng);
    TauParam learned = TauParam::create(store, "tl", TauMode::learned_global, 4, rng);
    TauParam predicted = TauParam::create(store, "tp", TauMode::predicted, 4, rng);
    Tape t(false);
    CHECK(realize_tau(t, fixed, std::nullopt).scalar() == 0.5);
    CHECK(realize_tau(t, learned, std::nullopt).scalar() == 0.5);
    CHECK_THROWS_AS(realize_tau(t, predicted, std::nullopt), MissingContextError);
    const double p = realize_tau(t, predicted, t.constant(random_matrix(1, 4, rng))).scalar();
    CHECK(p > 0.0);
    CHECK(p < 1.0);

    learned.raw->value(0, 0) = 80.0;
    CHECK(realize_tau(t, learned, std::nullopt).scalar() == doctest::Approx(1.0 - 1e-3));
    learned.raw->value(0, 0) = -80.0;
    CHECK(realize_tau(t, learned, std::nullopt).scalar() == doctest::Approx(1e-3));
    fixed.fixed_value = 1.0;
    CHECK(realize_tau(t, fixed, std::nullopt).scalar() < 1.0);

    CHECK(tau_mode_from_string("learned") == TauMode::learned_global);
    CHECK_THROWS(tau_mode_from_string("adaptive"));
}

TEST_CASE("learned and predicted tau are differentiable") {
    ParamStore store;
    std::mt19937_64 rng(9);
    TauParam learned = TauParam::create(store, "tl", TauMode::learned_global, 4, rng);
    TauParam predicted = TauParam::create(store, "tp", TauMode::predicted, 4, rng);
    Parameter& ctx = store.create("ctx", random_matrix(1, 4, rng));
    CHECK(max_grad_error([&](Tape& t) { return realize_tau(t, learned, std::nullopt); }, {learned.raw}) < kTol);
    CHECK(max_grad_error([&](Tape& t) { return realize_tau(t, predicted, t.param(ctx)); },
                         {predicted.predictor.weight(), &ctx}) < kTol);
    learned.raw->zero_grad();
    Tape t;
    t.backward(realize_tau(t, learned, std::nullopt));
    CHECK(learned.raw->grad(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("sinusoidal encoding at position zero") {
    const std::vector<double> pos{0.0, -3.0};
    const Matrix pe = sinusoidal_encoding(pos, 6);
    for (int c = 0; c < 6; ++c) CHECK(pe(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
    CHECK(pe(1, 0) == doctest::Approx(std::sin(-3.0)));
}

TEST_CASE("parameter store and block config validation") {
    ParamStore store;
    store.create("a", Matrix::Zero(2, 3));
    CHECK_THROWS(store.create("a", Matrix::Zero(1, 1)));
    CHECK(store.scalar_count() == 6);
    std::vector<std::string> problems;
    BlockConfig{10, 3, 8, 1, 0.0, 3}.check("x", problems);
    BlockConfig{8, 2, 8, 1, 1.5, 2}.check("y", problems);
    CHECK(problems.size() == 3);
}
