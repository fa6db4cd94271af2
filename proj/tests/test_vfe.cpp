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
#include "priorflow/vfe.hpp"

#include <cmath>

using namespace priorflow;
using namespace priorflow::vfe;
using testutil::max_grad_error;
using testutil::random_matrix;

namespace {

LatentGrid random_grid(int length, int dim, std::mt19937_64& rng, int prompt_len = 0) {
    LatentGrid g;
    for (auto& m : g.streams) m = random_matrix(length, dim, rng);
    g.prompt_len = prompt_len;
    return g;
}

VfeConfig tiny_cfg(int dim = 4) {
    VfeConfig c;
    c.block = nn::BlockConfig{8, 2, 8, 1, 0.0, 1};
    c.embed_dim = dim;
    return c;
}

struct TinyVfe {
    nn::ParamStore store;
    std::mt19937_64 rng{3};
    nn::EmbeddingTable table;
    VectorFieldEstimator net;
    nn::TauParam tau;

    explicit TinyVfe(VfeConfig cfg = tiny_cfg(), int vocab = 8)
        : table(store, "embed", vocab, cfg.embed_dim, rng),
          net(store, cfg, rng),
          tau(nn::TauParam::create(store, "tau", nn::TauMode::learned_global, codec::kStreams * cfg.embed_dim, rng)) {}
};

CodeGrid random_codes(int frames, int vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, vocab - 1);
    CodeGrid g(frames);
    for (int s = 0; s < codec::kStreams; ++s) {
        for (int n = 0; n < frames; ++n) g(s, n) = u(rng);
    }
    return g;
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("quantizer encoding broadcasts one identifier row per stream") {
    std::mt19937_64 rng(1);
    const LatentGrid x = random_grid(5, 3, rng);
    const LatentGrid same = quantizer_encode(x, Matrix::Zero(6, 3));
    for (int s = 0; s < 6; ++s) CHECK(same.streams[static_cast<std::size_t>(s)] == x.streams[static_cast<std::size_t>(s)]);

    const Matrix omega = random_matrix(6, 3, rng);
    const LatentGrid q0 = quantizer_encode(LatentGrid::zeros(5, 3), omega);
    for (int s = 0; s < 6; ++s) {
        for (int l = 0; l < 5; ++l) CHECK(q0.streams[static_cast<std::size_t>(s)].row(l) == omega.row(s));
    }

    // Q(x + y) = Q(x) + y
    const LatentGrid y = random_grid(5, 3, rng);
    LatentGrid xy = x;
    for (int s = 0; s < 6; ++s) xy.streams[static_cast<std::size_t>(s)] += y.streams[static_cast<std::size_t>(s)];
    const LatentGrid lhs = quantizer_encode(xy, omega);
    const LatentGrid qx = quantizer_encode(x, omega);
    for (int s = 0; s < 6; ++s) {
        const auto si = static_cast<std::size_t>(s);
        CHECK(max_abs(lhs.streams[si] - (qx.streams[si] + y.streams[si])) < 1e-12);
    }
    CHECK_THROWS(quantizer_encode(x, Matrix::Zero(5, 3)));
}

TEST_CASE("distinct identifiers keep zero inputs of different streams apart after folding") {
    std::mt19937_64 rng(2);
    const Matrix omega = random_matrix(6, 4, rng);
    const Matrix folded = fold_g(quantizer_encode(LatentGrid::zeros(3, 4), omega));
    for (int a = 0; a < 6; ++a) {
        for (int b = a + 1; b < 6; ++b) {
            CHECK(folded.block(0, a * 4, 3, 4) != folded.block(0, b * 4, 3, 4));
        }
    }
}

TEST_CASE("G index law on a 6 x 2 x 3 grid") {
    LatentGrid g = LatentGrid::zeros(2, 3);
    g.streams[1](0, 2) = 7.0;
    const Matrix f = fold_g(g);
    CHECK(f.rows() == 2);
    CHECK(f.cols() == 18);
    CHECK(f(0, 1 * 3 + 2) == 7.0);
    CHECK(f.sum() == 7.0);
}

TEST_CASE("G is a bijection: brute-force index enumeration at 6 x 3 x 2") {
    LatentGrid g = LatentGrid::zeros(3, 2);
    for (int s = 0; s < 6; ++s) {
        for (int l = 0; l < 3; ++l) {
            for (int d = 0; d < 2; ++d) g.streams[static_cast<std::size_t>(s)](l, d) = s * 100 + l * 10 + d;
        }
    }
    const Matrix f = fold_g(g);
    std::vector<int> seen(36, 0);
    for (int l = 0; l < 3; ++l) {
        for (int c = 0; c < 12; ++c) {
            const int v = static_cast<int>(f(l, c));
            const int s = v / 100, ll = (v / 10) % 10, d = v % 10;
            CHECK(ll == l);
            CHECK(c == s * 2 + d);
            ++seen[static_cast<std::size_t>(ll * 12 + c)];
        }
    }
    for (int c : seen) CHECK(c == 1);
    const LatentGrid back = unfold_g(f, 2);
    for (int s = 0; s < 6; ++s) CHECK(back.streams[static_cast<std::size_t>(s)] == g.streams[static_cast<std::size_t>(s)]);
}

TEST_CASE("identity affine maps make fold and unfold exact") {
    VfeConfig cfg = tiny_cfg(2);
    cfg.block = nn::BlockConfig{12, 2, 8, 1, 0.0, 1};  // D' = 6D
    TinyVfe m(cfg);
    m.net.fold_weight().value = Matrix::Identity(12, 12);
    m.net.unfold_weight().value = Matrix::Identity(12, 12);
    m.net.fold_bias()->value.setZero();
    m.net.unfold_bias()->value.setZero();
    std::mt19937_64 rng(4);
    const LatentGrid x = random_grid(5, 2, rng);
    nn::Tape t(false);
    const StreamVars xs = constant_streams(t, x);
    const Var f = m.net.fold(t, xs);
    CHECK(f.value() == fold_g(x));
    const StreamVars back = m.net.unfold(t, f);
    for (int s = 0; s < 6; ++s) CHECK(back[static_cast<std::size_t>(s)].value() == x.streams[static_cast<std::size_t>(s)]);
}

TEST_CASE("unfold has the L x D' -> 6 x L x D shape and is linear without bias") {
    VfeConfig cfg = tiny_cfg(3);
    cfg.unfold_bias = false;
    TinyVfe m(cfg);
    std::mt19937_64 rng(5);
    const Matrix v1 = random_matrix(7, 8, rng), v2 = random_matrix(7, 8, rng);
    nn::Tape t(false);
    const StreamVars a = m.net.unfold(t, t.constant(v1));
    const StreamVars b = m.net.unfold(t, t.constant(v2));
    const StreamVars c = m.net.unfold(t, t.constant(2.0 * v1 - 3.0 * v2));
    for (int s = 0; s < 6; ++s) {
        const auto si = static_cast<std::size_t>(s);
        CHECK(a[si].rows() == 7);
        CHECK(a[si].cols() == 3);
        CHECK(max_abs(c[si].value() - (2.0 * a[si].value() - 3.0 * b[si].value())) < 1e-12);
    }
}

TEST_CASE("build_input masks prompt content, adds seeded noise, and rejects MASK prompts") {
    TinyVfe m;
    std::mt19937_64 rng(6);
    const LatentGrid x_pr = random_grid(4, 4, rng);

    const LatentGrid plain = build_input(m.table, CodeGrid(0), x_pr, 0.0, 1);
    for (int s = 0; s < 6; ++s) CHECK(plain.streams[static_cast<std::size_t>(s)] == x_pr.streams[static_cast<std::size_t>(s)]);

    const CodeGrid prompt = random_codes(3, 8, rng);
    const LatentGrid z = build_input(m.table, prompt, x_pr, 1.0, 42);
    CHECK(z.length() == 7);
    CHECK(z.prompt_len == 3);
    for (int n = 0; n < 3; ++n) {
        CHECK(z.streams[1].row(n) == m.table.row(m.table.mask_index()));
        CHECK(z.streams[2].row(n) == m.table.row(m.table.mask_index()));
        CHECK(z.streams[0].row(n) == m.table.row(prompt(0, n)));
        CHECK(z.streams[4].row(n) == m.table.row(prompt(4, n)));
    }
    CHECK(z.streams[3].bottomRows(4) != x_pr.streams[3]);
    const LatentGrid again = build_input(m.table, prompt, x_pr, 1.0, 42);
    for (int s = 0; s < 6; ++s) CHECK(again.streams[static_cast<std::size_t>(s)] == z.streams[static_cast<std::size_t>(s)]);

    CodeGrid masked = prompt;
    masked(0, 1) = m.table.mask_index();
    CHECK_THROWS(build_input(m.table, masked, x_pr, 0.0, 1));
}

TEST_CASE("estimate_velocity shape and tau domain") {
    TinyVfe m;
    std::mt19937_64 rng(7);
    nn::Tape t(false);
    nn::RunContext ctx;
    NfeCounter nfe;
    const Var x = t.constant(random_matrix(9, 8, rng));
    const Var v = m.net.estimate_velocity(t, x, t.constant_scalar(0.3), 2, ctx, nfe);
    CHECK(v.rows() == 9);
    CHECK(v.cols() == 8);
    CHECK(nfe.calls == 1);
    CHECK_THROWS(m.net.estimate_velocity(t, x, t.constant_scalar(0.0), 2, ctx, nfe));
    CHECK_THROWS(m.net.estimate_velocity(t, x, t.constant_scalar(1.0), 2, ctx, nfe));
    CHECK_THROWS(m.net.estimate_velocity(t, x, t.constant_scalar(0.5), 9, ctx, nfe));
}

TEST_CASE("zero velocity head returns the discretized prior latents") {
    TinyVfe m;
    std::mt19937_64 rng(8);
    const CodeGrid prior = random_codes(6, 8, rng);
    LatentGrid x_pr = LatentGrid::zeros(6, 4);
    // Well-separated codebook so that argmax dot-product recovers each row.
    m.table.parameter().value *= 5.0;
    for (int s = 0; s < 6; ++s) {
        for (int n = 0; n < 6; ++n) x_pr.streams[static_cast<std::size_t>(s)].row(n) = m.table.row(prior(s, n));
    }
    const SampleResult out = one_step_sample(m.net, m.tau, m.table, random_codes(3, 8, rng), x_pr);
    CHECK(out.nfe == 1);
    for (int s = 0; s < 6; ++s) CHECK(out.latent.streams[static_cast<std::size_t>(s)] == x_pr.streams[static_cast<std::size_t>(s)]);
    CHECK(out.codes == discretize(x_pr, m.table, AnchorLogits::dot));
}

TEST_CASE("cfm loss values") {
    nn::Tape t(false);
    auto fill = [&](double v) {
        StreamVars out;
        for (auto& x : out) x = t.constant(Matrix::Constant(2, 3, v));
        return out;
    };
    const Var half = t.constant_scalar(0.5);
    LossSum l = cfm_loss(fill(0.0), fill(2.0), fill(1.0), half);
    CHECK(l.total.scalar() / l.count == doctest::Approx(4.0));
    CHECK(l.count == 36.0);
    l = cfm_loss(fill(2.0), fill(2.0), fill(1.0), half);
    CHECK(l.total.scalar() == 0.0);
    l = cfm_loss(fill(0.0), fill(1.5), fill(1.5), t.constant_scalar(0.2));
    CHECK(l.total.scalar() == 0.0);
    CHECK_THROWS(cfm_loss(fill(0.0), fill(1.0), fill(0.0), t.constant_scalar(0.9995)));
    CHECK_NOTHROW(cfm_loss(fill(0.0), fill(1.0), fill(0.0), t.constant_scalar(1.0 - 1e-3)));
}

TEST_CASE("anchor loss: uniform logits give ln V, confident rows give ~0") {
    nn::ParamStore store;
    std::mt19937_64 rng(9);
    nn::EmbeddingTable table(store, "e", 64, 64, rng);
    table.parameter().value.topRows(64) = Matrix::Identity(64, 64);
    nn::Tape t(false);
    StreamVars zero;
    for (auto& z : zero) z = t.constant(Matrix::Zero(3, 64));
    const CodeGrid target = random_codes(3, 64, rng);
    LossSum l = anchor_loss(zero, target, table);
    CHECK(l.total.scalar() / l.count == doctest::Approx(std::log(64.0)));

    StreamVars exact;
    for (int s = 0; s < 6; ++s) {
        Matrix m(3, 64);
        for (int n = 0; n < 3; ++n) m.row(n) = 100.0 * table.row(target(s, n));
        exact[static_cast<std::size_t>(s)] = t.constant(m);
    }
    l = anchor_loss(exact, target, table);
    CHECK(l.total.scalar() / l.count < 1e-30);

    CodeGrid bad = target;
    bad(3, 0) = 64;
    CHECK_THROWS(anchor_loss(exact, bad, table));
}

TEST_CASE("anchor loss gradient with respect to the reconstruction, both logit kinds") {
    nn::ParamStore store;
    std::mt19937_64 rng(10);
    nn::EmbeddingTable table(store, "e", 8, 4, rng);
    std::vector<nn::Parameter*> zs;
    for (int s = 0; s < 6; ++s) zs.push_back(&store.create("z" + std::to_string(s), random_matrix(3, 4, rng)));
    const CodeGrid target = random_codes(3, 8, rng);
    for (AnchorLogits kind : {AnchorLogits::dot, AnchorLogits::neg_sq_distance}) {
        auto params = zs;
        params.push_back(&table.parameter());
        const double err = max_grad_error(
            [&](nn::Tape& t) {
                StreamVars z;
                for (int s = 0; s < 6; ++s) z[static_cast<std::size_t>(s)] = t.param(*zs[static_cast<std::size_t>(s)]);
                return anchor_loss(z, target, table, kind).total;
            },
            params);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("negative squared distance logits rank by distance") {
    nn::ParamStore store;
    std::mt19937_64 rng(11);
    nn::EmbeddingTable table(store, "e", 8, 4, rng);
    LatentGrid g = LatentGrid::zeros(8, 4);
    for (int s = 0; s < 6; ++s) {
        for (int n = 0; n < 8; ++n) g.streams[static_cast<std::size_t>(s)].row(n) = table.row(n) + 1e-3 * random_matrix(1, 4, rng);
    }
    const CodeGrid codes = discretize(g, table, AnchorLogits::neg_sq_distance);
    for (int s = 0; s < 6; ++s) {
        for (int n = 0; n < 8; ++n) CHECK(codes(s, n) == n);
    }
}

TEST_CASE("injecting the true velocity reconstructs x1 exactly") {
    std::mt19937_64 rng(12);
    for (double tau : {0.1, 0.5, 0.9}) {
        nn::Tape t(false);
        const LatentGrid x1 = random_grid(5, 4, rng), xp = random_grid(5, 4, rng);
        StreamVars z, v, target;
        for (int s = 0; s < 6; ++s) {
            const auto si = static_cast<std::size_t>(s);
            z[si] = t.constant(xp.streams[si]);
            v[si] = t.constant((x1.streams[si] - xp.streams[si]) / (1.0 - tau));
        }
        const StreamVars rec = reconstruct_target(z, v, t.constant_scalar(tau));
        for (int s = 0; s < 6; ++s) {
            const auto si = static_cast<std::size_t>(s);
            CHECK(max_abs(rec[si].value() - x1.streams[si]) <= 1e-12 * (1.0 + max_abs(x1.streams[si])));
        }
    }
}

TEST_CASE("losses never reach prompt-span velocities") {
    TinyVfe m;
    std::mt19937_64 rng(13);
    nn::Parameter& vel = m.store.create("vel", random_matrix(7, 4 * 6, rng));
    const CodeGrid target = random_codes(4, 8, rng);
    const LatentGrid x1 = random_grid(4, 4, rng), xp = random_grid(4, 4, rng);
    vel.zero_grad();
    nn::Tape t;
    const StreamVars full = unfold_g(t.param(vel), 4);
    const StreamVars v = slice_streams(full, 3, 4);
    const StreamVars x1v = constant_streams(t, x1), xpv = constant_streams(t, xp);
    const Var tau = t.constant_scalar(0.4);
    const Var loss = ad::add(cfm_loss(v, x1v, xpv, tau).total, anchor_loss(reconstruct_target(xpv, v, tau), target, m.table).total);
    t.backward(loss);
    CHECK(vel.grad.topRows(3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(vel.grad.bottomRows(4).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("end-to-end one-step objective gradients match finite differences") {
    VfeConfig cfg = tiny_cfg(4);
    cfg.zero_init_head = false;
    TinyVfe m(cfg);
    std::mt19937_64 rng(14);
    const CodeGrid prompt = random_codes(2, 8, rng), target = random_codes(4, 8, rng), prior = random_codes(4, 8, rng);
    std::vector<nn::Parameter*> params;
    for (auto& p : m.store.all()) params.push_back(&p);
    const double err = max_grad_error(
        [&](nn::Tape& t) {
            nn::RunContext ctx;
            NfeCounter nfe;
            const StreamVars x_pr = embed_codes(t, m.table, prior);
            const StreamVars x1 = embed_codes(t, m.table, target);
            const StreamVars z = build_input(t, m.table, prompt, x_pr, 0.5, 3);
            const StreamVars zt = slice_streams(z, 2, 4);
            const Var tau = realize_tau(t, m.tau, zt);
            const StreamVars v = one_step_velocity(t, m.net, z, tau, 2, ctx, nfe);
            return ad::add(cfm_loss(v, x1, x_pr, tau).total, anchor_loss(reconstruct_target(zt, v, tau), target, m.table).total);
        },
        params, 1e-5, 12);
    CHECK(err < 1e-4);
}

TEST_CASE("euler integration is exact on constant fields") {
    std::mt19937_64 rng(15);
    const Matrix x0 = random_matrix(4, 6, rng), x1 = random_matrix(4, 6, rng);
    for (int steps : {1, 4, 32}) {
        int calls = 0;
        const Matrix out = euler_integrate(x0, steps, [&](const Matrix&, double) {
            ++calls;
            return Matrix(x1 - x0);
        });
        CHECK(max_abs(out - x1) < 1e-12);
        CHECK(calls == steps);
    }
    CHECK_THROWS(euler_integrate(x0, 0, [](const Matrix& x, double) { return x; }));
}

TEST_CASE("euler baseline counts one evaluation per step") {
    VfeConfig cfg = tiny_cfg();
    cfg.flow = FlowKind::classical;
    TinyVfe m(cfg);
    std::mt19937_64 rng(16);
    const LatentGrid x_pr = random_grid(5, 4, rng);
    const CodeGrid prompt = random_codes(3, 8, rng);
    for (int steps : {1, 32}) {
        const SampleResult r = euler_sample_baseline(m.net, m.table, prompt, x_pr, steps, 7);
        CHECK(r.nfe == steps);
        CHECK(r.codes.frames() == 5);
    }
    const SampleResult a = euler_sample_baseline(m.net, m.table, prompt, x_pr, 4, 7);
    const SampleResult b = euler_sample_baseline(m.net, m.table, prompt, x_pr, 4, 7);
    CHECK(a.codes == b.codes);
    CHECK_THROWS(euler_sample_baseline(m.net, m.table, prompt, x_pr, 0, 7));
}

TEST_CASE("classical velocity gradients match finite differences") {
    VfeConfig cfg = tiny_cfg();
    cfg.zero_init_head = false;
    TinyVfe m(cfg);
    std::mt19937_64 rng(17);
    const CodeGrid prompt = random_codes(2, 8, rng);
    const LatentGrid xt = random_grid(3, 4, rng), xp = random_grid(3, 4, rng), u = random_grid(3, 4, rng);
    std::vector<nn::Parameter*> params;
    for (auto& p : m.store.all()) params.push_back(&p);
    const double err = max_grad_error(
        [&](nn::Tape& t) {
            nn::RunContext ctx;
            NfeCounter nfe;
            const StreamVars y = embed_masked_prompt(t, m.table, prompt);
            const StreamVars v = classical_velocity(t, m.net, y, constant_streams(t, xt), constant_streams(t, xp), 0.3, ctx, nfe);
            Var total = ad::sum_squares(ad::sub(v[0], t.constant(u.streams[0])));
            for (int s = 1; s < 6; ++s) total = ad::add(total, ad::sum_squares(ad::sub(v[static_cast<std::size_t>(s)], t.constant(u.streams[static_cast<std::size_t>(s)]))));
            return total;
        },
        params, 1e-5, 12);
    CHECK(err < 1e-4);
}

TEST_CASE("temperature sampling is seeded") {
    TinyVfe m;
    std::mt19937_64 rng(18);
    const LatentGrid g = random_grid(6, 4, rng);
    CHECK(discretize(g, m.table, AnchorLogits::dot, 1.0, 5) == discretize(g, m.table, AnchorLogits::dot, 1.0, 5));
    CHECK_THROWS(discretize(g, m.table, AnchorLogits::dot, -1.0));
}
