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
#include "priorflow/priorgen.hpp"

#include <cmath>
#include <numeric>
#include <string>

using namespace priorflow;
using namespace priorflow::prior;
using testutil::max_grad_error;

namespace {

struct TinyPrior {
    nn::ParamStore store;
    std::mt19937_64 rng{11};
    PriorConfig cfg;
    nn::EmbeddingTable table;
    PriorGenerator gen;

    explicit TinyPrior(int vocab = 16, bool continuous = false)
        : cfg(make_cfg(vocab, continuous)),
          table(store, "embed", vocab, 4, rng),
          gen(store, cfg, 4, rng) {}

    static PriorConfig make_cfg(int vocab, bool continuous) {
        PriorConfig c;
        c.block = nn::BlockConfig{8, 2, 8, 1, 0.0, 3};
        c.encoder_layers = 1;
        c.decoder_layers = 1;
        c.phonemes = 6;
        c.vocab = vocab;
        c.max_offset = 4;
        c.continuous_latents = continuous;
        return c;
    }
};

bool all_zero(const Matrix& m) { return m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0; }

}  // namespace

TEST_CASE("single phoneme with duration one yields 6 x 1 x V logits") {
    TinyPrior m;
    const std::vector<int> ph{2}, d{1};
    const PriorOutput out = generate_prior(m.gen, m.table, ph, std::span<const int>(d), true);
    for (const auto& l : out.logits) {
        CHECK(l.rows() == 1);
        CHECK(l.cols() == 16);
    }
    CHECK(out.prior_codes.frames() == 1);
    CHECK_FALSE(out.durations_predicted);
}

TEST_CASE("generation is deterministic and obeys the length law") {
    TinyPrior m;
    const std::vector<int> ph{1, 4, 4, 0}, d{3, 1, 2, 5};
    const PriorOutput a = generate_prior(m.gen, m.table, ph, std::span<const int>(d), true);
    const PriorOutput b = generate_prior(m.gen, m.table, ph, std::span<const int>(d), true);
    CHECK(a.prior_codes == b.prior_codes);
    for (int s = 0; s < codec::kStreams; ++s) CHECK(a.logits[static_cast<std::size_t>(s)] == b.logits[static_cast<std::size_t>(s)]);
    CHECK(a.prior_codes.frames() == std::accumulate(d.begin(), d.end(), 0));
}

TEST_CASE("prior codes are the argmax and prior latents are table rows") {
    TinyPrior m;
    const std::vector<int> ph{1, 3, 5}, d{2, 2, 3};
    const PriorOutput out = generate_prior(m.gen, m.table, ph, std::span<const int>(d), true);
    for (int s = 0; s < codec::kStreams; ++s) {
        const auto si = static_cast<std::size_t>(s);
        for (int n = 0; n < out.prior_codes.frames(); ++n) {
            Eigen::Index best = 0;
            out.logits[si].row(n).maxCoeff(&best);
            CHECK(out.prior_codes(s, n) == best);
            CHECK(out.prior_latents[si].row(n) == m.table.row(out.prior_codes(s, n)));
        }
    }
}

TEST_CASE("predicted durations are flagged when the predictor is untrained") {
    TinyPrior m;
    const std::vector<int> ph{1, 2, 3};
    const PriorOutput out = generate_prior(m.gen, m.table, ph, std::nullopt, false);
    CHECK(out.durations_predicted);
    CHECK(out.untrained_duration_predictor);
    CHECK(out.prior_codes.frames() == std::accumulate(out.durations.begin(), out.durations.end(), 0));
    const PriorOutput trained = generate_prior(m.gen, m.table, ph, std::nullopt, true);
    CHECK_FALSE(trained.untrained_duration_predictor);
}

TEST_CASE("generate_prior rejects bad inputs") {
    TinyPrior m;
    const std::vector<int> empty, ph{1, 9}, ok{1, 2}, d{1};
    CHECK_THROWS(generate_prior(m.gen, m.table, empty, std::nullopt, true));
    CHECK_THROWS(generate_prior(m.gen, m.table, ph, std::nullopt, true));
    CHECK_THROWS(generate_prior(m.gen, m.table, ok, std::span<const int>(d), true));
}

TEST_CASE("prior loss: uniform logits give ln V, confident logits give ~0, MASK targets throw") {
    nn::Tape t(false);
    PriorForward fwd;
    for (auto& l : fwd.logits) l = t.constant(Matrix::Zero(3, 64));
    CodeGrid target(3);
    for (int s = 0; s < codec::kStreams; ++s) {
        for (int n = 0; n < 3; ++n) target(s, n) = (s * 7 + n) % 64;
    }
    LossSum l = prior_loss(fwd, target);
    CHECK(l.total.scalar() / l.count == doctest::Approx(std::log(64.0)));

    for (int s = 0; s < codec::kStreams; ++s) {
        Matrix m = Matrix::Zero(3, 64);
        for (int n = 0; n < 3; ++n) m(n, target(s, n)) = 60.0;
        fwd.logits[static_cast<std::size_t>(s)] = t.constant(m);
    }
    l = prior_loss(fwd, target);
    CHECK(l.total.scalar() / l.count < 1e-20);

    target(2, 1) = 64;
    CHECK_THROWS(prior_loss(fwd, target));
}

TEST_CASE("cascade isolation: stream j loss never reaches later specific layers") {
    TinyPrior m;
    const std::vector<int> ph{1, 3, 5}, d{2, 1, 2};
    CodeGrid target(5);
    for (int s = 0; s < codec::kStreams; ++s) {
        for (int n = 0; n < 5; ++n) target(s, n) = (3 * s + n) % 16;
    }
    for (int j = 0; j < codec::kStreams; ++j) {
        m.store.zero_grad();
        nn::Tape t;
        nn::RunContext ctx;
        const PriorForward fwd = m.gen.forward(t, ph, std::span<const int>(d), ctx);
        t.backward(prior_stream_loss(fwd, target, j).total);
        for (const auto& p : m.store.all()) {
            for (int later = j + 1; later < codec::kStreams; ++later) {
                const std::string spec = "prior.specific." + std::to_string(later) + ".";
                const std::string head = "prior.head." + std::to_string(later) + ".";
                if (p.name.rfind(spec, 0) == 0 || p.name.rfind(head, 0) == 0) {
                    CHECK_MESSAGE(all_zero(p.grad), p.name << " got gradient from stream " << j);
                }
            }
        }
        const std::string own = "prior.head." + std::to_string(j) + ".w";
        CHECK_FALSE(all_zero(m.store.find(own)->grad));
    }
}

TEST_CASE("prior and duration loss gradients match finite differences") {
    TinyPrior m;
    const std::vector<int> ph{1, 3, 5}, d{2, 1, 2};
    CodeGrid target(5);
    for (int s = 0; s < codec::kStreams; ++s) {
        for (int n = 0; n < 5; ++n) target(s, n) = (5 * s + 2 * n) % 16;
    }
    std::vector<nn::Parameter*> params;
    for (auto& p : m.store.all()) {
        if (p.name.rfind("prior.", 0) == 0) params.push_back(&p);
    }
    const double err = max_grad_error(
        [&](nn::Tape& t) {
            nn::RunContext ctx;
            const PriorForward fwd = m.gen.forward(t, ph, std::span<const int>(d), ctx);
            return ad::add(prior_loss(fwd, target).total, nn::duration_loss(fwd.log_durations, d));
        },
        params, 1e-5, 8);
    CHECK(err < 1e-4);
}

TEST_CASE("continuous-latent mode projects specific-layer states") {
    TinyPrior m(16, true);
    const std::vector<int> ph{1, 2}, d{2, 2};
    const PriorOutput out = generate_prior(m.gen, m.table, ph, std::span<const int>(d), true);
    CHECK(out.prior_latents[0].rows() == 4);
    CHECK(out.prior_latents[0].cols() == 4);
    TinyPrior discrete;
    nn::Tape t(false);
    nn::RunContext ctx;
    const PriorForward fwd = discrete.gen.forward(t, ph, std::span<const int>(d), ctx);
    CHECK_THROWS(discrete.gen.project_latent(t, fwd, 0));
}
