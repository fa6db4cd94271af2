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

#include "priorflow/priorgen.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace priorflow::prior {

namespace {

std::vector<double> iota_positions(Eigen::Index n) {
    std::vector<double> p(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(i);
    return p;
}

void check_target(const CodeGrid& target, int frames, int vocab) {
    if (target.frames() != frames) throw std::invalid_argument("prior_loss: target length differs from logits");
    for (int s = 0; s < kStreams; ++s) {
        for (int n = 0; n < frames; ++n) {
            const int c = target(s, n);
            if (c == vocab) throw std::invalid_argument("prior_loss: target contains the MASK index");
            if (c < 0 || c > vocab) throw std::invalid_argument("prior_loss: target code out of range");
        }
    }
}

}  // namespace

PriorGenerator::PriorGenerator(nn::ParamStore& store, const PriorConfig& cfg, int embed_dim, std::mt19937_64& rng)
    : cfg_(cfg) {
    const int d = cfg.block.d_model;
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix emb(cfg.phonemes, d);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = g(rng);
    phoneme_embed_ = &store.create("prior.phoneme_embed", std::move(emb));
    Matrix off(cfg.max_offset, d);
    for (Eigen::Index i = 0; i < off.size(); ++i) off.data()[i] = g(rng);
    offset_embed_ = &store.create("prior.offset_embed", std::move(off));

    for (int i = 0; i < cfg.encoder_layers; ++i) {
        encoder_.emplace_back(store, "prior.encoder." + std::to_string(i), cfg.block, rng);
    }
    duration_ = nn::DurationPredictor(store, "prior.duration", d, d, rng);
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        decoder_.emplace_back(store, "prior.decoder." + std::to_string(i), cfg.block, rng);
    }
    for (int s = 0; s < kStreams; ++s) {
        specific_[static_cast<std::size_t>(s)] = nn::FftBlock(store, "prior.specific." + std::to_string(s), cfg.block, rng);
        heads_[static_cast<std::size_t>(s)] = nn::Linear(store, "prior.head." + std::to_string(s), d, cfg.vocab, rng);
        if (cfg.continuous_latents) {
            latent_proj_[static_cast<std::size_t>(s)] =
                nn::Linear(store, "prior.latent." + std::to_string(s), d, embed_dim, rng);
        }
    }
}

PriorForward PriorGenerator::forward(nn::Tape& tape, std::span<const int> phonemes,
                                     std::optional<std::span<const int>> durations, nn::RunContext& ctx) const {
    if (phonemes.empty()) throw std::invalid_argument("generate_prior: empty phoneme sequence");
    for (int p : phonemes) {
        if (p < 0 || p >= cfg_.phonemes) throw std::invalid_argument("generate_prior: phoneme id out of range");
    }
    const int d = cfg_.block.d_model;
    const auto n = static_cast<Eigen::Index>(phonemes.size());

    Var x = ad::gather_rows(tape.param(*phoneme_embed_), phonemes);
    x = ad::add(x, tape.constant(nn::sinusoidal_encoding(iota_positions(n), d)));
    for (const auto& block : encoder_) x = block.forward(tape, x, ctx);

    PriorForward out;
    out.log_durations = duration_.forward(tape, x, ctx);
    if (durations) {
        if (durations->size() != phonemes.size()) throw std::invalid_argument("generate_prior: durations length mismatch");
        out.durations.assign(durations->begin(), durations->end());
    } else {
        out.durations = nn::inference_durations(out.log_durations.value());
        out.durations_predicted = true;
    }

    Var h = nn::length_regulate(x, out.durations);
    std::vector<int> offsets = nn::within_phoneme_offsets(out.durations);
    for (int& o : offsets) o = std::min(o, cfg_.max_offset - 1);
    h = ad::add(h, ad::gather_rows(tape.param(*offset_embed_), offsets));
    h = ad::add(h, tape.constant(nn::sinusoidal_encoding(iota_positions(h.rows()), d)));
    for (const auto& block : decoder_) h = block.forward(tape, h, ctx);

    Var state = h;
    for (int s = 0; s < kStreams; ++s) {
        const auto si = static_cast<std::size_t>(s);
        state = specific_[si].forward(tape, state, ctx);
        out.hidden[si] = state;
        out.logits[si] = heads_[si](tape, state);
    }
    return out;
}

Var PriorGenerator::project_latent(nn::Tape& tape, const PriorForward& fwd, int stream) const {
    if (!cfg_.continuous_latents) throw std::logic_error("project_latent requires continuous_latents");
    const auto si = static_cast<std::size_t>(stream);
    return latent_proj_[si](tape, fwd.hidden[si]);
}

CodeGrid argmax_codes(const std::array<Matrix, kStreams>& logits) {
    const auto frames = static_cast<int>(logits[0].rows());
    CodeGrid codes(frames);
    for (int s = 0; s < kStreams; ++s) {
        for (int n = 0; n < frames; ++n) {
            Eigen::Index best = 0;
            logits[static_cast<std::size_t>(s)].row(n).maxCoeff(&best);
            codes(s, n) = static_cast<int>(best);
        }
    }
    return codes;
}

PriorOutput generate_prior(const PriorGenerator& gen, const nn::EmbeddingTable& table, std::span<const int> phonemes,
                           std::optional<std::span<const int>> durations, bool duration_predictor_trained) {
    nn::Tape tape(false);
    nn::RunContext ctx;
    const PriorForward fwd = gen.forward(tape, phonemes, durations, ctx);
    PriorOutput out;
    for (int s = 0; s < kStreams; ++s) out.logits[static_cast<std::size_t>(s)] = fwd.logits[static_cast<std::size_t>(s)].value();
    out.prior_codes = argmax_codes(out.logits);
    for (int s = 0; s < kStreams; ++s) {
        const auto si = static_cast<std::size_t>(s);
        if (gen.config().continuous_latents) {
            out.prior_latents[si] = gen.project_latent(tape, fwd, s).value();
        } else {
            out.prior_latents[si] = table.lookup(tape, out.prior_codes.stream(s)).value();
        }
    }
    out.durations = fwd.durations;
    out.durations_predicted = fwd.durations_predicted;
    out.untrained_duration_predictor = fwd.durations_predicted && !duration_predictor_trained;
    return out;
}

LossSum prior_stream_loss(const PriorForward& fwd, const CodeGrid& target, int stream) {
    const auto si = static_cast<std::size_t>(stream);
    const int frames = static_cast<int>(fwd.logits[si].rows());
    check_target(target, frames, static_cast<int>(fwd.logits[si].cols()));
    return {ad::cross_entropy_sum(fwd.logits[si], target.stream(stream)), static_cast<double>(frames)};
}

LossSum prior_loss(const PriorForward& fwd, const CodeGrid& target) {
    const int frames = static_cast<int>(fwd.logits[0].rows());
    check_target(target, frames, static_cast<int>(fwd.logits[0].cols()));
    std::array<Var, kStreams> parts;
    for (int s = 0; s < kStreams; ++s) {
        parts[static_cast<std::size_t>(s)] = ad::cross_entropy_sum(fwd.logits[static_cast<std::size_t>(s)], target.stream(s));
    }
    Var total = ad::concat_cols(parts);
    return {ad::sum(total), static_cast<double>(kStreams * frames)};
}

}  // namespace priorflow::prior
