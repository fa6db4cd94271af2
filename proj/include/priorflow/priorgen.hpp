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

// Prior codes generator: phoneme encoder -> duration predictor / length
// regulator -> shared decoder -> six cascaded stream-specific layers.
//
// Stream j's logits read the state of specific layer j, and specific layer
// j > 0 reads the state of layer j - 1, so the output factorizes as
// p(q_0 | p) * prod_j p(q_j | q_{j-1}).

#pragma once

#include "priorflow/netblocks.hpp"
#include "priorflow/toycodec.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace priorflow::prior {

using codec::CodeGrid;
using codec::kStreams;
using nn::Matrix;
using nn::Var;

struct PriorConfig {
    nn::BlockConfig block{64, 4, 256, 2, 0.0, 3};
    int encoder_layers = 2;
    int decoder_layers = 2;
    int phonemes = 40;
    int vocab = 64;
    int max_offset = 16;  // within-phoneme offsets at or beyond this share one embedding
    // Prior latents come from the hidden state of each specific layer rather
    // than from the embedded argmax codes.
    bool continuous_latents = false;
};

using nn::LossSum;

struct PriorForward {
    std::array<Var, kStreams> logits;   // N x V each
    std::array<Var, kStreams> hidden;   // N x d_model each (specific-layer states)
    Var log_durations;                  // n x 1
    std::vector<int> durations;         // what the length regulator used
    bool durations_predicted = false;
};

struct PriorOutput {
    std::array<Matrix, kStreams> logits;
    CodeGrid prior_codes;
    std::array<Matrix, kStreams> prior_latents;  // N x D
    std::vector<int> durations;
    bool durations_predicted = false;
    bool untrained_duration_predictor = false;
};

class PriorGenerator {
public:
    PriorGenerator(nn::ParamStore& store, const PriorConfig& cfg, int embed_dim, std::mt19937_64& rng);

    const PriorConfig& config() const { return cfg_; }

    // With durations omitted the duration predictor decides the length.
    PriorForward forward(nn::Tape& tape, std::span<const int> phonemes, std::optional<std::span<const int>> durations,
                         nn::RunContext& ctx) const;

    // Continuous-latent projection for stream s (only in continuous mode).
    Var project_latent(nn::Tape& tape, const PriorForward& fwd, int stream) const;

private:
    PriorConfig cfg_;
    nn::Parameter* phoneme_embed_ = nullptr;
    nn::Parameter* offset_embed_ = nullptr;
    std::vector<nn::FftBlock> encoder_;
    nn::DurationPredictor duration_;
    std::vector<nn::FftBlock> decoder_;
    std::array<nn::FftBlock, kStreams> specific_;
    std::array<nn::Linear, kStreams> heads_;
    std::array<nn::Linear, kStreams> latent_proj_;
};

// Row-wise argmax of each stream's logits.
CodeGrid argmax_codes(const std::array<Matrix, kStreams>& logits);

PriorOutput generate_prior(const PriorGenerator& gen, const nn::EmbeddingTable& table, std::span<const int> phonemes,
                           std::optional<std::span<const int>> durations, bool duration_predictor_trained);

// Summed cross-entropy of the six streams against `target`; count = 6 N.
// Throws on MASK or out-of-range targets.
LossSum prior_loss(const PriorForward& fwd, const CodeGrid& target);

// Only the loss of stream `stream`, used to probe cascade isolation.
LossSum prior_stream_loss(const PriorForward& fwd, const CodeGrid& target, int stream);

}  // namespace priorflow::prior
