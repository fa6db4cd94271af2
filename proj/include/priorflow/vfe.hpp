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

// Vector field estimator: content-masked prompt conditioning, quantizer
// encoding, folding of the six latent streams into one sequence, the velocity
// transformer, the one-step objective (regression + anchor), the one-step
// sampler and a classical noise-to-data Euler baseline.
//
// Latent grids are held as six L x D matrices (one per stream). Folding G
// concatenates the six stream vectors of each position in stream order
// (prosody, content, content, detail, detail, detail); H is an affine map
// 6D -> D'. Unfolding applies a separately learned affine map D' -> 6D and
// then splits the columns back into streams.

#pragma once

#include "priorflow/netblocks.hpp"
#include "priorflow/toycodec.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>

namespace priorflow::vfe {

using codec::CodeGrid;
using codec::kStreams;
using nn::Matrix;
using nn::Tape;
using nn::Var;

using StreamVars = std::array<Var, kStreams>;

struct LatentGrid {
    std::array<Matrix, kStreams> streams;  // L x D each
    int prompt_len = 0;                    // M; the target span is [M, L)

    int length() const { return static_cast<int>(streams[0].rows()); }
    int dim() const { return static_cast<int>(streams[0].cols()); }
    int target_len() const { return length() - prompt_len; }

    static LatentGrid zeros(int length, int dim, int prompt_len = 0);
};

enum class AnchorLogits { dot, neg_sq_distance };
enum class FlowKind { one_step, classical };

const char* to_string(FlowKind kind);
FlowKind flow_kind_from_string(const std::string& s);
const char* to_string(AnchorLogits kind);
AnchorLogits anchor_logits_from_string(const std::string& s);

struct VfeConfig {
    nn::BlockConfig block{128, 8, 512, 4, 0.0, 1};  // d_model doubles as D'
    int embed_dim = 32;                             // D
    bool fold_bias = true;
    bool unfold_bias = true;
    bool zero_init_head = true;
    AnchorLogits anchor_logits = AnchorLogits::dot;
    FlowKind flow = FlowKind::one_step;
    double train_sigma = 1.0;
    double infer_sigma = 0.0;
    double tau_min = 1e-3;
};

// Counts calls into the velocity network for one sampling run.
struct NfeCounter {
    int calls = 0;
};

// ---- index-level folding ----------------------------------------------------------

// G: (s, l, d) -> (l, s * D + d).
Matrix fold_g(const LatentGrid& x);
LatentGrid unfold_g(const Matrix& folded, int dim, int prompt_len = 0);
Var fold_g(std::span<const Var> streams);
StreamVars unfold_g(Var folded, int dim);

// Q: out[s, l, :] = x[s, l, :] + omega[s, :]. omega is 6 x D.
LatentGrid quantizer_encode(const LatentGrid& x, const Matrix& omega);
StreamVars quantizer_encode(std::span<const Var> x, Var omega);

StreamVars constant_streams(Tape& tape, const LatentGrid& grid);
StreamVars slice_streams(std::span<const Var> x, int start, int count);
StreamVars concat_streams(std::span<const Var> a, std::span<const Var> b);

// ---- the network ------------------------------------------------------------------

class VectorFieldEstimator {
public:
    VectorFieldEstimator(nn::ParamStore& store, const VfeConfig& cfg, std::mt19937_64& rng);

    const VfeConfig& config() const { return cfg_; }
    int folded_dim() const { return cfg_.block.d_model; }

    Var omega(Tape& tape) const;
    // F = H o G (after Q has been applied by the caller).
    Var fold(Tape& tape, std::span<const Var> streams) const;
    // F^-1: learned affine D' -> 6D, then G^-1.
    StreamVars unfold(Tape& tape, Var folded_velocity) const;
    // Classical-flow text conditioning: projects G(x_pr) of the target span.
    Var condition(Tape& tape, std::span<const Var> x_pr) const;

    // Velocity for every one of the L positions. tau must lie in (0, 1).
    Var estimate_velocity(Tape& tape, Var folded, Var tau, int prompt_len, nn::RunContext& ctx,
                          NfeCounter& nfe) const;
    // Same network with a time value in [0, 1] (classical flow paths start at t = 0).
    Var velocity_at(Tape& tape, Var folded, Var time, int prompt_len, nn::RunContext& ctx, NfeCounter& nfe) const;

    nn::Parameter& head_weight() const { return *head_.weight(); }
    nn::Parameter& head_bias() const { return *head_.bias(); }
    nn::Parameter& fold_weight() const { return *fold_.weight(); }
    nn::Parameter* fold_bias() const { return fold_.bias(); }
    nn::Parameter& unfold_weight() const { return *unfold_.weight(); }
    nn::Parameter* unfold_bias() const { return unfold_.bias(); }
    nn::Parameter& omega_param() const { return *omega_; }

private:
    VfeConfig cfg_;
    nn::Parameter* omega_ = nullptr;
    nn::Linear fold_;
    nn::Linear unfold_;
    nn::Linear tau_embed_;
    nn::Linear cond_;
    std::vector<nn::FftBlock> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear head_;
};

// ---- conditioning input -----------------------------------------------------------

// z_pr = Concat(y_mask, x_pr + sigma * eps). The prompt span embeds the prompt
// codes with both content streams replaced by the MASK row. Throws when the
// prompt already holds MASK (or any out-of-range) indices.
StreamVars build_input(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& prompt,
                       std::span<const Var> x_pr, double sigma, std::uint64_t noise_seed);
LatentGrid build_input(const nn::EmbeddingTable& table, const CodeGrid& prompt, const LatentGrid& x_pr, double sigma,
                       std::uint64_t noise_seed);

// Embeds the prompt span only (content streams masked), M x D per stream.
StreamVars embed_masked_prompt(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& prompt);
StreamVars embed_codes(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& codes);

// Seeded N(0, sigma^2) noise, one L x D matrix per stream.
std::array<Matrix, kStreams> gaussian_streams(int length, int dim, double sigma, std::uint64_t seed);

// Full one-step pass: F^-1(v(F(Q(z_pr)), tau)) restricted to the target span.
StreamVars one_step_velocity(Tape& tape, const VectorFieldEstimator& net, std::span<const Var> z_pr, Var tau,
                             int prompt_len, nn::RunContext& ctx, NfeCounter& nfe);

// Classical-flow pass at time t: the input is Concat(y_mask, x_t) and G(x_pr)
// enters through the conditioning projection. Returns the target-span velocity.
StreamVars classical_velocity(Tape& tape, const VectorFieldEstimator& net, std::span<const Var> y_mask,
                              std::span<const Var> x_t, std::span<const Var> x_pr, double t, nn::RunContext& ctx,
                              NfeCounter& nfe);

// ---- losses -----------------------------------------------------------------------

using nn::LossSum;

// Summed squared error between the target-span velocity and
// (x1 - x_pr) / (1 - tau); count = 6 N D. Throws when tau >= 1 - tau_min.
LossSum cfm_loss(std::span<const Var> velocity, std::span<const Var> x1, std::span<const Var> x_pr, Var tau,
                 double tau_min = 1e-3);

// Summed cross-entropy of anchor logits against target codes; count = 6 N.
LossSum anchor_loss(std::span<const Var> z1_estimate, const CodeGrid& target, const nn::EmbeddingTable& table,
                    AnchorLogits kind = AnchorLogits::dot);

Var anchor_logits(Tape& tape, Var latent, const nn::EmbeddingTable& table, AnchorLogits kind);

// Realized tau; the predicted mode pools G(z_pr) over the target span.
Var realize_tau(Tape& tape, const nn::TauParam& tau, std::span<const Var> z_pr_target);

// z~1 = z_pr + (1 - tau) * u on the target span.
StreamVars reconstruct_target(std::span<const Var> z_pr_target, std::span<const Var> velocity, Var tau);

// ---- sampling ---------------------------------------------------------------------

struct SampleOptions {
    double sigma = 0.0;
    std::uint64_t seed = 0;
    double temperature = 0.0;  // 0 = argmax
};

struct SampleResult {
    CodeGrid codes;        // target span only
    LatentGrid latent;     // z~1 (one-step) or x(t=1) (Euler), target span
    int nfe = 0;
    double tau = 0.0;
};

CodeGrid discretize(const LatentGrid& latent, const nn::EmbeddingTable& table, AnchorLogits kind,
                    double temperature = 0.0, std::uint64_t seed = 0);

// One network evaluation: z~1 = z_pr + (1 - tau) F^-1(v(F(Q(z_pr)), tau)).
SampleResult one_step_sample(const VectorFieldEstimator& net, const nn::TauParam& tau, const nn::EmbeddingTable& table,
                             const CodeGrid& prompt, const LatentGrid& x_pr, const SampleOptions& opts = {});

// Explicit Euler for dx/dt = field(x, t) on [0, 1] with `steps` uniform steps.
using VelocityField = std::function<Matrix(const Matrix& x, double t)>;
Matrix euler_integrate(const Matrix& x0, int steps, const VelocityField& field);

// Classical baseline: Gaussian start on the target span, `steps` Euler steps
// of the classical-flow network, NFE = steps.
SampleResult euler_sample_baseline(const VectorFieldEstimator& net, const nn::EmbeddingTable& table,
                                   const CodeGrid& prompt, const LatentGrid& x_pr, int steps, std::uint64_t seed);

}  // namespace priorflow::vfe
