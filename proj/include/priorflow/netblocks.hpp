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

// Neural building blocks shared by the prior generator and the vector field
// estimator.

#pragma once

#include "priorflow/autodiff.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace priorflow::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

// Owns every Parameter of a model. Addresses are stable for the store's lifetime.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Parameter& create(std::string name, Matrix init);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    std::deque<Parameter>& all() { return params_; }
    const std::deque<Parameter>& all() const { return params_; }
    void zero_grad();
    std::size_t scalar_count() const;

private:
    std::deque<Parameter> params_;
};

// Per-forward-pass state: dropout on/off and its seed stream.
struct RunContext {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t next_seed() { return seed++ * 0x9e3779b97f4a7c15ull + 1; }
};

struct BlockConfig {
    int d_model = 64;
    int n_heads = 4;
    int d_ffn = 256;
    int n_layers = 2;
    double dropout = 0.0;
    int conv_kernel = 3;  // 1 gives a position-wise feed-forward

    // Appends problems (prefixed by `where`) instead of throwing.
    void check(const std::string& where, std::vector<std::string>& problems) const;
};

Matrix xavier_uniform(int rows, int cols, std::mt19937_64& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng, bool bias = true);
    Var operator()(Tape& tape, Var x) const;

    Parameter* weight() const { return w_; }
    Parameter* bias() const { return b_; }

private:
    Parameter* w_ = nullptr;
    Parameter* b_ = nullptr;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, int dim);
    Var operator()(Tape& tape, Var x) const;

private:
    Parameter* gamma_ = nullptr;
    Parameter* beta_ = nullptr;
};

// Pre-norm Feed-Forward Transformer block:
//   y = x + W_o * MHA(LN(x))
//   z = y + Conv_1(ReLU(Conv_k(LN(y))))
// Padded rows are excluded as attention keys and zeroed before the
// convolution, so they never influence non-padding outputs.
class FftBlock {
public:
    FftBlock() = default;
    FftBlock(ParamStore& store, const std::string& name, const BlockConfig& cfg, std::mt19937_64& rng);

    Var forward(Tape& tape, Var x, std::span<const char> valid, RunContext& ctx) const;
    Var forward(Tape& tape, Var x, RunContext& ctx) const;

    const Linear& attn_out() const { return wo_; }
    const Linear& ffn_out() const { return ffn2_; }

private:
    BlockConfig cfg_;
    LayerNorm ln1_, ln2_;
    Linear wq_, wk_, wv_, wo_;
    Linear ffn1_, ffn2_;
};

// FastSpeech-style predictor: two (conv k=3, ReLU, LayerNorm) stages and a
// scalar projection. Output is one log-duration per phoneme, shape n x 1.
class DurationPredictor {
public:
    DurationPredictor() = default;
    DurationPredictor(ParamStore& store, const std::string& name, int d_model, int filter, std::mt19937_64& rng);
    Var forward(Tape& tape, Var phoneme_hidden, RunContext& ctx) const;

private:
    Linear conv1_, conv2_, proj_;
    LayerNorm ln1_, ln2_;
};

// max(1, round(exp(log_duration)))
int inference_duration(double log_duration);
std::vector<int> inference_durations(const Matrix& log_durations);

// Repeats row i of `embeddings` durations[i] times. Throws on durations <= 0.
Var length_regulate(Var embeddings, std::span<const int> durations);
// Frame index -> phoneme index map used by length_regulate.
std::vector<int> expand_indices(std::span<const int> durations);
// Offset of each frame inside its phoneme.
std::vector<int> within_phoneme_offsets(std::span<const int> durations);

// Mean squared error between predictions and log(true durations).
Var duration_loss(Var pred_log, std::span<const int> true_durations);

// A loss as (sum, element count); batch means divide summed totals by summed counts.
struct LossSum {
    Var total;
    double count = 0.0;
};

// Standard sinusoidal features for arbitrary (possibly negative) positions.
Matrix sinusoidal_encoding(std::span<const double> positions, int dim);

// (V + 1) x D table; row V is the MASK embedding.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(ParamStore& store, const std::string& name, int vocab, int dim, std::mt19937_64& rng);

    int vocab() const { return vocab_; }
    int mask_index() const { return vocab_; }
    int dim() const { return static_cast<int>(table_->value.cols()); }
    Parameter& parameter() const { return *table_; }

    Var lookup(Tape& tape, std::span<const int> indices) const;
    // Rows 0..V-1 only (MASK excluded), for logits.
    Var codebook(Tape& tape) const;
    ad::RowVector row(int index) const { return table_->value.row(index); }

private:
    Parameter* table_ = nullptr;
    int vocab_ = 0;
};

enum class TauMode { fixed, learned_global, predicted };

const char* to_string(TauMode mode);
TauMode tau_mode_from_string(const std::string& s);

struct TauParam {
    TauMode mode = TauMode::learned_global;
    double fixed_value = 0.5;
    double tau_min = 1e-3;
    Parameter* raw = nullptr;  // learned_global: 1 x 1 pre-sigmoid value
    Linear predictor;          // predicted: pooled context -> 1

    static TauParam create(ParamStore& store, const std::string& name, TauMode mode, int context_dim,
                           std::mt19937_64& rng, double fixed_value = 0.5, double tau_min = 1e-3);
};

class MissingContextError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Realized tau as a 1x1 Var, always inside [tau_min, 1 - tau_min].
Var realize_tau(Tape& tape, const TauParam& tau, std::optional<Var> pooled_context);

}  // namespace priorflow::nn
