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

#include "priorflow/netblocks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace priorflow::nn {

namespace {
constexpr int kMaxInferenceDuration = 1000;
}  // namespace

// ---- ParamStore -------------------------------------------------------------------

Parameter& ParamStore::create(std::string name, Matrix init) {
    if (find(name) != nullptr) throw std::logic_error("duplicate parameter name: " + name);
    Parameter p;
    p.name = std::move(name);
    p.grad = Matrix::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    params_.push_back(std::move(p));
    return params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

// ---- BlockConfig ------------------------------------------------------------------

void BlockConfig::check(const std::string& where, std::vector<std::string>& problems) const {
    if (d_model <= 0 || n_heads <= 0 || d_ffn <= 0 || n_layers <= 0) {
        problems.push_back(where + ": d_model, n_heads, d_ffn and n_layers must be positive");
    } else if (d_model % n_heads != 0) {
        problems.push_back(where + ": d_model must be divisible by n_heads");
    }
    if (dropout < 0.0 || dropout >= 1.0) problems.push_back(where + ": dropout must lie in [0, 1)");
    if (conv_kernel < 1 || conv_kernel % 2 == 0) problems.push_back(where + ": conv_kernel must be odd");
}

Matrix xavier_uniform(int rows, int cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// ---- Linear / LayerNorm -----------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng, bool bias)
    : w_(&store.create(name + ".w", xavier_uniform(in, out, rng))),
      b_(bias ? &store.create(name + ".b", Matrix::Zero(1, out)) : nullptr) {}

Var Linear::operator()(Tape& tape, Var x) const {
    Var y = ad::matmul(x, tape.param(*w_));
    if (b_ != nullptr) y = ad::add_rowvec(y, tape.param(*b_));
    return y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim)
    : gamma_(&store.create(name + ".gamma", Matrix::Ones(1, dim))),
      beta_(&store.create(name + ".beta", Matrix::Zero(1, dim))) {}

Var LayerNorm::operator()(Tape& tape, Var x) const {
    return ad::layer_norm(x, tape.param(*gamma_), tape.param(*beta_));
}

// ---- FftBlock ---------------------------------------------------------------------

FftBlock::FftBlock(ParamStore& store, const std::string& name, const BlockConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      ln1_(store, name + ".ln1", cfg.d_model),
      ln2_(store, name + ".ln2", cfg.d_model),
      wq_(store, name + ".attn.q", cfg.d_model, cfg.d_model, rng),
      wk_(store, name + ".attn.k", cfg.d_model, cfg.d_model, rng),
      wv_(store, name + ".attn.v", cfg.d_model, cfg.d_model, rng),
      wo_(store, name + ".attn.o", cfg.d_model, cfg.d_model, rng),
      ffn1_(store, name + ".ffn.conv", cfg.d_model * cfg.conv_kernel, cfg.d_ffn, rng),
      ffn2_(store, name + ".ffn.out", cfg.d_ffn, cfg.d_model, rng) {
    std::vector<std::string> problems;
    cfg.check(name, problems);
    if (!problems.empty()) throw std::invalid_argument(problems.front());
}

Var FftBlock::forward(Tape& tape, Var x, RunContext& ctx) const {
    const std::vector<char> valid(static_cast<std::size_t>(x.rows()), 1);
    return forward(tape, x, valid, ctx);
}

Var FftBlock::forward(Tape& tape, Var x, std::span<const char> valid, RunContext& ctx) const {
    if (x.cols() != cfg_.d_model) throw ad::ShapeError("FftBlock: input width != d_model");
    if (static_cast<Eigen::Index>(valid.size()) != x.rows()) throw ad::ShapeError("FftBlock: pad mask length");
    if (x.rows() == 0) return x;

    Var h = ln1_(tape, x);
    Var a = ad::attention(wq_(tape, h), wk_(tape, h), wv_(tape, h), cfg_.n_heads, valid);
    a = wo_(tape, a);
    if (ctx.training) a = ad::dropout(a, cfg_.dropout, ctx.next_seed());
    Var y = ad::add(x, a);

    std::vector<double> keep(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) keep[i] = valid[i] ? 1.0 : 0.0;
    Var f = ad::mask_rows(ln2_(tape, y), keep);
    f = ad::relu(ffn1_(tape, ad::shift_stack(f, cfg_.conv_kernel)));
    f = ffn2_(tape, f);
    if (ctx.training) f = ad::dropout(f, cfg_.dropout, ctx.next_seed());
    return ad::add(y, f);
}

// ---- duration predictor & length regulation --------------------------------------

DurationPredictor::DurationPredictor(ParamStore& store, const std::string& name, int d_model, int filter,
                                     std::mt19937_64& rng)
    : conv1_(store, name + ".conv1", d_model * 3, filter, rng),
      conv2_(store, name + ".conv2", filter * 3, filter, rng),
      proj_(store, name + ".proj", filter, 1, rng),
      ln1_(store, name + ".ln1", filter),
      ln2_(store, name + ".ln2", filter) {}

Var DurationPredictor::forward(Tape& tape, Var h, RunContext& ctx) const {
    Var x = ln1_(tape, ad::relu(conv1_(tape, ad::shift_stack(h, 3))));
    x = ln2_(tape, ad::relu(conv2_(tape, ad::shift_stack(x, 3))));
    return proj_(tape, x);
}

int inference_duration(double log_duration) {
    const double d = std::round(std::exp(log_duration));
    if (!std::isfinite(d) || d > kMaxInferenceDuration) return kMaxInferenceDuration;
    return std::max(1, static_cast<int>(d));
}

std::vector<int> inference_durations(const Matrix& log_durations) {
    std::vector<int> out;
    for (Eigen::Index i = 0; i < log_durations.rows(); ++i) out.push_back(inference_duration(log_durations(i, 0)));
    return out;
}

std::vector<int> expand_indices(std::span<const int> durations) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        if (durations[i] <= 0) throw std::invalid_argument("length_regulate: duration must be positive");
        idx.insert(idx.end(), static_cast<std::size_t>(durations[i]), static_cast<int>(i));
    }
    return idx;
}

std::vector<int> within_phoneme_offsets(std::span<const int> durations) {
    std::vector<int> off;
    for (int d : durations) {
        for (int k = 0; k < d; ++k) off.push_back(k);
    }
    return off;
}

Var length_regulate(Var embeddings, std::span<const int> durations) {
    if (static_cast<Eigen::Index>(durations.size()) != embeddings.rows()) {
        throw ad::ShapeError("length_regulate: durations/embeddings length mismatch");
    }
    const auto idx = expand_indices(durations);
    return ad::gather_rows(embeddings, idx);
}

Var duration_loss(Var pred_log, std::span<const int> true_durations) {
    if (pred_log.cols() != 1 || static_cast<Eigen::Index>(true_durations.size()) != pred_log.rows()) {
        throw ad::ShapeError("duration_loss: shape mismatch");
    }
    Matrix target(pred_log.rows(), 1);
    for (std::size_t i = 0; i < true_durations.size(); ++i) {
        target(static_cast<Eigen::Index>(i), 0) = std::log(static_cast<double>(true_durations[i]));
    }
    Tape& tape = *pred_log.tape();
    Var diff = ad::sub(pred_log, tape.constant(std::move(target)));
    return ad::scale(ad::sum_squares(diff), 1.0 / static_cast<double>(true_durations.size()));
}

Matrix sinusoidal_encoding(std::span<const double> positions, int dim) {
    Matrix pe(static_cast<Eigen::Index>(positions.size()), dim);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        for (int c = 0; c < dim; ++c) {
            const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / dim);
            const double angle = positions[r] * freq;
            pe(static_cast<Eigen::Index>(r), c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

// ---- EmbeddingTable ---------------------------------------------------------------

EmbeddingTable::EmbeddingTable(ParamStore& store, const std::string& name, int vocab, int dim,
                               std::mt19937_64& rng)
    : vocab_(vocab) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix init(vocab + 1, dim);
    for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = g(rng);
    table_ = &store.create(name, std::move(init));
}

Var EmbeddingTable::lookup(Tape& tape, std::span<const int> indices) const {
    return ad::gather_rows(tape.param(*table_), indices);
}

Var EmbeddingTable::codebook(Tape& tape) const { return ad::slice_rows(tape.param(*table_), 0, vocab_); }

// ---- tau ---------------------------------------------------------------------------

const char* to_string(TauMode mode) {
    switch (mode) {
        case TauMode::fixed: return "fixed";
        case TauMode::learned_global: return "learned";
        case TauMode::predicted: return "predicted";
    }
    return "?";
}

TauMode tau_mode_from_string(const std::string& s) {
    if (s == "fixed") return TauMode::fixed;
    if (s == "learned" || s == "learned_global" || s == "learned-global") return TauMode::learned_global;
    if (s == "predicted") return TauMode::predicted;
    throw std::invalid_argument("unknown tau mode: " + s);
}

TauParam TauParam::create(ParamStore& store, const std::string& name, TauMode mode, int context_dim,
                          std::mt19937_64& rng, double fixed_value, double tau_min) {
    TauParam t;
    t.mode = mode;
    t.fixed_value = fixed_value;
    t.tau_min = tau_min;
    // Both parameterizations exist in every model so checkpoints share a layout.
    t.raw = &store.create(name + ".raw", Matrix::Zero(1, 1));
    t.predictor = Linear(store, name + ".predictor", context_dim, 1, rng);
    return t;
}

Var realize_tau(Tape& tape, const TauParam& tau, std::optional<Var> pooled_context) {
    const double lo = tau.tau_min, hi = 1.0 - tau.tau_min;
    switch (tau.mode) {
        case TauMode::fixed:
            return tape.constant_scalar(std::clamp(tau.fixed_value, lo, hi));
        case TauMode::learned_global:
            return ad::clamp(ad::sigmoid(tape.param(*tau.raw)), lo, hi);
        case TauMode::predicted:
            if (!pooled_context) throw MissingContextError("predicted tau requires a pooled context vector");
            return ad::clamp(ad::sigmoid(tau.predictor(tape, *pooled_context)), lo, hi);
    }
    throw std::logic_error("unreachable tau mode");
}

}  // namespace priorflow::nn
