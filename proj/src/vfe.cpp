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

#include "priorflow/vfe.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace priorflow::vfe {

namespace {

constexpr std::size_t idx(int s) { return static_cast<std::size_t>(s); }

void check_streams(std::span<const Var> x, const char* where) {
    if (x.size() != kStreams) throw std::invalid_argument(std::string(where) + ": expected six streams");
    for (int s = 1; s < kStreams; ++s) {
        if (x[idx(s)].rows() != x[0].rows() || x[idx(s)].cols() != x[0].cols()) {
            throw std::invalid_argument(std::string(where) + ": stream shapes differ");
        }
    }
}

Var sum_vars(std::span<const Var> parts) {
    Var total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
    return total;
}

// (1 - tau)
Var one_minus(Var tau) { return ad::add_const(ad::scale(tau, -1.0), 1.0); }

Eigen::Index argmax_row(const Eigen::Ref<const ad::RowVector>& logits) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return best;
}

}  // namespace

LatentGrid LatentGrid::zeros(int length, int dim, int prompt_len) {
    LatentGrid g;
    for (auto& m : g.streams) m = Matrix::Zero(length, dim);
    g.prompt_len = prompt_len;
    return g;
}

const char* to_string(FlowKind kind) { return kind == FlowKind::one_step ? "one_step" : "classical"; }

FlowKind flow_kind_from_string(const std::string& s) {
    if (s == "one_step" || s == "one-step") return FlowKind::one_step;
    if (s == "classical") return FlowKind::classical;
    throw std::invalid_argument("unknown flow kind: " + s);
}

const char* to_string(AnchorLogits kind) { return kind == AnchorLogits::dot ? "dot" : "neg_sq_distance"; }

AnchorLogits anchor_logits_from_string(const std::string& s) {
    if (s == "dot") return AnchorLogits::dot;
    if (s == "neg_sq_distance" || s == "distance") return AnchorLogits::neg_sq_distance;
    throw std::invalid_argument("unknown anchor logits kind: " + s);
}

// ---- folding ------------------------------------------------------------------------

Matrix fold_g(const LatentGrid& x) {
    const int length = x.length(), dim = x.dim();
    Matrix out(length, kStreams * dim);
    for (int s = 0; s < kStreams; ++s) {
        if (x.streams[idx(s)].rows() != length || x.streams[idx(s)].cols() != dim) {
            throw std::invalid_argument("fold: stream shapes differ");
        }
        out.middleCols(s * dim, dim) = x.streams[idx(s)];
    }
    return out;
}

LatentGrid unfold_g(const Matrix& folded, int dim, int prompt_len) {
    if (dim <= 0 || folded.cols() != kStreams * dim) throw std::invalid_argument("unfold: width is not 6 * D");
    LatentGrid g;
    for (int s = 0; s < kStreams; ++s) g.streams[idx(s)] = folded.middleCols(s * dim, dim);
    g.prompt_len = prompt_len;
    return g;
}

Var fold_g(std::span<const Var> streams) {
    check_streams(streams, "fold");
    return ad::concat_cols(streams);
}

StreamVars unfold_g(Var folded, int dim) {
    if (dim <= 0 || folded.cols() != kStreams * dim) throw std::invalid_argument("unfold: width is not 6 * D");
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) out[idx(s)] = ad::slice_cols(folded, s * dim, dim);
    return out;
}

LatentGrid quantizer_encode(const LatentGrid& x, const Matrix& omega) {
    if (omega.rows() != kStreams || omega.cols() != x.dim()) throw std::invalid_argument("quantizer_encode: omega shape");
    LatentGrid out = x;
    for (int s = 0; s < kStreams; ++s) out.streams[idx(s)].rowwise() += omega.row(s);
    return out;
}

StreamVars quantizer_encode(std::span<const Var> x, Var omega) {
    check_streams(x, "quantizer_encode");
    if (omega.rows() != kStreams || omega.cols() != x[0].cols()) throw std::invalid_argument("quantizer_encode: omega shape");
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) out[idx(s)] = ad::add_rowvec(x[idx(s)], ad::slice_rows(omega, s, 1));
    return out;
}

StreamVars constant_streams(Tape& tape, const LatentGrid& grid) {
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) out[idx(s)] = tape.constant(grid.streams[idx(s)]);
    return out;
}

StreamVars slice_streams(std::span<const Var> x, int start, int count) {
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) out[idx(s)] = ad::slice_rows(x[idx(s)], start, count);
    return out;
}

StreamVars concat_streams(std::span<const Var> a, std::span<const Var> b) {
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) {
        const std::array<Var, 2> parts{a[idx(s)], b[idx(s)]};
        out[idx(s)] = ad::concat_rows(parts);
    }
    return out;
}

// ---- network ----------------------------------------------------------------------

VectorFieldEstimator::VectorFieldEstimator(nn::ParamStore& store, const VfeConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
    std::vector<std::string> problems;
    cfg.block.check("vfe", problems);
    if (cfg.embed_dim <= 0) problems.push_back("vfe: embed_dim must be positive");
    if (!(cfg.tau_min > 0.0 && cfg.tau_min < 0.5)) problems.push_back("vfe: tau_min must lie in (0, 0.5)");
    if (!problems.empty()) throw codec::ConfigError(problems);

    const int d = cfg.embed_dim, dp = cfg.block.d_model;
    std::normal_distribution<double> g(0.0, 0.02);
    Matrix om(kStreams, d);
    for (Eigen::Index i = 0; i < om.size(); ++i) om.data()[i] = g(rng);
    omega_ = &store.create("vfe.omega", std::move(om));
    fold_ = nn::Linear(store, "vfe.fold", kStreams * d, dp, rng, cfg.fold_bias);
    unfold_ = nn::Linear(store, "vfe.unfold", dp, kStreams * d, rng, cfg.unfold_bias);
    tau_embed_ = nn::Linear(store, "vfe.tau_embed", 1, dp, rng);
    cond_ = nn::Linear(store, "vfe.cond", kStreams * d, dp, rng);
    for (int i = 0; i < cfg.block.n_layers; ++i) {
        blocks_.emplace_back(store, "vfe.block." + std::to_string(i), cfg.block, rng);
    }
    final_ln_ = nn::LayerNorm(store, "vfe.final_ln", dp);
    head_ = nn::Linear(store, "vfe.head", dp, dp, rng);
    if (cfg.zero_init_head) head_.weight()->value.setZero();
}

Var VectorFieldEstimator::omega(Tape& tape) const { return tape.param(*omega_); }

Var VectorFieldEstimator::fold(Tape& tape, std::span<const Var> streams) const {
    return fold_(tape, fold_g(streams));
}

StreamVars VectorFieldEstimator::unfold(Tape& tape, Var folded_velocity) const {
    if (folded_velocity.cols() != cfg_.block.d_model) throw std::invalid_argument("unfold: width is not D'");
    return unfold_g(unfold_(tape, folded_velocity), cfg_.embed_dim);
}

Var VectorFieldEstimator::condition(Tape& tape, std::span<const Var> x_pr) const { return cond_(tape, fold_g(x_pr)); }

Var VectorFieldEstimator::estimate_velocity(Tape& tape, Var folded, Var tau, int prompt_len, nn::RunContext& ctx,
                                            NfeCounter& nfe) const {
    const double t = tau.scalar();
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("estimate_velocity: tau must lie in (0, 1)");
    return velocity_at(tape, folded, tau, prompt_len, ctx, nfe);
}

Var VectorFieldEstimator::velocity_at(Tape& tape, Var folded, Var time, int prompt_len, nn::RunContext& ctx,
                                      NfeCounter& nfe) const {
    if (time.rows() != 1 || time.cols() != 1) throw std::invalid_argument("velocity: time must be a scalar");
    const double t = time.scalar();
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("velocity: time must lie in [0, 1]");
    if (folded.cols() != cfg_.block.d_model) throw std::invalid_argument("velocity: input width is not D'");
    const auto length = folded.rows();
    if (prompt_len < 0 || prompt_len >= length) throw std::invalid_argument("velocity: empty target span");
    ++nfe.calls;

    std::vector<double> pos(static_cast<std::size_t>(length));
    for (Eigen::Index l = 0; l < length; ++l) pos[static_cast<std::size_t>(l)] = static_cast<double>(l - prompt_len);
    Var h = ad::add_rowvec(folded, tau_embed_(tape, time));
    h = ad::add(h, tape.constant(nn::sinusoidal_encoding(pos, cfg_.block.d_model)));
    for (const auto& block : blocks_) h = block.forward(tape, h, ctx);
    return head_(tape, final_ln_(tape, h));
}

// ---- conditioning input -----------------------------------------------------------

StreamVars embed_codes(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& codes) {
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) out[idx(s)] = table.lookup(tape, codes.stream(s));
    return out;
}

StreamVars embed_masked_prompt(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& prompt) {
    const int m = prompt.frames();
    for (int s = 0; s < kStreams; ++s) {
        for (int n = 0; n < m; ++n) {
            const int c = prompt(s, n);
            if (c == table.mask_index()) throw std::invalid_argument("build_input: prompt already contains MASK");
            if (c < 0 || c >= table.vocab()) throw std::invalid_argument("build_input: prompt code out of range");
        }
    }
    StreamVars out;
    const std::vector<int> mask(static_cast<std::size_t>(m), table.mask_index());
    for (int s = 0; s < kStreams; ++s) {
        const auto role = codec::stream_role(s);
        out[idx(s)] = role == codec::StreamRole::content ? table.lookup(tape, mask) : table.lookup(tape, prompt.stream(s));
    }
    return out;
}

std::array<Matrix, kStreams> gaussian_streams(int length, int dim, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::array<Matrix, kStreams> out;
    for (auto& m : out) {
        m.resize(length, dim);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sigma * g(rng);
    }
    return out;
}

StreamVars build_input(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& prompt,
                       std::span<const Var> x_pr, double sigma, std::uint64_t noise_seed) {
    check_streams(x_pr, "build_input");
    if (x_pr[0].rows() < 1) throw std::invalid_argument("build_input: empty target span");
    if (x_pr[0].cols() != table.dim()) throw std::invalid_argument("build_input: latent width differs from table");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("build_input: sigma must be finite and >= 0");
    const StreamVars y_mask = embed_masked_prompt(tape, table, prompt);
    StreamVars target;
    if (sigma == 0.0) {
        for (int s = 0; s < kStreams; ++s) target[idx(s)] = x_pr[idx(s)];
    } else {
        auto eps = gaussian_streams(static_cast<int>(x_pr[0].rows()), table.dim(), sigma, noise_seed);
        for (int s = 0; s < kStreams; ++s) {
            target[idx(s)] = ad::add(x_pr[idx(s)], tape.constant(std::move(eps[idx(s)])));
        }
    }
    if (prompt.frames() == 0) return target;
    return concat_streams(y_mask, target);
}

LatentGrid build_input(const nn::EmbeddingTable& table, const CodeGrid& prompt, const LatentGrid& x_pr, double sigma,
                       std::uint64_t noise_seed) {
    Tape tape(false);
    const StreamVars x = constant_streams(tape, x_pr);
    const StreamVars z = build_input(tape, table, prompt, x, sigma, noise_seed);
    LatentGrid out;
    for (int s = 0; s < kStreams; ++s) out.streams[idx(s)] = z[idx(s)].value();
    out.prompt_len = prompt.frames();
    return out;
}

StreamVars one_step_velocity(Tape& tape, const VectorFieldEstimator& net, std::span<const Var> z_pr, Var tau,
                             int prompt_len, nn::RunContext& ctx, NfeCounter& nfe) {
    check_streams(z_pr, "one_step_velocity");
    const auto length = static_cast<int>(z_pr[0].rows());
    const StreamVars q = quantizer_encode(z_pr, net.omega(tape));
    const Var folded = net.fold(tape, q);
    const Var v = net.estimate_velocity(tape, folded, tau, prompt_len, ctx, nfe);
    return net.unfold(tape, ad::slice_rows(v, prompt_len, length - prompt_len));
}

StreamVars classical_velocity(Tape& tape, const VectorFieldEstimator& net, std::span<const Var> y_mask,
                              std::span<const Var> x_t, std::span<const Var> x_pr, double t, nn::RunContext& ctx,
                              NfeCounter& nfe) {
    check_streams(x_t, "classical_velocity");
    const int m = static_cast<int>(y_mask[0].rows());
    const int n = static_cast<int>(x_t[0].rows());
    const StreamVars z = m == 0 ? StreamVars{x_t[0], x_t[1], x_t[2], x_t[3], x_t[4], x_t[5]} : concat_streams(y_mask, x_t);
    Var folded = net.fold(tape, quantizer_encode(z, net.omega(tape)));
    Var cond = net.condition(tape, x_pr);
    if (m > 0) {
        const std::array<Var, 2> parts{tape.constant(Matrix::Zero(m, net.folded_dim())), cond};
        cond = ad::concat_rows(parts);
    }
    folded = ad::add(folded, cond);
    const Var v = net.velocity_at(tape, folded, tape.constant_scalar(t), m, ctx, nfe);
    return net.unfold(tape, ad::slice_rows(v, m, n));
}

// ---- losses -----------------------------------------------------------------------

LossSum cfm_loss(std::span<const Var> velocity, std::span<const Var> x1, std::span<const Var> x_pr, Var tau,
                 double tau_min) {
    check_streams(velocity, "cfm_loss");
    check_streams(x1, "cfm_loss");
    check_streams(x_pr, "cfm_loss");
    if (velocity[0].rows() != x1[0].rows() || x1[0].rows() != x_pr[0].rows() || velocity[0].cols() != x1[0].cols()) {
        throw std::invalid_argument("cfm_loss: shapes differ");
    }
    const double t = tau.scalar();
    // Realized tau may sit exactly on the clamp boundary; only values beyond it are rejected.
    if (!(t > 0.0) || t > 1.0 - tau_min + 1e-12) throw std::invalid_argument("cfm_loss: tau too close to 1");
    const Var inv = ad::reciprocal(one_minus(tau));
    std::array<Var, kStreams> parts;
    for (int s = 0; s < kStreams; ++s) {
        const Var target = ad::mul_scalar(ad::sub(x1[idx(s)], x_pr[idx(s)]), inv);
        parts[idx(s)] = ad::sum_squares(ad::sub(velocity[idx(s)], target));
    }
    const double count = static_cast<double>(kStreams) * static_cast<double>(x1[0].rows() * x1[0].cols());
    return {sum_vars(parts), count};
}

Var anchor_logits(Tape& tape, Var latent, const nn::EmbeddingTable& table, AnchorLogits kind) {
    const Var book = table.codebook(tape);
    const Var dot = ad::matmul_nt(latent, book);
    if (kind == AnchorLogits::dot) return dot;
    // -|z - e|^2 = 2 z.e - |e|^2 - |z|^2; the |z|^2 term is constant per row and cancels in softmax.
    const Var e_sq = ad::matmul_nt(tape.constant(Matrix::Ones(1, table.dim())), ad::mul(book, book));
    return ad::add_rowvec(ad::scale(dot, 2.0), ad::scale(e_sq, -1.0));
}

LossSum anchor_loss(std::span<const Var> z1_estimate, const CodeGrid& target, const nn::EmbeddingTable& table,
                    AnchorLogits kind) {
    check_streams(z1_estimate, "anchor_loss");
    const int n = static_cast<int>(z1_estimate[0].rows());
    if (target.frames() != n) throw std::invalid_argument("anchor_loss: target length differs");
    for (int s = 0; s < kStreams; ++s) {
        for (int i = 0; i < n; ++i) {
            const int c = target(s, i);
            if (c == table.mask_index()) throw std::invalid_argument("anchor_loss: target contains the MASK index");
            if (c < 0 || c >= table.vocab()) throw std::invalid_argument("anchor_loss: target code out of range");
        }
    }
    Tape& tape = *z1_estimate[0].tape();
    std::array<Var, kStreams> parts;
    for (int s = 0; s < kStreams; ++s) {
        parts[idx(s)] = ad::cross_entropy_sum(anchor_logits(tape, z1_estimate[idx(s)], table, kind), target.stream(s));
    }
    return {sum_vars(parts), static_cast<double>(kStreams * n)};
}

Var realize_tau(Tape& tape, const nn::TauParam& tau, std::span<const Var> z_pr_target) {
    if (tau.mode != nn::TauMode::predicted) return nn::realize_tau(tape, tau, std::nullopt);
    return nn::realize_tau(tape, tau, ad::mean_rows(fold_g(z_pr_target)));
}

StreamVars reconstruct_target(std::span<const Var> z_pr_target, std::span<const Var> velocity, Var tau) {
    check_streams(z_pr_target, "reconstruct_target");
    check_streams(velocity, "reconstruct_target");
    const Var step = one_minus(tau);
    StreamVars out;
    for (int s = 0; s < kStreams; ++s) {
        out[idx(s)] = ad::add(z_pr_target[idx(s)], ad::mul_scalar(velocity[idx(s)], step));
    }
    return out;
}

// ---- sampling ---------------------------------------------------------------------

CodeGrid discretize(const LatentGrid& latent, const nn::EmbeddingTable& table, AnchorLogits kind, double temperature,
                    std::uint64_t seed) {
    if (temperature < 0.0 || !std::isfinite(temperature)) throw std::invalid_argument("discretize: bad temperature");
    Tape tape(false);
    std::mt19937_64 rng(seed);
    const int n = latent.length();
    CodeGrid codes(n);
    for (int s = 0; s < kStreams; ++s) {
        const Matrix logits = anchor_logits(tape, tape.constant(latent.streams[idx(s)]), table, kind).value();
        for (int i = 0; i < n; ++i) {
            if (temperature == 0.0) {
                codes(s, i) = static_cast<int>(argmax_row(logits.row(i)));
                continue;
            }
            const ad::RowVector scaled = logits.row(i) / temperature;
            const Eigen::ArrayXd w = (scaled.array() - scaled.maxCoeff()).exp().transpose();
            std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
            codes(s, i) = pick(rng);
        }
    }
    return codes;
}

SampleResult one_step_sample(const VectorFieldEstimator& net, const nn::TauParam& tau, const nn::EmbeddingTable& table,
                             const CodeGrid& prompt, const LatentGrid& x_pr, const SampleOptions& opts) {
    Tape tape(false);
    nn::RunContext ctx;
    NfeCounter nfe;
    const int m = prompt.frames();
    const int n = x_pr.length();
    const StreamVars x = constant_streams(tape, x_pr);
    const StreamVars z_pr = build_input(tape, table, prompt, x, opts.sigma, opts.seed);
    const StreamVars z_target = m == 0 ? z_pr : slice_streams(z_pr, m, n);
    const Var t = realize_tau(tape, tau, z_target);
    const StreamVars v = one_step_velocity(tape, net, z_pr, t, m, ctx, nfe);
    const StreamVars z1 = reconstruct_target(z_target, v, t);

    SampleResult out;
    for (int s = 0; s < kStreams; ++s) out.latent.streams[idx(s)] = z1[idx(s)].value();
    out.codes = discretize(out.latent, table, net.config().anchor_logits, opts.temperature, opts.seed ^ 0x5bd1e995ull);
    out.nfe = nfe.calls;
    out.tau = t.scalar();
    return out;
}

Matrix euler_integrate(const Matrix& x0, int steps, const VelocityField& field) {
    if (steps < 1) throw std::invalid_argument("euler: steps must be >= 1");
    Matrix x = x0;
    const double h = 1.0 / steps;
    for (int k = 0; k < steps; ++k) x += h * field(x, k * h);
    return x;
}

SampleResult euler_sample_baseline(const VectorFieldEstimator& net, const nn::EmbeddingTable& table,
                                   const CodeGrid& prompt, const LatentGrid& x_pr, int steps, std::uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("euler_sample_baseline: steps must be >= 1");
    const int n = x_pr.length(), d = x_pr.dim();
    NfeCounter nfe;
    nn::RunContext ctx;

    LatentGrid x0;
    x0.streams = gaussian_streams(n, d, 1.0, seed);
    const VelocityField field = [&](const Matrix& x, double t) {
        Tape tape(false);
        const StreamVars y_mask = embed_masked_prompt(tape, table, prompt);
        const StreamVars xt = unfold_g(tape.constant(x), d);
        const StreamVars xp = constant_streams(tape, x_pr);
        const StreamVars v = classical_velocity(tape, net, y_mask, xt, xp, t, ctx, nfe);
        return Matrix(fold_g(v).value());
    };
    const Matrix x1 = euler_integrate(fold_g(x0), steps, field);

    SampleResult out;
    out.latent = unfold_g(x1, d);
    out.codes = discretize(out.latent, table, net.config().anchor_logits);
    out.nfe = nfe.calls;
    return out;
}

}  // namespace priorflow::vfe
