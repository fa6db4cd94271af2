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

#include "priorflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

namespace priorflow::train {

namespace {

using nn::LossSum;
using nn::Matrix;
using nn::Tape;
using nn::Var;
using vfe::StreamVars;

constexpr std::size_t idx(int s) { return static_cast<std::size_t>(s); }

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

StreamVars table_constants(Tape& tape, const nn::EmbeddingTable& table, const CodeGrid& codes) {
    Tape scratch(false);
    StreamVars out;
    for (int s = 0; s < codec::kStreams; ++s) out[idx(s)] = tape.constant(table.lookup(scratch, codes.stream(s)).value());
    return out;
}

StreamVars detach(Tape& tape, std::span<const Var> x) {
    StreamVars out;
    for (int s = 0; s < codec::kStreams; ++s) out[idx(s)] = tape.constant(x[idx(s)].value());
    return out;
}

Var sum_vars(std::span<const Var> parts) {
    Var acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = ad::add(acc, parts[i]);
    return acc;
}

StreamVars prior_latents(Tape& tape, const Model& model, const prior::PriorForward& fwd) {
    StreamVars x;
    if (model.prior().config().continuous_latents) {
        for (int s = 0; s < codec::kStreams; ++s) x[idx(s)] = model.prior().project_latent(tape, fwd, s);
        return x;
    }
    std::array<Matrix, codec::kStreams> logits;
    for (int s = 0; s < codec::kStreams; ++s) logits[idx(s)] = fwd.logits[idx(s)].value();
    const CodeGrid codes = prior::argmax_codes(logits);
    for (int s = 0; s < codec::kStreams; ++s) x[idx(s)] = model.table().lookup(tape, codes.stream(s));
    return x;
}

struct Counts {
    double prior, dur, cfm, anchor;
};

Counts example_counts(const TrainingExample& ex, int dim) {
    const double n = ex.target.frames();
    return {codec::kStreams * n, static_cast<double>(ex.phonemes.size()), codec::kStreams * n * dim, codec::kStreams * n};
}

void check_finite(double v, const char* component, const TrainingExample& ex) {
    if (!std::isfinite(v)) {
        throw NonFiniteLossError(std::string("non-finite ") + component + " loss (example seed " +
                                 std::to_string(ex.seed) + ")");
    }
}

}  // namespace

std::optional<PromptWindow> make_prompt_window(int frames, PromptStrategy strategy, double min_sec, double max_sec,
                                               double frame_rate, std::uint64_t seed) {
    if (!(min_sec > 0.0) || max_sec < min_sec || !(frame_rate > 0.0)) {
        throw std::invalid_argument("make_prompt_window: bad duration range or frame rate");
    }
    const int min_len = std::max(1, static_cast<int>(std::lround(min_sec * frame_rate)));
    if (frames < min_len) return std::nullopt;
    std::mt19937_64 rng(seed);
    const double d = min_sec + (max_sec - min_sec) * uniform01(rng);
    PromptWindow w;
    w.length = std::clamp(static_cast<int>(std::lround(d * frame_rate)), min_len, frames);
    if (strategy == PromptStrategy::arbitrary_segment) {
        w.start = std::uniform_int_distribution<int>(0, frames - w.length)(rng);
    }
    return w;
}

NoisyPrompt noise_augment_prompt(const codec::ToyCodec& codec, const codec::UtteranceSpec& source,
                                 const PromptWindow& window, const NoiseConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    NoisyPrompt out;
    const bool noisy = uniform01(rng) < cfg.probability;
    if (!noisy) {
        out.prompt = codec.encode(source).first.slice(window.start, window.length);
        return out;
    }
    out.noisy = true;
    out.snr_db = cfg.snr_min + (cfg.snr_max - cfg.snr_min) * uniform01(rng);
    const codec::UtteranceSpec corrupted = codec::add_noise(source, out.snr_db, rng());
    out.prompt = codec.encode(corrupted).first.slice(window.start, window.length);
    return out;
}

ExampleLosses example_losses(Tape& tape, const Model& model, const TrainingExample& ex, nn::RunContext& ctx) {
    const auto& vcfg = model.config().vfe;
    const auto& table = model.table();
    const int n = ex.target.frames();
    const int m = ex.prompt.frames();

    ExampleLosses out;
    const prior::PriorForward fwd = model.prior().forward(tape, ex.phonemes, std::span<const int>(ex.durations), ctx);
    out.prior = prior::prior_loss(fwd, ex.target);
    const auto np = static_cast<double>(ex.durations.size());
    out.dur = {ad::scale(nn::duration_loss(fwd.log_durations, ex.durations), np), np};

    const StreamVars x_pr = prior_latents(tape, model, fwd);
    const StreamVars x1 = table_constants(tape, table, ex.target);
    vfe::NfeCounter nfe;

    if (vcfg.flow == vfe::FlowKind::one_step) {
        const StreamVars z_pr = vfe::build_input(tape, table, ex.prompt, x_pr, vcfg.train_sigma, ex.seed ^ 0xa5a5a5a5ull);
        const StreamVars z_target = m == 0 ? z_pr : vfe::slice_streams(z_pr, m, n);
        const Var tau = vfe::realize_tau(tape, model.tau(), z_target);
        const StreamVars v = vfe::one_step_velocity(tape, model.vfe(), z_pr, tau, m, ctx, nfe);
        // The regression target is held fixed; the table is shaped by the anchor loss.
        out.cfm = vfe::cfm_loss(v, x1, detach(tape, z_target), tau, vcfg.tau_min);
        out.anchor = vfe::anchor_loss(vfe::reconstruct_target(z_target, v, tau), ex.target, table, vcfg.anchor_logits);
        out.tau = tau.scalar();
        return out;
    }

    // Classical path: x_t = t x1 + (1 - t) x0 with Gaussian x0, target x1 - x0.
    std::mt19937_64 rng(ex.seed ^ 0x3c6ef372ull);
    const double t = std::min(uniform01(rng), 1.0 - vcfg.tau_min);
    const auto x0 = vfe::gaussian_streams(n, table.dim(), 1.0, rng());
    StreamVars xt, target;
    for (int s = 0; s < codec::kStreams; ++s) {
        const Matrix& x1v = x1[idx(s)].value();
        xt[idx(s)] = tape.constant(t * x1v + (1.0 - t) * x0[idx(s)]);
        target[idx(s)] = tape.constant(x1v - x0[idx(s)]);
    }
    const StreamVars y_mask = vfe::embed_masked_prompt(tape, table, ex.prompt);
    const StreamVars v = vfe::classical_velocity(tape, model.vfe(), y_mask, xt, x_pr, t, ctx, nfe);
    std::array<Var, codec::kStreams> sq;
    for (int s = 0; s < codec::kStreams; ++s) sq[idx(s)] = ad::sum_squares(ad::sub(v[idx(s)], target[idx(s)]));
    out.cfm = {sum_vars(sq), static_cast<double>(codec::kStreams) * n * table.dim()};
    StreamVars z1;
    for (int s = 0; s < codec::kStreams; ++s) z1[idx(s)] = ad::add(xt[idx(s)], ad::scale(v[idx(s)], 1.0 - t));
    out.anchor = vfe::anchor_loss(z1, ex.target, table, vcfg.anchor_logits);
    out.tau = t;
    return out;
}

LossBreakdown total_loss(const Model& model, std::span<const TrainingExample> batch, const LossWeights& w,
                         bool accumulate_grads, bool training) {
    if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
    const int dim = model.table().dim();
    Counts total{0, 0, 0, 0};
    for (const auto& ex : batch) {
        const Counts c = example_counts(ex, dim);
        total.prior += c.prior;
        total.dur += c.dur;
        total.cfm += c.cfm;
        total.anchor += c.anchor;
    }

    LossBreakdown out;
    for (const auto& ex : batch) {
        Tape tape(accumulate_grads);
        nn::RunContext ctx{training, ex.seed};
        const ExampleLosses l = example_losses(tape, model, ex, ctx);
        const double prior = l.prior.total.scalar(), dur = l.dur.total.scalar();
        const double cfm = l.cfm.total.scalar(), anchor = l.anchor.total.scalar();
        check_finite(prior, "prior", ex);
        check_finite(dur, "duration", ex);
        check_finite(cfm, "cfm", ex);
        check_finite(anchor, "anchor", ex);
        out.prior += prior / total.prior;
        out.dur += dur / total.dur;
        out.cfm += cfm / total.cfm;
        out.anchor += anchor / total.anchor;
        out.tau += l.tau / static_cast<double>(batch.size());
        if (accumulate_grads) {
            const std::array<Var, 4> parts{ad::scale(l.prior.total, w.prior / total.prior),
                                           ad::scale(l.dur.total, w.dur / total.dur),
                                           ad::scale(l.cfm.total, w.cfm / total.cfm),
                                           ad::scale(l.anchor.total, w.anchor / total.anchor)};
            tape.backward(sum_vars(parts));
        }
    }
    out.total = w.prior * out.prior + w.dur * out.dur + w.cfm * out.cfm + w.anchor * out.anchor;
    if (!std::isfinite(out.total)) throw NonFiniteLossError("non-finite total loss");
    return out;
}

// ---- optimization -----------------------------------------------------------------

AdamW::AdamW(nn::ParamStore& store, const TrainConfig& cfg)
    : store_(store), beta1_(cfg.beta1), beta2_(cfg.beta2), weight_decay_(cfg.weight_decay) {
    for (const auto& p : store_.all()) {
        m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
}

bool AdamW::decays(const std::string& name) {
    auto ends_with = [&](std::string_view suffix) {
        return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return !(ends_with(".b") || ends_with(".gamma") || ends_with(".beta") || ends_with(".raw"));
}

void AdamW::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    std::size_t i = 0;
    for (auto& p : store_.all()) {
        Matrix& m = m_[i];
        Matrix& v = v_[i];
        ++i;
        if (p.grad.size() != p.value.size()) continue;
        m = beta1_ * m + (1.0 - beta1_) * p.grad;
        v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        if (weight_decay_ > 0.0 && decays(p.name)) p.value *= 1.0 - lr * weight_decay_;
        p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
}

double grad_norm(const nn::ParamStore& store) {
    double sq = 0.0;
    for (const auto& p : store.all()) {
        if (p.grad.size() == p.value.size()) sq += p.grad.squaredNorm();
    }
    return std::sqrt(sq);
}

double clip_grad_norm(nn::ParamStore& store, double max_norm) {
    const double norm = grad_norm(store);
    if (norm > max_norm && std::isfinite(norm)) {
        const double k = max_norm / norm;
        for (auto& p : store.all()) {
            if (p.grad.size() == p.value.size()) p.grad *= k;
        }
    }
    return norm;
}

double learning_rate(const TrainConfig& cfg, int step) {
    if (cfg.warmup_steps <= 0) return cfg.lr;
    return cfg.lr * std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
}

// ---- the loop ---------------------------------------------------------------------

std::vector<TrainingExample> make_batch(const RunConfig& cfg, const codec::ToyCodec& codec,
                                        std::span<const Record> records, std::span<const std::size_t> order,
                                        std::size_t& cursor, bool noise, std::uint64_t step_seed, int& skipped) {
    std::vector<TrainingExample> batch;
    std::size_t attempts = 0;
    while (static_cast<int>(batch.size()) < cfg.train.batch_size) {
        if (attempts++ > order.size() + static_cast<std::size_t>(cfg.train.batch_size)) {
            throw std::runtime_error("no training utterance is long enough for the minimum prompt");
        }
        const Record& r = records[order[cursor % order.size()]];
        ++cursor;
        const std::uint64_t seed = record_seed(step_seed, batch.size() + attempts * 1000003ull);
        const auto window = make_prompt_window(r.codes.frames(), cfg.train.prompt_strategy, cfg.train.prompt_min_sec,
                                               cfg.train.prompt_max_sec, cfg.data.gen.frame_rate, seed);
        if (!window) {
            ++skipped;
            continue;
        }
        TrainingExample ex;
        ex.phonemes = r.spec.phonemes;
        ex.durations = r.spec.durations;
        ex.target = r.codes;
        ex.seed = seed;
        if (noise) {
            ex.prompt = noise_augment_prompt(codec, r.spec, *window, cfg.noise, seed ^ 0x9e3779b9ull).prompt;
        } else {
            ex.prompt = r.codes.slice(window->start, window->length);
        }
        batch.push_back(std::move(ex));
    }
    return batch;
}

Json loss_summary(const std::vector<StepLog>& history) {
    Json j = Json::object();
    j["steps"] = history.size();
    if (history.empty()) return j;
    auto to_json = [](const LossBreakdown& l) {
        return Json{{"total", l.total}, {"prior", l.prior}, {"dur", l.dur}, {"cfm", l.cfm}, {"anchor", l.anchor}};
    };
    j["final"] = to_json(history.back().loss);
    const std::size_t k = std::min<std::size_t>(100, history.size());
    LossBreakdown mean;
    for (std::size_t i = history.size() - k; i < history.size(); ++i) {
        const auto& l = history[i].loss;
        mean.total += l.total / k;
        mean.prior += l.prior / k;
        mean.dur += l.dur / k;
        mean.cfm += l.cfm / k;
        mean.anchor += l.anchor / k;
    }
    j["mean_last_100"] = to_json(mean);
    j["tau"] = history.back().tau;
    return j;
}

TrainResult train_loop(const RunConfig& cfg, const Dataset& data, Model& model, const TrainOptions& opts) {
    cfg.validate();
    const auto train_set = data.train_split();
    if (train_set.empty()) throw std::invalid_argument("train_loop: empty training split");
    const codec::ToyCodec codec(cfg.data.gen);
    if (codec.checksum() != data.codec_checksum) throw std::invalid_argument("train_loop: dataset was made by another codec");

    const int max_steps = opts.max_steps.value_or(cfg.train.max_steps);
    const bool noise = opts.noise.value_or(cfg.noise.enabled);
    const LossWeights weights = LossWeights::from(cfg.train);

    std::ofstream log;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        const auto log_path = opts.out_dir / "train_log.csv";
        const bool fresh = !std::filesystem::exists(log_path);
        log.open(log_path, std::ios::app);
        if (!log) throw std::runtime_error(log_path.string() + ": cannot open training log");
        if (fresh) log << "step,total,prior,dur,cfm,anchor,grad_norm,tau,lr\n";
    }

    std::mt19937_64 rng(record_seed(cfg.train.seed, 0x7261696eull));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    AdamW opt(model.params(), cfg.train);
    TrainResult result;
    std::vector<Matrix> good;  // parameters after the last successful step

    auto snapshot = [&]() {
        good.clear();
        for (const auto& p : model.params().all()) good.push_back(p.value);
    };
    auto save = [&](const std::string& name, int step) {
        if (opts.out_dir.empty()) return;
        CheckpointInfo info;
        info.config = cfg;
        info.step = step;
        info.duration_trained = opts.duration_trained || (weights.dur > 0.0 && step > opts.start_step);
        info.loss_summary = loss_summary(result.history);
        info.codec_checksum = codec.checksum();
        const auto path = opts.out_dir / name;
        save_checkpoint(path, model, info);
        result.last_checkpoint = path;
    };
    snapshot();

    for (int k = 0; k < max_steps; ++k) {
        const int step = opts.start_step + k;
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const auto batch = make_batch(cfg, codec, train_set, order, cursor, noise, record_seed(cfg.train.seed, step + 1),
                                      result.skipped_examples);
        if (opts.before_step) opts.before_step(step, model);

        StepLog entry;
        entry.step = step + 1;
        entry.lr = learning_rate(cfg.train, k);
        model.params().zero_grad();
        try {
            entry.loss = total_loss(model, batch, weights, true);
            entry.grad_norm = clip_grad_norm(model.params(), cfg.train.grad_clip);
            if (!std::isfinite(entry.grad_norm)) throw NonFiniteLossError("non-finite gradient norm");
        } catch (const NonFiniteLossError& e) {
            std::size_t i = 0;
            for (auto& p : model.params().all()) p.value = good[i++];
            result.halted = true;
            result.diagnostic = "step " + std::to_string(step + 1) + ": " + e.what();
            save("last_good.ckpt", step);
            break;
        }
        opt.step(entry.lr);
        entry.tau = entry.loss.tau;
        snapshot();
        result.steps = k + 1;
        result.history.push_back(entry);
        if (opts.on_step) opts.on_step(entry);
        if (log.is_open() && (entry.step % cfg.train.log_every == 0 || k + 1 == max_steps)) {
            char line[256];
            std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", entry.step,
                          entry.loss.total, entry.loss.prior, entry.loss.dur, entry.loss.cfm, entry.loss.anchor,
                          entry.grad_norm, entry.tau, entry.lr);
            log << line << std::flush;
        }
        if (entry.step % cfg.train.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "step_%07d.ckpt", entry.step);
            save(name, entry.step);
        }
    }
    if (!result.halted) save("final.ckpt", opts.start_step + result.steps);
    return result;
}

}  // namespace priorflow::train
