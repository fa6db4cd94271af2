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

// Joint training of the prior generator and the vector field estimator.
//
// A batch is processed one example at a time on its own tape. Each example's
// loss sums are divided by the batch-wide element counts before backward, so
// the accumulated gradient equals the gradient of the batch-mean loss without
// padding. The training log is an append-only CSV:
//
//   step,total,prior,dur,cfm,anchor,grad_norm,tau,lr

#pragma once

#include "priorflow/dataset.hpp"
#include "priorflow/model.hpp"

#include <functional>
#include <optional>

namespace priorflow::train {

using codec::CodeGrid;
using nn::Matrix;

// ---- prompts ----------------------------------------------------------------------

struct PromptWindow {
    int start = 0;
    int length = 0;
};

// Draws the prompt clone for one utterance of `frames` frames. The duration
// is uniform on [min_sec, max_sec] and M = round(d * frame_rate), capped at the
// utterance length. Returns nullopt (skip) when even the minimum prompt does
// not fit.
std::optional<PromptWindow> make_prompt_window(int frames, PromptStrategy strategy, double min_sec, double max_sec,
                                               double frame_rate, std::uint64_t seed);

struct NoisyPrompt {
    CodeGrid prompt;
    bool noisy = false;
    double snr_db = std::numeric_limits<double>::infinity();
};

// With probability p the source contours get noise at SNR ~ U[snr_min, snr_max]
// and are re-encoded; the window is then cut from the re-encoded grid.
NoisyPrompt noise_augment_prompt(const codec::ToyCodec& codec, const codec::UtteranceSpec& source,
                                 const PromptWindow& window, const NoiseConfig& cfg, std::uint64_t seed);

// ---- losses -----------------------------------------------------------------------

struct TrainingExample {
    std::vector<int> phonemes;
    std::vector<int> durations;
    CodeGrid target;  // full utterance, always clean
    CodeGrid prompt;  // cloned window, possibly noisy
    std::uint64_t seed = 0;
};

struct LossWeights {
    double prior = 1.0;
    double dur = 1.0;
    double cfm = 1.0;
    double anchor = 1.0;

    static LossWeights from(const TrainConfig& t) { return {t.w_prior, t.w_dur, t.w_cfm, t.w_anchor}; }
};

// Batch means of each component and their weighted sum.
struct LossBreakdown {
    double prior = 0.0;
    double dur = 0.0;
    double cfm = 0.0;
    double anchor = 0.0;
    double total = 0.0;
    double tau = 0.0;  // mean realized tau (one-step) or mean path time (classical)
};

struct ExampleLosses {
    nn::LossSum prior;
    nn::LossSum dur;
    nn::LossSum cfm;
    nn::LossSum anchor;
    double tau = 0.0;
};

class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Forward pass of all four losses for one example.
ExampleLosses example_losses(nn::Tape& tape, const Model& model, const TrainingExample& ex, nn::RunContext& ctx);

// With accumulate_grads the parameter gradients receive d(total)/d(theta);
// they are not zeroed first. Throws NonFiniteLossError naming the component.
LossBreakdown total_loss(const Model& model, std::span<const TrainingExample> batch, const LossWeights& weights,
                         bool accumulate_grads, bool training = true);

// ---- optimization -----------------------------------------------------------------

class AdamW {
public:
    AdamW(nn::ParamStore& store, const TrainConfig& cfg);
    void step(double lr);
    int steps() const { return t_; }
    // Biases, norm gains/shifts and the tau scalar are not decayed.
    static bool decays(const std::string& name);

private:
    nn::ParamStore& store_;
    double beta1_, beta2_, eps_ = 1e-8, weight_decay_;
    int t_ = 0;
    std::vector<Matrix> m_, v_;
};

// Global L2 norm of all gradients.
double grad_norm(const nn::ParamStore& store);
// Rescales gradients so the global norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(nn::ParamStore& store, double max_norm);
// Linear warmup to the base rate, then constant.
double learning_rate(const TrainConfig& cfg, int step);

// ---- the loop ---------------------------------------------------------------------

struct StepLog {
    int step = 0;
    LossBreakdown loss;
    double grad_norm = 0.0;
    double tau = 0.0;
    double lr = 0.0;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // checkpoints and train_log.csv; empty keeps everything in memory
    std::optional<int> max_steps;   // defaults to train.max_steps
    std::optional<bool> noise;      // defaults to noise.enabled
    int start_step = 0;             // step count already in the model (fine-tuning)
    bool duration_trained = false;  // the duration predictor was trained before this run
    std::function<void(const StepLog&)> on_step;
    // Called before each step's loss; tests use it to corrupt parameters.
    std::function<void(int step, Model&)> before_step;
};

struct TrainResult {
    int steps = 0;          // optimizer steps taken in this run
    bool halted = false;    // a non-finite loss stopped the run
    std::string diagnostic;
    std::vector<StepLog> history;
    int skipped_examples = 0;
    std::filesystem::path last_checkpoint;
};

// Builds the training examples for one step.
std::vector<TrainingExample> make_batch(const RunConfig& cfg, const codec::ToyCodec& codec,
                                        std::span<const Record> records, std::span<const std::size_t> order,
                                        std::size_t& cursor, bool noise, std::uint64_t step_seed, int& skipped);

TrainResult train_loop(const RunConfig& cfg, const Dataset& data, Model& model, const TrainOptions& opts = {});

Json loss_summary(const std::vector<StepLog>& history);

}  // namespace priorflow::train
