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

// Evaluation: phoneme error rate through the codec oracle, prosody category
// accuracy and contour RMSE, speaker agreement, NFE/RTF benchmarking, the
// prompt-length / SNR / ablation protocols, and report files.
//
// Every evaluation pair takes its prompt from a different utterance of the
// same synthetic speaker. Prosody categories split utterance-mean pitch (or
// energy) at mean +- 0.5 std of the evaluation corpus into low / normal /
// high. Contour RMSE compares dequantized per-frame contours after the
// generated contour is linearly resampled to the prompt's frame count.

#pragma once

#include "priorflow/dataset.hpp"
#include "priorflow/model.hpp"

#include <map>
#include <memory>

namespace priorflow::eval {

using codec::CodeGrid;

// ---- metrics ----------------------------------------------------------------------

int edit_distance(std::span<const int> a, std::span<const int> b);
// Throws std::invalid_argument on an empty reference.
double wer(std::span<const int> reference, std::span<const int> hypothesis);

// Dequantized per-frame contours from the prosody stream. Frames whose
// prosody code has no bucket pair are left out.
struct Contours {
    std::vector<double> pitch;
    std::vector<double> energy;
};
Contours prosody_contours(const codec::ToyCodec& codec, const CodeGrid& codes);

struct ProsodyThresholds {
    double pitch_low = 0.0, pitch_high = 0.0;
    double energy_low = 0.0, energy_high = 0.0;
};
// mean +- 0.5 std of utterance-mean contours over the corpus.
ProsodyThresholds corpus_thresholds(const codec::ToyCodec& codec, std::span<const Record> corpus);

// -1 low, 0 normal, 1 high.
int category(double utterance_mean, double low, double high);

// Linear resampling of a contour to `frames` points (endpoints kept).
std::vector<double> resample_linear(std::span<const double> x, int frames);

struct ProsodyMetrics {
    double f0_accuracy = 0.0;
    double f0_rmse = 0.0;
    double energy_accuracy = 0.0;
    double energy_rmse = 0.0;
};
// Metrics of one (generated, prompt) pair; accuracies are 0 or 1. Throws on
// empty contours.
ProsodyMetrics prosody_metrics(const Contours& generated, const Contours& prompt, const ProsodyThresholds& th);

// Speaker whose detail tables explain most detail tokens of the grid, or -1.
int infer_speaker(const codec::ToyCodec& codec, const CodeGrid& codes);

// Optional external judges (naturalness, similarity) plug in here.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::string name() const = 0;
    virtual double score(const CodeGrid& generated, const CodeGrid& prompt) = 0;
};

// ---- synthesis --------------------------------------------------------------------

struct SynthesisRequest {
    std::vector<int> phonemes;
    std::optional<std::vector<int>> durations;  // predicted when absent
    CodeGrid prompt;
    int steps = 1;  // 1: one-step sampler; classical checkpoints integrate with this many Euler steps
    std::uint64_t seed = 0;
};

struct Synthesis {
    CodeGrid codes;
    int nfe = 0;
    double tau = 0.0;
    bool durations_predicted = false;
    bool untrained_duration_predictor = false;
    double prior_seconds = 0.0;    // wall time of the prior generator
    double sampler_seconds = 0.0;  // wall time of the flow sampler
};

// Routes to the one-step sampler or the Euler baseline by the model's flow
// kind. Throws when steps != 1 for a one-step model.
Synthesis synthesize(const Model& model, bool duration_trained, const SynthesisRequest& req);

// ---- benchmarking -----------------------------------------------------------------

struct LatencyResult {
    int nfe = 0;                 // identical for every sample
    double rtf_median = 0.0;     // sampler wall time / audio seconds
    double rtf_iqr = 0.0;
    double e2e_rtf_median = 0.0; // prior + sampler
    int samples = 0;
    std::string hardware_note;
};

// Times synthesize() serially over the requests; the first call is a
// warm-up and is not counted. Throws on an empty set.
LatencyResult latency_bench(const Model& model, bool duration_trained, std::span<const SynthesisRequest> requests,
                            double frame_rate, const std::string& hardware_note = "");

double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);

// ---- protocols --------------------------------------------------------------------

enum class Protocol { sweep, snr, ablation };
const char* to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct EvalPair {
    std::size_t target = 0;  // indices into the evaluation records
    std::size_t prompt = 0;
};

// Deterministic same-speaker, different-utterance pairing. Targets without
// another utterance of their speaker are dropped.
std::vector<EvalPair> make_pairs(std::span<const Record> records, int max_pairs, std::uint64_t seed);

struct SampleScores {
    std::string target_id;
    std::string prompt_id;
    double wer = 0.0;
    ProsodyMetrics prosody;
    bool speaker_match = false;
    int nfe = 0;
    std::map<std::string, double> extra;
};

struct MetricsReport {
    std::string label;      // checkpoint label (ablation) or "model"
    std::string condition;  // e.g. "prompt=3s" or "snr=6dB"
    double prompt_sec = 0.0;
    double snr_db = 0.0;
    double wer = 0.0;
    double f0_accuracy = 0.0;
    double f0_rmse = 0.0;
    double energy_accuracy = 0.0;
    double energy_rmse = 0.0;
    double speaker_agreement = 0.0;
    int nfe = 0;
    int samples = 0;
    std::string config_fingerprint;
    std::map<std::string, double> extra;
    std::vector<SampleScores> per_sample;
};

struct EvalModel {
    std::string label;
    const Model* model = nullptr;
    bool duration_trained = false;
    RunConfig config;
};

struct SuiteOptions {
    int steps = 1;  // sampler steps (Euler steps for classical checkpoints)
    std::vector<std::shared_ptr<Scorer>> scorers;
};

// Evaluates one condition. The prompt window is a seeded random segment of
// the prompt utterance of round(prompt_sec * frame_rate) frames, capped at its
// length; noise (finite snr_db) is applied to the prompt utterance's
// contours before encoding.
MetricsReport evaluate_condition(const EvalModel& m, const Dataset& data, const EvalConfig& cfg, double prompt_sec,
                                 double snr_db, const SuiteOptions& opts = {});

// sweep: eval.prompt_seconds at clean prompts; snr: eval.snr_db at the default
// prompt length; ablation: every model at every eval.prompt_seconds entry,
// grouped by prompt length. Throws when a model's codec or data config differs
// from the dataset.
std::vector<MetricsReport> run_suite(std::span<const EvalModel> models, const Dataset& data, const EvalConfig& cfg,
                                     Protocol protocol, const SuiteOptions& opts = {});

// ---- reports ----------------------------------------------------------------------

std::string config_fingerprint(const RunConfig& cfg);
// One row per (label, condition, metric).
std::string reports_csv(std::span<const MetricsReport> reports);
Json reports_json(std::span<const MetricsReport> reports, const Json& run_config);
// Static box plots (SVG) of per-sample WER and F0 RMSE per condition.
std::string boxplot_svg(std::span<const MetricsReport> reports, const std::string& metric);
// Writes metrics.csv, metrics.json and, with plots, one SVG per metric.
void write_reports(const std::filesystem::path& dir, std::span<const MetricsReport> reports, const Json& run_config,
                   bool plots);

}  // namespace priorflow::eval
