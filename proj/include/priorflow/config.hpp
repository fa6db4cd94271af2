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

// Run configuration: one JSON document with the sections
//
//   data, model.prior, model.vfe, model (tau), train, noise, eval
//
// Every key is optional and defaults to the value below. Unknown keys and
// out-of-range values are errors; all problems are reported together.
// Command-line overrides ("train.lr=3e-4") are applied on top of the file.

#pragma once

#include "priorflow/netblocks.hpp"
#include "priorflow/priorgen.hpp"
#include "priorflow/toycodec.hpp"
#include "priorflow/vfe.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace priorflow {

using Json = nlohmann::json;

enum class PromptStrategy { first_segment, arbitrary_segment };

const char* to_string(PromptStrategy s);
PromptStrategy prompt_strategy_from_string(const std::string& s);

struct DataConfig {
    codec::GeneratorConfig gen;
    int count = 2000;       // utterances in the dataset file
    int eval_count = 200;   // the first eval_count records are held out
    std::uint64_t seed = 0;
};

struct ModelConfig {
    prior::PriorConfig prior;  // vocab and phonemes are taken from [data]
    vfe::VfeConfig vfe;
    nn::TauMode tau_mode = nn::TauMode::learned_global;
    double tau_fixed = 0.5;
};

struct TrainConfig {
    int batch_size = 16;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double weight_decay = 1e-4;
    int max_steps = 20000;
    int warmup_steps = 1000;
    double grad_clip = 1.0;
    PromptStrategy prompt_strategy = PromptStrategy::arbitrary_segment;
    double prompt_min_sec = 1.0;
    double prompt_max_sec = 3.0;
    double w_prior = 1.0;
    double w_dur = 1.0;
    double w_cfm = 1.0;
    double w_anchor = 1.0;
    std::uint64_t seed = 0;
    int checkpoint_every = 1000;
    int log_every = 50;
};

struct NoiseConfig {
    bool enabled = false;
    double probability = 0.8;
    double snr_min = 0.0;
    double snr_max = 15.0;
    int finetune_steps = 2000;  // steps taken by finetune-noise
};

struct EvalConfig {
    std::vector<double> prompt_seconds{1.0, 3.0, 5.0};
    std::vector<double> snr_db{std::numeric_limits<double>::infinity(), 12.0, 6.0, 0.0};
    double default_prompt_sec = 3.0;
    int max_utterances = 200;
    int euler_steps = 32;
    int bench_utterances = 20;
    std::uint64_t seed = 0;
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    NoiseConfig noise;
    EvalConfig eval;

    // Model config with vocab/phoneme counts filled in from [data].
    ModelConfig resolved_model() const;
    // Throws codec::ConfigError listing every problem.
    void validate() const;
    Json to_json() const;
    static RunConfig from_json(const Json& j);
};

// Applies "section.key=value" overrides to a JSON document. Values are parsed
// as JSON when possible and kept as strings otherwise.
void apply_overrides(Json& doc, const std::vector<std::string>& overrides);

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Reads a whole file; errors carry the path.
std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see partial output.
void write_text_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace priorflow
