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

// Command implementations behind the priorflow executable. Each command
// resolves its RunConfig completely (file, then --set overrides, then --seed)
// before doing any work.
//
//   datagen         write a dataset file
//   train           joint training from scratch
//   finetune-noise  noise-aware fine-tuning of a checkpoint
//   sample          synthesize one utterance
//   eval            run an evaluation protocol and write reports
//   bench           NFE / RTF of the one-step sampler against the Euler baseline

#pragma once

#include "priorflow/evalbench.hpp"
#include "priorflow/trainer.hpp"

#include <iosfwd>

namespace priorflow::cli {

struct CommonArgs {
    std::filesystem::path config;  // optional except for train
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

// Parses "3 5 7" or "3,5,7".
std::vector<int> parse_int_list(const std::string& text);

// Reads the dataset at `path`, or generates it from the config when the path
// is empty. Throws when the file's [data] section differs from the config's.
Dataset load_or_generate(const std::filesystem::path& path, const RunConfig& cfg);

struct DatagenArgs {
    CommonArgs common;
    std::filesystem::path out;
};
Dataset cmd_datagen(const DatagenArgs& args);

struct TrainArgs {
    CommonArgs common;
    std::filesystem::path data;
    std::filesystem::path out_dir;
    std::optional<PromptStrategy> prompt_strategy;
    std::optional<int> steps;
};
train::TrainResult cmd_train(const TrainArgs& args, std::ostream& log);

struct FinetuneArgs {
    CommonArgs common;  // overrides apply on top of the checkpoint's config
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::filesystem::path out_dir;
    std::optional<int> steps;
};
train::TrainResult cmd_finetune_noise(const FinetuneArgs& args, std::ostream& log);

struct SampleArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::vector<int> phonemes;
    std::optional<std::vector<int>> durations;
    std::string prompt_id;
    double prompt_sec = 3.0;
    int steps = 1;
    std::uint64_t seed = 0;
};
Json cmd_sample(const SampleArgs& args);

struct EvalArgs {
    CommonArgs common;  // eval.* overrides; --seed sets eval.seed
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path data;
    eval::Protocol protocol = eval::Protocol::sweep;
    std::filesystem::path out_dir;
    bool plots = false;
    int steps = 1;
};
std::vector<eval::MetricsReport> cmd_eval(const EvalArgs& args);

struct BenchArgs {
    CommonArgs common;
    std::filesystem::path checkpoint;           // one-step model
    std::filesystem::path baseline;             // classical model; optional
    std::filesystem::path data;
    std::optional<int> steps;                   // Euler steps, defaults to eval.euler_steps
    std::filesystem::path out;                  // JSON; optional
};
Json cmd_bench(const BenchArgs& args);

}  // namespace priorflow::cli
