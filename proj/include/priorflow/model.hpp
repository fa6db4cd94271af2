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

// The full model (shared embedding table, tau, prior generator, velocity
// estimator) and its checkpoint file.
//
// Checkpoint layout:
//
//   bytes 0..7    magic "PFCKPT01"
//   bytes 8..15   manifest length L (uint64, little endian)
//   next L bytes  JSON manifest
//   rest          raw little-endian doubles of every parameter, row-major,
//                 in manifest order
//
// The manifest records the resolved run config, step count, flow kind, a
// loss summary, the codec table checksum and, per parameter, its name,
// group (prior / vfe / embedding / tau), shape and element offset.

#pragma once

#include "priorflow/config.hpp"

#include <filesystem>
#include <memory>
#include <optional>

namespace priorflow {

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    const nn::EmbeddingTable& table() const { return table_; }
    const nn::TauParam& tau() const { return tau_; }
    const prior::PriorGenerator& prior() const { return prior_; }
    const vfe::VectorFieldEstimator& vfe() const { return vfe_; }

    // Current realized tau for the learned-global and fixed modes.
    double tau_value() const;

private:
    ModelConfig cfg_;
    nn::ParamStore store_;
    std::mt19937_64 rng_;
    nn::EmbeddingTable table_;
    nn::TauParam tau_;
    prior::PriorGenerator prior_;
    vfe::VectorFieldEstimator vfe_;
};

const char* parameter_group(const std::string& name);

struct CheckpointInfo {
    RunConfig config;
    int step = 0;
    bool duration_trained = false;
    Json loss_summary = Json::object();
    std::uint64_t codec_checksum = 0;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    CheckpointInfo info;
};

// Throws CheckpointError on a bad magic, truncated data, or a parameter set
// that does not match the embedded config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace priorflow
