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

#include "priorflow/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace priorflow {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      rng_(seed),
      table_(store_, "embed", cfg.prior.vocab, cfg.vfe.embed_dim, rng_),
      tau_(nn::TauParam::create(store_, "tau", cfg.tau_mode, codec::kStreams * cfg.vfe.embed_dim, rng_, cfg.tau_fixed,
                                cfg.vfe.tau_min)),
      prior_(store_, cfg.prior, cfg.vfe.embed_dim, rng_),
      vfe_(store_, cfg.vfe, rng_) {}

double Model::tau_value() const {
    if (tau_.mode == nn::TauMode::predicted) return std::numeric_limits<double>::quiet_NaN();
    nn::Tape t(false);
    return nn::realize_tau(t, tau_, std::nullopt).scalar();
}

const char* parameter_group(const std::string& name) {
    if (name.rfind("prior.", 0) == 0) return "prior";
    if (name.rfind("vfe.", 0) == 0) return "vfe";
    if (name.rfind("tau.", 0) == 0) return "tau";
    return "embedding";
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointInfo& info) {
    Json manifest;
    manifest["format"] = "priorflow-checkpoint";
    manifest["version"] = 1;
    manifest["config"] = info.config.to_json();
    manifest["step"] = info.step;
    manifest["duration_trained"] = info.duration_trained;
    manifest["flow"] = vfe::to_string(model.config().vfe.flow);
    manifest["loss_summary"] = info.loss_summary;
    manifest["codec_checksum"] = info.codec_checksum;
    Json params = Json::array();
    std::size_t offset = 0;
    for (const auto& p : model.params().all()) {
        params.push_back({{"name", p.name}, {"group", parameter_group(p.name)}, {"rows", p.value.rows()},
                          {"cols", p.value.cols()}, {"offset", offset}});
        offset += static_cast<std::size_t>(p.value.size());
    }
    manifest["params"] = params;
    manifest["scalars"] = offset;
    const std::string text = manifest.dump();

    std::string blob(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    blob.append(reinterpret_cast<const char*>(&len), sizeof(len));
    blob += text;
    for (const auto& p : model.params().all()) {
        blob.append(reinterpret_cast<const char*>(p.value.data()), static_cast<std::size_t>(p.value.size()) * sizeof(double));
    }
    write_text_file_atomic(path, blob);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::string blob;
    try {
        blob = read_text_file(path);
    } catch (const std::exception& e) {
        throw CheckpointError(e.what());
    }
    const std::string where = path.string() + ": ";
    if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(where + "not a priorflow checkpoint");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, blob.data() + 8, sizeof(len));
    if (blob.size() < 16 + len) throw CheckpointError(where + "truncated manifest");
    Json manifest = Json::parse(blob.substr(16, len), nullptr, false);
    if (manifest.is_discarded() || manifest.value("format", "") != "priorflow-checkpoint") {
        throw CheckpointError(where + "unreadable manifest");
    }

    LoadedCheckpoint out;
    try {
        out.info.config = RunConfig::from_json(manifest.at("config"));
    } catch (const codec::ConfigError& e) {
        throw CheckpointError(where + "embedded config is invalid: " + e.what());
    }
    out.info.step = manifest.at("step").get<int>();
    out.info.duration_trained = manifest.at("duration_trained").get<bool>();
    out.info.loss_summary = manifest.at("loss_summary");
    out.info.codec_checksum = manifest.at("codec_checksum").get<std::uint64_t>();
    out.model = std::make_unique<Model>(out.info.config.resolved_model(), 0);

    const std::size_t scalars = manifest.at("scalars").get<std::size_t>();
    if (blob.size() != 16 + len + scalars * sizeof(double)) throw CheckpointError(where + "parameter data size mismatch");
    const char* data = blob.data() + 16 + len;
    auto& all = out.model->params().all();
    const Json& params = manifest.at("params");
    if (params.size() != all.size()) throw CheckpointError(where + "parameter count differs from the embedded config");
    std::size_t i = 0;
    for (auto& p : all) {
        const Json& e = params[i++];
        if (e.at("name").get<std::string>() != p.name || e.at("rows").get<Eigen::Index>() != p.value.rows() ||
            e.at("cols").get<Eigen::Index>() != p.value.cols()) {
            throw CheckpointError(where + "parameter " + p.name + " does not match the embedded config");
        }
        const std::size_t off = e.at("offset").get<std::size_t>();
        std::memcpy(p.value.data(), data + off * sizeof(double), static_cast<std::size_t>(p.value.size()) * sizeof(double));
    }
    return out;
}

}  // namespace priorflow
