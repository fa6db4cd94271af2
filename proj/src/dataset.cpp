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

#include "priorflow/dataset.hpp"

#include <cstdio>
#include <sstream>

namespace priorflow {

std::span<const Record> Dataset::eval_split() const {
    const auto n = std::min<std::size_t>(records.size(), static_cast<std::size_t>(config.eval_count));
    return std::span<const Record>(records).first(n);
}

std::span<const Record> Dataset::train_split() const {
    const auto n = std::min<std::size_t>(records.size(), static_cast<std::size_t>(config.eval_count));
    return std::span<const Record>(records).subspan(n);
}

std::uint64_t record_seed(std::uint64_t dataset_seed, std::size_t index) {
    // splitmix64 of the pair
    std::uint64_t z = dataset_seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(index) + 0x632be59bd9b4e019ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string encode_codes_hex(const codec::CodeGrid& codes) {
    std::string out;
    out.reserve(codes.data().size() * 3);
    char buf[4];
    for (int c : codes.data()) {
        std::snprintf(buf, sizeof(buf), "%03x", static_cast<unsigned>(c));
        out.append(buf, 3);
    }
    return out;
}

codec::CodeGrid decode_codes_hex(const std::string& hex, int frames) {
    if (hex.size() != static_cast<std::size_t>(codec::kStreams * frames * 3)) {
        throw DatasetError("code grid has " + std::to_string(hex.size()) + " hex digits, expected " +
                           std::to_string(codec::kStreams * frames * 3));
    }
    codec::CodeGrid g(frames);
    std::size_t pos = 0;
    for (int s = 0; s < codec::kStreams; ++s) {
        for (int n = 0; n < frames; ++n, pos += 3) {
            std::size_t used = 0;
            const int v = std::stoi(hex.substr(pos, 3), &used, 16);
            if (used != 3) throw DatasetError("bad hex digits in code grid");
            g(s, n) = v;
        }
    }
    return g;
}

Dataset generate_dataset(const RunConfig& cfg) {
    cfg.validate();
    const codec::ToyCodec codec(cfg.data.gen);
    Dataset ds;
    ds.config = cfg.data;
    ds.run_config = cfg.to_json();
    ds.codec_checksum = codec.checksum();
    ds.records.reserve(static_cast<std::size_t>(cfg.data.count));
    for (int i = 0; i < cfg.data.count; ++i) {
        Record r;
        char id[32];
        std::snprintf(id, sizeof(id), "utt%06d", i);
        r.id = id;
        r.spec = codec::synth_utterance(record_seed(cfg.data.seed, static_cast<std::size_t>(i)), cfg.data.gen);
        auto [codes, timbre] = codec.encode(r.spec);
        r.codes = std::move(codes);
        r.timbre = std::move(timbre);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

std::string serialize_dataset(const Dataset& ds) {
    std::string body;
    for (const auto& r : ds.records) {
        Json j = Json::object();
        j["id"] = r.id;
        j["phonemes"] = r.spec.phonemes;
        j["durations"] = r.spec.durations;
        j["speaker"] = r.spec.speaker;
        j["codes"] = encode_codes_hex(r.codes);
        j["timbre"] = r.timbre.values;
        j["pitch"] = r.spec.pitch;
        j["energy"] = r.spec.energy;
        body += j.dump();
        body += '\n';
    }
    Json manifest = Json::object();
    manifest["format"] = "priorflow-dataset";
    manifest["version"] = 1;
    manifest["count"] = ds.records.size();
    manifest["eval_count"] = ds.config.eval_count;
    manifest["seed"] = ds.config.seed;
    manifest["codec_checksum"] = ds.codec_checksum;
    manifest["records_checksum"] = fnv1a64(body);
    manifest["config"] = ds.run_config;
    return manifest.dump() + "\n" + body;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    try {
        write_text_file_atomic(path, serialize_dataset(ds));
    } catch (const std::exception& e) {
        throw DatasetError(path.string() + ": " + e.what());
    }
}

Dataset parse_dataset(const std::string& text, const std::string& where) {
    const auto first_nl = text.find('\n');
    if (first_nl == std::string::npos) throw DatasetError(where + ": missing manifest line");
    const Json manifest = Json::parse(text.substr(0, first_nl), nullptr, false);
    if (manifest.is_discarded() || manifest.value("format", "") != "priorflow-dataset") {
        throw DatasetError(where + ": not a priorflow dataset");
    }
    const std::string body = text.substr(first_nl + 1);
    std::uint64_t records_checksum = 0;
    Dataset ds;
    RunConfig cfg;
    try {
        records_checksum = manifest.at("records_checksum").get<std::uint64_t>();
        ds.run_config = manifest.at("config");
        ds.codec_checksum = manifest.at("codec_checksum").get<std::uint64_t>();
        ds.config.eval_count = manifest.at("eval_count").get<int>();
        ds.config.seed = manifest.at("seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
        throw DatasetError(where + ": malformed manifest: " + e.what());
    }
    if (fnv1a64(body) != records_checksum) {
        throw DatasetError(where + ": records checksum mismatch");
    }

    try {
        cfg = RunConfig::from_json(ds.run_config);
    } catch (const codec::ConfigError& e) {
        throw DatasetError(where + ": embedded config is invalid: " + e.what());
    }
    const int eval_count = ds.config.eval_count;
    const std::uint64_t seed = ds.config.seed;
    ds.config = cfg.data;
    ds.config.eval_count = eval_count;
    ds.config.seed = seed;
    const codec::ToyCodec codec(cfg.data.gen);
    if (ds.codec_checksum != codec.checksum()) throw DatasetError(where + ": codec checksum mismatch");

    std::istringstream lines(body);
    std::string line;
    int lineno = 1;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string at = where + ":" + std::to_string(lineno) + ": ";
        try {
            const Json j = Json::parse(line);
            Record r;
            r.id = j.at("id").get<std::string>();
            r.spec.phonemes = j.at("phonemes").get<std::vector<int>>();
            r.spec.durations = j.at("durations").get<std::vector<int>>();
            r.spec.speaker = j.at("speaker").get<int>();
            r.spec.pitch = j.at("pitch").get<std::vector<double>>();
            r.spec.energy = j.at("energy").get<std::vector<double>>();
            r.spec.validate(cfg.data.gen);
            r.codes = decode_codes_hex(j.at("codes").get<std::string>(), r.spec.frames());
            r.timbre.values = j.at("timbre").get<std::vector<double>>();
            const auto [codes, timbre] = codec.encode(r.spec);
            if (codes != r.codes || timbre != r.timbre) throw DatasetError("stored codes disagree with the codec");
            ds.records.push_back(std::move(r));
        } catch (const DatasetError& e) {
            throw DatasetError(at + e.what());
        } catch (const std::exception& e) {
            throw DatasetError(at + e.what());
        }
    }
    if (ds.records.size() != manifest.at("count").get<std::size_t>()) throw DatasetError(where + ": record count mismatch");
    return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::exception& e) {
        throw DatasetError(e.what());
    }
    return parse_dataset(text, path.string());
}

}  // namespace priorflow
