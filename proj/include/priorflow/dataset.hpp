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

// Synthetic dataset files (JSON Lines).
//
// Line 1 is the manifest:
//   {"format":"priorflow-dataset","version":1,"count":N,"eval_count":E,
//    "seed":S,"codec_checksum":C,"records_checksum":R,"config":{...}}
// Every following line is one record, fields in this order:
//   id, phonemes, durations, speaker, codes, timbre, pitch, energy
// `codes` is the 6 x N grid, stream-major, three lowercase hex digits per
// code. records_checksum is FNV-1a 64 over the record lines (with their
// newlines); codec_checksum fingerprints the frozen codec tables.

#pragma once

#include "priorflow/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace priorflow {

struct Record {
    std::string id;
    codec::UtteranceSpec spec;
    codec::CodeGrid codes;
    codec::TimbreVector timbre;
};

struct Dataset {
    DataConfig config;
    Json run_config = Json::object();
    std::uint64_t codec_checksum = 0;
    std::vector<Record> records;

    // The first eval_count records are held out.
    std::span<const Record> eval_split() const;
    std::span<const Record> train_split() const;
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Per-record synthesis seed derived from the dataset seed and record index.
std::uint64_t record_seed(std::uint64_t dataset_seed, std::size_t index);

Dataset generate_dataset(const RunConfig& cfg);
std::string serialize_dataset(const Dataset& ds);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
// Verifies both checksums and re-encodes every record against its stored codes.
Dataset read_dataset(const std::filesystem::path& path);
Dataset parse_dataset(const std::string& text, const std::string& where = "dataset");

std::string encode_codes_hex(const codec::CodeGrid& codes);
codec::CodeGrid decode_codes_hex(const std::string& hex, int frames);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace priorflow
