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

// Synthetic utterances and a frozen, exactly invertible factorized codec.
//
// Stream layout of every CodeGrid (six token streams per frame):
//   0      prosody        packed (pitch bucket, energy bucket)
//   1      content        phoneme id through a frozen injective table
//   2      content        within-phoneme offset class through a frozen table
//   3..5   acoustic       frozen lookup of (speaker, pitch bucket, frame mod K)
//
// Content tables never use index V-1, so that index is always undecodable.

#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace priorflow::codec {

inline constexpr int kStreams = 6;
inline constexpr int kProsodyStream = 0;
inline constexpr int kPhonemeStream = 1;
inline constexpr int kOffsetStream = 2;
inline constexpr int kFirstDetailStream = 3;
inline constexpr int kDetailStreams = 3;
inline constexpr int kErrorPhoneme = -1;
inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

enum class StreamRole { prosody, content, detail };

constexpr StreamRole stream_role(int stream) {
    if (stream == kProsodyStream) return StreamRole::prosody;
    if (stream == kPhonemeStream || stream == kOffsetStream) return StreamRole::content;
    return StreamRole::detail;
}

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

class InvalidInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DecodeError : public std::runtime_error {
public:
    DecodeError(int stream, int frame, int code, const std::string& what);
    int stream() const { return stream_; }
    int frame() const { return frame_; }
    int code() const { return code_; }

private:
    int stream_;
    int frame_;
    int code_;
};

struct GeneratorConfig {
    int phonemes = 40;          // P
    int speakers = 16;          // S
    int codebook = 64;          // V; the model adds MASK at index V
    double frame_rate = 80.0;   // frames per second
    int dur_min = 2;            // frames per phoneme, inclusive
    int dur_max = 8;
    int min_phonemes = 8;       // phonemes per utterance, inclusive
    int max_phonemes = 16;
    int detail_period = 4;      // K
    double dur_jitter = 0.4;    // probability of a +-1 frame deviation from the phoneme's base duration
    double smoothness = 0.3;    // max |slope| of the per-phoneme pitch/energy ramps
    int timbre_dim = 8;
    std::uint64_t table_seed = 20240611;

    // Throws ConfigError listing every violated constraint.
    void validate() const;
    int buckets() const;        // floor(sqrt(V)) pitch and energy buckets
    int offset_classes() const;
};

struct UtteranceSpec {
    std::vector<int> phonemes;
    std::vector<int> durations;
    std::vector<double> pitch;
    std::vector<double> energy;
    int speaker = 0;

    int frames() const;
    // Throws InvalidInputError on any broken invariant.
    void validate(const GeneratorConfig& cfg) const;
};

// 6 x N grid of codebook indices.
class CodeGrid {
public:
    CodeGrid() = default;
    explicit CodeGrid(int frames, int fill = 0);

    int frames() const { return frames_; }
    int& operator()(int stream, int frame) { return data_[index(stream, frame)]; }
    int operator()(int stream, int frame) const { return data_[index(stream, frame)]; }
    std::span<const int> stream(int s) const;
    std::span<int> stream(int s);
    std::vector<int> column(int frame) const;
    CodeGrid slice(int start, int count) const;
    const std::vector<int>& data() const { return data_; }

    bool operator==(const CodeGrid&) const = default;

private:
    std::size_t index(int stream, int frame) const {
        return static_cast<std::size_t>(stream) * static_cast<std::size_t>(frames_) + static_cast<std::size_t>(frame);
    }
    int frames_ = 0;
    std::vector<int> data_;
};

struct TimbreVector {
    std::vector<double> values;
    bool operator==(const TimbreVector&) const = default;
};

struct FrameFeatures {
    std::vector<int> phoneme;        // kErrorPhoneme never appears here; decode throws instead
    std::vector<int> offset_class;
    std::vector<int> pitch_bucket;
    std::vector<int> energy_bucket;
    int speaker = 0;

    int frames() const { return static_cast<int>(phoneme.size()); }
};

// Seeded "world" tables that drive utterance synthesis.
struct WorldTables {
    std::vector<double> speaker_pitch;
    std::vector<double> speaker_energy;
    std::vector<double> phoneme_pitch;
    std::vector<double> phoneme_energy;
    std::vector<int> phoneme_duration;
};

WorldTables make_world(const GeneratorConfig& cfg);

UtteranceSpec synth_utterance(std::uint64_t seed, const GeneratorConfig& cfg);

// Additive Gaussian contour noise at the given SNR (dB, contour power).
// snr_db == +inf returns the input unchanged.
UtteranceSpec add_noise(const UtteranceSpec& spec, double snr_db, std::uint64_t seed);

class ToyCodec {
public:
    explicit ToyCodec(GeneratorConfig cfg);

    const GeneratorConfig& config() const { return cfg_; }
    int codebook() const { return cfg_.codebook; }
    int buckets() const { return buckets_; }

    std::pair<CodeGrid, TimbreVector> encode(const UtteranceSpec& spec) const;
    FrameFeatures decode(const CodeGrid& codes, const TimbreVector& timbre) const;

    // Run-length-collapsed phoneme sequence; undecodable phoneme tokens become
    // kErrorPhoneme.
    std::vector<int> transcript(const CodeGrid& codes) const;

    TimbreVector timbre(int speaker) const;
    int speaker_of(const TimbreVector& timbre) const;

    int pitch_bucket(double pitch) const;
    int energy_bucket(double energy) const;
    double pitch_center(int bucket) const;
    double energy_center(int bucket) const;
    std::array<int, kDetailStreams> detail_codes(int speaker, int pitch_bucket, int frame) const;
    int phoneme_code(int phoneme) const { return content_table_[static_cast<std::size_t>(phoneme)]; }
    int offset_code(int offset) const;
    // -1 when the code has no preimage.
    int phoneme_of_code(int code) const;
    int offset_of_code(int code) const;

    // FNV-1a over every frozen table; identifies the codec in dataset manifests.
    std::uint64_t checksum() const;

private:
    GeneratorConfig cfg_;
    int buckets_;
    int offset_classes_;
    std::vector<int> content_table_;
    std::vector<int> content_inverse_;
    std::vector<int> offset_table_;
    std::vector<int> offset_inverse_;
    std::vector<int> detail_table_;  // [stream][speaker][bucket][k]
    std::vector<std::vector<double>> timbres_;
};

// Collapses a per-frame phoneme sequence into its reference transcript.
std::vector<int> reference_transcript(const UtteranceSpec& spec);

}  // namespace priorflow::codec
