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

#include "priorflow/toycodec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <cstring>
#include <sstream>

namespace priorflow::codec {

namespace {

constexpr double kPitchLo = -3.5;
constexpr double kPitchHi = 3.5;
constexpr double kEnergyLo = 0.0;
constexpr double kEnergyHi = 3.0;

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += "; ";
        out += p;
    }
    return out;
}

std::vector<int> shuffled_range(int n, std::mt19937_64& rng) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    std::shuffle(v.begin(), v.end(), rng);
    return v;
}

int bucketize(double x, double lo, double hi, int buckets) {
    const double u = (x - lo) / (hi - lo);
    const int b = static_cast<int>(std::floor(u * buckets));
    return std::clamp(b, 0, buckets - 1);
}

double mean_square(const std::vector<double>& x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v * v;
    return s / static_cast<double>(x.size());
}

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ull;
    }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration: " + join(problems)), problems_(std::move(problems)) {}

DecodeError::DecodeError(int stream, int frame, int code, const std::string& what)
    : std::runtime_error("decode error at stream " + std::to_string(stream) + ", frame " + std::to_string(frame) +
                         " (code " + std::to_string(code) + "): " + what),
      stream_(stream),
      frame_(frame),
      code_(code) {}

// ---- GeneratorConfig --------------------------------------------------------------

void GeneratorConfig::validate() const {
    std::vector<std::string> p;
    if (phonemes < 2) p.push_back("P must be >= 2");
    if (codebook < 4) p.push_back("V must be >= 4");
    if (codebook > 1024) p.push_back("V must be <= 1024");
    if (phonemes >= 2 && codebook >= 4 && phonemes > codebook - 1) p.push_back("P must be <= V - 1");
    if (speakers < 1) p.push_back("S must be >= 1");
    if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) p.push_back("frame_rate must be positive");
    if (dur_min < 1 || dur_max < dur_min) p.push_back("duration range [dur_min, dur_max] is empty");
    if (min_phonemes < 1 || max_phonemes < min_phonemes) p.push_back("phoneme count range is empty");
    if (detail_period < 1) p.push_back("detail_period must be >= 1");
    if (dur_jitter < 0.0 || dur_jitter > 1.0) p.push_back("dur_jitter must lie in [0, 1]");
    if (smoothness < 0.0 || !std::isfinite(smoothness)) p.push_back("smoothness must be finite and >= 0");
    if (timbre_dim < 1) p.push_back("timbre_dim must be >= 1");
    if (!p.empty()) throw ConfigError(std::move(p));
}

int GeneratorConfig::buckets() const { return static_cast<int>(std::floor(std::sqrt(static_cast<double>(codebook)))); }

int GeneratorConfig::offset_classes() const { return std::min(8, codebook - 1); }

// ---- UtteranceSpec ----------------------------------------------------------------

int UtteranceSpec::frames() const { return std::accumulate(durations.begin(), durations.end(), 0); }

void UtteranceSpec::validate(const GeneratorConfig& cfg) const {
    if (phonemes.empty()) throw InvalidInputError("utterance has no phonemes");
    if (durations.size() != phonemes.size()) throw InvalidInputError("durations/phonemes length mismatch");
    for (int d : durations) {
        if (d < 1) throw InvalidInputError("duration < 1");
    }
    for (int p : phonemes) {
        if (p < 0 || p >= cfg.phonemes) throw InvalidInputError("phoneme id out of range");
    }
    const auto n = static_cast<std::size_t>(frames());
    if (pitch.size() != n || energy.size() != n) {
        throw InvalidInputError("contour length does not match the summed durations");
    }
    if (speaker < 0 || speaker >= cfg.speakers) throw InvalidInputError("speaker id out of range");
}

// ---- CodeGrid ---------------------------------------------------------------------

CodeGrid::CodeGrid(int frames, int fill)
    : frames_(frames), data_(static_cast<std::size_t>(kStreams) * static_cast<std::size_t>(frames), fill) {
    if (frames < 0) throw InvalidInputError("negative frame count");
}

std::span<const int> CodeGrid::stream(int s) const {
    return {data_.data() + index(s, 0), static_cast<std::size_t>(frames_)};
}

std::span<int> CodeGrid::stream(int s) { return {data_.data() + index(s, 0), static_cast<std::size_t>(frames_)}; }

std::vector<int> CodeGrid::column(int frame) const {
    std::vector<int> c(kStreams);
    for (int s = 0; s < kStreams; ++s) c[static_cast<std::size_t>(s)] = (*this)(s, frame);
    return c;
}

CodeGrid CodeGrid::slice(int start, int count) const {
    if (start < 0 || count < 0 || start + count > frames_) throw InvalidInputError("CodeGrid slice out of range");
    CodeGrid out(count);
    for (int s = 0; s < kStreams; ++s) {
        for (int n = 0; n < count; ++n) out(s, n) = (*this)(s, start + n);
    }
    return out;
}

// ---- world & synthesis ------------------------------------------------------------

WorldTables make_world(const GeneratorConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.table_seed ^ 0x9e3779b97f4a7c15ull);
    WorldTables w;
    // Speaker pitch levels are evenly spread over [-2, 2] and then shuffled so
    // that speaker id carries no ordering.
    const auto order = shuffled_range(cfg.speakers, rng);
    std::uniform_real_distribution<double> energy_base(0.9, 2.1);
    for (int s = 0; s < cfg.speakers; ++s) {
        const double frac = cfg.speakers == 1 ? 0.5 : static_cast<double>(order[static_cast<std::size_t>(s)]) / (cfg.speakers - 1);
        w.speaker_pitch.push_back(-2.0 + 4.0 * frac);
        w.speaker_energy.push_back(energy_base(rng));
    }
    std::uniform_real_distribution<double> ph_pitch(-0.5, 0.5);
    std::uniform_real_distribution<double> ph_energy(-0.3, 0.3);
    std::uniform_int_distribution<int> ph_dur(cfg.dur_min, cfg.dur_max);
    for (int p = 0; p < cfg.phonemes; ++p) {
        w.phoneme_pitch.push_back(ph_pitch(rng));
        w.phoneme_energy.push_back(ph_energy(rng));
        w.phoneme_duration.push_back(ph_dur(rng));
    }
    return w;
}

UtteranceSpec synth_utterance(std::uint64_t seed, const GeneratorConfig& cfg) {
    const WorldTables world = make_world(cfg);
    std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dull + 0x632be59bd9b4e019ull);
    std::uniform_int_distribution<int> count(cfg.min_phonemes, cfg.max_phonemes);
    std::uniform_int_distribution<int> phoneme(0, cfg.phonemes - 1);
    std::uniform_int_distribution<int> speaker(0, cfg.speakers - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> slope(-cfg.smoothness, cfg.smoothness);
    std::normal_distribution<double> utt_offset(0.0, 0.2);

    UtteranceSpec spec;
    spec.speaker = speaker(rng);
    const int n_ph = count(rng);
    for (int i = 0; i < n_ph; ++i) {
        const int p = phoneme(rng);
        int d = world.phoneme_duration[static_cast<std::size_t>(p)];
        if (unit(rng) < cfg.dur_jitter) d += unit(rng) < 0.5 ? -1 : 1;
        spec.phonemes.push_back(p);
        spec.durations.push_back(std::clamp(d, cfg.dur_min, cfg.dur_max));
    }
    const double pitch_level = world.speaker_pitch[static_cast<std::size_t>(spec.speaker)] + utt_offset(rng);
    const double energy_level = world.speaker_energy[static_cast<std::size_t>(spec.speaker)] + 0.5 * utt_offset(rng);
    for (std::size_t i = 0; i < spec.phonemes.size(); ++i) {
        const auto p = static_cast<std::size_t>(spec.phonemes[i]);
        const double ps = slope(rng), es = slope(rng);
        const int d = spec.durations[i];
        for (int k = 0; k < d; ++k) {
            const double u = d == 1 ? 0.0 : static_cast<double>(k) / (d - 1) - 0.5;
            spec.pitch.push_back(pitch_level + world.phoneme_pitch[p] + ps * u);
            spec.energy.push_back(std::max(0.0, energy_level + world.phoneme_energy[p] + es * u));
        }
    }
    return spec;
}

UtteranceSpec add_noise(const UtteranceSpec& spec, double snr_db, std::uint64_t seed) {
    if (std::isnan(snr_db)) throw InvalidInputError("snr_db is NaN");
    if (std::isinf(snr_db) && snr_db > 0) return spec;
    if (std::isinf(snr_db)) throw InvalidInputError("snr_db = -inf");
    UtteranceSpec out = spec;
    std::mt19937_64 rng(seed ^ 0xa0761d6478bd642full);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double ratio = std::pow(10.0, -snr_db / 10.0);
    const double pitch_sigma = std::sqrt(mean_square(spec.pitch) * ratio);
    const double energy_sigma = std::sqrt(mean_square(spec.energy) * ratio);
    for (double& v : out.pitch) v += pitch_sigma * gauss(rng);
    for (double& v : out.energy) v = std::max(0.0, v + energy_sigma * gauss(rng));
    return out;
}

std::vector<int> reference_transcript(const UtteranceSpec& spec) { return spec.phonemes; }

// ---- ToyCodec ---------------------------------------------------------------------

ToyCodec::ToyCodec(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    buckets_ = cfg_.buckets();
    offset_classes_ = cfg_.offset_classes();
    const int V = cfg_.codebook;
    std::mt19937_64 rng(cfg_.table_seed);

    // Content tables draw from [0, V-1) so V-1 never has a preimage.
    auto perm = shuffled_range(V - 1, rng);
    content_table_.assign(perm.begin(), perm.begin() + cfg_.phonemes);
    content_inverse_.assign(static_cast<std::size_t>(V), -1);
    for (int p = 0; p < cfg_.phonemes; ++p) content_inverse_[static_cast<std::size_t>(content_table_[static_cast<std::size_t>(p)])] = p;

    perm = shuffled_range(V - 1, rng);
    offset_table_.assign(perm.begin(), perm.begin() + offset_classes_);
    offset_inverse_.assign(static_cast<std::size_t>(V), -1);
    for (int o = 0; o < offset_classes_; ++o) offset_inverse_[static_cast<std::size_t>(offset_table_[static_cast<std::size_t>(o)])] = o;

    std::uniform_int_distribution<int> code(0, V - 1);
    detail_table_.resize(static_cast<std::size_t>(kDetailStreams * cfg_.speakers * buckets_ * cfg_.detail_period));
    for (int& c : detail_table_) c = code(rng);

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int s = 0; s < cfg_.speakers; ++s) {
        std::vector<double> t(static_cast<std::size_t>(cfg_.timbre_dim));
        for (double& v : t) v = gauss(rng);
        timbres_.push_back(std::move(t));
    }
}

int ToyCodec::pitch_bucket(double pitch) const { return bucketize(pitch, kPitchLo, kPitchHi, buckets_); }
int ToyCodec::energy_bucket(double energy) const { return bucketize(energy, kEnergyLo, kEnergyHi, buckets_); }
double ToyCodec::pitch_center(int b) const { return kPitchLo + (b + 0.5) * (kPitchHi - kPitchLo) / buckets_; }
double ToyCodec::energy_center(int b) const { return kEnergyLo + (b + 0.5) * (kEnergyHi - kEnergyLo) / buckets_; }

std::array<int, kDetailStreams> ToyCodec::detail_codes(int speaker, int pitch_bucket, int frame) const {
    std::array<int, kDetailStreams> out{};
    const int k = frame % cfg_.detail_period;
    for (int j = 0; j < kDetailStreams; ++j) {
        const std::size_t idx =
            ((static_cast<std::size_t>(j) * cfg_.speakers + speaker) * buckets_ + pitch_bucket) * cfg_.detail_period + k;
        out[static_cast<std::size_t>(j)] = detail_table_[idx];
    }
    return out;
}

int ToyCodec::offset_code(int offset) const {
    return offset_table_[static_cast<std::size_t>(std::min(offset, offset_classes_ - 1))];
}

int ToyCodec::phoneme_of_code(int code) const {
    if (code < 0 || code >= cfg_.codebook) return -1;
    return content_inverse_[static_cast<std::size_t>(code)];
}

int ToyCodec::offset_of_code(int code) const {
    if (code < 0 || code >= cfg_.codebook) return -1;
    return offset_inverse_[static_cast<std::size_t>(code)];
}

TimbreVector ToyCodec::timbre(int speaker) const {
    if (speaker < 0 || speaker >= cfg_.speakers) throw InvalidInputError("speaker id out of range");
    return TimbreVector{timbres_[static_cast<std::size_t>(speaker)]};
}

int ToyCodec::speaker_of(const TimbreVector& timbre) const {
    for (int s = 0; s < cfg_.speakers; ++s) {
        if (timbres_[static_cast<std::size_t>(s)] == timbre.values) return s;
    }
    throw InvalidInputError("timbre vector does not belong to any known speaker");
}

std::pair<CodeGrid, TimbreVector> ToyCodec::encode(const UtteranceSpec& spec) const {
    spec.validate(cfg_);
    const int N = spec.frames();
    CodeGrid grid(N);
    int frame = 0;
    for (std::size_t i = 0; i < spec.phonemes.size(); ++i) {
        for (int off = 0; off < spec.durations[i]; ++off, ++frame) {
            const auto f = static_cast<std::size_t>(frame);
            const int pb = pitch_bucket(spec.pitch[f]);
            const int eb = energy_bucket(spec.energy[f]);
            grid(kProsodyStream, frame) = pb * buckets_ + eb;
            grid(kPhonemeStream, frame) = phoneme_code(spec.phonemes[i]);
            grid(kOffsetStream, frame) = offset_code(off);
            const auto detail = detail_codes(spec.speaker, pb, frame);
            for (int j = 0; j < kDetailStreams; ++j) grid(kFirstDetailStream + j, frame) = detail[static_cast<std::size_t>(j)];
        }
    }
    return {std::move(grid), timbre(spec.speaker)};
}

FrameFeatures ToyCodec::decode(const CodeGrid& codes, const TimbreVector& timbre) const {
    FrameFeatures out;
    out.speaker = speaker_of(timbre);
    const int V = cfg_.codebook;
    for (int n = 0; n < codes.frames(); ++n) {
        for (int s = 0; s < kStreams; ++s) {
            const int c = codes(s, n);
            if (c < 0 || c >= V) throw DecodeError(s, n, c, "code outside [0, V)");
        }
        const int pros = codes(kProsodyStream, n);
        if (pros >= buckets_ * buckets_) throw DecodeError(kProsodyStream, n, pros, "no prosody bucket pair");
        const int ph = phoneme_of_code(codes(kPhonemeStream, n));
        if (ph < 0) throw DecodeError(kPhonemeStream, n, codes(kPhonemeStream, n), "no phoneme for content code");
        const int off = offset_of_code(codes(kOffsetStream, n));
        if (off < 0) throw DecodeError(kOffsetStream, n, codes(kOffsetStream, n), "no offset class for content code");
        out.phoneme.push_back(ph);
        out.offset_class.push_back(off);
        out.pitch_bucket.push_back(pros / buckets_);
        out.energy_bucket.push_back(pros % buckets_);
    }
    return out;
}

std::vector<int> ToyCodec::transcript(const CodeGrid& codes) const {
    // A segment opens at frame 0 and at every frame whose offset class is 0.
    // Each segment emits the majority phoneme of its frames (ties go to the
    // earliest-seen phoneme), so a single corrupted token costs at most one edit.
    std::vector<int> out;
    std::vector<int> votes;
    auto flush = [&]() {
        if (votes.empty()) return;
        int best = votes.front(), best_count = 0;
        for (std::size_t i = 0; i < votes.size(); ++i) {
            const int c = static_cast<int>(std::count(votes.begin(), votes.end(), votes[i]));
            if (c > best_count) {
                best = votes[i];
                best_count = c;
            }
        }
        out.push_back(best);
        votes.clear();
    };
    for (int n = 0; n < codes.frames(); ++n) {
        const int off = offset_of_code(codes(kOffsetStream, n));
        if (n > 0 && off == 0) flush();
        const int ph = phoneme_of_code(codes(kPhonemeStream, n));
        votes.push_back(ph < 0 ? kErrorPhoneme : ph);
    }
    flush();
    return out;
}

std::uint64_t ToyCodec::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int v : content_table_) fnv_mix(h, static_cast<std::uint64_t>(v));
    for (int v : offset_table_) fnv_mix(h, static_cast<std::uint64_t>(v));
    for (int v : detail_table_) fnv_mix(h, static_cast<std::uint64_t>(v));
    for (const auto& t : timbres_) {
        for (double v : t) {
            std::uint64_t bits = 0;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(v));
            fnv_mix(h, bits);
        }
    }
    const WorldTables w = make_world(cfg_);
    for (int v : w.phoneme_duration) fnv_mix(h, static_cast<std::uint64_t>(v));
    return h;
}

}  // namespace priorflow::codec
