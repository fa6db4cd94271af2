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

#include "priorflow/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace priorflow::eval {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double mean_of(std::span<const double> x) {
    return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double rmse(std::span<const double> a, std::span<const double> b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq / static_cast<double>(a.size()));
}

// Mean over finite entries; NaN marks a sample without a usable contour.
double finite_mean(const std::vector<double>& x) {
    double s = 0.0;
    int n = 0;
    for (double v : x) {
        if (std::isfinite(v)) {
            s += v;
            ++n;
        }
    }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / n;
}

Json number_or_inf(double v) {
    if (std::isinf(v) && v > 0) return "inf";
    if (std::isnan(v)) return nullptr;
    return v;
}

std::string format_db(double snr) {
    if (std::isinf(snr)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", snr);
    return buf;
}

}  // namespace

// ---- metrics ----------------------------------------------------------------------

int edit_distance(std::span<const int> a, std::span<const int> b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double wer(std::span<const int> reference, std::span<const int> hypothesis) {
    if (reference.empty()) throw std::invalid_argument("wer: empty reference");
    return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

Contours prosody_contours(const codec::ToyCodec& codec, const CodeGrid& codes) {
    const int b = codec.buckets();
    Contours out;
    for (int n = 0; n < codes.frames(); ++n) {
        const int p = codes(codec::kProsodyStream, n);
        if (p < 0 || p >= b * b) continue;
        out.pitch.push_back(codec.pitch_center(p / b));
        out.energy.push_back(codec.energy_center(p % b));
    }
    return out;
}

ProsodyThresholds corpus_thresholds(const codec::ToyCodec& codec, std::span<const Record> corpus) {
    std::vector<double> pm, em;
    for (const auto& r : corpus) {
        const Contours c = prosody_contours(codec, r.codes);
        if (c.pitch.empty()) continue;
        pm.push_back(mean_of(c.pitch));
        em.push_back(mean_of(c.energy));
    }
    if (pm.empty()) throw std::invalid_argument("corpus_thresholds: empty corpus");
    auto band = [](const std::vector<double>& x) {
        const double mu = mean_of(x);
        double var = 0.0;
        for (double v : x) var += (v - mu) * (v - mu);
        const double sd = std::sqrt(var / static_cast<double>(x.size()));
        return std::pair{mu - 0.5 * sd, mu + 0.5 * sd};
    };
    ProsodyThresholds th;
    std::tie(th.pitch_low, th.pitch_high) = band(pm);
    std::tie(th.energy_low, th.energy_high) = band(em);
    return th;
}

int category(double utterance_mean, double low, double high) {
    if (utterance_mean < low) return -1;
    if (utterance_mean > high) return 1;
    return 0;
}

std::vector<double> resample_linear(std::span<const double> x, int frames) {
    if (x.empty() || frames < 1) throw std::invalid_argument("resample_linear: empty input or output");
    std::vector<double> out(static_cast<std::size_t>(frames));
    if (x.size() == 1 || frames == 1) {
        std::fill(out.begin(), out.end(), x[0]);
        return out;
    }
    const double scale = static_cast<double>(x.size() - 1) / static_cast<double>(frames - 1);
    for (int i = 0; i < frames; ++i) {
        const double pos = i * scale;
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, x.size() - 1);
        const double w = pos - static_cast<double>(lo);
        out[static_cast<std::size_t>(i)] = (1.0 - w) * x[lo] + w * x[hi];
    }
    return out;
}

ProsodyMetrics prosody_metrics(const Contours& generated, const Contours& prompt, const ProsodyThresholds& th) {
    if (generated.pitch.empty() || prompt.pitch.empty()) throw std::invalid_argument("prosody_metrics: empty contour");
    ProsodyMetrics m;
    m.f0_accuracy = category(mean_of(generated.pitch), th.pitch_low, th.pitch_high) ==
                            category(mean_of(prompt.pitch), th.pitch_low, th.pitch_high)
                        ? 1.0
                        : 0.0;
    m.energy_accuracy = category(mean_of(generated.energy), th.energy_low, th.energy_high) ==
                                category(mean_of(prompt.energy), th.energy_low, th.energy_high)
                            ? 1.0
                            : 0.0;
    const int frames = static_cast<int>(prompt.pitch.size());
    m.f0_rmse = rmse(resample_linear(generated.pitch, frames), prompt.pitch);
    m.energy_rmse = rmse(resample_linear(generated.energy, frames), prompt.energy);
    return m;
}

int infer_speaker(const codec::ToyCodec& codec, const CodeGrid& codes) {
    const int speakers = codec.config().speakers;
    const int b = codec.buckets();
    std::vector<int> score(static_cast<std::size_t>(speakers), 0);
    for (int n = 0; n < codes.frames(); ++n) {
        for (int s = 0; s < speakers; ++s) {
            int best = 0;
            for (int pb = 0; pb < b; ++pb) {
                const auto d = codec.detail_codes(s, pb, n);
                int hits = 0;
                for (int j = 0; j < codec::kDetailStreams; ++j) {
                    hits += d[static_cast<std::size_t>(j)] == codes(codec::kStreams - codec::kDetailStreams + j, n);
                }
                best = std::max(best, hits);
            }
            score[static_cast<std::size_t>(s)] += best;
        }
    }
    const auto it = std::max_element(score.begin(), score.end());
    if (*it == 0) return -1;
    return static_cast<int>(it - score.begin());
}

// ---- synthesis --------------------------------------------------------------------

Synthesis synthesize(const Model& model, bool duration_trained, const SynthesisRequest& req) {
    const auto& vcfg = model.config().vfe;
    if (req.steps < 1) throw std::invalid_argument("synthesize: steps must be >= 1");
    if (vcfg.flow == vfe::FlowKind::one_step && req.steps != 1) {
        throw std::invalid_argument("synthesize: multi-step Euler sampling needs a classical-flow checkpoint");
    }
    Synthesis out;
    auto t0 = Clock::now();
    std::optional<std::span<const int>> durations;
    if (req.durations) durations = std::span<const int>(*req.durations);
    const prior::PriorOutput pr = prior::generate_prior(model.prior(), model.table(), req.phonemes, durations, duration_trained);
    out.prior_seconds = seconds_since(t0);
    out.durations_predicted = pr.durations_predicted;
    out.untrained_duration_predictor = pr.untrained_duration_predictor;

    vfe::LatentGrid x_pr;
    x_pr.streams = pr.prior_latents;
    t0 = Clock::now();
    vfe::SampleResult s;
    if (vcfg.flow == vfe::FlowKind::one_step) {
        vfe::SampleOptions opts;
        opts.sigma = vcfg.infer_sigma;
        opts.seed = req.seed;
        s = vfe::one_step_sample(model.vfe(), model.tau(), model.table(), req.prompt, x_pr, opts);
    } else {
        s = vfe::euler_sample_baseline(model.vfe(), model.table(), req.prompt, x_pr, req.steps, req.seed);
    }
    out.sampler_seconds = seconds_since(t0);
    out.codes = std::move(s.codes);
    out.nfe = s.nfe;
    out.tau = s.tau;
    return out;
}

// ---- benchmarking -----------------------------------------------------------------

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile: empty input");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

LatencyResult latency_bench(const Model& model, bool duration_trained, std::span<const SynthesisRequest> requests,
                            double frame_rate, const std::string& hardware_note) {
    if (requests.empty()) throw std::invalid_argument("latency_bench: empty evaluation set");
    (void)synthesize(model, duration_trained, requests.front());  // warm-up
    LatencyResult out;
    out.hardware_note = hardware_note;
    std::vector<double> rtf, e2e;
    for (const auto& req : requests) {
        const Synthesis s = synthesize(model, duration_trained, req);
        const double audio_sec = s.codes.frames() / frame_rate;
        rtf.push_back(s.sampler_seconds / audio_sec);
        e2e.push_back((s.prior_seconds + s.sampler_seconds) / audio_sec);
        if (out.samples > 0 && s.nfe != out.nfe) throw std::logic_error("latency_bench: NFE varied between samples");
        out.nfe = s.nfe;
        ++out.samples;
    }
    out.rtf_median = median(rtf);
    out.rtf_iqr = quantile(rtf, 0.75) - quantile(rtf, 0.25);
    out.e2e_rtf_median = median(e2e);
    return out;
}

// ---- protocols --------------------------------------------------------------------

const char* to_string(Protocol p) {
    switch (p) {
        case Protocol::sweep: return "sweep";
        case Protocol::snr: return "snr";
        case Protocol::ablation: return "ablation";
    }
    return "?";
}

Protocol protocol_from_string(const std::string& s) {
    if (s == "sweep") return Protocol::sweep;
    if (s == "snr") return Protocol::snr;
    if (s == "ablation") return Protocol::ablation;
    throw std::invalid_argument("unknown protocol '" + s + "' (expected sweep, snr or ablation)");
}

std::vector<EvalPair> make_pairs(std::span<const Record> records, int max_pairs, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_speaker;
    for (std::size_t i = 0; i < records.size(); ++i) by_speaker[records[i].spec.speaker].push_back(i);
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < records.size() && static_cast<int>(pairs.size()) < max_pairs; ++i) {
        const auto& same = by_speaker[records[i].spec.speaker];
        if (same.size() < 2) continue;
        std::vector<std::size_t> others;
        for (std::size_t j : same) {
            if (j != i) others.push_back(j);
        }
        std::mt19937_64 rng(record_seed(seed, i));
        const std::size_t pick = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
        pairs.push_back({i, pick});
    }
    return pairs;
}

MetricsReport evaluate_condition(const EvalModel& m, const Dataset& data, const EvalConfig& cfg, double prompt_sec,
                                 double snr_db, const SuiteOptions& opts) {
    if (m.model == nullptr) throw std::invalid_argument("evaluate_condition: no model");
    const codec::ToyCodec codec(m.config.data.gen);
    const auto records = data.eval_split();
    if (records.empty()) throw std::invalid_argument("evaluate_condition: empty evaluation split");
    const ProsodyThresholds th = corpus_thresholds(codec, records);
    const auto pairs = make_pairs(records, cfg.max_utterances, cfg.seed);
    const double fr = m.config.data.gen.frame_rate;

    MetricsReport rep;
    rep.label = m.label;
    rep.prompt_sec = prompt_sec;
    rep.snr_db = snr_db;
    char cond[64];
    std::snprintf(cond, sizeof(cond), "prompt=%gs,snr=%sdB", prompt_sec, format_db(snr_db).c_str());
    rep.condition = cond;
    rep.config_fingerprint = config_fingerprint(m.config);

    std::vector<double> wers, f0acc, f0rmse, enacc, enrmse, spk;
    std::map<std::string, std::vector<double>> extra;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Record& target = records[pairs[i].target];
        const Record& source = records[pairs[i].prompt];
        if (target.id == source.id || target.spec.speaker != source.spec.speaker) {
            throw std::logic_error("evaluation pair violates the same-speaker protocol");
        }
        const int frames = source.codes.frames();
        const int len = std::clamp(static_cast<int>(std::lround(prompt_sec * fr)), 1, frames);
        std::mt19937_64 rng(record_seed(cfg.seed ^ 0x70726f6dull, i));
        const int start = std::uniform_int_distribution<int>(0, frames - len)(rng);
        const CodeGrid clean_prompt = source.codes.slice(start, len);
        CodeGrid prompt = clean_prompt;
        if (!std::isinf(snr_db)) {
            const auto noisy = codec::add_noise(source.spec, snr_db, record_seed(cfg.seed ^ 0x6e6f6973ull, i));
            prompt = codec.encode(noisy).first.slice(start, len);
        }

        SynthesisRequest req;
        req.phonemes = target.spec.phonemes;
        if (!m.duration_trained) req.durations = target.spec.durations;
        req.prompt = prompt;
        req.steps = opts.steps;
        req.seed = record_seed(cfg.seed, i + 0x100000ull);
        const Synthesis syn = synthesize(*m.model, m.duration_trained, req);

        SampleScores sc;
        sc.target_id = target.id;
        sc.prompt_id = source.id;
        sc.wer = wer(codec::reference_transcript(target.spec), codec.transcript(syn.codes));
        const Contours gen = prosody_contours(codec, syn.codes);
        if (gen.pitch.empty()) {
            sc.prosody.f0_rmse = sc.prosody.energy_rmse = std::numeric_limits<double>::quiet_NaN();
        } else {
            sc.prosody = prosody_metrics(gen, prosody_contours(codec, clean_prompt), th);
        }
        sc.speaker_match = infer_speaker(codec, syn.codes) == target.spec.speaker;
        sc.nfe = syn.nfe;
        for (const auto& scorer : opts.scorers) {
            sc.extra[scorer->name()] = scorer->score(syn.codes, clean_prompt);
            extra[scorer->name()].push_back(sc.extra[scorer->name()]);
        }
        if (rep.samples > 0 && sc.nfe != rep.nfe) throw std::logic_error("NFE varied within a condition");
        rep.nfe = sc.nfe;
        ++rep.samples;
        wers.push_back(sc.wer);
        f0acc.push_back(sc.prosody.f0_accuracy);
        f0rmse.push_back(sc.prosody.f0_rmse);
        enacc.push_back(sc.prosody.energy_accuracy);
        enrmse.push_back(sc.prosody.energy_rmse);
        spk.push_back(sc.speaker_match ? 1.0 : 0.0);
        rep.per_sample.push_back(std::move(sc));
    }
    rep.wer = mean_of(wers);
    rep.f0_accuracy = mean_of(f0acc);
    rep.f0_rmse = finite_mean(f0rmse);
    rep.energy_accuracy = mean_of(enacc);
    rep.energy_rmse = finite_mean(enrmse);
    rep.speaker_agreement = mean_of(spk);
    for (const auto& [name, v] : extra) rep.extra[name] = mean_of(v);
    return rep;
}

std::vector<MetricsReport> run_suite(std::span<const EvalModel> models, const Dataset& data, const EvalConfig& cfg,
                                     Protocol protocol, const SuiteOptions& opts) {
    if (models.empty()) throw std::invalid_argument("run_suite: no checkpoints");
    for (const auto& m : models) {
        if (codec::ToyCodec(m.config.data.gen).checksum() != data.codec_checksum ||
            m.config.to_json()["data"] != data.run_config["data"]) {
            throw std::invalid_argument("checkpoint '" + m.label + "' was trained on a different data config");
        }
    }
    std::vector<MetricsReport> out;
    const double inf = std::numeric_limits<double>::infinity();
    switch (protocol) {
        case Protocol::sweep:
            for (const auto& m : models) {
                for (double sec : cfg.prompt_seconds) out.push_back(evaluate_condition(m, data, cfg, sec, inf, opts));
            }
            break;
        case Protocol::snr:
            for (const auto& m : models) {
                for (double snr : cfg.snr_db) {
                    out.push_back(evaluate_condition(m, data, cfg, cfg.default_prompt_sec, snr, opts));
                }
            }
            break;
        case Protocol::ablation:
            // Prompt length outer, model inner: rows of one length sit together.
            for (double sec : cfg.prompt_seconds) {
                for (const auto& m : models) out.push_back(evaluate_condition(m, data, cfg, sec, inf, opts));
            }
            break;
    }
    return out;
}

// ---- reports ----------------------------------------------------------------------

std::string config_fingerprint(const RunConfig& cfg) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(cfg.to_json().dump())));
    return buf;
}

namespace {

std::vector<std::pair<std::string, double>> metric_rows(const MetricsReport& r) {
    std::vector<std::pair<std::string, double>> rows{
        {"wer", r.wer},
        {"f0_accuracy", r.f0_accuracy},
        {"f0_rmse", r.f0_rmse},
        {"energy_accuracy", r.energy_accuracy},
        {"energy_rmse", r.energy_rmse},
        {"speaker_agreement", r.speaker_agreement},
        {"nfe", static_cast<double>(r.nfe)},
        {"samples", static_cast<double>(r.samples)},
    };
    for (const auto& [k, v] : r.extra) rows.emplace_back(k, v);
    return rows;
}

std::vector<double> per_sample_metric(const MetricsReport& r, const std::string& metric) {
    std::vector<double> v;
    for (const auto& s : r.per_sample) {
        double x = 0.0;
        if (metric == "wer") x = s.wer;
        else if (metric == "f0_rmse") x = s.prosody.f0_rmse;
        else if (metric == "energy_rmse") x = s.prosody.energy_rmse;
        else throw std::invalid_argument("boxplot: unknown metric " + metric);
        if (std::isfinite(x)) v.push_back(x);
    }
    return v;
}

}  // namespace

std::string reports_csv(std::span<const MetricsReport> reports) {
    std::ostringstream os;
    os << "label,condition,prompt_sec,snr_db,metric,value\n";
    char buf[64];
    for (const auto& r : reports) {
        for (const auto& [name, value] : metric_rows(r)) {
            std::snprintf(buf, sizeof(buf), "%.9g", value);
            os << r.label << ',' << '"' << r.condition << '"' << ',' << r.prompt_sec << ',' << format_db(r.snr_db) << ','
               << name << ',' << buf << '\n';
        }
    }
    return os.str();
}

Json reports_json(std::span<const MetricsReport> reports, const Json& run_config) {
    Json out = Json::object();
    out["run_config"] = run_config;
    out["reports"] = Json::array();
    for (const auto& r : reports) {
        Json j = Json::object();
        j["label"] = r.label;
        j["condition"] = r.condition;
        j["prompt_sec"] = r.prompt_sec;
        j["snr_db"] = number_or_inf(r.snr_db);
        j["config_fingerprint"] = r.config_fingerprint;
        for (const auto& [name, value] : metric_rows(r)) j[name] = number_or_inf(value);
        j["per_sample"] = Json::array();
        for (const auto& s : r.per_sample) {
            j["per_sample"].push_back({{"target", s.target_id},
                                       {"prompt", s.prompt_id},
                                       {"wer", s.wer},
                                       {"f0_accuracy", s.prosody.f0_accuracy},
                                       {"f0_rmse", number_or_inf(s.prosody.f0_rmse)},
                                       {"energy_accuracy", s.prosody.energy_accuracy},
                                       {"energy_rmse", number_or_inf(s.prosody.energy_rmse)},
                                       {"speaker_match", s.speaker_match},
                                       {"nfe", s.nfe}});
        }
        out["reports"].push_back(std::move(j));
    }
    return out;
}

std::string boxplot_svg(std::span<const MetricsReport> reports, const std::string& metric) {
    const double width = 120.0 * static_cast<double>(std::max<std::size_t>(1, reports.size())) + 80.0;
    const double height = 320.0, top = 30.0, bottom = 250.0;
    std::vector<std::vector<double>> data;
    double hi = 0.0;
    for (const auto& r : reports) {
        data.push_back(per_sample_metric(r, metric));
        for (double v : data.back()) hi = std::max(hi, v);
    }
    if (hi <= 0.0) hi = 1.0;
    auto y = [&](double v) { return bottom - (bottom - top) * v / hi; };

    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<text x=\"10\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << metric << " (max " << hi << ")</text>\n";
    os << "<line x1=\"50\" y1=\"" << bottom << "\" x2=\"" << width - 10 << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double cx = 100.0 + 120.0 * static_cast<double>(i);
        if (!data[i].empty()) {
            const double q1 = quantile(data[i], 0.25), q2 = quantile(data[i], 0.5), q3 = quantile(data[i], 0.75);
            const double lo = *std::min_element(data[i].begin(), data[i].end());
            const double up = *std::max_element(data[i].begin(), data[i].end());
            os << "<line x1=\"" << cx << "\" y1=\"" << y(lo) << "\" x2=\"" << cx << "\" y2=\"" << y(up)
               << "\" stroke=\"black\"/>\n";
            os << "<rect x=\"" << cx - 30 << "\" y=\"" << y(q3) << "\" width=\"60\" height=\"" << std::max(0.5, y(q1) - y(q3))
               << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
            os << "<line x1=\"" << cx - 30 << "\" y1=\"" << y(q2) << "\" x2=\"" << cx + 30 << "\" y2=\"" << y(q2)
               << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
        }
        os << "<text x=\"" << cx << "\" y=\"" << bottom + 18 << "\" font-family=\"sans-serif\" font-size=\"10\" "
           << "text-anchor=\"middle\">" << reports[i].label << "</text>\n";
        os << "<text x=\"" << cx << "\" y=\"" << bottom + 32 << "\" font-family=\"sans-serif\" font-size=\"10\" "
           << "text-anchor=\"middle\">" << reports[i].condition << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_reports(const std::filesystem::path& dir, std::span<const MetricsReport> reports, const Json& run_config,
                   bool plots) {
    std::filesystem::create_directories(dir);
    write_text_file_atomic(dir / "metrics.csv", reports_csv(reports));
    write_text_file_atomic(dir / "metrics.json", reports_json(reports, run_config).dump(2) + "\n");
    if (plots) {
        for (const char* metric : {"wer", "f0_rmse", "energy_rmse"}) {
            write_text_file_atomic(dir / (std::string("boxplot_") + metric + ".svg"), boxplot_svg(reports, metric));
        }
    }
}

}  // namespace priorflow::eval
