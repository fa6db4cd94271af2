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

#include "priorflow/cli.hpp"

#include <ostream>
#include <sstream>
#include <thread>

namespace priorflow::cli {

namespace {

RunConfig resolve(const CommonArgs& args, Json base, const char* seed_key) {
    if (!args.config.empty()) {
        try {
            base = Json::parse(read_text_file(args.config));
        } catch (const Json::parse_error& e) {
            throw codec::ConfigError({args.config.string() + ": " + e.what()});
        }
    }
    std::vector<std::string> overrides = args.overrides;
    if (args.seed) overrides.push_back(std::string(seed_key) + "=" + std::to_string(*args.seed));
    apply_overrides(base, overrides);
    return RunConfig::from_json(base);
}

LoadedCheckpoint load_with_overrides(const std::filesystem::path& path, const CommonArgs& args, const char* seed_key) {
    LoadedCheckpoint ck = load_checkpoint(path);
    CommonArgs no_file = args;
    no_file.config.clear();
    const Json before = ck.info.config.to_json();
    ck.info.config = resolve(no_file, before, seed_key);
    const Json after = ck.info.config.to_json();
    if (after["data"] != before["data"] || after["model"] != before["model"]) {
        throw codec::ConfigError({"overrides may not change a checkpoint's [data] or [model] sections"});
    }
    return ck;
}

std::string hardware_note() {
    std::ostringstream os;
    os << "threads=" << std::thread::hardware_concurrency();
#if defined(__VERSION__)
    os << ", compiler=" << __VERSION__;
#endif
    return os.str();
}

Json latency_json(const eval::LatencyResult& r) {
    return {{"nfe", r.nfe},
            {"rtf_median", r.rtf_median},
            {"rtf_iqr", r.rtf_iqr},
            {"e2e_rtf_median", r.e2e_rtf_median},
            {"samples", r.samples}};
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
    std::string s = text;
    for (char& c : s) {
        if (c == ',') c = ' ';
    }
    std::istringstream in(s);
    std::vector<int> out;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) throw std::invalid_argument("not an integer: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

Dataset load_or_generate(const std::filesystem::path& path, const RunConfig& cfg) {
    if (path.empty()) return generate_dataset(cfg);
    Dataset ds = read_dataset(path);
    if (ds.run_config["data"] != cfg.to_json()["data"]) {
        throw DatasetError(path.string() + ": dataset was generated with a different [data] section");
    }
    return ds;
}

Dataset cmd_datagen(const DatagenArgs& args) {
    if (args.out.empty()) throw std::invalid_argument("datagen: --out is required");
    const RunConfig cfg = resolve(args.common, Json::object(), "data.seed");
    Dataset ds = generate_dataset(cfg);
    write_dataset(args.out, ds);
    return ds;
}

train::TrainResult cmd_train(const TrainArgs& args, std::ostream& log) {
    if (args.common.config.empty()) throw std::invalid_argument("train: --config is required");
    if (args.out_dir.empty()) throw std::invalid_argument("train: --out is required");
    CommonArgs common = args.common;
    if (args.prompt_strategy) common.overrides.push_back(std::string("train.prompt_strategy=") + to_string(*args.prompt_strategy));
    if (args.steps) common.overrides.push_back("train.max_steps=" + std::to_string(*args.steps));
    const RunConfig cfg = resolve(common, Json::object(), "train.seed");
    const Dataset ds = load_or_generate(args.data, cfg);
    Model model(cfg.resolved_model(), cfg.train.seed);
    train::TrainOptions opts;
    opts.out_dir = args.out_dir;
    opts.on_step = [&](const train::StepLog& s) {
        if (s.step % cfg.train.log_every == 0) {
            log << "step " << s.step << "  loss " << s.loss.total << "  (prior " << s.loss.prior << ", dur "
                << s.loss.dur << ", cfm " << s.loss.cfm << ", anchor " << s.loss.anchor << ")  tau " << s.tau << '\n';
        }
    };
    write_text_file_atomic(args.out_dir / "config.json", cfg.to_json().dump(2) + "\n");
    train::TrainResult r = train::train_loop(cfg, ds, model, opts);
    if (r.halted) log << "halted: " << r.diagnostic << '\n';
    log << "checkpoint: " << r.last_checkpoint.string() << '\n';
    return r;
}

train::TrainResult cmd_finetune_noise(const FinetuneArgs& args, std::ostream& log) {
    if (args.out_dir.empty()) throw std::invalid_argument("finetune-noise: --out is required");
    LoadedCheckpoint ck = load_with_overrides(args.checkpoint, args.common, "train.seed");
    RunConfig cfg = ck.info.config;
    cfg.noise.enabled = true;
    if (args.steps) cfg.noise.finetune_steps = *args.steps;
    cfg.validate();
    const Dataset ds = load_or_generate(args.data, cfg);
    train::TrainOptions opts;
    opts.out_dir = args.out_dir;
    opts.max_steps = cfg.noise.finetune_steps;
    opts.noise = true;
    opts.start_step = ck.info.step;
    opts.duration_trained = ck.info.duration_trained;
    opts.on_step = [&](const train::StepLog& s) {
        if (s.step % cfg.train.log_every == 0) log << "step " << s.step << "  loss " << s.loss.total << '\n';
    };
    train::TrainResult r = train::train_loop(cfg, ds, *ck.model, opts);
    if (r.halted) log << "halted: " << r.diagnostic << '\n';
    log << "checkpoint: " << r.last_checkpoint.string() << '\n';
    return r;
}

Json cmd_sample(const SampleArgs& args) {
    const LoadedCheckpoint ck = load_checkpoint(args.checkpoint);
    const RunConfig& cfg = ck.info.config;
    if (args.phonemes.empty()) throw std::invalid_argument("sample: --text needs at least one phoneme id");
    for (int p : args.phonemes) {
        if (p < 0 || p >= cfg.data.gen.phonemes) {
            throw std::invalid_argument("sample: phoneme id " + std::to_string(p) + " outside [0, " +
                                        std::to_string(cfg.data.gen.phonemes) + ")");
        }
    }
    const Dataset ds = load_or_generate(args.data, cfg);
    const auto it = std::find_if(ds.records.begin(), ds.records.end(), [&](const Record& r) { return r.id == args.prompt_id; });
    if (it == ds.records.end()) throw std::invalid_argument("sample: no utterance with id '" + args.prompt_id + "'");
    const int len = std::clamp(static_cast<int>(std::lround(args.prompt_sec * cfg.data.gen.frame_rate)), 1,
                               it->codes.frames());

    eval::SynthesisRequest req;
    req.phonemes = args.phonemes;
    req.durations = args.durations;
    if (req.durations && req.durations->size() != req.phonemes.size()) {
        throw std::invalid_argument("sample: --durations must have one entry per phoneme");
    }
    req.prompt = it->codes.slice(0, len);
    req.steps = args.steps;
    req.seed = args.seed;
    const eval::Synthesis s = eval::synthesize(*ck.model, ck.info.duration_trained, req);

    const codec::ToyCodec codec(cfg.data.gen);
    Json out = Json::object();
    out["prompt_id"] = it->id;
    out["prompt_frames"] = len;
    out["speaker"] = it->spec.speaker;
    out["phonemes"] = args.phonemes;
    out["sampler"] = ck.model->config().vfe.flow == vfe::FlowKind::one_step ? "one_step" : "euler";
    out["nfe"] = s.nfe;
    out["tau"] = s.tau;
    out["frames"] = s.codes.frames();
    out["codes"] = encode_codes_hex(s.codes);
    out["transcript"] = codec.transcript(s.codes);
    out["wer"] = eval::wer(args.phonemes, codec.transcript(s.codes));
    out["inferred_speaker"] = eval::infer_speaker(codec, s.codes);
    out["durations_predicted"] = s.durations_predicted;
    if (s.untrained_duration_predictor) out["warning"] = "durations came from an untrained duration predictor";
    out["seed"] = args.seed;
    return out;
}

std::vector<eval::MetricsReport> cmd_eval(const EvalArgs& args) {
    if (args.checkpoints.empty()) throw std::invalid_argument("eval: at least one --checkpoint is required");
    if (args.out_dir.empty()) throw std::invalid_argument("eval: --out is required");
    std::vector<LoadedCheckpoint> loaded;
    for (const auto& p : args.checkpoints) loaded.push_back(load_with_overrides(p, args.common, "eval.seed"));
    const RunConfig& first = loaded.front().info.config;
    const Dataset ds = load_or_generate(args.data, first);

    std::vector<eval::EvalModel> models;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        const auto& ck = loaded[i];
        std::string label = args.checkpoints[i].stem().string();
        if (args.protocol == eval::Protocol::ablation) label = to_string(ck.info.config.train.prompt_strategy);
        models.push_back({label, ck.model.get(), ck.info.duration_trained, ck.info.config});
    }
    eval::SuiteOptions opts;
    opts.steps = args.steps;
    auto reports = eval::run_suite(models, ds, first.eval, args.protocol, opts);
    Json run = Json::object();
    run["protocol"] = eval::to_string(args.protocol);
    run["checkpoints"] = Json::array();
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        run["checkpoints"].push_back(
            {{"path", args.checkpoints[i].string()}, {"step", loaded[i].info.step}, {"config", loaded[i].info.config.to_json()}});
    }
    eval::write_reports(args.out_dir, reports, run, args.plots);
    return reports;
}

Json cmd_bench(const BenchArgs& args) {
    const LoadedCheckpoint ck = load_with_overrides(args.checkpoint, args.common, "eval.seed");
    const RunConfig& cfg = ck.info.config;
    if (ck.model->config().vfe.flow != vfe::FlowKind::one_step) {
        throw std::invalid_argument("bench: --checkpoint must be a one-step model");
    }
    std::unique_ptr<Model> untrained;
    std::optional<LoadedCheckpoint> base_ck;
    const Model* baseline = nullptr;
    if (!args.baseline.empty()) {
        base_ck = load_checkpoint(args.baseline);
        if (base_ck->model->config().vfe.flow != vfe::FlowKind::classical) {
            throw std::invalid_argument("bench: --baseline must be a classical-flow checkpoint");
        }
        baseline = base_ck->model.get();
    } else {
        // Timing depends on shapes only, so an untrained twin is a fair baseline.
        ModelConfig mc = ck.model->config();
        mc.vfe.flow = vfe::FlowKind::classical;
        untrained = std::make_unique<Model>(mc, cfg.train.seed);
        baseline = untrained.get();
    }

    const Dataset ds = load_or_generate(args.data, cfg);
    const auto records = ds.eval_split();
    const auto pairs = eval::make_pairs(records, cfg.eval.bench_utterances, cfg.eval.seed);
    if (pairs.empty()) throw std::invalid_argument("bench: no evaluation pairs");
    const int steps = args.steps.value_or(cfg.eval.euler_steps);
    std::vector<eval::SynthesisRequest> one, euler;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Record& t = records[pairs[i].target];
        const Record& p = records[pairs[i].prompt];
        eval::SynthesisRequest req;
        req.phonemes = t.spec.phonemes;
        req.durations = t.spec.durations;  // identical output shapes for both samplers
        const int len = std::clamp(static_cast<int>(std::lround(cfg.eval.default_prompt_sec * cfg.data.gen.frame_rate)),
                                   1, p.codes.frames());
        req.prompt = p.codes.slice(0, len);
        req.seed = record_seed(cfg.eval.seed, i);
        one.push_back(req);
        req.steps = steps;
        euler.push_back(req);
    }
    const std::string note = hardware_note();
    const auto a = eval::latency_bench(*ck.model, ck.info.duration_trained, one, cfg.data.gen.frame_rate, note);
    const auto b = eval::latency_bench(*baseline, false, euler, cfg.data.gen.frame_rate, note);
    Json out = {{"one_step", latency_json(a)},
                {"euler", latency_json(b)},
                {"euler_steps", steps},
                {"rtf_ratio", b.rtf_median / a.rtf_median},
                {"baseline", args.baseline.empty() ? "untrained twin" : args.baseline.string()},
                {"hardware", note}};
    if (!args.out.empty()) write_text_file_atomic(args.out, out.dump(2) + "\n");
    return out;
}

}  // namespace priorflow::cli
