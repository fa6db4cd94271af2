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

// priorflow: command-line entry point.
//
// Config precedence: built-in defaults < --config file < --set overrides < --seed.

#include "priorflow/cli.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace priorflow;

namespace {

void add_common(CLI::App* cmd, cli::CommonArgs& common, bool config_required) {
    auto* opt = cmd->add_option("--config", common.config, "JSON run configuration");
    if (config_required) opt->required();
    cmd->add_option("--set", common.overrides, "override a config value, e.g. train.lr=3e-4 (repeatable)");
    cmd->add_option("--seed", common.seed, "seed for this command");
}

void print_reports(const std::vector<eval::MetricsReport>& reports) {
    for (const auto& r : reports) {
        std::printf("%-20s %-26s WER %.4f  F0 acc %.3f  F0 RMSE %.4f  energy acc %.3f  energy RMSE %.4f  spk %.3f  NFE %d  n=%d\n",
                    r.label.c_str(), r.condition.c_str(), r.wer, r.f0_accuracy, r.f0_rmse, r.energy_accuracy,
                    r.energy_rmse, r.speaker_agreement, r.nfe, r.samples);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"priorflow: one-step prior-conditioned flow matching for codec-token TTS"};
    app.require_subcommand(1);

    cli::DatagenArgs datagen;
    auto* c_datagen = app.add_subcommand("datagen", "generate a synthetic dataset file");
    add_common(c_datagen, datagen.common, false);
    c_datagen->add_option("--out", datagen.out, "output .jsonl path")->required();

    cli::TrainArgs train;
    std::string strategy;
    auto* c_train = app.add_subcommand("train", "train prior generator and vector field estimator jointly");
    add_common(c_train, train.common, true);
    c_train->add_option("--data", train.data, "dataset file (generated from [data] when omitted)");
    c_train->add_option("--out", train.out_dir, "output directory for checkpoints and the training log")->required();
    c_train->add_option("--prompt-strategy", strategy, "first_segment or arbitrary_segment")
        ->check(CLI::IsMember({"first_segment", "arbitrary_segment"}));
    c_train->add_option("--steps", train.steps, "override train.max_steps");

    cli::FinetuneArgs finetune;
    auto* c_ft = app.add_subcommand("finetune-noise", "noise-aware fine-tuning of a checkpoint");
    add_common(c_ft, finetune.common, false);
    c_ft->add_option("--checkpoint", finetune.checkpoint, "checkpoint to start from")->required();
    c_ft->add_option("--data", finetune.data, "dataset file");
    c_ft->add_option("--out", finetune.out_dir, "output directory")->required();
    c_ft->add_option("--steps", finetune.steps, "override noise.finetune_steps");

    cli::SampleArgs sample;
    std::string text, durations;
    std::uint64_t sample_seed = 0;
    auto* c_sample = app.add_subcommand("sample", "synthesize codes for a phoneme sequence");
    c_sample->add_option("--checkpoint", sample.checkpoint, "model checkpoint")->required();
    c_sample->add_option("--data", sample.data, "dataset file holding the prompt utterance");
    c_sample->add_option("--text", text, "phoneme ids, e.g. \"3 5 7\"")->required();
    c_sample->add_option("--durations", durations, "frames per phoneme (predicted when omitted)");
    c_sample->add_option("--prompt-id", sample.prompt_id, "utterance id used as the acoustic prompt")->required();
    c_sample->add_option("--prompt-sec", sample.prompt_sec, "prompt length in seconds");
    c_sample->add_option("--steps", sample.steps, "1: one-step sampler; >1: Euler baseline (classical checkpoint)")
        ->check(CLI::PositiveNumber);
    c_sample->add_option("--seed", sample_seed, "sampling seed");
    std::filesystem::path sample_out;
    c_sample->add_option("--out", sample_out, "write the result as JSON here");

    cli::EvalArgs ev;
    std::string protocol = "sweep";
    auto* c_eval = app.add_subcommand("eval", "run an evaluation protocol");
    add_common(c_eval, ev.common, false);
    c_eval->add_option("--protocol", protocol, "sweep, snr or ablation")->check(CLI::IsMember({"sweep", "snr", "ablation"}));
    c_eval->add_option("--checkpoint", ev.checkpoints, "checkpoint (repeat for ablation)")->required();
    c_eval->add_option("--data", ev.data, "dataset file");
    c_eval->add_option("--out", ev.out_dir, "report directory")->required();
    c_eval->add_flag("--plots", ev.plots, "also write SVG box plots");
    c_eval->add_option("--steps", ev.steps, "sampler steps")->check(CLI::PositiveNumber);

    cli::BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench", "NFE and real-time factor: one-step vs Euler");
    add_common(c_bench, bench.common, false);
    c_bench->add_option("--checkpoint", bench.checkpoint, "one-step checkpoint")->required();
    c_bench->add_option("--baseline", bench.baseline, "classical checkpoint (an untrained twin when omitted)");
    c_bench->add_option("--data", bench.data, "dataset file");
    c_bench->add_option("--steps", bench.steps, "Euler steps of the baseline")->check(CLI::PositiveNumber);
    c_bench->add_option("--out", bench.out, "write results as JSON here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_datagen->parsed()) {
            const Dataset ds = cli::cmd_datagen(datagen);
            std::cout << "wrote " << ds.records.size() << " records to " << datagen.out.string() << '\n';
        } else if (c_train->parsed()) {
            if (!strategy.empty()) train.prompt_strategy = prompt_strategy_from_string(strategy);
            const auto r = cli::cmd_train(train, std::cout);
            return r.halted ? 3 : 0;
        } else if (c_ft->parsed()) {
            const auto r = cli::cmd_finetune_noise(finetune, std::cout);
            return r.halted ? 3 : 0;
        } else if (c_sample->parsed()) {
            sample.phonemes = cli::parse_int_list(text);
            if (!durations.empty()) sample.durations = cli::parse_int_list(durations);
            sample.seed = sample_seed;
            const Json out = cli::cmd_sample(sample);
            if (!sample_out.empty()) write_text_file_atomic(sample_out, out.dump(2) + "\n");
            std::cout << out.dump(2) << '\n';
        } else if (c_eval->parsed()) {
            ev.protocol = eval::protocol_from_string(protocol);
            print_reports(cli::cmd_eval(ev));
        } else if (c_bench->parsed()) {
            std::cout << cli::cmd_bench(bench).dump(2) << '\n';
        }
    } catch (const codec::ConfigError& e) {
        std::cerr << "configuration errors:\n";
        for (const auto& p : e.problems()) std::cerr << "  - " << p << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
