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

#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>
#include <filesystem>

using namespace priorflow;

namespace {

bool mentions(const codec::ConfigError& e, const std::string& needle) {
    for (const auto& p : e.problems()) {
        if (p.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("empty document gives the defaults") {
    const RunConfig c = RunConfig::from_json(Json::object());
    CHECK(c.train.batch_size == 16);
    CHECK(c.train.lr == doctest::Approx(1e-4));
    CHECK(c.train.beta2 == doctest::Approx(0.98));
    CHECK(c.train.grad_clip == 1.0);
    CHECK(c.model.vfe.train_sigma == 1.0);
    CHECK(c.model.vfe.infer_sigma == 0.0);
    CHECK(c.model.tau_mode == nn::TauMode::learned_global);
    CHECK(c.data.gen.frame_rate == 80.0);
    CHECK(std::isinf(c.eval.snr_db.front()));
}

TEST_CASE("round trip through JSON") {
    RunConfig c = testutil::tiny_config();
    c.model.vfe.flow = vfe::FlowKind::classical;
    c.model.vfe.anchor_logits = vfe::AnchorLogits::neg_sq_distance;
    c.train.prompt_strategy = PromptStrategy::first_segment;
    c.noise.enabled = true;
    const Json j = c.to_json();
    const RunConfig back = RunConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.model.vfe.flow == vfe::FlowKind::classical);
    CHECK(std::isinf(back.eval.snr_db.front()));
    CHECK(j["eval"]["snr_db"][0] == "inf");
}

TEST_CASE("every problem is reported at once") {
    Json j = {{"train", {{"lr", -1.0}, {"bogus", 3}}}, {"model", {{"vfe", {{"tau_min", 0.9}}}}}, {"extra", 1}};
    try {
        RunConfig::from_json(j);
        FAIL("expected ConfigError");
    } catch (const codec::ConfigError& e) {
        CHECK(mentions(e, "train: unknown key 'bogus'"));
        CHECK(mentions(e, "config: unknown key 'extra'"));
        CHECK(mentions(e, "train.lr"));
        CHECK(mentions(e, "tau_min"));
        CHECK(e.problems().size() == 4);
    }
    try {
        RunConfig::from_json({{"train", {{"lr", -1.0}}}, {"model", {{"vfe", {{"tau_min", 0.9}}}}}});
        FAIL("expected ConfigError");
    } catch (const codec::ConfigError& e) {
        CHECK(mentions(e, "train.lr"));
        CHECK(mentions(e, "tau_min"));
    }
}

TEST_CASE("type errors name the key") {
    try {
        RunConfig::from_json({{"train", {{"batch_size", "many"}}}});
        FAIL("expected ConfigError");
    } catch (const codec::ConfigError& e) {
        CHECK(mentions(e, "train.batch_size"));
    }
    CHECK_THROWS_AS(RunConfig::from_json({{"model", {{"tau_mode", "sometimes"}}}}), codec::ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"eval_count", 5000}}}}), codec::ConfigError);
}

TEST_CASE("overrides") {
    Json doc = testutil::tiny_config().to_json();
    apply_overrides(doc, {"train.lr=0.003", "model.vfe.flow=classical", "noise.enabled=true", "eval.snr_db=[\"inf\",3]"});
    const RunConfig c = RunConfig::from_json(doc);
    CHECK(c.train.lr == doctest::Approx(0.003));
    CHECK(c.model.vfe.flow == vfe::FlowKind::classical);
    CHECK(c.noise.enabled);
    CHECK(c.eval.snr_db.size() == 2);
    CHECK_THROWS_AS(apply_overrides(doc, {"novalue"}), codec::ConfigError);
}

TEST_CASE("load_config from file") {
    const auto dir = std::filesystem::temp_directory_path() / "priorflow_test_config";
    std::filesystem::create_directories(dir);
    const auto path = dir / "c.json";
    write_text_file_atomic(path, testutil::tiny_config().to_json().dump(2));
    const RunConfig c = load_config(path, {"train.max_steps=9"});
    CHECK(c.train.max_steps == 9);
    CHECK(c.data.gen.codebook == 16);

    write_text_file_atomic(path, "{ not json");
    CHECK_THROWS_AS(load_config(path), codec::ConfigError);
    CHECK_THROWS(load_config(dir / "missing.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("resolved model takes sizes from the data section") {
    const RunConfig c = testutil::tiny_config();
    const ModelConfig m = c.resolved_model();
    CHECK(m.prior.vocab == 16);
    CHECK(m.prior.phonemes == 8);
}
