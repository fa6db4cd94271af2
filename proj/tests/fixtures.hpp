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

// Small configurations shared by the integration-level tests.

#pragma once

#include "priorflow/config.hpp"

namespace testutil {

inline priorflow::RunConfig tiny_config() {
    priorflow::RunConfig c;
    auto& g = c.data.gen;
    g.phonemes = 8;
    g.speakers = 3;
    g.codebook = 16;
    g.frame_rate = 20.0;
    g.min_phonemes = 4;
    g.max_phonemes = 6;
    g.dur_min = 2;
    g.dur_max = 4;
    c.data.count = 24;
    c.data.eval_count = 4;
    c.data.seed = 7;
    c.model.prior.block = {16, 2, 32, 1, 0.0, 3};
    c.model.prior.encoder_layers = 1;
    c.model.prior.decoder_layers = 1;
    c.model.vfe.block = {16, 2, 32, 1, 0.0, 1};
    c.model.vfe.embed_dim = 4;
    c.train.batch_size = 4;
    c.train.max_steps = 6;
    c.train.warmup_steps = 2;
    c.train.lr = 1e-3;
    c.train.checkpoint_every = 3;
    c.train.log_every = 1;
    c.train.prompt_min_sec = 0.1;
    c.train.prompt_max_sec = 0.3;
    c.eval.prompt_seconds = {0.1, 0.2};
    c.eval.default_prompt_sec = 0.2;
    c.eval.max_utterances = 4;
    c.eval.bench_utterances = 2;
    c.eval.euler_steps = 4;
    return c;
}

}  // namespace testutil
