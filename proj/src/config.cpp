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

#include "priorflow/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace priorflow {

namespace {

// Reads known keys of one JSON object and remembers which keys were seen so
// leftovers can be reported as unknown.
class SectionReader {
public:
    SectionReader(const Json* obj, std::string where, std::vector<std::string>& problems)
        : obj_(obj), where_(std::move(where)), problems_(problems) {
        if (obj_ != nullptr && !obj_->is_object()) {
            problems_.push_back(where_ + ": expected a table/object");
            obj_ = nullptr;
        }
    }

    ~SectionReader() {
        if (obj_ == nullptr) return;
        for (auto it = obj_->begin(); it != obj_->end(); ++it) {
            if (!known_.count(it.key())) problems_.push_back(where_ + ": unknown key '" + it.key() + "'");
        }
    }

    const Json* child(const std::string& key) {
        known_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return nullptr;
        return &(*obj_)[key];
    }

    template <class T>
    void get(const std::string& key, T& out) {
        const Json* v = child(key);
        if (v == nullptr) return;
        try {
            if constexpr (std::is_same_v<T, double>) {
                out = number(*v);
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                if (!v->is_array()) throw std::invalid_argument("expected an array");
                out.clear();
                for (const auto& e : *v) out.push_back(number(e));
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw std::invalid_argument("expected true or false");
                out = v->get<bool>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v->get<long long>() < 0) throw std::invalid_argument("expected a non-negative integer");
                }
                out = v->get<T>();
            } else {
                out = v->get<T>();
            }
        } catch (const std::exception& e) {
            problems_.push_back(where_ + "." + key + ": " + e.what());
        }
    }

    template <class E, class Parse>
    void get_enum(const std::string& key, E& out, Parse parse) {
        const Json* v = child(key);
        if (v == nullptr) return;
        try {
            if (!v->is_string()) throw std::invalid_argument("expected a string");
            out = parse(v->get<std::string>());
        } catch (const std::exception& e) {
            problems_.push_back(where_ + "." + key + ": " + e.what());
        }
    }

private:
    static double number(const Json& v) {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            const std::string s = v.get<std::string>();
            if (s == "inf" || s == "+inf" || s == "infinity") return std::numeric_limits<double>::infinity();
        }
        throw std::invalid_argument("expected a number");
    }

    const Json* obj_;
    std::string where_;
    std::vector<std::string>& problems_;
    std::set<std::string> known_;
};

Json number_or_inf(double v) {
    if (std::isinf(v) && v > 0) return "inf";
    return v;
}

void read_block(SectionReader& r, nn::BlockConfig& b) {
    r.get("d_model", b.d_model);
    r.get("n_heads", b.n_heads);
    r.get("d_ffn", b.d_ffn);
    r.get("n_layers", b.n_layers);
    r.get("dropout", b.dropout);
    r.get("conv_kernel", b.conv_kernel);
}

Json block_json(const nn::BlockConfig& b) {
    return {{"d_model", b.d_model}, {"n_heads", b.n_heads}, {"d_ffn", b.d_ffn},
            {"n_layers", b.n_layers}, {"dropout", b.dropout}, {"conv_kernel", b.conv_kernel}};
}

}  // namespace

const char* to_string(PromptStrategy s) {
    return s == PromptStrategy::first_segment ? "first_segment" : "arbitrary_segment";
}

PromptStrategy prompt_strategy_from_string(const std::string& s) {
    if (s == "first_segment" || s == "first") return PromptStrategy::first_segment;
    if (s == "arbitrary_segment" || s == "arbitrary") return PromptStrategy::arbitrary_segment;
    throw std::invalid_argument("unknown prompt strategy: " + s);
}

ModelConfig RunConfig::resolved_model() const {
    ModelConfig m = model;
    m.prior.vocab = data.gen.codebook;
    m.prior.phonemes = data.gen.phonemes;
    return m;
}

void RunConfig::validate() const {
    std::vector<std::string> problems;
    try {
        data.gen.validate();
    } catch (const codec::ConfigError& e) {
        for (const auto& p : e.problems()) problems.push_back("data: " + p);
    }
    if (data.count < 1) problems.push_back("data.count must be >= 1");
    if (data.eval_count < 0 || data.eval_count >= data.count) problems.push_back("data.eval_count must lie in [0, count)");

    model.prior.block.check("model.prior", problems);
    if (model.prior.encoder_layers < 1 || model.prior.decoder_layers < 1) {
        problems.push_back("model.prior: encoder_layers and decoder_layers must be >= 1");
    }
    if (model.prior.max_offset < 1) problems.push_back("model.prior.max_offset must be >= 1");
    model.vfe.block.check("model.vfe", problems);
    if (model.vfe.embed_dim < 1) problems.push_back("model.vfe.embed_dim must be >= 1");
    if (!(model.vfe.train_sigma >= 0.0) || !(model.vfe.infer_sigma >= 0.0)) {
        problems.push_back("model.vfe: train_sigma and infer_sigma must be >= 0");
    }
    if (!(model.vfe.tau_min > 0.0 && model.vfe.tau_min < 0.5)) problems.push_back("model.vfe.tau_min must lie in (0, 0.5)");
    if (!(model.tau_fixed > 0.0 && model.tau_fixed < 1.0)) problems.push_back("model.tau_fixed must lie in (0, 1)");

    if (train.batch_size < 1) problems.push_back("train.batch_size must be >= 1");
    if (!(train.lr > 0.0)) problems.push_back("train.lr must be > 0");
    if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) || !(train.beta2 >= 0.0 && train.beta2 < 1.0)) {
        problems.push_back("train: betas must lie in [0, 1)");
    }
    if (train.weight_decay < 0.0) problems.push_back("train.weight_decay must be >= 0");
    if (train.max_steps < 0) problems.push_back("train.max_steps must be >= 0");
    if (train.warmup_steps < 0) problems.push_back("train.warmup_steps must be >= 0");
    if (!(train.grad_clip > 0.0)) problems.push_back("train.grad_clip must be > 0");
    if (!(train.prompt_min_sec > 0.0) || train.prompt_max_sec < train.prompt_min_sec) {
        problems.push_back("train: prompt range must satisfy 0 < prompt_min_sec <= prompt_max_sec");
    }
    for (double w : {train.w_prior, train.w_dur, train.w_cfm, train.w_anchor}) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            problems.push_back("train: loss weights must be finite and >= 0");
            break;
        }
    }
    if (train.checkpoint_every < 1 || train.log_every < 1) problems.push_back("train: checkpoint_every and log_every must be >= 1");

    if (!(noise.probability >= 0.0 && noise.probability <= 1.0)) problems.push_back("noise.probability must lie in [0, 1]");
    if (!std::isfinite(noise.snr_min) || !std::isfinite(noise.snr_max) || noise.snr_max < noise.snr_min) {
        problems.push_back("noise: SNR range must be finite with snr_min <= snr_max");
    }
    if (noise.finetune_steps < 0) problems.push_back("noise.finetune_steps must be >= 0");

    if (eval.prompt_seconds.empty()) problems.push_back("eval.prompt_seconds must not be empty");
    for (double s : eval.prompt_seconds) {
        if (!(s > 0.0)) problems.push_back("eval.prompt_seconds entries must be > 0");
    }
    if (eval.snr_db.empty()) problems.push_back("eval.snr_db must not be empty");
    for (double s : eval.snr_db) {
        if (std::isnan(s) || (std::isinf(s) && s < 0)) problems.push_back("eval.snr_db entries must be finite or +inf");
    }
    if (!(eval.default_prompt_sec > 0.0)) problems.push_back("eval.default_prompt_sec must be > 0");
    if (eval.max_utterances < 1 || eval.bench_utterances < 1) problems.push_back("eval: utterance counts must be >= 1");
    if (eval.euler_steps < 1) problems.push_back("eval.euler_steps must be >= 1");

    if (!problems.empty()) throw codec::ConfigError(problems);
}

Json RunConfig::to_json() const {
    const auto& g = data.gen;
    Json snr = Json::array();
    for (double s : eval.snr_db) snr.push_back(number_or_inf(s));
    return {
        {"data",
         {{"phonemes", g.phonemes}, {"speakers", g.speakers}, {"codebook", g.codebook}, {"frame_rate", g.frame_rate},
          {"dur_min", g.dur_min}, {"dur_max", g.dur_max}, {"min_phonemes", g.min_phonemes},
          {"max_phonemes", g.max_phonemes}, {"detail_period", g.detail_period}, {"dur_jitter", g.dur_jitter},
          {"smoothness", g.smoothness}, {"timbre_dim", g.timbre_dim}, {"table_seed", g.table_seed},
          {"count", data.count}, {"eval_count", data.eval_count}, {"seed", data.seed}}},
        {"model",
         {{"tau_mode", nn::to_string(model.tau_mode)},
          {"tau_fixed", model.tau_fixed},
          {"prior",
           {{"block", block_json(model.prior.block)},
            {"encoder_layers", model.prior.encoder_layers},
            {"decoder_layers", model.prior.decoder_layers},
            {"max_offset", model.prior.max_offset},
            {"continuous_latents", model.prior.continuous_latents}}},
          {"vfe",
           {{"block", block_json(model.vfe.block)},
            {"embed_dim", model.vfe.embed_dim},
            {"fold_bias", model.vfe.fold_bias},
            {"unfold_bias", model.vfe.unfold_bias},
            {"zero_init_head", model.vfe.zero_init_head},
            {"anchor_logits", vfe::to_string(model.vfe.anchor_logits)},
            {"flow", vfe::to_string(model.vfe.flow)},
            {"train_sigma", model.vfe.train_sigma},
            {"infer_sigma", model.vfe.infer_sigma},
            {"tau_min", model.vfe.tau_min}}}}},
        {"train",
         {{"batch_size", train.batch_size}, {"lr", train.lr}, {"beta1", train.beta1}, {"beta2", train.beta2},
          {"weight_decay", train.weight_decay}, {"max_steps", train.max_steps}, {"warmup_steps", train.warmup_steps},
          {"grad_clip", train.grad_clip}, {"prompt_strategy", to_string(train.prompt_strategy)},
          {"prompt_min_sec", train.prompt_min_sec}, {"prompt_max_sec", train.prompt_max_sec},
          {"w_prior", train.w_prior}, {"w_dur", train.w_dur}, {"w_cfm", train.w_cfm}, {"w_anchor", train.w_anchor},
          {"seed", train.seed}, {"checkpoint_every", train.checkpoint_every}, {"log_every", train.log_every}}},
        {"noise",
         {{"enabled", noise.enabled}, {"probability", noise.probability}, {"snr_min", noise.snr_min},
          {"snr_max", noise.snr_max}, {"finetune_steps", noise.finetune_steps}}},
        {"eval",
         {{"prompt_seconds", eval.prompt_seconds}, {"snr_db", snr}, {"default_prompt_sec", eval.default_prompt_sec},
          {"max_utterances", eval.max_utterances}, {"euler_steps", eval.euler_steps},
          {"bench_utterances", eval.bench_utterances}, {"seed", eval.seed}}},
    };
}

RunConfig RunConfig::from_json(const Json& j) {
    RunConfig c;
    std::vector<std::string> problems;
    {
        SectionReader root(&j, "config", problems);
        {
            SectionReader r(root.child("data"), "data", problems);
            auto& g = c.data.gen;
            r.get("phonemes", g.phonemes);
            r.get("speakers", g.speakers);
            r.get("codebook", g.codebook);
            r.get("frame_rate", g.frame_rate);
            r.get("dur_min", g.dur_min);
            r.get("dur_max", g.dur_max);
            r.get("min_phonemes", g.min_phonemes);
            r.get("max_phonemes", g.max_phonemes);
            r.get("detail_period", g.detail_period);
            r.get("dur_jitter", g.dur_jitter);
            r.get("smoothness", g.smoothness);
            r.get("timbre_dim", g.timbre_dim);
            r.get("table_seed", g.table_seed);
            r.get("count", c.data.count);
            r.get("eval_count", c.data.eval_count);
            r.get("seed", c.data.seed);
        }
        {
            SectionReader r(root.child("model"), "model", problems);
            r.get_enum("tau_mode", c.model.tau_mode, nn::tau_mode_from_string);
            r.get("tau_fixed", c.model.tau_fixed);
            {
                SectionReader p(r.child("prior"), "model.prior", problems);
                {
                    SectionReader b(p.child("block"), "model.prior.block", problems);
                    read_block(b, c.model.prior.block);
                }
                p.get("encoder_layers", c.model.prior.encoder_layers);
                p.get("decoder_layers", c.model.prior.decoder_layers);
                p.get("max_offset", c.model.prior.max_offset);
                p.get("continuous_latents", c.model.prior.continuous_latents);
            }
            {
                SectionReader v(r.child("vfe"), "model.vfe", problems);
                {
                    SectionReader b(v.child("block"), "model.vfe.block", problems);
                    read_block(b, c.model.vfe.block);
                }
                v.get("embed_dim", c.model.vfe.embed_dim);
                v.get("fold_bias", c.model.vfe.fold_bias);
                v.get("unfold_bias", c.model.vfe.unfold_bias);
                v.get("zero_init_head", c.model.vfe.zero_init_head);
                v.get_enum("anchor_logits", c.model.vfe.anchor_logits, vfe::anchor_logits_from_string);
                v.get_enum("flow", c.model.vfe.flow, vfe::flow_kind_from_string);
                v.get("train_sigma", c.model.vfe.train_sigma);
                v.get("infer_sigma", c.model.vfe.infer_sigma);
                v.get("tau_min", c.model.vfe.tau_min);
            }
        }
        {
            SectionReader r(root.child("train"), "train", problems);
            auto& t = c.train;
            r.get("batch_size", t.batch_size);
            r.get("lr", t.lr);
            r.get("beta1", t.beta1);
            r.get("beta2", t.beta2);
            r.get("weight_decay", t.weight_decay);
            r.get("max_steps", t.max_steps);
            r.get("warmup_steps", t.warmup_steps);
            r.get("grad_clip", t.grad_clip);
            r.get_enum("prompt_strategy", t.prompt_strategy, prompt_strategy_from_string);
            r.get("prompt_min_sec", t.prompt_min_sec);
            r.get("prompt_max_sec", t.prompt_max_sec);
            r.get("w_prior", t.w_prior);
            r.get("w_dur", t.w_dur);
            r.get("w_cfm", t.w_cfm);
            r.get("w_anchor", t.w_anchor);
            r.get("seed", t.seed);
            r.get("checkpoint_every", t.checkpoint_every);
            r.get("log_every", t.log_every);
        }
        {
            SectionReader r(root.child("noise"), "noise", problems);
            r.get("enabled", c.noise.enabled);
            r.get("probability", c.noise.probability);
            r.get("snr_min", c.noise.snr_min);
            r.get("snr_max", c.noise.snr_max);
            r.get("finetune_steps", c.noise.finetune_steps);
        }
        {
            SectionReader r(root.child("eval"), "eval", problems);
            r.get("prompt_seconds", c.eval.prompt_seconds);
            r.get("snr_db", c.eval.snr_db);
            r.get("default_prompt_sec", c.eval.default_prompt_sec);
            r.get("max_utterances", c.eval.max_utterances);
            r.get("euler_steps", c.eval.euler_steps);
            r.get("bench_utterances", c.eval.bench_utterances);
            r.get("seed", c.eval.seed);
        }
    }
    // Range checks run on whatever parsed, so one report lists everything.
    try {
        c.validate();
    } catch (const codec::ConfigError& e) {
        problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
    if (!problems.empty()) throw codec::ConfigError(problems);
    return c;
}

void apply_overrides(Json& doc, const std::vector<std::string>& overrides) {
    std::vector<std::string> problems;
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            problems.push_back("override '" + o + "' is not of the form section.key=value");
            continue;
        }
        const std::string path = o.substr(0, eq);
        const std::string raw = o.substr(eq + 1);
        Json value = Json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        Json* node = &doc;
        std::stringstream ss(path);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->is_object()) *node = Json::object();
            node = &(*node)[parts[i]];
        }
        if (!node->is_object()) *node = Json::object();
        (*node)[parts.back()] = value;
    }
    if (!problems.empty()) throw codec::ConfigError(problems);
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    Json doc = Json::object();
    if (!path.empty()) {
        try {
            doc = Json::parse(read_text_file(path));
        } catch (const Json::parse_error& e) {
            throw codec::ConfigError({path.string() + ": " + e.what()});
        }
    }
    apply_overrides(doc, overrides);
    return RunConfig::from_json(doc);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace priorflow
