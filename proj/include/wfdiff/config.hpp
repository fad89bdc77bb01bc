#pragma once

// Run configuration, stored as JSON. Every key is optional; missing keys take
// the defaults below, unknown keys are rejected.
//
// {
//   "seed": 0,
//   "net": {"image_channels": 3, "scales": 2, "base_channels": 16,
//           "blocks_per_scale": 1, "heads": 4, "dw_kernels": [3, 5],
//           "sdu_kernels": [1, 3, 5], "ffn_expansion": 2},
//   "stage1": {"steps": 2000, "lr": 0.001, "clip_norm": 1.0,
//              "weight_high_frequency": 1.0, "weight_amplitude": 1.0,
//              "log_every": 100},
//   "diffusion": {"steps": 50, "beta_start": null, "beta_end": null,
//                 "loss": "l1"},
//   "denoiser": {"base_channels": 16, "scales": 2, "time_dim": 32},
//   "stage2": {"steps": 2000, "lr": 0.001, "clip_norm": 1.0, "log_every": 100}
// }
//
// A null beta range selects default_schedule(steps).

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "wfdiff/blocks.hpp"
#include "wfdiff/diffusion.hpp"

namespace wfdiff {

struct TrainConfig {
    std::size_t steps = 2000;
    double lr = 1e-3;
    double clip_norm = 1.0;
    std::size_t log_every = 100;
    bool operator==(const TrainConfig&) const = default;
};

struct DiffusionConfig {
    std::size_t steps = 50;
    std::optional<double> beta_start;
    std::optional<double> beta_end;
    NoiseLossNorm loss = NoiseLossNorm::l1;

    DiffusionSchedule schedule() const { return schedule(steps); }

    /// Schedule for a different chain length (beta range kept if explicit).
    DiffusionSchedule schedule(std::size_t t) const {
        if (beta_start && beta_end) return make_schedule(t, *beta_start, *beta_end);
        return default_schedule(t);
    }

    bool operator==(const DiffusionConfig&) const = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    WFINetConfig net;
    TrainConfig stage1;
    Stage1LossWeights weights;
    DiffusionConfig diffusion;
    DenoiserConfig denoiser;
    TrainConfig stage2;

    void validate() const {
        net.validate();
        denoiser.validate();
        if (denoiser.data_channels != net.image_channels) {
            throw ConfigError("denoiser data channels must match the image channel count");
        }
        if (stage1.lr <= 0 || stage2.lr <= 0) throw ConfigError("learning rates must be positive");
        if (stage1.clip_norm < 0 || stage2.clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
        if (weights.high_frequency < 0 || weights.amplitude < 0) throw ConfigError("loss weights must be >= 0");
        if (diffusion.beta_start.has_value() != diffusion.beta_end.has_value()) {
            throw ConfigError("diffusion: set both beta_start and beta_end, or neither");
        }
        (void)diffusion.schedule();
    }

    bool operator==(const RunConfig& o) const {
        return seed == o.seed && net == o.net && stage1 == o.stage1 && weights.high_frequency == o.weights.high_frequency &&
               weights.amplitude == o.weights.amplitude && diffusion == o.diffusion && denoiser == o.denoiser &&
               stage2 == o.stage2;
    }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (!known.count(key)) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
    }
}

template <class V>
void read_key(const json& obj, const char* key, V& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        if constexpr (std::is_unsigned_v<V>) {
            const auto& v = obj.at(key);
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("");
            out = v.get<V>();
        } else {
            out = obj.at(key).get<V>();
        }
    } catch (const std::exception&) {
        throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
    }
}

inline void read_optional(const json& obj, const char* key, std::optional<double>& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (v.is_null()) {
        out.reset();
    } else if (v.is_number()) {
        out = v.get<double>();
    } else {
        throw ConfigError("config key '" + where + "." + key + "' must be a number or null");
    }
}

inline void read_train(const json& j, TrainConfig& t, const std::string& where, Stage1LossWeights* weights) {
    std::set<std::string> known{"steps", "lr", "clip_norm", "log_every"};
    if (weights) known.insert({"weight_high_frequency", "weight_amplitude"});
    reject_unknown(j, known, where);
    read_key(j, "steps", t.steps, where);
    read_key(j, "lr", t.lr, where);
    read_key(j, "clip_norm", t.clip_norm, where);
    read_key(j, "log_every", t.log_every, where);
    if (weights) {
        read_key(j, "weight_high_frequency", weights->high_frequency, where);
        read_key(j, "weight_amplitude", weights->amplitude, where);
    }
}

inline json train_json(const TrainConfig& t) {
    return {{"steps", t.steps}, {"lr", t.lr}, {"clip_norm", t.clip_norm}, {"log_every", t.log_every}};
}

inline std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte > 0 ? byte - 1 : 0, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) {
    using detail::json;
    json net = {{"image_channels", c.net.image_channels}, {"scales", c.net.scales},
                {"base_channels", c.net.base_channels},   {"blocks_per_scale", c.net.blocks_per_scale},
                {"heads", c.net.heads},                   {"dw_kernels", c.net.dw_kernels},
                {"sdu_kernels", c.net.sdu_kernels},       {"ffn_expansion", c.net.ffn_expansion}};
    json stage1 = detail::train_json(c.stage1);
    stage1["weight_high_frequency"] = c.weights.high_frequency;
    stage1["weight_amplitude"] = c.weights.amplitude;
    json diffusion = {{"steps", c.diffusion.steps},
                      {"beta_start", c.diffusion.beta_start ? json(*c.diffusion.beta_start) : json(nullptr)},
                      {"beta_end", c.diffusion.beta_end ? json(*c.diffusion.beta_end) : json(nullptr)},
                      {"loss", c.diffusion.loss == NoiseLossNorm::l1 ? "l1" : "l2"}};
    json denoiser = {{"base_channels", c.denoiser.base_channels},
                     {"scales", c.denoiser.scales},
                     {"time_dim", c.denoiser.time_dim}};
    return {{"seed", c.seed},         {"net", net},           {"stage1", stage1},
            {"diffusion", diffusion}, {"denoiser", denoiser}, {"stage2", detail::train_json(c.stage2)}};
}

inline std::string dump_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::reject_unknown(j, {"seed", "net", "stage1", "diffusion", "denoiser", "stage2"}, "");
    detail::read_key(j, "seed", c.seed, "");
    if (j.contains("net")) {
        const auto& n = j.at("net");
        detail::reject_unknown(n,
                               {"image_channels", "scales", "base_channels", "blocks_per_scale", "heads", "dw_kernels",
                                "sdu_kernels", "ffn_expansion"},
                               "net");
        detail::read_key(n, "image_channels", c.net.image_channels, "net");
        detail::read_key(n, "scales", c.net.scales, "net");
        detail::read_key(n, "base_channels", c.net.base_channels, "net");
        detail::read_key(n, "blocks_per_scale", c.net.blocks_per_scale, "net");
        detail::read_key(n, "heads", c.net.heads, "net");
        detail::read_key(n, "dw_kernels", c.net.dw_kernels, "net");
        detail::read_key(n, "sdu_kernels", c.net.sdu_kernels, "net");
        detail::read_key(n, "ffn_expansion", c.net.ffn_expansion, "net");
    }
    if (j.contains("stage1")) detail::read_train(j.at("stage1"), c.stage1, "stage1", &c.weights);
    if (j.contains("stage2")) detail::read_train(j.at("stage2"), c.stage2, "stage2", nullptr);
    if (j.contains("diffusion")) {
        const auto& d = j.at("diffusion");
        detail::reject_unknown(d, {"steps", "beta_start", "beta_end", "loss"}, "diffusion");
        detail::read_key(d, "steps", c.diffusion.steps, "diffusion");
        detail::read_optional(d, "beta_start", c.diffusion.beta_start, "diffusion");
        detail::read_optional(d, "beta_end", c.diffusion.beta_end, "diffusion");
        if (d.contains("loss")) {
            const auto& l = d.at("loss");
            if (l == "l1") {
                c.diffusion.loss = NoiseLossNorm::l1;
            } else if (l == "l2") {
                c.diffusion.loss = NoiseLossNorm::l2;
            } else {
                throw ConfigError("diffusion.loss must be \"l1\" or \"l2\"");
            }
        }
    }
    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        detail::reject_unknown(d, {"base_channels", "scales", "time_dim"}, "denoiser");
        detail::read_key(d, "base_channels", c.denoiser.base_channels, "denoiser");
        detail::read_key(d, "scales", c.denoiser.scales, "denoiser");
        detail::read_key(d, "time_dim", c.denoiser.time_dim, "denoiser");
    }
    c.denoiser.data_channels = c.net.image_channels;
    c.validate();
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error at " + detail::line_column(text, e.byte) + ": " + e.what());
    }
    return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace wfdiff
