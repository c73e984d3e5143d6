#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace clipvos {

enum class DeltaVariant { masked_area, connected_components, center_of_mass };
enum class ReweightTargets { focal_only, dice_only, both, none };
enum class RteMode { multiplicative, additive, off };
enum class JtrRounding { ceil_mode, floor_mode };
enum class LrSchedule { constant, step };

// Full training/inference configuration. Plain aggregate; everything downstream
// takes it by const reference.
struct ModelConfig {
    // video / clip geometry
    int video_length = 12;   // frames per training video, reference included
    int clip_length = 2;     // L, frames processed jointly per clip
    int bank_size = 7;       // N, memory capacity in frames (reference included)
    int input_resolution = 64;

    // matching / decoding widths
    int num_scales = 2;      // matching scales: 1 -> {32}, 2 -> {32,16}, 3 -> {32,16,8}
    int hidden_dim = 256;    // d, token width after projection
    int match_heads = 4;     // H
    int decoder_blocks = 6;
    int decoder_heads = 8;
    int ffn_ratio = 4;
    double dropout_rate = 0.10;
    std::vector<int> stage_channels = {16, 32, 64, 128, 256}; // backbone strides 2..32

    // relative-time encoding
    RteMode rte_mode = RteMode::multiplicative;
    bool frozen_rte = false;

    // loss
    double tau = 1.0;
    double alpha1 = 1.0; // dice weight
    double alpha2 = 1.0; // focal weight
    double focal_gamma = 2.0;
    double focal_balance = 0.25;
    DeltaVariant delta_variant = DeltaVariant::masked_area;
    ReweightTargets reweight_targets = ReweightTargets::focal_only;
    int cc_connectivity = 4;

    // optimization
    double lr_main = 2e-4;
    double lr_backbone = 1e-5;
    double weight_decay = 1e-4;
    LrSchedule lr_schedule = LrSchedule::constant;

    // evaluation
    JtrRounding jtr_rounding = JtrRounding::ceil_mode;

    int head_dim() const { return match_heads > 0 ? hidden_dim / match_heads : 0; }

    std::vector<int> scale_strides() const {
        switch (num_scales) {
            case 1: return {32};
            case 2: return {32, 16};
            case 3: return {32, 16, 8};
            default: return {};
        }
    }
};

namespace cfgdet {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline const char* to_str(DeltaVariant v) {
    switch (v) {
        case DeltaVariant::masked_area: return "masked_area";
        case DeltaVariant::connected_components: return "connected_components";
        case DeltaVariant::center_of_mass: return "center_of_mass";
    }
    return "?";
}
inline const char* to_str(ReweightTargets v) {
    switch (v) {
        case ReweightTargets::focal_only: return "focal_only";
        case ReweightTargets::dice_only: return "dice_only";
        case ReweightTargets::both: return "both";
        case ReweightTargets::none: return "none";
    }
    return "?";
}
inline const char* to_str(RteMode v) {
    switch (v) {
        case RteMode::multiplicative: return "multiplicative";
        case RteMode::additive: return "additive";
        case RteMode::off: return "off";
    }
    return "?";
}
inline const char* to_str(JtrRounding v) {
    return v == JtrRounding::ceil_mode ? "ceil" : "floor";
}
inline const char* to_str(LrSchedule v) {
    return v == LrSchedule::constant ? "constant" : "step";
}

template <typename E>
E parse_enum(const std::string& key, const std::string& s, std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [name, val] : table)
        if (s == name) return val;
    throw std::invalid_argument("config: bad value '" + s + "' for key '" + key + "'");
}

} // namespace cfgdet

// Returns one message per violated invariant; empty means the config can build
// every module.
inline std::vector<std::string> validate_config(const ModelConfig& c) {
    std::vector<std::string> v;
    if (c.clip_length < 1) v.push_back("clip_length must be >= 1");
    if (c.bank_size < 1) v.push_back("bank_size must be >= 1");
    if (c.video_length < 2) v.push_back("video_length must be >= 2 (reference plus at least one frame)");
    if (c.hidden_dim < 1) v.push_back("hidden_dim must be >= 1");
    if (c.match_heads < 1) v.push_back("match_heads must be >= 1");
    else if (c.hidden_dim % c.match_heads != 0) v.push_back("hidden_dim not divisible by match_heads");
    if (c.decoder_heads < 1) v.push_back("decoder_heads must be >= 1");
    else if (c.hidden_dim % c.decoder_heads != 0) v.push_back("hidden_dim must be divisible by decoder_heads");
    if (c.decoder_blocks < 1) v.push_back("decoder_blocks must be >= 1");
    if (c.ffn_ratio < 1) v.push_back("ffn_ratio must be >= 1");
    if (c.num_scales < 1 || c.num_scales > 3) v.push_back("num_scales must be 1, 2, or 3");
    if (c.tau <= 0.0) v.push_back("tau must be positive");
    if (c.alpha1 < 0.0 || c.alpha2 < 0.0) v.push_back("loss weights alpha1/alpha2 must be non-negative");
    if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0) v.push_back("dropout_rate must lie in [0, 1)");
    if (c.focal_gamma < 0.0) v.push_back("focal_gamma must be non-negative");
    if (c.focal_balance <= 0.0 || c.focal_balance > 1.0) v.push_back("focal_balance must lie in (0, 1]");
    if (c.stage_channels.size() != 5) v.push_back("stage_channels must list 5 stages (strides 2,4,8,16,32)");
    for (int ch : c.stage_channels)
        if (ch < 1) v.push_back("stage_channels entries must be >= 1");
    if (c.input_resolution < 32 || c.input_resolution % 32 != 0)
        v.push_back("input_resolution must be a positive multiple of 32");
    if (c.cc_connectivity != 4 && c.cc_connectivity != 8) v.push_back("cc_connectivity must be 4 or 8");
    if (c.lr_main <= 0.0 || c.lr_backbone <= 0.0) v.push_back("learning rates must be positive");
    if (c.weight_decay < 0.0) v.push_back("weight_decay must be non-negative");
    return v;
}

inline std::string serialize_config(const ModelConfig& c) {
    using namespace cfgdet;
    std::ostringstream os;
    os << "# model configuration\n";
    os << "video_length = " << c.video_length << "\n";
    os << "clip_length = " << c.clip_length << "\n";
    os << "bank_size = " << c.bank_size << "\n";
    os << "input_resolution = " << c.input_resolution << "\n";
    os << "num_scales = " << c.num_scales << "\n";
    os << "hidden_dim = " << c.hidden_dim << "\n";
    os << "match_heads = " << c.match_heads << "\n";
    os << "decoder_blocks = " << c.decoder_blocks << "\n";
    os << "decoder_heads = " << c.decoder_heads << "\n";
    os << "ffn_ratio = " << c.ffn_ratio << "\n";
    os << "dropout_rate = " << fmt_double(c.dropout_rate) << "\n";
    os << "stage_channels = ";
    for (size_t i = 0; i < c.stage_channels.size(); ++i) os << (i ? "," : "") << c.stage_channels[i];
    os << "\n";
    os << "rte_mode = " << to_str(c.rte_mode) << "\n";
    os << "frozen_rte = " << (c.frozen_rte ? "true" : "false") << "\n";
    os << "tau = " << fmt_double(c.tau) << "\n";
    os << "alpha1 = " << fmt_double(c.alpha1) << "\n";
    os << "alpha2 = " << fmt_double(c.alpha2) << "\n";
    os << "focal_gamma = " << fmt_double(c.focal_gamma) << "\n";
    os << "focal_balance = " << fmt_double(c.focal_balance) << "\n";
    os << "delta_variant = " << to_str(c.delta_variant) << "\n";
    os << "reweight_targets = " << to_str(c.reweight_targets) << "\n";
    os << "cc_connectivity = " << c.cc_connectivity << "\n";
    os << "lr_main = " << fmt_double(c.lr_main) << "\n";
    os << "lr_backbone = " << fmt_double(c.lr_backbone) << "\n";
    os << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
    os << "lr_schedule = " << to_str(c.lr_schedule) << "\n";
    os << "jtr_rounding = " << to_str(c.jtr_rounding) << "\n";
    return os.str();
}

// Parses `key = value` lines; '#' starts a comment; unknown keys are an error.
inline ModelConfig parse_config(const std::string& text) {
    using namespace cfgdet;
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key or value");

        auto as_int = [&] {
            size_t pos = 0;
            int r = std::stoi(val, &pos);
            if (pos != val.size()) throw std::invalid_argument("config: bad integer for key '" + key + "'");
            return r;
        };
        auto as_double = [&] {
            size_t pos = 0;
            double r = std::stod(val, &pos);
            if (pos != val.size()) throw std::invalid_argument("config: bad number for key '" + key + "'");
            return r;
        };
        auto as_bool = [&] {
            if (val == "true" || val == "1") return true;
            if (val == "false" || val == "0") return false;
            throw std::invalid_argument("config: bad boolean for key '" + key + "'");
        };

        if (key == "video_length") c.video_length = as_int();
        else if (key == "clip_length") c.clip_length = as_int();
        else if (key == "bank_size") c.bank_size = as_int();
        else if (key == "input_resolution") c.input_resolution = as_int();
        else if (key == "num_scales") c.num_scales = as_int();
        else if (key == "hidden_dim") c.hidden_dim = as_int();
        else if (key == "match_heads") c.match_heads = as_int();
        else if (key == "decoder_blocks") c.decoder_blocks = as_int();
        else if (key == "decoder_heads") c.decoder_heads = as_int();
        else if (key == "ffn_ratio") c.ffn_ratio = as_int();
        else if (key == "dropout_rate") c.dropout_rate = as_double();
        else if (key == "stage_channels") {
            c.stage_channels.clear();
            std::istringstream vs(val);
            std::string tok;
            while (std::getline(vs, tok, ',')) {
                tok = trim(tok);
                if (tok.empty()) throw std::invalid_argument("config: empty entry in stage_channels");
                c.stage_channels.push_back(std::stoi(tok));
            }
        } else if (key == "rte_mode")
            c.rte_mode = parse_enum<RteMode>(key, val, {{"multiplicative", RteMode::multiplicative},
                                                        {"additive", RteMode::additive},
                                                        {"off", RteMode::off}});
        else if (key == "frozen_rte") c.frozen_rte = as_bool();
        else if (key == "tau") c.tau = as_double();
        else if (key == "alpha1") c.alpha1 = as_double();
        else if (key == "alpha2") c.alpha2 = as_double();
        else if (key == "focal_gamma") c.focal_gamma = as_double();
        else if (key == "focal_balance") c.focal_balance = as_double();
        else if (key == "delta_variant")
            c.delta_variant = parse_enum<DeltaVariant>(key, val, {{"masked_area", DeltaVariant::masked_area},
                                                                  {"connected_components", DeltaVariant::connected_components},
                                                                  {"center_of_mass", DeltaVariant::center_of_mass}});
        else if (key == "reweight_targets")
            c.reweight_targets = parse_enum<ReweightTargets>(key, val, {{"focal_only", ReweightTargets::focal_only},
                                                                        {"dice_only", ReweightTargets::dice_only},
                                                                        {"both", ReweightTargets::both},
                                                                        {"none", ReweightTargets::none}});
        else if (key == "cc_connectivity") c.cc_connectivity = as_int();
        else if (key == "lr_main") c.lr_main = as_double();
        else if (key == "lr_backbone") c.lr_backbone = as_double();
        else if (key == "weight_decay") c.weight_decay = as_double();
        else if (key == "lr_schedule")
            c.lr_schedule = parse_enum<LrSchedule>(key, val, {{"constant", LrSchedule::constant},
                                                              {"step", LrSchedule::step}});
        else if (key == "jtr_rounding")
            c.jtr_rounding = parse_enum<JtrRounding>(key, val, {{"ceil", JtrRounding::ceil_mode},
                                                                {"floor", JtrRounding::floor_mode}});
        else
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return c;
}

inline ModelConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

inline void save_config_file(const ModelConfig& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config file: " + path);
    f << serialize_config(c);
}

} // namespace clipvos
