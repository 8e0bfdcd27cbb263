#include "train_config.hpp"

#include "ceco/errors.hpp"
#include "ceco/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <system_error>

namespace ceco::cli {

namespace {

template <typename T>
T parse_integer(const std::string& text) {
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw DomainError(fmt::format("'{}' is not a valid integer", text));
    }
    return value;
}

double parse_real(const std::string& text) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw DomainError(fmt::format("'{}' is not a valid number", text));
    }
    return value;
}

bool parse_bool(const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no" || text == "off") {
        return false;
    }
    throw DomainError(fmt::format("'{}' is not a boolean", text));
}

template <typename T>
ConfigKey int_key(std::string key, std::string flag, std::string help, T TrainConfig::*field) {
    return {std::move(key), std::move(flag), std::move(help),
            [field](TrainConfig& c, const std::string& v) { c.*field = parse_integer<T>(v); },
            [field](const TrainConfig& c) { return std::to_string(c.*field); }};
}

template <typename T>
ConfigKey scene_int_key(std::string key, std::string flag, std::string help, T SceneConfig::*field) {
    return {std::move(key), std::move(flag), std::move(help),
            [field](TrainConfig& c, const std::string& v) { c.scene.*field = parse_integer<T>(v); },
            [field](const TrainConfig& c) { return std::to_string(c.scene.*field); }};
}

ConfigKey real_key(std::string key, std::string flag, std::string help, double TrainConfig::*field) {
    return {std::move(key), std::move(flag), std::move(help),
            [field](TrainConfig& c, const std::string& v) { c.*field = parse_real(v); },
            [field](const TrainConfig& c) { return format_number(c.*field); }};
}

ConfigKey scene_real_key(std::string key, std::string flag, std::string help, double SceneConfig::*field) {
    return {std::move(key), std::move(flag), std::move(help),
            [field](TrainConfig& c, const std::string& v) { c.scene.*field = parse_real(v); },
            [field](const TrainConfig& c) { return format_number(c.scene.*field); }};
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

} // namespace

const std::vector<ConfigKey>& train_config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        k.push_back(scene_int_key("classes", "--classes", "number of classes K", &SceneConfig::num_classes));
        k.push_back(scene_real_key("beta", "--beta", "target pixel imbalance factor", &SceneConfig::beta));
        k.push_back(scene_int_key("height", "--height", "scene height in pixels", &SceneConfig::height));
        k.push_back(scene_int_key("width", "--width", "scene width in pixels", &SceneConfig::width));
        k.push_back(scene_int_key("input_dim", "--input-dim", "raw per-pixel input dimension", &SceneConfig::input_dim));
        k.push_back(scene_int_key("blob_count", "--blob-count", "region seeds per scene", &SceneConfig::blob_count));
        k.push_back(scene_real_key("noise_sigma", "--noise", "input noise standard deviation", &SceneConfig::noise_sigma));
        k.push_back(scene_int_key("smooth_radius", "--smooth-radius", "box filter half-width", &SceneConfig::smooth_radius));
        k.push_back(scene_real_key("prototype_scale", "--prototype-scale", "scale of class input prototypes",
                                   &SceneConfig::prototype_scale));
        k.push_back(int_key("hidden_dim", "--hidden", "hidden width h", &TrainConfig::hidden_dim));
        k.push_back(int_key("feature_dim", "--dim", "feature dimension d", &TrainConfig::feature_dim));
        k.push_back(real_key("lambda", "--lambda", "center loss weight", &TrainConfig::lambda));
        k.push_back(real_key("alpha", "--alpha", "ETF classifier scale", &TrainConfig::alpha));
        k.push_back({"pixel_classifier", "--pc", "pixel classifier: learned | fixed",
                     [](TrainConfig& c, const std::string& v) { c.pr_mode = parse_pr_mode(v); },
                     [](const TrainConfig& c) { return std::string(to_string(c.pr_mode)); }});
        k.push_back({"center_classifier", "--cc", "center classifier: fixed | learned | off",
                     [](TrainConfig& c, const std::string& v) { c.cc_mode = parse_cc_mode(v); },
                     [](const TrainConfig& c) { return std::string(to_string(c.cc_mode)); }});
        k.push_back(real_key("lr", "--lr", "learning rate", &TrainConfig::lr));
        k.push_back(real_key("weight_decay", "--weight-decay", "weight decay", &TrainConfig::weight_decay));
        k.push_back(int_key("iterations", "--iterations", "training iterations", &TrainConfig::iterations));
        k.push_back(int_key("eval_every", "--eval-every", "iterations between evaluations", &TrainConfig::eval_every));
        k.push_back(int_key("train_scenes", "--train-scenes", "training scene pool size", &TrainConfig::train_scenes));
        k.push_back(int_key("eval_scenes", "--eval-scenes", "held-out scene pool size", &TrainConfig::eval_scenes));
        k.push_back(int_key("batch_scenes", "--batch-scenes", "scenes per iteration", &TrainConfig::batch_scenes));
        k.push_back({"poly_decay", "--poly-decay", "polynomial learning-rate decay (power 0.9)",
                     [](TrainConfig& c, const std::string& v) { c.poly_decay = parse_bool(v); },
                     [](const TrainConfig& c) { return std::string(c.poly_decay ? "true" : "false"); }});
        k.push_back(int_key("seed", "--seed", "experiment seed", &TrainConfig::seed));
        return k;
    }();
    return keys;
}

void apply_config_text(TrainConfig& cfg, std::istream& in) {
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        const std::string body = trim(text);
        if (body.empty() || body[0] == '#') {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ParseError(line, "expected 'key = value'");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        const auto& keys = train_config_keys();
        const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.key == key; });
        if (it == keys.end()) {
            throw ParseError(line, fmt::format("unknown config key '{}'", key));
        }
        try {
            it->set(cfg, value);
        } catch (const DomainError& e) {
            throw ParseError(line, e.what());
        }
    }
}

void write_train_config(std::ostream& out, const TrainConfig& cfg) {
    for (const ConfigKey& k : train_config_keys()) {
        out << k.key << " = " << k.get(cfg) << '\n';
    }
}

} // namespace ceco::cli
