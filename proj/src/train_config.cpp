// SPDX-License-Identifier: Apache-2.0
#include "diffage/train_config.hpp"

#include "diffage/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>

namespace diffage {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw ConfigError("bad value for '" + key + "': " + text);
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("bad boolean for '" + key + "': " + text);
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace

void TrainConfig::validate() const {
    if (preset != "reduced" && preset != "full" && preset != "tiny") throw ConfigError("unknown preset: " + preset);
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (age_loss_weight < 0.0) throw ConfigError("age_loss_weight must be >= 0");
    if (unlabeled_fraction < 0.0 || unlabeled_fraction > 1.0) throw ConfigError("unlabeled_fraction must lie in [0, 1]");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    if (precision != "float32" && precision != "float64") throw ConfigError("precision must be float32 or float64");
    if (ema_decay <= 0.0 || ema_decay >= 1.0) throw ConfigError("ema_decay must lie in (0, 1)");
    if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be >= 1");
}

void TrainConfig::apply(const std::map<std::string, std::string>& values) {
    const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
        {"preset", [this](auto&, auto& v) { preset = v; }},
        {"batch_size", [this](auto& k, auto& v) { batch_size = parse_number<int>(k, v); }},
        {"learning_rate", [this](auto& k, auto& v) { learning_rate = parse_number<double>(k, v); }},
        {"adam_beta1", [this](auto& k, auto& v) { adam_beta1 = parse_number<double>(k, v); }},
        {"adam_beta2", [this](auto& k, auto& v) { adam_beta2 = parse_number<double>(k, v); }},
        {"adam_eps", [this](auto& k, auto& v) { adam_eps = parse_number<double>(k, v); }},
        {"max_steps", [this](auto& k, auto& v) { max_steps = parse_number<int>(k, v); }},
        {"age_loss_weight", [this](auto& k, auto& v) { age_loss_weight = parse_number<double>(k, v); }},
        {"unlabeled_fraction", [this](auto& k, auto& v) { unlabeled_fraction = parse_number<double>(k, v); }},
        {"seed", [this](auto& k, auto& v) { seed = parse_number<std::uint64_t>(k, v); }},
        {"checkpoint_interval", [this](auto& k, auto& v) { checkpoint_interval = parse_number<int>(k, v); }},
        {"precision", [this](auto&, auto& v) { precision = v; }},
        {"ema", [this](auto& k, auto& v) { ema = parse_bool(k, v); }},
        {"ema_decay", [this](auto& k, auto& v) { ema_decay = parse_number<double>(k, v); }},
        {"diffusion_steps", [this](auto& k, auto& v) { diffusion_steps = parse_number<int>(k, v); }},
        {"beta_start", [this](auto& k, auto& v) { beta_start = parse_number<double>(k, v); }},
        {"beta_end", [this](auto& k, auto& v) { beta_end = parse_number<double>(k, v); }},
    };
    for (const auto& [key, value] : values) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key: " + key);
        it->second(key, value);
    }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    return {
        {"preset", preset},
        {"batch_size", std::to_string(batch_size)},
        {"learning_rate", format_double(learning_rate)},
        {"adam_beta1", format_double(adam_beta1)},
        {"adam_beta2", format_double(adam_beta2)},
        {"adam_eps", format_double(adam_eps)},
        {"max_steps", std::to_string(max_steps)},
        {"age_loss_weight", format_double(age_loss_weight)},
        {"unlabeled_fraction", format_double(unlabeled_fraction)},
        {"seed", std::to_string(seed)},
        {"checkpoint_interval", std::to_string(checkpoint_interval)},
        {"precision", precision},
        {"ema", ema ? "true" : "false"},
        {"ema_decay", format_double(ema_decay)},
        {"diffusion_steps", std::to_string(diffusion_steps)},
        {"beta_start", format_double(beta_start)},
        {"beta_end", format_double(beta_end)},
    };
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& values) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& [key, value] : values) out << key << " = " << value << '\n';
}

}  // namespace diffage
