#pragma once

// Run configuration as a flat `key = value` text file. Unknown keys and
// malformed values are rejected; `to_text` emits every key in a fixed order
// so an echoed config reproduces the run.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "apr/error.hpp"
#include "apr/losses.hpp"
#include "apr/model.hpp"
#include "apr/optim.hpp"
#include "apr/text.hpp"

namespace apr {

struct RunConfig {
    std::uint64_t seed = 42;
    ModelDims dims;
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    AdamWConfig optimizer;
    double lr_start_factor = 0.1;
    double max_grad_norm = 1.0;
    LossWeights weights;
    LossOptions options;
    double init_log_tau = 0.0;
    double adapter_init_scale = 0.3;
    bool tied_adapter_init = true;
    double head_init_gain = 1.0;
    HeadInit head_init = HeadInit::TiedOrthogonal;
    TokenizerConfig tokenizer;
    bool save_optimizer_state = false;

    void validate() const
    {
        if (dims.embed_dim < 2 || dims.hidden_dim == 0 || dims.feature_dim == 0) {
            throw Error(ErrorKind::Config, "need embed_dim >= 2, hidden_dim >= 1, feature_dim >= 1");
        }
        if (batch_size == 0) {
            throw Error(ErrorKind::Config, "batch_size must be >= 1");
        }
        if (!(optimizer.lr > 0.0) || !(optimizer.eps > 0.0) || !(optimizer.weight_decay >= 0.0) ||
            !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
            throw Error(ErrorKind::Config, "invalid optimizer hyperparameters");
        }
        if (!(lr_start_factor > 0.0 && lr_start_factor <= 1.0)) {
            throw Error(ErrorKind::Config, "lr_start_factor must be in (0, 1]");
        }
        if (!(max_grad_norm > 0.0)) {
            throw Error(ErrorKind::Config, "max_grad_norm must be positive");
        }
        if (!(adapter_init_scale > 0.0) || !(head_init_gain > 0.0) || !std::isfinite(init_log_tau)) {
            throw Error(ErrorKind::Config, "adapter_init_scale must be positive and init_log_tau finite");
        }
        weights.validate();
    }

    [[nodiscard]] std::string to_text() const;
};

namespace detail {

inline std::string format_double(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class Int>
Int parse_int(const std::string& key, const std::string& value)
{
    Int out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw Error(ErrorKind::Config, "key '" + key + "': expected an integer, got '" + value + "'");
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const double x = std::stod(value, &used);
        if (used != value.size() || !std::isfinite(x)) {
            throw std::invalid_argument(value);
        }
        return x;
    } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "key '" + key + "': expected a number, got '" + value + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw Error(ErrorKind::Config, "key '" + key + "': expected true/false, got '" + value + "'");
}

}  // namespace detail

inline std::string RunConfig::to_text() const
{
    using detail::format_double;
    std::ostringstream out;
    auto b = [](bool x) { return x ? "true" : "false"; };
    out << "seed = " << seed << '\n'
        << "feature_dim = " << dims.feature_dim << '\n'
        << "embed_dim = " << dims.embed_dim << '\n'
        << "hidden_dim = " << dims.hidden_dim << '\n'
        << "batch_size = " << batch_size << '\n'
        << "epochs = " << epochs << '\n'
        << "lr = " << format_double(optimizer.lr) << '\n'
        << "lr_start_factor = " << format_double(lr_start_factor) << '\n'
        << "adam_beta1 = " << format_double(optimizer.beta1) << '\n'
        << "adam_beta2 = " << format_double(optimizer.beta2) << '\n'
        << "adam_eps = " << format_double(optimizer.eps) << '\n'
        << "weight_decay = " << format_double(optimizer.weight_decay) << '\n'
        << "max_grad_norm = " << format_double(max_grad_norm) << '\n'
        << "alpha = " << format_double(weights.alpha) << '\n'
        << "beta = " << format_double(weights.beta) << '\n'
        << "gamma = " << format_double(weights.gamma) << '\n'
        << "epsilon = " << format_double(weights.epsilon) << '\n'
        << "reg_sign = " << weights.reg_sign << '\n'
        << "in_batch_negatives = " << b(options.in_batch_negatives) << '\n'
        << "reg_all_pool = " << b(options.reg_all_pool) << '\n'
        << "freeze_adapters = " << b(options.freeze_adapters) << '\n'
        << "init_log_tau = " << format_double(init_log_tau) << '\n'
        << "adapter_init_scale = " << format_double(adapter_init_scale) << '\n'
        << "tied_adapter_init = " << b(tied_adapter_init) << '\n'
        << "head_init_gain = " << format_double(head_init_gain) << '\n'
        << "head_init = " << to_string(head_init) << '\n'
        << "lowercase = " << b(tokenizer.lowercase) << '\n'
        << "strip_diacritics = " << b(tokenizer.strip_diacritics) << '\n'
        << "unicode_normalization = " << (tokenizer.normalization == UnicodeNormalization::Nfc ? "nfc" : "none") << '\n'
        << "save_optimizer_state = " << b(save_optimizer_state) << '\n';
    return out.str();
}

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value)
{
    using namespace detail;
    if (key == "seed") cfg.seed = parse_int<std::uint64_t>(key, value);
    else if (key == "feature_dim") cfg.dims.feature_dim = parse_int<std::size_t>(key, value);
    else if (key == "embed_dim") cfg.dims.embed_dim = parse_int<std::size_t>(key, value);
    else if (key == "hidden_dim") cfg.dims.hidden_dim = parse_int<std::size_t>(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_int<std::size_t>(key, value);
    else if (key == "epochs") cfg.epochs = parse_int<std::size_t>(key, value);
    else if (key == "lr") cfg.optimizer.lr = parse_double(key, value);
    else if (key == "lr_start_factor") cfg.lr_start_factor = parse_double(key, value);
    else if (key == "adam_beta1") cfg.optimizer.beta1 = parse_double(key, value);
    else if (key == "adam_beta2") cfg.optimizer.beta2 = parse_double(key, value);
    else if (key == "adam_eps") cfg.optimizer.eps = parse_double(key, value);
    else if (key == "weight_decay") cfg.optimizer.weight_decay = parse_double(key, value);
    else if (key == "max_grad_norm") cfg.max_grad_norm = parse_double(key, value);
    else if (key == "alpha") cfg.weights.alpha = parse_double(key, value);
    else if (key == "beta") cfg.weights.beta = parse_double(key, value);
    else if (key == "gamma") cfg.weights.gamma = parse_double(key, value);
    else if (key == "epsilon") cfg.weights.epsilon = parse_double(key, value);
    else if (key == "reg_sign") cfg.weights.reg_sign = parse_int<int>(key, value);
    else if (key == "in_batch_negatives") cfg.options.in_batch_negatives = parse_bool(key, value);
    else if (key == "reg_all_pool") cfg.options.reg_all_pool = parse_bool(key, value);
    else if (key == "freeze_adapters") cfg.options.freeze_adapters = parse_bool(key, value);
    else if (key == "init_log_tau") cfg.init_log_tau = parse_double(key, value);
    else if (key == "adapter_init_scale") cfg.adapter_init_scale = parse_double(key, value);
    else if (key == "tied_adapter_init") cfg.tied_adapter_init = parse_bool(key, value);
    else if (key == "head_init_gain") cfg.head_init_gain = parse_double(key, value);
    else if (key == "head_init") cfg.head_init = parse_head_init(value);
    else if (key == "lowercase") cfg.tokenizer.lowercase = parse_bool(key, value);
    else if (key == "strip_diacritics") cfg.tokenizer.strip_diacritics = parse_bool(key, value);
    else if (key == "unicode_normalization") {
        if (value == "nfc") cfg.tokenizer.normalization = UnicodeNormalization::Nfc;
        else if (value == "none") cfg.tokenizer.normalization = UnicodeNormalization::None;
        else throw Error(ErrorKind::Config, "unicode_normalization must be nfc or none");
    }
    else if (key == "save_optimizer_state") cfg.save_optimizer_state = parse_bool(key, value);
    else throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
}

/// Starts from defaults; every line is `key = value`, blank, or `# comment`.
[[nodiscard]] inline RunConfig parse_run_config(std::string_view text)
{
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        const std::string body = detail::trim(std::string_view(line).substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": expected key = value");
        }
        try {
            apply_config_entry(cfg, detail::trim(std::string_view(body).substr(0, eq)), detail::trim(std::string_view(body).substr(eq + 1)));
        } catch (const Error& e) {
            throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

[[nodiscard]] inline RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Config, "cannot open config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace apr
