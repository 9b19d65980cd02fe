#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "composeq/cogsynth.hpp"
#include "composeq/model.hpp"
#include "composeq/trainer.hpp"

namespace composeq {

// Flat key=value run configuration merging the model, trainer, grammar, and
// split settings. Precedence: command-line overrides > config file > defaults.
// Unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    GrammarConfig grammar;
    SplitSpec split;
    std::size_t beam_size = 5;

    void set(const std::string& key, const std::string& value) {
        auto as_size = [&]() -> std::size_t {
            try {
                std::size_t pos = 0;
                const unsigned long long v = std::stoull(value, &pos);
                if (pos != value.size()) throw std::invalid_argument(value);
                return std::size_t(v);
            } catch (const std::exception&) {
                throw ConfigError("config: key '" + key +
                                  "' needs a non-negative integer, got '" + value +
                                  "'");
            }
        };
        auto as_double = [&]() -> double {
            try {
                std::size_t pos = 0;
                const double v = std::stod(value, &pos);
                if (pos != value.size()) throw std::invalid_argument(value);
                return v;
            } catch (const std::exception&) {
                throw ConfigError("config: key '" + key + "' needs a number, got '" +
                                  value + "'");
            }
        };

        if (key == "enc_layers") model.enc_layers = as_size();
        else if (key == "dec_layers") model.dec_layers = as_size();
        else if (key == "d_model") model.d_model = as_size();
        else if (key == "d_ff") model.d_ff = as_size();
        else if (key == "n_heads") model.n_heads = as_size();
        else if (key == "max_len") model.max_len = as_size();
        else if (key == "composition_mode")
            model.composition_mode = composition_mode_from(value);
        else if (key == "collect_mode") model.collect_mode = collect_mode_from(value);
        else if (key == "layer_lo") model.layer_lo = as_size();
        else if (key == "layer_hi") model.layer_hi = as_size();
        else if (key == "dropout") {
            model.dropout = as_double();
            train.dropout = model.dropout;
        } else if (key == "lr_peak") train.lr_peak = as_double();
        else if (key == "warmup_steps") train.warmup_steps = as_size();
        else if (key == "beta1") train.beta1 = as_double();
        else if (key == "beta2") train.beta2 = as_double();
        else if (key == "adam_eps") train.eps = as_double();
        else if (key == "max_steps") train.max_steps = as_size();
        else if (key == "batch_size_tokens") train.batch_size_tokens = as_size();
        else if (key == "seed") {
            train.seed = as_size();
            split.seed = train.seed;
        } else if (key == "label_smoothing") train.label_smoothing = as_double();
        else if (key == "clip_norm") train.clip_norm = as_double();
        else if (key == "log_every") train.log_every = as_size();
        else if (key == "n_nouns") grammar.n_nouns = as_size();
        else if (key == "n_verbs") grammar.n_verbs = as_size();
        else if (key == "n_mods") grammar.n_mods = as_size();
        else if (key == "n_advs") grammar.n_advs = as_size();
        else if (key == "train_samples") split.train_samples = as_size();
        else if (key == "valid_samples") split.valid_samples = as_size();
        else if (key == "test_samples") split.test_samples = as_size();
        else if (key == "holdout_compounds") split.holdout_compounds = as_size();
        else if (key == "contexts_per_compound")
            split.contexts_per_compound = as_size();
        else if (key == "min_atom_occurrences") split.min_atom_occurrences = as_size();
        else if (key == "beam_size") beam_size = as_size();
        else
            throw ConfigError("config: unknown key '" + key + "'");
    }

    // Fully resolved settings, one key=value per line, sorted by key.
    std::string echo() const {
        std::map<std::string, std::string> kv;
        auto num = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        kv["enc_layers"] = std::to_string(model.enc_layers);
        kv["dec_layers"] = std::to_string(model.dec_layers);
        kv["d_model"] = std::to_string(model.d_model);
        kv["d_ff"] = std::to_string(model.d_ff);
        kv["n_heads"] = std::to_string(model.n_heads);
        kv["max_len"] = std::to_string(model.max_len);
        kv["composition_mode"] = to_string(model.composition_mode);
        kv["collect_mode"] = to_string(model.collect_mode);
        kv["layer_lo"] = std::to_string(model.layer_lo);
        kv["layer_hi"] = std::to_string(model.layer_hi);
        kv["dropout"] = num(model.dropout);
        kv["lr_peak"] = num(train.lr_peak);
        kv["warmup_steps"] = std::to_string(train.warmup_steps);
        kv["beta1"] = num(train.beta1);
        kv["beta2"] = num(train.beta2);
        kv["adam_eps"] = num(train.eps);
        kv["max_steps"] = std::to_string(train.max_steps);
        kv["batch_size_tokens"] = std::to_string(train.batch_size_tokens);
        kv["seed"] = std::to_string(train.seed);
        kv["label_smoothing"] = num(train.label_smoothing);
        kv["clip_norm"] = num(train.clip_norm);
        kv["log_every"] = std::to_string(train.log_every);
        kv["n_nouns"] = std::to_string(grammar.n_nouns);
        kv["n_verbs"] = std::to_string(grammar.n_verbs);
        kv["n_mods"] = std::to_string(grammar.n_mods);
        kv["n_advs"] = std::to_string(grammar.n_advs);
        kv["train_samples"] = std::to_string(split.train_samples);
        kv["valid_samples"] = std::to_string(split.valid_samples);
        kv["test_samples"] = std::to_string(split.test_samples);
        kv["holdout_compounds"] = std::to_string(split.holdout_compounds);
        kv["contexts_per_compound"] = std::to_string(split.contexts_per_compound);
        kv["min_atom_occurrences"] = std::to_string(split.min_atom_occurrences);
        kv["beam_size"] = std::to_string(beam_size);
        std::ostringstream os;
        for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
        return os.str();
    }
};

// Parses `key=value` lines; '#' starts a comment, blank lines are ignored.
inline void apply_config_text(RunConfig& cfg, const std::string& text,
                              const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        cfg.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    apply_config_text(cfg, text, path);
}

}  // namespace composeq
