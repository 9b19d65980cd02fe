#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "composeq/tensor.hpp"

namespace composeq {

// baseline: no composition, every decoder layer attends to the top encoder
//           feed-forward output (the standard Transformer wiring).
// shared:   one learned (key, value) mixture pair reused by all decoder layers.
// per_layer: a distinct (key, value) mixture pair per decoder layer.
enum class CompositionMode { baseline, shared, per_layer };

// Which encoder sub-layer outputs are collected as mixture inputs.
enum class CollectMode { sa_only, ff_only, sa_and_ff };

inline std::string to_string(CompositionMode m) {
    switch (m) {
        case CompositionMode::baseline: return "baseline";
        case CompositionMode::shared: return "shared";
        case CompositionMode::per_layer: return "per_layer";
    }
    return "?";
}

inline std::string to_string(CollectMode m) {
    switch (m) {
        case CollectMode::sa_only: return "sa";
        case CollectMode::ff_only: return "ff";
        case CollectMode::sa_and_ff: return "both";
    }
    return "?";
}

inline CompositionMode composition_mode_from(const std::string& s) {
    if (s == "baseline") return CompositionMode::baseline;
    if (s == "shared") return CompositionMode::shared;
    if (s == "per_layer") return CompositionMode::per_layer;
    throw ConfigError("unknown composition mode '" + s + "'");
}

inline CollectMode collect_mode_from(const std::string& s) {
    if (s == "sa") return CollectMode::sa_only;
    if (s == "ff") return CollectMode::ff_only;
    if (s == "both") return CollectMode::sa_and_ff;
    throw ConfigError("unknown collect mode '" + s + "' (expected sa|ff|both)");
}

// The collected encoder sub-layer outputs, ordered layer-ascending with SA
// before FF within a layer. Labels identify rows in weight exports.
struct CollectedReps {
    std::vector<Tensor> mats;          // C matrices, each [S x d]
    std::vector<std::string> labels;   // C identifiers, e.g. "enc2_ff"
};

// Selects sub-layer outputs from per-layer SA/FF lists. Layer indices are
// 1-based and inclusive.
inline CollectedReps collect(const std::vector<Tensor>& sa,
                             const std::vector<Tensor>& ff, CollectMode mode,
                             std::size_t layer_lo, std::size_t layer_hi) {
    if (sa.size() != ff.size())
        throw ConfigError("collect: SA/FF trace lengths disagree");
    const std::size_t m = sa.size();
    if (layer_lo < 1 || layer_hi > m || layer_lo > layer_hi)
        throw ConfigError("collect: layer range " + std::to_string(layer_lo) + ".." +
                          std::to_string(layer_hi) + " invalid for " +
                          std::to_string(m) + " encoder layers");
    CollectedReps reps;
    for (std::size_t i = layer_lo; i <= layer_hi; ++i) {
        if (mode != CollectMode::ff_only) {
            reps.mats.push_back(sa[i - 1]);
            reps.labels.push_back("enc" + std::to_string(i) + "_sa");
        }
        if (mode != CollectMode::sa_only) {
            reps.mats.push_back(ff[i - 1]);
            reps.labels.push_back("enc" + std::to_string(i) + "_ff");
        }
    }
    if (reps.mats.empty()) throw ConfigError("collect: empty selection");
    return reps;
}

inline std::size_t collected_count(std::size_t enc_layers, CollectMode mode,
                                   std::size_t layer_lo, std::size_t layer_hi) {
    if (layer_hi == 0) layer_hi = enc_layers;
    const std::size_t span = layer_hi - layer_lo + 1;
    return mode == CollectMode::sa_and_ff ? 2 * span : span;
}

// The learned mixing scalars: per_layer keeps 2N weight vectors of length C,
// shared keeps 2. Raw unnormalized scalars, updated by the optimizer like any
// other parameter.
struct CompositionTable {
    CompositionMode mode = CompositionMode::baseline;
    std::size_t n_dec = 0;
    std::vector<Tensor> w_key;  // per_layer: N vectors [C]; shared: 1; baseline: 0
    std::vector<Tensor> w_val;

    static CompositionTable init(CompositionMode mode, std::size_t n_dec,
                                 std::size_t n_collected) {
        CompositionTable t;
        t.mode = mode;
        t.n_dec = n_dec;
        if (mode == CompositionMode::baseline) return t;
        const std::size_t vectors = mode == CompositionMode::per_layer ? n_dec : 1;
        const double uniform = 1.0 / double(n_collected);
        for (std::size_t l = 0; l < vectors; ++l) {
            t.w_key.push_back(Tensor::filled({n_collected}, uniform, true));
            t.w_val.push_back(Tensor::filled({n_collected}, uniform, true));
        }
        return t;
    }

    std::size_t collected() const {
        return w_key.empty() ? 0 : w_key[0].shape()[0];
    }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& w : w_key) n += w.size();
        for (const auto& w : w_val) n += w.size();
        return n;
    }
    const Tensor& key_weights(std::size_t layer) const {
        return w_key.at(mode == CompositionMode::shared ? 0 : layer);
    }
    const Tensor& value_weights(std::size_t layer) const {
        return w_val.at(mode == CompositionMode::shared ? 0 : layer);
    }
    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out = w_key;
        out.insert(out.end(), w_val.begin(), w_val.end());
        return out;
    }
};

// H_key^l = sum_i Wk[l][i] * reps[i], likewise for values. Layer is 0-based.
inline std::pair<Tensor, Tensor> compose(const CollectedReps& reps,
                                         const CompositionTable& table,
                                         std::size_t layer) {
    if (table.mode == CompositionMode::baseline)
        throw ConfigError("compose: baseline mode has no composition table");
    if (layer >= table.n_dec)
        throw ConfigError("compose: decoder layer " + std::to_string(layer) +
                          " out of range");
    if (table.collected() != reps.mats.size())
        throw ConfigError("compose: table expects " +
                          std::to_string(table.collected()) + " collected reps, got " +
                          std::to_string(reps.mats.size()));
    return {mix(reps.mats, table.key_weights(layer)),
            mix(reps.mats, table.value_weights(layer))};
}

// ---------------------------------------------------------------------------
// CSV export of the learned weights: one C x N matrix per role, row labels
// are the collected-rep identifiers, columns are decoder layers. Values are
// printed with enough digits to round-trip exactly.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string export_weights_csv(const CompositionTable& table,
                                      const std::vector<std::string>& labels,
                                      bool keys) {
    if (table.mode == CompositionMode::baseline)
        throw ConfigError("export_weights: baseline model has no composition table");
    const auto& vecs = keys ? table.w_key : table.w_val;
    const std::size_t c = table.collected(), n = table.n_dec;
    if (labels.size() != c)
        throw ConfigError("export_weights: label count mismatch");
    std::ostringstream os;
    os << "rep_id";
    for (std::size_t l = 1; l <= n; ++l) os << ",dec" << l;
    os << "\n";
    for (std::size_t i = 0; i < c; ++i) {
        os << labels[i];
        for (std::size_t l = 0; l < n; ++l) {
            const auto& w = vecs[table.mode == CompositionMode::shared ? 0 : l];
            os << "," << format_double(w.data()[i]);
        }
        os << "\n";
    }
    return os.str();
}

struct WeightMatrixCsv {
    std::vector<std::string> labels;               // C row labels
    std::vector<std::vector<double>> values;       // C rows x N columns
};

inline WeightMatrixCsv parse_weights_csv(const std::string& csv) {
    WeightMatrixCsv out;
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw DataError("weights csv: empty");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        out.labels.push_back(cell);
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        out.values.push_back(std::move(row));
    }
    return out;
}

}  // namespace composeq
