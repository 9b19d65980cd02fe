#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "composeq/model.hpp"

namespace composeq {

struct BeamHypothesis {
    std::vector<int> tokens;  // generated tokens, no BOS, no EOS
    double logprob = 0.0;     // accumulated log-probability (non-increasing)
    bool finished = false;    // emitted EOS
    DecoderState state;
};

struct DecodeResult {
    std::vector<int> tokens;
    double logprob = 0.0;
    bool truncated = false;  // hit max_len without EOS

    // Final ranking score: simple average log-probability per scored token.
    double score() const {
        const std::size_t scored = tokens.size() + (truncated ? 0 : 1);  // +EOS
        return logprob / double(std::max<std::size_t>(1, scored));
    }
};

namespace detail {

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

// Deterministic hypothesis order: higher accumulated log-prob first, ties
// broken by lexicographically smaller token sequence.
inline bool better(const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens;
}

}  // namespace detail

// Beam search over the incremental decoder. Pruning ranks by accumulated
// log-probability (so beam_size=1 is exactly greedy); the final pick among
// completed hypotheses uses the length-normalized score.
inline DecodeResult beam_decode(TransformerModel& model, const std::vector<int>& src,
                                std::size_t beam_size, std::size_t max_len) {
    if (beam_size < 1) throw ConfigError("beam_decode: beam_size must be >= 1");
    if (max_len < 1) throw ConfigError("beam_decode: max_len must be >= 1");

    BeamHypothesis root;
    root.state = model.start_decode(src);
    std::vector<BeamHypothesis> live{std::move(root)};
    std::vector<DecodeResult> done;

    for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
        std::vector<BeamHypothesis> next;
        for (auto& hyp : live) {
            const int prev = hyp.tokens.empty() ? kBosId : hyp.tokens.back();
            const auto lp = detail::log_softmax(model.decode_step(hyp.state, prev));
            // only the top beam_size continuations per parent can survive
            std::vector<int> ids(lp.size());
            std::iota(ids.begin(), ids.end(), 0);
            const std::size_t keep = std::min(beam_size, ids.size());
            std::partial_sort(ids.begin(), ids.begin() + std::ptrdiff_t(keep),
                              ids.end(), [&](int a, int b) {
                                  if (lp[std::size_t(a)] != lp[std::size_t(b)])
                                      return lp[std::size_t(a)] > lp[std::size_t(b)];
                                  return a < b;
                              });
            for (std::size_t k = 0; k < keep; ++k) {
                const int tok = ids[k];
                if (tok == kEosId) {
                    DecodeResult r;
                    r.tokens = hyp.tokens;
                    r.logprob = hyp.logprob + lp[std::size_t(tok)];
                    done.push_back(std::move(r));
                } else {
                    BeamHypothesis h;
                    h.tokens = hyp.tokens;
                    h.tokens.push_back(tok);
                    h.logprob = hyp.logprob + lp[std::size_t(tok)];
                    h.state = hyp.state;
                    next.push_back(std::move(h));
                }
            }
        }
        std::sort(next.begin(), next.end(), detail::better);
        if (next.size() > beam_size) next.resize(beam_size);
        live = std::move(next);
    }
    for (auto& hyp : live) {
        DecodeResult r;
        r.tokens = std::move(hyp.tokens);
        r.logprob = hyp.logprob;
        r.truncated = true;
        done.push_back(std::move(r));
    }
    auto best = std::min_element(done.begin(), done.end(),
                                 [](const DecodeResult& a, const DecodeResult& b) {
                                     if (a.score() != b.score())
                                         return a.score() > b.score();
                                     return a.tokens < b.tokens;
                                 });
    return *best;
}

// ---- CTER ------------------------------------------------------------------

struct CompoundVerdict {
    int compound_id = -1;
    std::size_t wrong_rows = 0;
    std::size_t total_rows = 0;
};

struct CterReport {
    double instance = 0.0;
    double aggregate = 0.0;
    std::vector<CompoundVerdict> per_compound;  // ordered by compound id
};

// A row is wrong iff the reference compound's target token sub-sequence does
// not occur contiguously in the prediction.
inline bool compound_translated(const std::vector<int>& prediction,
                                const std::vector<int>& compound) {
    if (compound.empty()) throw DataError("cter: row without compound tokens");
    return std::search(prediction.begin(), prediction.end(), compound.begin(),
                       compound.end()) != prediction.end();
}

inline CterReport cter(const std::vector<std::vector<int>>& predictions,
                       const std::vector<EncodedSample>& rows) {
    if (predictions.size() != rows.size())
        throw DataError("cter: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(rows.size()) + " rows");
    if (rows.empty()) throw DataError("cter: empty test set");

    std::map<int, CompoundVerdict> groups;
    std::size_t wrong_rows = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].compound_id < 0)
            throw DataError("cter: row " + std::to_string(i) +
                            " carries no compound annotation");
        auto& g = groups[rows[i].compound_id];
        g.compound_id = rows[i].compound_id;
        ++g.total_rows;
        if (!compound_translated(predictions[i], rows[i].compound)) {
            ++g.wrong_rows;
            ++wrong_rows;
        }
    }

    CterReport rep;
    rep.instance = double(wrong_rows) / double(rows.size());
    std::size_t wrong_compounds = 0;
    for (auto& [id, g] : groups) {
        if (g.wrong_rows > 0) ++wrong_compounds;
        rep.per_compound.push_back(g);
    }
    rep.aggregate = double(wrong_compounds) / double(groups.size());
    return rep;
}

inline double exact_match(const std::vector<std::vector<int>>& predictions,
                          const std::vector<std::vector<int>>& references) {
    if (predictions.size() != references.size())
        throw DataError("exact_match: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(references.size()) +
                        " references");
    if (predictions.empty()) throw DataError("exact_match: empty lists");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == references[i]) ++hits;
    return double(hits) / double(predictions.size());
}

struct EvalReport {
    double cter_instance = 0.0;
    double cter_aggregate = 0.0;
    double exact_match = 0.0;
    std::vector<CompoundVerdict> per_compound;

    nlohmann::json to_json() const {
        return {{"cter_instance", cter_instance},
                {"cter_aggregate", cter_aggregate},
                {"exact_match", exact_match}};
    }
};

// Decodes every cg-test row and scores it. The report invariant
// cter_aggregate >= cter_instance holds by construction.
inline EvalReport evaluate(TransformerModel& model,
                           const std::vector<EncodedSample>& rows,
                           std::size_t beam_size,
                           std::vector<std::vector<int>>* predictions_out = nullptr) {
    std::vector<std::vector<int>> preds;
    std::vector<std::vector<int>> refs;
    for (const auto& row : rows) {
        preds.push_back(
            beam_decode(model, row.src, beam_size, model.config().max_len).tokens);
        refs.push_back(row.tgt);
    }
    EvalReport rep;
    rep.exact_match = exact_match(preds, refs);
    CterReport c = cter(preds, rows);
    rep.cter_instance = c.instance;
    rep.cter_aggregate = c.aggregate;
    rep.per_compound = std::move(c.per_compound);
    if (predictions_out) *predictions_out = std::move(preds);
    return rep;
}

inline void write_per_compound_csv(std::ostream& out,
                                   const std::vector<CompoundVerdict>& verdicts) {
    out << "compound_id,wrong_rows,total_rows\n";
    for (const auto& v : verdicts)
        out << v.compound_id << "," << v.wrong_rows << "," << v.total_rows << "\n";
}

// ---- hidden-state export -----------------------------------------------------

// CSV rows = (example id, decoder layer, role, position, d values). Composed
// modes emit key and value rows per decoder layer; baseline emits a single
// role=shared set per layer (its keys and values coincide with the topmost
// encoder output).
inline void export_hidden_states(TransformerModel& model,
                                 const std::vector<EncodedSample>& examples,
                                 std::ostream& out) {
    const bool was_training = model.training();
    model.set_training(false);
    const std::size_t d = model.config().d_model;
    out << "example,layer,role,position";
    for (std::size_t j = 0; j < d; ++j) out << ",h" << j;
    out << "\n";

    char buf[32];
    auto emit = [&](std::size_t ex, std::size_t layer, const char* role,
                    const Tensor& mat) {
        const std::size_t rows = mat.shape()[0];
        for (std::size_t p = 0; p < rows; ++p) {
            out << ex << "," << (layer + 1) << "," << role << "," << p;
            for (std::size_t j = 0; j < d; ++j) {
                std::snprintf(buf, sizeof(buf), ",%.17g", mat.at(p, j));
                out << buf;
            }
            out << "\n";
        }
    };

    for (std::size_t ex = 0; ex < examples.size(); ++ex) {
        Batch b = make_batch({examples[ex]});
        EncoderTrace trace = model.encode(b);
        auto [keys, values] = model.source_keys_values(trace);
        const bool baseline =
            model.config().composition_mode == CompositionMode::baseline;
        for (std::size_t l = 0; l < keys.size(); ++l) {
            if (baseline) {
                emit(ex, l, "shared", keys[l]);
            } else {
                emit(ex, l, "key", keys[l]);
                emit(ex, l, "value", values[l]);
            }
        }
    }
    model.set_training(was_training);
}

}  // namespace composeq
