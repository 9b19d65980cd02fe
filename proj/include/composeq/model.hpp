#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "composeq/composer.hpp"
#include "composeq/corpus.hpp"
#include "composeq/nn.hpp"
#include "composeq/tensor.hpp"

namespace composeq {

struct ModelConfig {
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t d_model = 64;
    std::size_t d_ff = 128;
    std::size_t n_heads = 4;
    std::size_t src_vocab = 0;
    std::size_t tgt_vocab = 0;
    std::size_t max_len = 64;
    CompositionMode composition_mode = CompositionMode::baseline;
    CollectMode collect_mode = CollectMode::sa_and_ff;
    std::size_t layer_lo = 1;
    std::size_t layer_hi = 0;  // 0 = topmost encoder layer
    double dropout = 0.1;

    std::size_t resolved_layer_hi() const {
        return layer_hi == 0 ? enc_layers : layer_hi;
    }
    std::size_t n_collected() const {
        return collected_count(enc_layers, collect_mode, layer_lo, resolved_layer_hi());
    }

    void validate() const {
        if (enc_layers < 1 || dec_layers < 1)
            throw ConfigError("model: need at least one encoder and decoder layer");
        if (n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("model: d_model " + std::to_string(d_model) +
                              " not divisible by " + std::to_string(n_heads) + " heads");
        if (src_vocab <= std::size_t(kEosId) || tgt_vocab <= std::size_t(kEosId))
            throw ConfigError("model: vocabulary too small for reserved tokens");
        if (layer_lo < 1 || resolved_layer_hi() > enc_layers ||
            layer_lo > resolved_layer_hi())
            throw ConfigError("model: collected layer range " + std::to_string(layer_lo) +
                              ".." + std::to_string(resolved_layer_hi()) +
                              " invalid for " + std::to_string(enc_layers) + " layers");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("model: dropout must be in [0, 1)");
        if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"enc_layers", enc_layers}, {"dec_layers", dec_layers},
                {"d_model", d_model},       {"d_ff", d_ff},
                {"n_heads", n_heads},       {"src_vocab", src_vocab},
                {"tgt_vocab", tgt_vocab},   {"max_len", max_len},
                {"composition_mode", to_string(composition_mode)},
                {"collect_mode", to_string(collect_mode)},
                {"layer_lo", layer_lo},     {"layer_hi", layer_hi},
                {"dropout", dropout}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.enc_layers = j.at("enc_layers");
        c.dec_layers = j.at("dec_layers");
        c.d_model = j.at("d_model");
        c.d_ff = j.at("d_ff");
        c.n_heads = j.at("n_heads");
        c.src_vocab = j.at("src_vocab");
        c.tgt_vocab = j.at("tgt_vocab");
        c.max_len = j.at("max_len");
        c.composition_mode = composition_mode_from(j.at("composition_mode"));
        c.collect_mode = collect_mode_from(j.at("collect_mode"));
        c.layer_lo = j.at("layer_lo");
        c.layer_hi = j.at("layer_hi");
        c.dropout = j.at("dropout");
        return c;
    }
};

// Encoder sub-layer outputs for one batch: H0 plus M SA and M FF matrices,
// all [rows x d] over the ragged layout.
struct EncoderTrace {
    Tensor h0;
    std::vector<Tensor> sa;
    std::vector<Tensor> ff;
    std::vector<std::size_t> offsets;
    std::vector<std::uint8_t> valid;
};

// Incremental decoding state: per-layer projected self-attention caches plus
// the projected cross-attention keys/values fixed at decode start.
struct DecoderState {
    std::size_t steps = 0;
    std::vector<std::vector<double>> self_k;  // per layer, flat [steps x d]
    std::vector<std::vector<double>> self_v;
    std::vector<Tensor> cross_k;  // per layer [S x d]
    std::vector<Tensor> cross_v;
    std::vector<std::uint8_t> src_valid;
    std::size_t src_len = 0;
};

class TransformerModel {
public:
    TransformerModel(ModelConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const auto d = cfg_.d_model;
        const double proj_std = 1.0 / std::sqrt(double(d));
        const double emb_std = std::pow(double(d), -0.25);

        add_param("src_embed", Tensor::randn({cfg_.src_vocab, d}, rng, emb_std, true));
        add_param("tgt_embed", Tensor::randn({cfg_.tgt_vocab, d}, rng, emb_std, true));
        for (std::size_t i = 0; i < cfg_.enc_layers; ++i) {
            const std::string p = "enc." + std::to_string(i) + ".";
            add_attn_params(p + "attn.", rng, proj_std);
            add_ln_params(p + "ln1.");
            add_ff_params(p + "ff.", rng, proj_std);
            add_ln_params(p + "ln2.");
        }
        for (std::size_t i = 0; i < cfg_.dec_layers; ++i) {
            const std::string p = "dec." + std::to_string(i) + ".";
            add_attn_params(p + "self.", rng, proj_std);
            add_ln_params(p + "ln1.");
            add_attn_params(p + "cross.", rng, proj_std);
            add_ln_params(p + "ln2.");
            add_ff_params(p + "ff.", rng, proj_std);
            add_ln_params(p + "ln3.");
        }
        add_param("out_w", Tensor::randn({d, cfg_.tgt_vocab}, rng, proj_std, true));
        add_param("out_b", Tensor::zeros({cfg_.tgt_vocab}, true));

        table_ = CompositionTable::init(cfg_.composition_mode, cfg_.dec_layers,
                                        cfg_.n_collected());
        for (std::size_t l = 0; l < table_.w_key.size(); ++l)
            add_param("comp.wk." + std::to_string(l), table_.w_key[l]);
        for (std::size_t l = 0; l < table_.w_val.size(); ++l)
            add_param("comp.wv." + std::to_string(l), table_.w_val[l]);

        build_positional_table();
    }

    const ModelConfig& config() const { return cfg_; }
    CompositionTable& table() { return table_; }
    const CompositionTable& table() const { return table_; }

    void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }
    std::mt19937_64& dropout_rng() { return dropout_rng_; }

    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
        return params_;
    }
    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& [name, t] : params_) out.push_back(t);
        return out;
    }
    Tensor param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return params_[it->second].second;
    }
    bool has_param(const std::string& name) const { return index_.count(name) > 0; }
    std::size_t parameter_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }
    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    // ---- encoder ----------------------------------------------------------

    EncoderTrace encode(const Batch& batch) {
        if (batch.src_ids.empty()) throw DataError("encode: empty source batch");
        EncoderTrace trace;
        trace.offsets = batch.src_offsets;
        trace.valid = batch.src_valid;

        Tensor x = embedding(param("src_embed"), batch.src_ids);
        x = add(x, positional(batch.src_offsets));
        x = drop(x);
        trace.h0 = x;

        AttnSpec spec;
        spec.q_offsets = batch.src_offsets;
        spec.kv_offsets = batch.src_offsets;
        spec.n_heads = cfg_.n_heads;
        spec.kv_valid = batch.src_valid;
        for (std::size_t i = 0; i < cfg_.enc_layers; ++i) {
            const std::string p = "enc." + std::to_string(i) + ".";
            x = attn_sublayer(x, x, x, spec, p + "attn.", p + "ln1.");
            trace.sa.push_back(x);
            x = ff_sublayer(x, p + "ff.", p + "ln2.");
            trace.ff.push_back(x);
        }
        return trace;
    }

    // Cross-attention source representations per decoder layer. Baseline
    // reduces to the uppermost encoder output for every layer.
    std::pair<std::vector<Tensor>, std::vector<Tensor>> source_keys_values(
        const EncoderTrace& trace) {
        std::vector<Tensor> keys, values;
        if (cfg_.composition_mode == CompositionMode::baseline) {
            for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
                keys.push_back(trace.ff.back());
                values.push_back(trace.ff.back());
            }
        } else {
            CollectedReps reps = collect(trace.sa, trace.ff, cfg_.collect_mode,
                                         cfg_.layer_lo, cfg_.resolved_layer_hi());
            for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
                auto [hk, hv] = compose(reps, table_, l);
                keys.push_back(hk);
                values.push_back(hv);
            }
        }
        return {keys, values};
    }

    std::vector<std::string> collected_labels() const {
        std::vector<std::string> labels;
        for (std::size_t i = cfg_.layer_lo; i <= cfg_.resolved_layer_hi(); ++i) {
            if (cfg_.collect_mode != CollectMode::ff_only)
                labels.push_back("enc" + std::to_string(i) + "_sa");
            if (cfg_.collect_mode != CollectMode::sa_only)
                labels.push_back("enc" + std::to_string(i) + "_ff");
        }
        return labels;
    }

    // ---- decoder (teacher-forced, parallel over positions) ---------------

    Tensor decode_logits(const Batch& batch, const std::vector<Tensor>& keys,
                         const std::vector<Tensor>& values) {
        if (keys.size() != cfg_.dec_layers || values.size() != cfg_.dec_layers)
            throw ConfigError("decode: expected " + std::to_string(cfg_.dec_layers) +
                              " key/value matrices, got " + std::to_string(keys.size()) +
                              "/" + std::to_string(values.size()));
        Tensor y = embedding(param("tgt_embed"), batch.dec_in);
        y = add(y, positional(batch.tgt_offsets));
        y = drop(y);

        AttnSpec self_spec;
        self_spec.q_offsets = batch.tgt_offsets;
        self_spec.kv_offsets = batch.tgt_offsets;
        self_spec.n_heads = cfg_.n_heads;
        self_spec.causal = true;

        AttnSpec cross_spec;
        cross_spec.q_offsets = batch.tgt_offsets;
        cross_spec.kv_offsets = batch.src_offsets;
        cross_spec.n_heads = cfg_.n_heads;
        cross_spec.kv_valid = batch.src_valid;

        for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".";
            y = attn_sublayer(y, y, y, self_spec, p + "self.", p + "ln1.");
            y = attn_sublayer(y, keys[l], values[l], cross_spec, p + "cross.",
                              p + "ln2.");
            y = ff_sublayer(y, p + "ff.", p + "ln3.");
        }
        return add_bias(matmul(y, param("out_w")), param("out_b"));
    }

    Tensor teacher_forced_logits(const Batch& batch) {
        EncoderTrace trace = encode(batch);
        auto [keys, values] = source_keys_values(trace);
        return decode_logits(batch, keys, values);
    }

    Tensor teacher_forced_loss(const Batch& batch, double label_smoothing = 0.0) {
        return cross_entropy(teacher_forced_logits(batch), batch.dec_targets, kPadId,
                             label_smoothing);
    }

    // ---- incremental decoding ---------------------------------------------

    DecoderState start_decode(const std::vector<int>& src_ids) {
        const bool was_training = training_;
        training_ = false;
        Batch b;
        b.src_ids = src_ids;
        b.src_offsets = {0, src_ids.size()};
        for (int t : src_ids) b.src_valid.push_back(t == kPadId ? 0 : 1);
        EncoderTrace trace = encode(b);
        auto [keys, values] = source_keys_values(trace);
        training_ = was_training;
        return start_decode_with(src_ids, keys, values);
    }

    // External key/value source representations, one pair per decoder layer;
    // each layer still applies its own learned projections before attention.
    DecoderState start_decode_with(const std::vector<int>& src_ids,
                                   const std::vector<Tensor>& keys,
                                   const std::vector<Tensor>& values) {
        if (keys.size() != cfg_.dec_layers || values.size() != cfg_.dec_layers)
            throw ConfigError("start_decode: expected " +
                              std::to_string(cfg_.dec_layers) +
                              " key/value matrices, got " + std::to_string(keys.size()) +
                              "/" + std::to_string(values.size()));
        DecoderState st;
        st.src_len = src_ids.size();
        for (int t : src_ids) st.src_valid.push_back(t == kPadId ? 0 : 1);
        st.self_k.resize(cfg_.dec_layers);
        st.self_v.resize(cfg_.dec_layers);
        for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".cross.";
            st.cross_k.push_back(
                add_bias(matmul(keys[l], param(p + "wk")), param(p + "bk")));
            st.cross_v.push_back(
                add_bias(matmul(values[l], param(p + "wv")), param(p + "bv")));
        }
        return st;
    }

    // Feeds one target token, returns next-token logits over tgt_vocab.
    std::vector<double> decode_step(DecoderState& st, int token) {
        if (st.steps >= cfg_.max_len)
            throw ConfigError("decode_step: exceeded max_len " +
                              std::to_string(cfg_.max_len));
        const std::size_t d = cfg_.d_model;
        Tensor y = embedding(param("tgt_embed"), std::vector<int>{token});
        {
            std::vector<double> pe(pe_.begin() + st.steps * d,
                                   pe_.begin() + (st.steps + 1) * d);
            y = add(y, Tensor::from_data({1, d}, std::move(pe)));
        }
        for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".";
            // self-attention against the projected prefix cache
            Tensor q = add_bias(matmul(y, param(p + "self.wq")), param(p + "self.bq"));
            Tensor kn = add_bias(matmul(y, param(p + "self.wk")), param(p + "self.bk"));
            Tensor vn = add_bias(matmul(y, param(p + "self.wv")), param(p + "self.bv"));
            auto& ck = st.self_k[l];
            auto& cv = st.self_v[l];
            ck.insert(ck.end(), kn.data().begin(), kn.data().end());
            cv.insert(cv.end(), vn.data().begin(), vn.data().end());
            const std::size_t t = st.steps + 1;
            AttnSpec spec;
            spec.q_offsets = {0, 1};
            spec.kv_offsets = {0, t};
            spec.n_heads = cfg_.n_heads;
            Tensor a = multi_head_attention(q, Tensor::from_data({t, d}, ck),
                                            Tensor::from_data({t, d}, cv), spec);
            a = add_bias(matmul(a, param(p + "self.wo")), param(p + "self.bo"));
            y = layer_norm(add(y, a), param(p + "ln1.gain"), param(p + "ln1.bias"));

            // cross-attention against the precomputed source keys/values
            AttnSpec cspec;
            cspec.q_offsets = {0, 1};
            cspec.kv_offsets = {0, st.src_len};
            cspec.n_heads = cfg_.n_heads;
            cspec.kv_valid = st.src_valid;
            Tensor qc =
                add_bias(matmul(y, param(p + "cross.wq")), param(p + "cross.bq"));
            Tensor c = multi_head_attention(qc, st.cross_k[l], st.cross_v[l], cspec);
            c = add_bias(matmul(c, param(p + "cross.wo")), param(p + "cross.bo"));
            y = layer_norm(add(y, c), param(p + "ln2.gain"), param(p + "ln2.bias"));

            Tensor h = add_bias(matmul(y, param(p + "ff.w1")), param(p + "ff.b1"));
            h = add_bias(matmul(relu(h), param(p + "ff.w2")), param(p + "ff.b2"));
            y = layer_norm(add(y, h), param(p + "ln3.gain"), param(p + "ln3.bias"));
        }
        ++st.steps;
        Tensor logits = add_bias(matmul(y, param("out_w")), param("out_b"));
        return logits.data();
    }

    // RNG state round-trips through checkpoints as text.
    std::string dropout_rng_state() const {
        std::ostringstream os;
        os << dropout_rng_;
        return os.str();
    }
    void set_dropout_rng_state(const std::string& s) {
        std::istringstream is(s);
        is >> dropout_rng_;
        if (!is) throw DataError("bad dropout RNG state in checkpoint");
    }

private:
    void add_param(const std::string& name, Tensor t) {
        index_[name] = params_.size();
        params_.emplace_back(name, std::move(t));
    }
    void add_attn_params(const std::string& p, std::mt19937_64& rng, double std) {
        const auto d = cfg_.d_model;
        for (const char* w : {"wq", "wk", "wv", "wo"})
            add_param(p + w, Tensor::randn({d, d}, rng, std, true));
        for (const char* b : {"bq", "bk", "bv", "bo"})
            add_param(p + b, Tensor::zeros({d}, true));
    }
    void add_ln_params(const std::string& p) {
        add_param(p + "gain", Tensor::filled({cfg_.d_model}, 1.0, true));
        add_param(p + "bias", Tensor::zeros({cfg_.d_model}, true));
    }
    void add_ff_params(const std::string& p, std::mt19937_64& rng, double std) {
        add_param(p + "w1", Tensor::randn({cfg_.d_model, cfg_.d_ff}, rng, std, true));
        add_param(p + "b1", Tensor::zeros({cfg_.d_ff}, true));
        add_param(p + "w2", Tensor::randn({cfg_.d_ff, cfg_.d_model}, rng, std, true));
        add_param(p + "b2", Tensor::zeros({cfg_.d_model}, true));
    }

    void build_positional_table() {
        const auto d = cfg_.d_model;
        pe_.assign(cfg_.max_len * d, 0.0);
        for (std::size_t pos = 0; pos < cfg_.max_len; ++pos)
            for (std::size_t i = 0; i < d; i += 2) {
                const double angle =
                    double(pos) / std::pow(10000.0, double(i) / double(d));
                pe_[pos * d + i] = std::sin(angle);
                if (i + 1 < d) pe_[pos * d + i + 1] = std::cos(angle);
            }
    }

    Tensor positional(const std::vector<std::size_t>& offsets) const {
        const auto d = cfg_.d_model;
        const std::size_t rows = offsets.back();
        std::vector<double> out(rows * d);
        for (std::size_t b = 0; b + 1 < offsets.size(); ++b)
            for (std::size_t r = offsets[b]; r < offsets[b + 1]; ++r) {
                const std::size_t pos = r - offsets[b];
                if (pos >= cfg_.max_len)
                    throw ConfigError("sequence length exceeds max_len " +
                                      std::to_string(cfg_.max_len));
                std::copy_n(pe_.begin() + pos * d, d, out.begin() + r * d);
            }
        return Tensor::from_data({rows, d}, std::move(out));
    }

    Tensor drop(const Tensor& x) {
        return dropout(x, cfg_.dropout, dropout_rng_, training_);
    }

    Tensor attn_sublayer(const Tensor& x, const Tensor& kv_src_k,
                         const Tensor& kv_src_v, const AttnSpec& spec,
                         const std::string& ap, const std::string& lp) {
        Tensor q = add_bias(matmul(x, param(ap + "wq")), param(ap + "bq"));
        Tensor k = add_bias(matmul(kv_src_k, param(ap + "wk")), param(ap + "bk"));
        Tensor v = add_bias(matmul(kv_src_v, param(ap + "wv")), param(ap + "bv"));
        Tensor a = multi_head_attention(q, k, v, spec);
        a = add_bias(matmul(a, param(ap + "wo")), param(ap + "bo"));
        return layer_norm(add(x, drop(a)), param(lp + "gain"), param(lp + "bias"));
    }

    Tensor ff_sublayer(const Tensor& x, const std::string& fp, const std::string& lp) {
        Tensor h = add_bias(matmul(x, param(fp + "w1")), param(fp + "b1"));
        h = add_bias(matmul(relu(h), param(fp + "w2")), param(fp + "b2"));
        return layer_norm(add(x, drop(h)), param(lp + "gain"), param(lp + "bias"));
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
    CompositionTable table_;
    std::vector<double> pe_;
    std::mt19937_64 dropout_rng_;
    bool training_ = false;
};

}  // namespace composeq
