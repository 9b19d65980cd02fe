#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "composeq/errors.hpp"

namespace composeq {

// Reserved ids shared by source and target vocabularies.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;

class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = int(i);
    }

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(int id) const { return tokens_.at(std::size_t(id)); }
    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw DataError("unknown token '" + tok + "'");
        return it->second;
    }
    bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int i : ids) out.push_back(token(i));
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct Sample {
    std::vector<std::string> src;
    std::vector<std::string> tgt;
    int compound_id = -1;                    // cg-test rows only
    std::pair<int, int> compound_span{-1, -1};  // [start, end) into tgt

    bool has_compound() const { return compound_id >= 0; }
};

inline nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json j;
    j["src"] = s.src;
    j["tgt"] = s.tgt;
    if (s.has_compound()) {
        j["compound_id"] = s.compound_id;
        j["compound_span"] = {s.compound_span.first, s.compound_span.second};
    }
    return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
    Sample s;
    s.src = j.at("src").get<std::vector<std::string>>();
    s.tgt = j.at("tgt").get<std::vector<std::string>>();
    if (j.contains("compound_id")) {
        s.compound_id = j.at("compound_id").get<int>();
        auto span = j.at("compound_span");
        s.compound_span = {span.at(0).get<int>(), span.at(1).get<int>()};
    }
    return s;
}

inline void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const auto& s : samples) out << sample_to_json(s).dump() << "\n";
}

inline std::vector<Sample> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file '" + path + "'");
    std::vector<Sample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// A tokenized sample ready for the model.
struct EncodedSample {
    std::vector<int> src;
    std::vector<int> tgt;
    int compound_id = -1;
    std::vector<int> compound;  // target-side compound token ids, cg-test only
};

inline EncodedSample encode_sample(const Sample& s, const Vocab& src_vocab,
                                   const Vocab& tgt_vocab) {
    EncodedSample e;
    e.src = src_vocab.encode(s.src);
    e.tgt = tgt_vocab.encode(s.tgt);
    e.compound_id = s.compound_id;
    if (s.has_compound()) {
        if (s.compound_span.first < 0 || s.compound_span.second > int(s.tgt.size()) ||
            s.compound_span.first >= s.compound_span.second)
            throw DataError("invalid compound span");
        for (int i = s.compound_span.first; i < s.compound_span.second; ++i)
            e.compound.push_back(e.tgt[std::size_t(i)]);
    }
    return e;
}

// Ragged batch: per-sample token rows concatenated, boundaries in the offset
// arrays. Decoder input is BOS-shifted; targets append EOS.
struct Batch {
    std::vector<int> src_ids;
    std::vector<int> dec_in;
    std::vector<int> dec_targets;
    std::vector<std::size_t> src_offsets;  // B+1
    std::vector<std::size_t> tgt_offsets;  // B+1
    std::vector<std::uint8_t> src_valid;   // 1 per non-pad source row

    std::size_t size() const { return src_offsets.size() - 1; }
    std::size_t target_tokens() const {
        std::size_t n = 0;
        for (int t : dec_targets)
            if (t != kPadId) ++n;
        return n;
    }
};

inline Batch make_batch(const std::vector<EncodedSample>& samples) {
    if (samples.empty()) throw DataError("make_batch: empty batch");
    Batch b;
    b.src_offsets.push_back(0);
    b.tgt_offsets.push_back(0);
    for (const auto& s : samples) {
        if (s.src.empty()) throw DataError("make_batch: empty source sequence");
        for (int t : s.src) {
            b.src_ids.push_back(t);
            b.src_valid.push_back(t == kPadId ? 0 : 1);
        }
        b.dec_in.push_back(kBosId);
        for (int t : s.tgt) b.dec_in.push_back(t);
        for (int t : s.tgt) b.dec_targets.push_back(t);
        b.dec_targets.push_back(kEosId);
        b.src_offsets.push_back(b.src_ids.size());
        b.tgt_offsets.push_back(b.dec_in.size());
    }
    return b;
}

}  // namespace composeq
