#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "composeq/trainer.hpp"

namespace composeq {

// File layout: "CQCK" magic, u64 little-endian header length, JSON header
// (tensor manifest with shapes and element offsets, config echo, step
// counter, RNG state), then the concatenated f64 payload.
inline constexpr char kCheckpointMagic[4] = {'C', 'Q', 'C', 'K'};

struct Checkpoint {
    nlohmann::json header;
    std::vector<double> payload;

    std::size_t step() const { return header.at("step"); }
    ModelConfig model_config() const {
        return ModelConfig::from_json(header.at("model_config"));
    }
    TrainConfig train_config() const {
        return TrainConfig::from_json(header.at("train_config"));
    }

    // Element span of a named tensor, shape-checked against `expect`.
    std::pair<const double*, std::size_t> tensor(const std::string& name,
                                                 const Shape& expect) const {
        for (const auto& t : header.at("tensors")) {
            if (t.at("name") != name) continue;
            const auto shape = t.at("shape").get<std::vector<std::size_t>>();
            if (shape != expect)
                throw DataError("checkpoint tensor '" + name + "' has shape " +
                                shape_str(shape) + ", expected " + shape_str(expect));
            const std::size_t off = t.at("offset");
            const std::size_t n = shape_numel(shape);
            return {payload.data() + off, n};
        }
        throw DataError("checkpoint is missing tensor '" + name + "'");
    }
};

namespace detail {

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline void put_f64_le(std::ostream& out, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, p + i, 8);
        put_u64_le(out, bits);
    }
}

}  // namespace detail

// Serializes model parameters, Adam moments, step counter, RNG state, and
// the full config echo. Loading a saved checkpoint reproduces the training
// trajectory bit-exactly.
inline void save_checkpoint(const std::string& path, const TransformerModel& model,
                            const AdamOptimizer* opt, std::size_t step,
                            const TrainConfig& tcfg) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<std::pair<const double*, std::size_t>> spans;
    std::size_t offset = 0;
    auto add = [&](const std::string& name, const Shape& shape, const double* p) {
        const std::size_t n = shape_numel(shape);
        tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
        spans.emplace_back(p, n);
        offset += n;
    };
    for (const auto& [name, t] : model.named_parameters())
        add(name, t.shape(), t.data().data());
    if (opt) {
        auto& o = const_cast<AdamOptimizer&>(*opt);
        for (std::size_t i = 0; i < opt->params().size(); ++i) {
            const auto& [name, t] = opt->params()[i];
            add("adam.m." + name, t.shape(), o.first_moment(i).data());
            add("adam.v." + name, t.shape(), o.second_moment(i).data());
        }
    }

    nlohmann::json header;
    header["format_version"] = 1;
    header["step"] = step;
    header["adam_updates"] = opt ? opt->updates() : 0;
    header["model_config"] = model.config().to_json();
    header["train_config"] = tcfg.to_json();
    header["dropout_rng"] = model.dropout_rng_state();
    header["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
    const std::string hdr = header.dump();
    out.write(kCheckpointMagic, 4);
    detail::put_u64_le(out, hdr.size());
    out.write(hdr.data(), std::streamsize(hdr.size()));
    for (const auto& [p, n] : spans) detail::put_f64_le(out, p, n);
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("'" + path + "' is not a checkpoint file (bad magic)");
    const std::uint64_t hdr_len = detail::get_u64_le(in);
    std::string hdr(hdr_len, '\0');
    in.read(hdr.data(), std::streamsize(hdr_len));
    if (!in) throw DataError("checkpoint '" + path + "' is truncated (header)");

    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint '" + path + "' has a corrupt header: " + e.what());
    }
    std::size_t total = 0;
    for (const auto& t : ck.header.at("tensors"))
        total += shape_numel(t.at("shape").get<std::vector<std::size_t>>());
    ck.payload.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
        const std::uint64_t bits = detail::get_u64_le(in);
        if (!in)
            throw DataError("checkpoint '" + path + "' is truncated (payload: got " +
                            std::to_string(i) + " of " + std::to_string(total) +
                            " values)");
        std::memcpy(&ck.payload[i], &bits, 8);
    }
    return ck;
}

// Restores parameters (and optimizer moments, if an optimizer is given) into
// an already-constructed model. Refuses on any shape mismatch, naming the
// offending tensor; nothing is modified until all tensors have been checked.
inline void restore_checkpoint(const Checkpoint& ck, TransformerModel& model,
                               AdamOptimizer* opt) {
    std::vector<std::pair<double*, std::pair<const double*, std::size_t>>> plan;
    for (const auto& [name, t] : model.named_parameters())
        plan.emplace_back(const_cast<Tensor&>(t).data().data(),
                          ck.tensor(name, t.shape()));
    if (opt) {
        for (std::size_t i = 0; i < opt->params().size(); ++i) {
            const auto& [name, t] = opt->params()[i];
            plan.emplace_back(opt->first_moment(i).data(),
                              ck.tensor("adam.m." + name, t.shape()));
            plan.emplace_back(opt->second_moment(i).data(),
                              ck.tensor("adam.v." + name, t.shape()));
        }
        opt->set_updates(ck.header.at("adam_updates"));
    }
    for (auto& [dst, src] : plan) std::copy_n(src.first, src.second, dst);
    model.set_dropout_rng_state(ck.header.at("dropout_rng"));
}

}  // namespace composeq
