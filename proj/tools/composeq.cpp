// composeq: sequence-to-sequence transformer laboratory with a learnable
// composed layer mixing encoder sub-layer outputs into per-decoder-layer
// cross-attention keys and values.
//
// Subcommands: gen-data, train, eval, inspect, gradcheck.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerics.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "composeq/checkpoint.hpp"
#include "composeq/cogsynth.hpp"
#include "composeq/config.hpp"
#include "composeq/evaluator.hpp"
#include "composeq/trainer.hpp"

namespace fs = std::filesystem;
using namespace composeq;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "flat key=value config file");
    cmd->add_option("--set", opts.overrides,
                    "config override key=value (repeatable, wins over --config)");
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_file.empty()) apply_config_file(cfg, opts.config_file);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

void make_run_dir(const fs::path& out, const RunConfig& cfg) {
    fs::create_directories(out / "ckpt");
    fs::create_directories(out / "logs");
    fs::create_directories(out / "reports");
    write_text(out / "config.echo", cfg.echo());
}

std::vector<EncodedSample> load_split(const fs::path& dir, const std::string& name,
                                      const Vocab& sv, const Vocab& tv) {
    std::vector<EncodedSample> out;
    for (const auto& s : read_jsonl((dir / name).string()))
        out.push_back(encode_sample(s, sv, tv));
    return out;
}

std::pair<Vocab, Vocab> load_vocabs(const fs::path& data_dir) {
    std::ifstream in(data_dir / "vocab.json");
    if (!in)
        throw DataError("missing vocab file '" + (data_dir / "vocab.json").string() +
                        "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt vocab.json: " + std::string(e.what()));
    }
    return {Vocab(j.at("src").get<std::vector<std::string>>()),
            Vocab(j.at("tgt").get<std::vector<std::string>>())};
}

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const CommonOpts& opts, const std::string& out_dir) {
    RunConfig cfg = resolve_config(opts);
    Grammar g(cfg.grammar);
    GeneratedCorpus corpus = generate(cfg.split, g);

    const fs::path out(out_dir);
    fs::create_directories(out);
    write_text(out / "config.echo", cfg.echo());
    write_jsonl((out / "train.jsonl").string(), corpus.train);
    write_jsonl((out / "valid.jsonl").string(), corpus.valid);
    write_jsonl((out / "test.jsonl").string(), corpus.test);
    write_jsonl((out / "cg_test.jsonl").string(), corpus.cg_test);
    nlohmann::json vocab{{"src", g.src_tokens()}, {"tgt", g.tgt_tokens()}};
    write_text(out / "vocab.json", vocab.dump(2) + "\n");
    write_text(out / "report.json", corpus.report.dump(2) + "\n");
    std::cout << "wrote " << corpus.train.size() << " train / "
              << corpus.valid.size() << " valid / " << corpus.test.size()
              << " test / " << corpus.cg_test.size() << " cg-test rows to "
              << out_dir << "\n";
    return 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(const CommonOpts& opts, const std::string& data_dir,
              const std::string& out_dir, const std::string& mode,
              const std::string& collect, const std::string& layers,
              std::int64_t seed) {
    RunConfig cfg = resolve_config(opts);
    if (!mode.empty()) cfg.set("composition_mode", mode);
    if (!collect.empty()) cfg.set("collect_mode", collect);
    if (!layers.empty()) {
        const auto dots = layers.find("..");
        if (dots == std::string::npos)
            throw ConfigError("--layers expects a..b, got '" + layers + "'");
        cfg.set("layer_lo", layers.substr(0, dots));
        cfg.set("layer_hi", layers.substr(dots + 2));
    }
    if (seed >= 0) cfg.set("seed", std::to_string(seed));

    const fs::path data(data_dir);
    auto [sv, tv] = load_vocabs(data);
    cfg.model.src_vocab = sv.size();
    cfg.model.tgt_vocab = tv.size();
    cfg.model.validate();
    cfg.train.validate();
    auto train_set = load_split(data, "train.jsonl", sv, tv);

    const fs::path out(out_dir);
    make_run_dir(out, cfg);

    TransformerModel model(cfg.model, cfg.train.seed);
    Trainer trainer(model, train_set, cfg.train);
    trainer.on_numeric_failure = [&] {
        save_checkpoint((out / "ckpt" / "diagnostic.cqck").string(), model,
                        &trainer.optimizer(), trainer.step(), cfg.train);
        std::cerr << "diagnostic checkpoint written to "
                  << (out / "ckpt" / "diagnostic.cqck") << "\n";
    };

    std::ofstream loss_csv(out / "logs" / "loss.csv", std::ios::binary);
    auto log = trainer.run(&loss_csv);
    loss_csv.close();
    save_checkpoint((out / "ckpt" / "final.cqck").string(), model,
                    &trainer.optimizer(), trainer.step(), cfg.train);
    std::cout << "trained " << trainer.step() << " steps; final loss "
              << (log.empty() ? 0.0 : log.back().loss) << "; checkpoint "
              << (out / "ckpt" / "final.cqck") << "\n";
    return 0;
}

// ---- eval ---------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             std::size_t beam, const std::string& report_dir) {
    Checkpoint ck = read_checkpoint(ckpt_path);
    ModelConfig mc = ck.model_config();
    const fs::path data(data_dir);
    auto [sv, tv] = load_vocabs(data);
    if (mc.src_vocab != sv.size() || mc.tgt_vocab != tv.size())
        throw DataError("vocab mismatch: checkpoint expects " +
                        std::to_string(mc.src_vocab) + "/" +
                        std::to_string(mc.tgt_vocab) + " (src/tgt), data has " +
                        std::to_string(sv.size()) + "/" + std::to_string(tv.size()));

    TransformerModel model(mc, 0);
    restore_checkpoint(ck, model, nullptr);

    const fs::path out(report_dir);
    fs::create_directories(out);

    // in-distribution exact match on the held-in test split
    auto test_set = load_split(data, "test.jsonl", sv, tv);
    std::vector<std::vector<int>> test_preds, test_refs;
    for (const auto& row : test_set) {
        test_preds.push_back(beam_decode(model, row.src, beam, mc.max_len).tokens);
        test_refs.push_back(row.tgt);
    }
    const double test_em = exact_match(test_preds, test_refs);

    // compositional generalization: CTER over the cg-test rows
    auto cg = load_split(data, "cg_test.jsonl", sv, tv);
    std::vector<std::vector<int>> cg_preds;
    EvalReport rep = evaluate(model, cg, beam, &cg_preds);

    nlohmann::json rj = rep.to_json();
    rj["test_exact_match"] = test_em;
    rj["beam_size"] = beam;
    write_text(out / "report.json", rj.dump(2) + "\n");

    std::ostringstream pc;
    write_per_compound_csv(pc, rep.per_compound);
    write_text(out / "per_compound.csv", pc.str());

    std::ostringstream preds;
    for (std::size_t i = 0; i < cg_preds.size(); ++i) {
        nlohmann::json pj{{"id", i}, {"tokens", tv.decode(cg_preds[i])}};
        preds << pj.dump() << "\n";
    }
    write_text(out / "predictions.jsonl", preds.str());

    std::cout << "test exact match " << test_em << "; cg CTER instance "
              << rep.cter_instance << " aggregate " << rep.cter_aggregate
              << "; cg exact match " << rep.exact_match << "\n";
    return 0;
}

// ---- inspect --------------------------------------------------------------------

int cmd_inspect(const std::string& ckpt_path, const std::string& weights_out,
                const std::string& hidden_out, const std::string& probe_file) {
    Checkpoint ck = read_checkpoint(ckpt_path);
    ModelConfig mc = ck.model_config();
    TransformerModel model(mc, 0);
    restore_checkpoint(ck, model, nullptr);

    if (!weights_out.empty()) {
        if (mc.composition_mode == CompositionMode::baseline) {
            std::cout << "no composition table: baseline checkpoints have no "
                         "composition scalars\n";
        } else {
            const auto labels = model.collected_labels();
            write_text(weights_out + "_keys.csv",
                       export_weights_csv(model.table(), labels, true));
            write_text(weights_out + "_values.csv",
                       export_weights_csv(model.table(), labels, false));
            std::cout << "wrote " << weights_out << "_keys.csv and "
                      << weights_out << "_values.csv\n";
        }
    }
    if (!hidden_out.empty()) {
        if (probe_file.empty())
            throw ConfigError("--hidden-out requires --probe-file");
        // probe rows reuse the corpus JSONL schema; ids come from the file order
        // the probe file reuses the corpus JSONL schema with raw token id
        // strings, pre-tokenized against the checkpoint's data directory
        std::vector<EncodedSample> probes;
        for (const auto& s : read_jsonl(probe_file)) {
            EncodedSample e;
            try {
                for (const auto& t : s.src) e.src.push_back(std::stoi(t));
                for (const auto& t : s.tgt) e.tgt.push_back(std::stoi(t));
            } catch (const std::exception&) {
                throw DataError("probe file '" + probe_file +
                                "' must contain numeric token ids");
            }
            probes.push_back(std::move(e));
        }
        std::ofstream out(hidden_out, std::ios::binary);
        if (!out) throw DataError("cannot write '" + hidden_out + "'");
        export_hidden_states(model, probes, out);
        std::cout << "wrote hidden states for " << probes.size()
                  << " examples to " << hidden_out << "\n";
    }
    return 0;
}

// ---- gradcheck ------------------------------------------------------------------

int cmd_gradcheck(const CommonOpts& opts, std::size_t vocab) {
    // tiny defaults so the command is useful without a config file; the
    // 50,000-parameter cap below still guards explicit configs
    RunConfig cfg;
    cfg.model.d_model = 8;
    cfg.model.d_ff = 16;
    cfg.model.n_heads = 2;
    cfg.model.max_len = 8;
    cfg.model.composition_mode = CompositionMode::per_layer;
    if (!opts.config_file.empty()) apply_config_file(cfg, opts.config_file);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.model.src_vocab = vocab;
    cfg.model.tgt_vocab = vocab;
    cfg.model.dropout = 0.0;  // finite differences need a deterministic loss
    cfg.model.validate();

    TransformerModel model(cfg.model, cfg.train.seed);
    if (model.parameter_scalars() > 50000)
        throw ConfigError("gradcheck refused: " +
                          std::to_string(model.parameter_scalars()) +
                          " parameters exceed the 50,000 limit (finite "
                          "differences would be too slow)");

    // fixed probe batch: two samples with S<=5, T<=4
    std::mt19937_64 rng(cfg.train.seed + 1);
    auto tok = [&] { return int(3 + rng() % (vocab - 3)); };
    std::vector<EncodedSample> samples(2);
    samples[0].src = {tok(), tok(), tok(), tok(), tok()};
    samples[0].tgt = {tok(), tok(), tok(), tok()};
    samples[1].src = {tok(), tok(), tok()};
    samples[1].tgt = {tok(), tok()};
    Batch batch = make_batch(samples);

    auto loss = [&] { return model.teacher_forced_loss(batch); };
    const double all_err = grad_check(loss, model.parameters());
    double comp_err = 0.0;
    std::vector<Tensor> comp;
    for (const auto& [name, t] : model.named_parameters())
        if (name.rfind("comp.", 0) == 0) comp.push_back(t);
    if (!comp.empty()) comp_err = grad_check(loss, comp);

    std::printf("max relative error, all parameters:      %.3e\n", all_err);
    std::printf("max relative error, composition scalars: %.3e\n", comp_err);
    const bool ok = all_err < 1e-4;
    std::printf("gradcheck %s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformer laboratory with composed cross-attention sources"};
    app.require_subcommand(1);

    CommonOpts gen_opts;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen, gen_opts);
    gen->add_option("--out", gen_out, "output directory")->required();

    CommonOpts train_opts;
    std::string train_data, train_out, train_mode, train_collect, train_layers;
    std::int64_t train_seed = -1;
    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, train_opts);
    train->add_option("--data", train_data, "corpus directory")->required();
    train->add_option("--out", train_out, "run directory")->required();
    train->add_option("--mode", train_mode, "baseline|shared|per_layer");
    train->add_option("--collect", train_collect, "sa|ff|both");
    train->add_option("--layers", train_layers, "collected encoder layers a..b");
    train->add_option("--seed", train_seed, "training seed");

    std::string eval_ckpt, eval_data, eval_report;
    std::size_t eval_beam = 5;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "corpus directory")->required();
    eval->add_option("--beam", eval_beam, "beam size");
    eval->add_option("--report", eval_report, "report directory")->required();

    std::string ins_ckpt, ins_weights, ins_hidden, ins_probe;
    auto* inspect = app.add_subcommand("inspect", "export composition weights "
                                                  "and hidden states");
    inspect->add_option("--ckpt", ins_ckpt, "checkpoint file")->required();
    inspect->add_option("--weights-out", ins_weights,
                        "prefix for composition weight CSVs");
    inspect->add_option("--hidden-out", ins_hidden, "hidden-state CSV path");
    inspect->add_option("--probe-file", ins_probe,
                        "JSONL probe examples (token ids)");

    CommonOpts gc_opts;
    std::size_t gc_vocab = 20;
    auto* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(gradcheck, gc_opts);
    gradcheck->add_option("--vocab", gc_vocab, "probe vocabulary size");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts, gen_out);
        if (train->parsed())
            return cmd_train(train_opts, train_data, train_out, train_mode,
                             train_collect, train_layers, train_seed);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_beam,
                                            eval_report);
        if (inspect->parsed())
            return cmd_inspect(ins_ckpt, ins_weights, ins_hidden, ins_probe);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_opts, gc_vocab);
    } catch (const NumericsError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
