#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "composeq/corpus.hpp"

namespace composeq {

struct GrammarConfig {
    std::size_t n_nouns = 30;
    std::size_t n_verbs = 20;
    std::size_t n_mods = 10;
    std::size_t n_advs = 10;
};

// A closed synthetic grammar: verb-object compounds `V the N [rel M]`
// embedded in subject/adverb context frames, translated by a deterministic
// rule-based transducer. The `rel M` postpositive modifier clause is fronted
// to `M' de N'` on the target side.
class Grammar {
public:
    explicit Grammar(GrammarConfig cfg) : cfg_(cfg) {
        if (cfg_.n_nouns < 1 || cfg_.n_verbs < 1 || cfg_.n_mods < 1 ||
            cfg_.n_advs < 1)
            throw ConfigError("grammar: all atom inventories must be nonempty");
    }

    const GrammarConfig& config() const { return cfg_; }

    std::string noun(std::size_t i) const { return "n" + std::to_string(i); }
    std::string verb(std::size_t i) const { return "v" + std::to_string(i); }
    std::string mod(std::size_t i) const { return "m" + std::to_string(i); }
    std::string adv(std::size_t i) const { return "a" + std::to_string(i); }

    std::vector<std::string> src_tokens() const {
        std::vector<std::string> v{"<pad>", "<bos>", "<eos>", "the", "rel"};
        for (std::size_t i = 0; i < cfg_.n_nouns; ++i) v.push_back(noun(i));
        for (std::size_t i = 0; i < cfg_.n_verbs; ++i) v.push_back(verb(i));
        for (std::size_t i = 0; i < cfg_.n_mods; ++i) v.push_back(mod(i));
        for (std::size_t i = 0; i < cfg_.n_advs; ++i) v.push_back(adv(i));
        return v;
    }
    std::vector<std::string> tgt_tokens() const {
        std::vector<std::string> v{"<pad>", "<bos>", "<eos>", "de"};
        for (std::size_t i = 0; i < cfg_.n_nouns; ++i) v.push_back("N" + std::to_string(i));
        for (std::size_t i = 0; i < cfg_.n_verbs; ++i) v.push_back("V" + std::to_string(i));
        for (std::size_t i = 0; i < cfg_.n_mods; ++i) v.push_back("M" + std::to_string(i));
        for (std::size_t i = 0; i < cfg_.n_advs; ++i) v.push_back("A" + std::to_string(i));
        return v;
    }
    Vocab src_vocab() const { return Vocab(src_tokens()); }
    Vocab tgt_vocab() const { return Vocab(tgt_tokens()); }

    bool is_noun(const std::string& t) const { return atom_kind(t) == 'n'; }
    bool is_verb(const std::string& t) const { return atom_kind(t) == 'v'; }
    bool is_mod(const std::string& t) const { return atom_kind(t) == 'm'; }
    bool is_adv(const std::string& t) const { return atom_kind(t) == 'a'; }

    // One-to-one atom lexicon: n7 -> N7 etc.
    std::string translate_atom(const std::string& t) const {
        char k = atom_kind(t);
        if (k == 0) throw DataError("oracle: token '" + t + "' is not an atom");
        return std::string(1, char(std::toupper(k))) + t.substr(1);
    }

private:
    char atom_kind(const std::string& t) const {
        if (t.size() < 2 || t.find_first_not_of("0123456789", 1) != std::string::npos)
            return 0;
        const std::size_t idx = std::size_t(std::stoul(t.substr(1)));
        switch (t[0]) {
            case 'n': return idx < cfg_.n_nouns ? 'n' : 0;
            case 'v': return idx < cfg_.n_verbs ? 'v' : 0;
            case 'm': return idx < cfg_.n_mods ? 'm' : 0;
            case 'a': return idx < cfg_.n_advs ? 'a' : 0;
            default: return 0;
        }
    }

    GrammarConfig cfg_;
};

// Deterministic reference translator. Rules:
//   - "the" is dropped
//   - `N rel M` is rewritten to `M' de N'` (modifier fronted)
//   - every other atom maps left-to-right through the lexicon
inline std::vector<std::string> oracle_translate(
    const std::vector<std::string>& src, const Grammar& g) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const std::string& t = src[i];
        if (t == "the") continue;
        if (t == "rel")
            throw DataError("oracle: dangling 'rel' at position " + std::to_string(i));
        if (g.is_noun(t) && i + 2 < src.size() && src[i + 1] == "rel") {
            if (!g.is_mod(src[i + 2]))
                throw DataError("oracle: 'rel' not followed by a modifier atom");
            out.push_back(g.translate_atom(src[i + 2]));
            out.push_back("de");
            out.push_back(g.translate_atom(t));
            i += 2;
            continue;
        }
        if (i + 1 < src.size() && src[i + 1] == "rel" && !g.is_noun(t))
            throw DataError("oracle: 'rel' must follow a noun");
        out.push_back(g.translate_atom(t));  // throws on unknown tokens
    }
    return out;
}

// A verb-object compound, optionally carrying a postpositive modifier.
struct Compound {
    std::size_t verb;
    std::size_t noun;
    std::optional<std::size_t> mod;

    bool operator<(const Compound& o) const {
        return std::tie(verb, noun, mod) < std::tie(o.verb, o.noun, o.mod);
    }
    bool operator==(const Compound& o) const {
        return verb == o.verb && noun == o.noun && mod == o.mod;
    }

    std::vector<std::string> realize(const Grammar& g) const {
        std::vector<std::string> toks{g.verb(verb), "the", g.noun(noun)};
        if (mod) {
            toks.push_back("rel");
            toks.push_back(g.mod(*mod));
        }
        return toks;
    }
};

// A context frame around the compound slot: subject noun phrase, optional
// subject modifier clause, optional adverb before or after the compound.
struct Context {
    std::size_t template_id;  // 0..4
    std::size_t subj;
    std::size_t adv;
    std::size_t subj_mod;

    bool operator<(const Context& o) const {
        return std::tie(template_id, subj, adv, subj_mod) <
               std::tie(o.template_id, o.subj, o.adv, o.subj_mod);
    }

    // Returns (prefix, suffix) source token sequences around the compound.
    std::pair<std::vector<std::string>, std::vector<std::string>> realize(
        const Grammar& g) const {
        std::vector<std::string> pre, post;
        switch (template_id) {
            case 0:  // the S <C>
                pre = {"the", g.noun(subj)};
                break;
            case 1:  // the S <C> A
                pre = {"the", g.noun(subj)};
                post = {g.adv(adv)};
                break;
            case 2:  // A the S <C>
                pre = {g.adv(adv), "the", g.noun(subj)};
                break;
            case 3:  // the S rel M <C>
                pre = {"the", g.noun(subj), "rel", g.mod(subj_mod)};
                break;
            case 4:  // the S A <C>
                pre = {"the", g.noun(subj), g.adv(adv)};
                break;
            default:
                throw ConfigError("context: unknown template id");
        }
        return {pre, post};
    }
};

inline constexpr std::size_t kNumContextTemplates = 5;

struct SplitSpec {
    std::size_t train_samples = 20000;
    std::size_t valid_samples = 1000;
    std::size_t test_samples = 1000;
    std::size_t holdout_compounds = 200;
    std::size_t contexts_per_compound = 5;
    std::size_t min_atom_occurrences = 10;
    std::uint64_t seed = 1;
};

struct GeneratedCorpus {
    std::vector<Sample> train, valid, test, cg_test;
    std::vector<Compound> holdout;
    nlohmann::json report;
};

namespace detail {

inline Sample build_sample(const Grammar& g, const Compound& c, const Context& ctx,
                           int compound_id) {
    auto [pre, post] = ctx.realize(g);
    std::vector<std::string> src = pre;
    const auto comp_src = c.realize(g);
    src.insert(src.end(), comp_src.begin(), comp_src.end());
    src.insert(src.end(), post.begin(), post.end());

    // The transducer is local, so the target factors across the three spans.
    const auto tgt_pre = oracle_translate(pre, g);
    const auto tgt_comp = oracle_translate(comp_src, g);
    Sample s;
    s.src = std::move(src);
    s.tgt = oracle_translate(s.src, g);
    if (compound_id >= 0) {
        s.compound_id = compound_id;
        s.compound_span = {int(tgt_pre.size()), int(tgt_pre.size() + tgt_comp.size())};
        // generation-time self-check of the recorded span
        for (std::size_t i = 0; i < tgt_comp.size(); ++i)
            if (s.tgt[tgt_pre.size() + i] != tgt_comp[i])
                throw DataError("generator: compound span self-check failed");
    }
    return s;
}

inline Context random_context(const Grammar& g, std::mt19937_64& rng) {
    const auto& gc = g.config();
    Context ctx;
    ctx.template_id = rng() % kNumContextTemplates;
    ctx.subj = rng() % gc.n_nouns;
    ctx.adv = rng() % gc.n_advs;
    ctx.subj_mod = rng() % gc.n_mods;
    // zero out unused slots so context identity equals realized identity
    if (ctx.template_id == 0 || ctx.template_id == 3) ctx.adv = 0;
    if (ctx.template_id != 3) ctx.subj_mod = 0;
    return ctx;
}

inline Compound extract_compound(const std::vector<std::string>& src,
                                 const Grammar& g) {
    // The compound verb is the single verb atom in the sentence.
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!g.is_verb(src[i])) continue;
        if (i + 2 >= src.size() || src[i + 1] != "the" || !g.is_noun(src[i + 2]))
            throw DataError("extract_compound: malformed compound slot");
        Compound c;
        c.verb = std::size_t(std::stoul(src[i].substr(1)));
        c.noun = std::size_t(std::stoul(src[i + 2].substr(1)));
        if (i + 4 < src.size() && src[i + 3] == "rel")
            c.mod = std::size_t(std::stoul(src[i + 4].substr(1)));
        return c;
    }
    throw DataError("extract_compound: no verb found");
}

}  // namespace detail

inline GeneratedCorpus generate(const SplitSpec& split, const Grammar& g) {
    const auto& gc = g.config();
    const std::size_t pool =
        gc.n_verbs * gc.n_nouns * (gc.n_mods + 1);  // +1 for mod-less compounds
    if (split.holdout_compounds * 5 > pool)
        throw DataError("generation infeasible: " +
                        std::to_string(split.holdout_compounds) +
                        " held-out compounds exceed 20% of the " +
                        std::to_string(pool) + "-compound pool");
    const std::size_t context_space =
        kNumContextTemplates * gc.n_nouns * gc.n_advs * gc.n_mods;
    if (split.contexts_per_compound > context_space)
        throw DataError("generation infeasible: not enough distinct contexts");

    std::mt19937_64 rng(split.seed);

    // Enumerate the full compound pool and draw the holdout set.
    std::vector<Compound> all;
    all.reserve(pool);
    for (std::size_t v = 0; v < gc.n_verbs; ++v)
        for (std::size_t n = 0; n < gc.n_nouns; ++n) {
            all.push_back({v, n, std::nullopt});
            for (std::size_t m = 0; m < gc.n_mods; ++m) all.push_back({v, n, m});
        }
    std::shuffle(all.begin(), all.end(), rng);
    GeneratedCorpus out;
    out.holdout.assign(all.begin(), all.begin() + long(split.holdout_compounds));
    std::set<Compound> holdout_set(out.holdout.begin(), out.holdout.end());

    auto draw_training_compound = [&] {
        while (true) {
            Compound c;
            c.verb = rng() % gc.n_verbs;
            c.noun = rng() % gc.n_nouns;
            if (rng() % (gc.n_mods + 1) > 0) c.mod = rng() % gc.n_mods;
            if (!holdout_set.count(c)) return c;
        }
    };
    auto draw_split = [&](std::size_t count) {
        std::vector<Sample> samples;
        samples.reserve(count);
        for (std::size_t i = 0; i < count; ++i)
            samples.push_back(detail::build_sample(
                g, draw_training_compound(), detail::random_context(g, rng), -1));
        return samples;
    };
    out.train = draw_split(split.train_samples);
    out.valid = draw_split(split.valid_samples);
    out.test = draw_split(split.test_samples);

    for (std::size_t ci = 0; ci < out.holdout.size(); ++ci) {
        std::set<Context> used;
        while (used.size() < split.contexts_per_compound) {
            Context ctx = detail::random_context(g, rng);
            if (!used.insert(ctx).second) continue;
            out.cg_test.push_back(
                detail::build_sample(g, out.holdout[ci], ctx, int(ci)));
        }
    }

    // --- verification before anything is written -------------------------
    std::map<std::string, std::size_t> train_atom_counts;
    for (const auto& s : out.train) {
        const Compound c = detail::extract_compound(s.src, g);
        if (holdout_set.count(c))
            throw DataError("generator: held-out compound leaked into train");
        for (const auto& t : s.src)
            if (t != "the" && t != "rel") ++train_atom_counts[t];
    }
    for (const auto& c : out.holdout) {
        std::vector<std::string> atoms{g.verb(c.verb), g.noun(c.noun)};
        if (c.mod) atoms.push_back(g.mod(*c.mod));
        for (const auto& a : atoms)
            if (train_atom_counts[a] < split.min_atom_occurrences)
                throw DataError("generator: atom '" + a + "' of held-out compound (" +
                                g.verb(c.verb) + "," + g.noun(c.noun) + "," +
                                (c.mod ? g.mod(*c.mod) : std::string("-")) +
                                ") occurs only " +
                                std::to_string(train_atom_counts[a]) +
                                " times in train");
    }
    for (const auto& s : out.cg_test)
        if (s.tgt != oracle_translate(s.src, g))
            throw DataError("generator: cg-test target disagrees with oracle");

    std::size_t holdout_with_mod = 0;
    for (const auto& c : out.holdout)
        if (c.mod) ++holdout_with_mod;
    out.report = {{"compound_pool", pool},
                  {"holdout_compounds", out.holdout.size()},
                  {"holdout_with_modifier", holdout_with_mod},
                  {"cg_test_rows", out.cg_test.size()},
                  {"train_samples", out.train.size()},
                  {"valid_samples", out.valid.size()},
                  {"test_samples", out.test.size()},
                  {"distinct_train_atoms", train_atom_counts.size()},
                  {"src_vocab", g.src_tokens().size()},
                  {"tgt_vocab", g.tgt_tokens().size()}};
    return out;
}

}  // namespace composeq
