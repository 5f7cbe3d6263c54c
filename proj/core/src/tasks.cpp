#include "silora/tasks.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "silora/rng.hpp"

namespace silora {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

int Vocabulary::add(const std::string& token) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i] == token) {
            return static_cast<int>(i);
        }
    }
    tokens_.push_back(token);
    return static_cast<int>(tokens_.size() - 1);
}

int Vocabulary::id_of(const std::string& token) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i] == token) {
            return static_cast<int>(i);
        }
    }
    throw Error("vocabulary: unknown token '" + token + "'");
}

const std::string& Vocabulary::token_of(int id) const {
    check(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
          "vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
        ids.push_back(id_of(w));
    }
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (const int id : ids) {
        words.push_back(token_of(id));
    }
    return words;
}

std::size_t TaskPair::max_sequence_length() const {
    std::size_t longest = 0;
    for (const Dataset* d : {&nu_train, &nu_eval, &mu_train, &mu_eval}) {
        for (const Example& ex : *d) {
            longest = std::max(longest, ex.tokens.size());
        }
    }
    return longest;
}

namespace {

Example lm_example(std::vector<int> tokens) {
    Example ex;
    ex.targets.assign(tokens.size(), -1);
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
        ex.targets[t] = tokens[t + 1];
    }
    ex.tokens = std::move(tokens);
    return ex;
}

std::string key_of(const std::vector<int>& tokens) {
    std::string key;
    for (const int id : tokens) {
        key += std::to_string(id);
        key += ',';
    }
    return key;
}

// Draws sentences until `count` are accepted; rejects anything in `taboo`
// (and optionally feeds accepted keys back into taboo to force uniqueness).
template <typename Gen>
Dataset sample_sentences(std::size_t count, Gen&& gen, std::set<std::string>& taboo,
                         bool unique_output, std::set<std::string>* record) {
    Dataset out;
    std::size_t attempts = 0;
    const std::size_t attempt_cap = 500 * std::max<std::size_t>(count, 1);
    while (out.size() < count) {
        check(++attempts <= attempt_cap,
              "task generator: exhausted attempts while sampling disjoint sentences; "
              "requested sizes exceed the sentence space");
        std::vector<int> tokens = gen();
        const std::string key = key_of(tokens);
        if (taboo.count(key) != 0) {
            continue;
        }
        if (unique_output) {
            taboo.insert(key);
        }
        if (record != nullptr) {
            record->insert(key);
        }
        out.push_back(lm_example(std::move(tokens)));
    }
    return out;
}

// --------------------------------------------------------------------------
// grammar-shift: nu draws from a broad probabilistic grammar over short
// subject-verb-object sentences; mu is a narrow sub-grammar with mandatory
// adjective + adverb and a concentrated lexicon, so domain tuning shifts the
// conditionals the nu model relies on.
// --------------------------------------------------------------------------

struct GrammarLexicon {
    Vocabulary vocab;
    int bos, eos, stop;
    std::vector<int> dets, adjs, nouns, verbs, advs;
    int conj;
};

GrammarLexicon make_grammar_lexicon() {
    GrammarLexicon lex;
    auto& v = lex.vocab;
    lex.bos = v.add("<bos>");
    lex.eos = v.add("<eos>");
    for (const char* w : {"the", "a"}) {
        lex.dets.push_back(v.add(w));
    }
    for (const char* w : {"big", "old", "red", "slow"}) {
        lex.adjs.push_back(v.add(w));
    }
    for (const char* w : {"cat", "dog", "bird", "fish", "horse", "mouse"}) {
        lex.nouns.push_back(v.add(w));
    }
    for (const char* w : {"sees", "likes", "chases", "finds"}) {
        lex.verbs.push_back(v.add(w));
    }
    for (const char* w : {"quickly", "quietly"}) {
        lex.advs.push_back(v.add(w));
    }
    lex.conj = v.add("and");
    lex.stop = v.add(".");
    return lex;
}

int pick(Rng& rng, const std::vector<int>& pool) {
    return pool[static_cast<std::size_t>(rng.below(pool.size()))];
}

std::vector<int> nu_sentence(const GrammarLexicon& lex, Rng& rng) {
    std::vector<int> s;
    s.push_back(lex.bos);
    auto noun_phrase = [&] {
        s.push_back(pick(rng, lex.dets));
        if (rng.uniform01() < 0.4) {
            s.push_back(pick(rng, lex.adjs));
        }
        s.push_back(pick(rng, lex.nouns));
    };
    noun_phrase();
    s.push_back(pick(rng, lex.verbs));
    if (rng.uniform01() < 0.3) {
        s.push_back(pick(rng, lex.advs));
    }
    noun_phrase();
    if (rng.uniform01() < 0.2) {
        s.push_back(lex.conj);
        noun_phrase();
    }
    s.push_back(lex.stop);
    s.push_back(lex.eos);
    return s;
}

std::vector<int> mu_sentence(const GrammarLexicon& lex, Rng& rng) {
    // Narrow sub-grammar with new preferred productions: adjectives move
    // behind their noun (a transition nu never produces), the adverb becomes
    // mandatory, "sees" is dropped, and the adjective lexicon narrows. Same
    // vocabulary, conflicting conditionals, so domain tuning interferes with
    // the general grammar instead of refining it.
    const std::vector<int> mu_adjs = {lex.adjs[2], lex.adjs[3]};                  // red, slow
    const std::vector<int> mu_verbs = {lex.verbs[1], lex.verbs[2], lex.verbs[3]}; // likes chases finds
    std::vector<int> s;
    s.push_back(lex.bos);
    s.push_back(pick(rng, lex.dets));
    s.push_back(pick(rng, lex.nouns));
    s.push_back(pick(rng, mu_adjs));
    s.push_back(pick(rng, mu_verbs));
    s.push_back(pick(rng, lex.advs));
    s.push_back(pick(rng, lex.dets));
    s.push_back(pick(rng, lex.nouns));
    s.push_back(pick(rng, mu_adjs));
    s.push_back(lex.stop);
    s.push_back(lex.eos);
    return s;
}

TaskPair gen_grammar_shift(const TaskSpec& spec, std::uint64_t seed) {
    GrammarLexicon lex = make_grammar_lexicon();
    Rng rng(Rng::derive(seed, "grammar-shift"));

    TaskPair pair;
    pair.vocab = lex.vocab;
    pair.spec = spec;
    pair.spec.seed = seed;

    std::set<std::string> nu_keys;
    std::set<std::string> none;
    pair.nu_train = sample_sentences(
        spec.nu_train, [&] { return nu_sentence(lex, rng); }, none, false, &nu_keys);
    // eval must not repeat training sentences
    std::set<std::string> nu_eval_taboo = nu_keys;
    std::set<std::string> nu_eval_keys;
    pair.nu_eval = sample_sentences(
        spec.nu_eval, [&] { return nu_sentence(lex, rng); }, nu_eval_taboo, true, &nu_eval_keys);
    nu_keys.insert(nu_eval_keys.begin(), nu_eval_keys.end());

    auto mu_gen = [&] {
        for (std::size_t tries = 0; tries < 100000; ++tries) {
            std::vector<int> s = mu_sentence(lex, rng);
            if (nu_keys.count(key_of(s)) != 0 && rng.uniform01() >= spec.overlap) {
                continue; // collision with a nu sentence, rejected at this overlap
            }
            return s;
        }
        throw Error("grammar-shift: cannot sample mu sentences outside the nu sets");
    };
    std::set<std::string> mu_train_keys;
    pair.mu_train = sample_sentences(spec.mu_train, mu_gen, none, false, &mu_train_keys);
    std::set<std::string> mu_eval_taboo = mu_train_keys;
    pair.mu_eval = sample_sentences(spec.mu_eval, mu_gen, mu_eval_taboo, true, nullptr);
    return pair;
}

// --------------------------------------------------------------------------
// mc-rules: four seeded random permutations over 16 symbols. nu sequences
// demonstrate rules r0..r2 as plain next-token data; mu is a two-choice
// question task over the held-out rule r3.
// --------------------------------------------------------------------------

struct RuleLexicon {
    Vocabulary vocab;
    int bos, eos, query;
    std::vector<int> rules;              // marker tokens r0..r3
    std::vector<int> lhs;                // a0..a15
    std::vector<int> rhs;                // b0..b15
    std::vector<std::vector<int>> perms; // perms[j][i]: index into rhs
};

constexpr std::size_t kRuleSymbols = 32;
constexpr std::size_t kRuleCount = 4;

RuleLexicon make_rule_lexicon(std::uint64_t seed) {
    RuleLexicon lex;
    auto& v = lex.vocab;
    lex.bos = v.add("<bos>");
    lex.eos = v.add("<eos>");
    for (std::size_t j = 0; j < kRuleCount; ++j) {
        lex.rules.push_back(v.add("r" + std::to_string(j)));
    }
    for (std::size_t i = 0; i < kRuleSymbols; ++i) {
        lex.lhs.push_back(v.add("a" + std::to_string(i)));
    }
    for (std::size_t i = 0; i < kRuleSymbols; ++i) {
        lex.rhs.push_back(v.add("b" + std::to_string(i)));
    }
    lex.query = v.add("?");

    for (std::size_t j = 0; j < kRuleCount; ++j) {
        std::vector<int> perm(kRuleSymbols);
        for (std::size_t i = 0; i < kRuleSymbols; ++i) {
            perm[i] = static_cast<int>(i);
        }
        Rng perm_rng(Rng::derive(seed, "mc-rules.perm", j));
        perm_rng.shuffle(perm);
        lex.perms.push_back(std::move(perm));
    }
    return lex;
}

std::vector<int> nu_rule_sentence(const RuleLexicon& lex, Rng& rng) {
    const std::size_t rule = static_cast<std::size_t>(rng.below(kRuleCount - 1)); // r3 held out
    std::vector<int> s;
    s.push_back(lex.bos);
    s.push_back(lex.rules[rule]);
    for (int pairs = 0; pairs < 3; ++pairs) {
        const std::size_t i = static_cast<std::size_t>(rng.below(kRuleSymbols));
        s.push_back(lex.lhs[i]);
        s.push_back(lex.rhs[static_cast<std::size_t>(lex.perms[rule][i])]);
    }
    s.push_back(lex.eos);
    return s;
}

Example mu_rule_question(const RuleLexicon& lex, Rng& rng) {
    const std::size_t held_out = kRuleCount - 1;
    const std::size_t i = static_cast<std::size_t>(rng.below(kRuleSymbols));
    const int correct = lex.rhs[static_cast<std::size_t>(lex.perms[held_out][i])];
    int distractor = correct;
    while (distractor == correct) {
        distractor = lex.rhs[static_cast<std::size_t>(rng.below(kRuleSymbols))];
    }
    const bool correct_first = rng.uniform01() < 0.5;

    Example ex;
    ex.tokens = {lex.bos,
                 lex.rules[held_out],
                 lex.lhs[i],
                 correct_first ? correct : distractor,
                 correct_first ? distractor : correct,
                 lex.query,
                 correct,
                 lex.eos};
    ex.targets.assign(ex.tokens.size(), -1);
    ex.targets[5] = correct; // scored only where the answer is produced
    ex.answer_pos = 5;
    ex.choices = {ex.tokens[3], ex.tokens[4]};
    ex.correct_index = correct_first ? 0 : 1;
    return ex;
}

std::string question_key(const Example& ex) {
    return key_of(ex.tokens);
}

TaskPair gen_mc_rules(const TaskSpec& spec, std::uint64_t seed) {
    RuleLexicon lex = make_rule_lexicon(seed);
    Rng rng(Rng::derive(seed, "mc-rules"));

    TaskPair pair;
    pair.vocab = lex.vocab;
    pair.spec = spec;
    pair.spec.seed = seed;

    std::set<std::string> nu_keys;
    std::set<std::string> none;
    pair.nu_train = sample_sentences(
        spec.nu_train, [&] { return nu_rule_sentence(lex, rng); }, none, false, &nu_keys);
    std::set<std::string> nu_eval_taboo = nu_keys;
    pair.nu_eval = sample_sentences(
        spec.nu_eval, [&] { return nu_rule_sentence(lex, rng); }, nu_eval_taboo, true, nullptr);

    auto draw_questions = [&](std::size_t count, std::set<std::string>& taboo,
                              bool unique_output, std::set<std::string>* record) {
        Dataset out;
        std::size_t attempts = 0;
        const std::size_t cap = 500 * std::max<std::size_t>(count, 1);
        while (out.size() < count) {
            check(++attempts <= cap, "mc-rules: exhausted attempts sampling disjoint questions");
            Example ex = mu_rule_question(lex, rng);
            const std::string key = question_key(ex);
            if (taboo.count(key) != 0) {
                continue;
            }
            if (unique_output) {
                taboo.insert(key);
            }
            if (record != nullptr) {
                record->insert(key);
            }
            out.push_back(std::move(ex));
        }
        return out;
    };

    std::set<std::string> mu_train_keys;
    pair.mu_train = draw_questions(spec.mu_train, none, false, &mu_train_keys);
    std::set<std::string> mu_eval_taboo = mu_train_keys;
    pair.mu_eval = draw_questions(spec.mu_eval, mu_eval_taboo, true, nullptr);
    return pair;
}

} // namespace

TaskPair gen_task_pair(const TaskSpec& spec, std::uint64_t seed) {
    if (spec.generator == "grammar-shift") {
        return gen_grammar_shift(spec, seed);
    }
    if (spec.generator == "mc-rules") {
        return gen_mc_rules(spec, seed);
    }
    throw Error("gen_task_pair: unknown generator '" + spec.generator + "'");
}

TaskPair gen_task_pair(const TaskSpec& spec) {
    return gen_task_pair(spec, spec.seed);
}

std::vector<std::vector<std::size_t>> batches(const Dataset& dataset, std::size_t batch_size,
                                              std::uint64_t epoch_seed) {
    check(batch_size >= 1, "batches: batch_size must be >= 1");
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(epoch_seed);
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

namespace {

ordered_json example_to_json(const Example& ex) {
    ordered_json j;
    j["tokens"] = ex.tokens;
    j["targets"] = ex.targets;
    if (ex.is_choice()) {
        j["answer_pos"] = ex.answer_pos;
        j["choices"] = ex.choices;
        j["correct"] = ex.correct_index;
    }
    return j;
}

Example example_from_json(const ordered_json& j) {
    Example ex;
    ex.tokens = j.at("tokens").get<std::vector<int>>();
    ex.targets = j.at("targets").get<std::vector<int>>();
    if (j.contains("choices")) {
        ex.answer_pos = j.at("answer_pos").get<int>();
        ex.choices = j.at("choices").get<std::vector<int>>();
        ex.correct_index = j.at("correct").get<int>();
        check(ex.correct_index >= 0 &&
                  static_cast<std::size_t>(ex.correct_index) < ex.choices.size(),
              "dataset: correct answer index outside choice list");
    }
    check(!ex.targets.empty(), "dataset: example without targets");
    return ex;
}

void save_dataset(const Dataset& data, const fs::path& path) {
    std::ofstream out(path);
    check(out.good(), "save_task_pair: cannot open " + path.string());
    for (const Example& ex : data) {
        out << example_to_json(ex).dump() << '\n';
    }
    check(out.good(), "save_task_pair: write failed for " + path.string());
}

Dataset load_dataset(const fs::path& path) {
    std::ifstream in(path);
    check(in.good(), "load_task_pair: cannot open " + path.string());
    Dataset data;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        data.push_back(example_from_json(ordered_json::parse(line)));
    }
    return data;
}

} // namespace

void save_task_pair(const TaskPair& pair, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path root(dir);

    ordered_json vocab_json;
    vocab_json["tokens"] = pair.vocab.tokens();
    std::ofstream vocab_out(root / "vocab.json");
    check(vocab_out.good(), "save_task_pair: cannot open vocab.json");
    vocab_out << vocab_json.dump(2) << '\n';

    ordered_json spec_json;
    spec_json["generator"] = pair.spec.generator;
    spec_json["seed"] = pair.spec.seed;
    spec_json["nu_train"] = pair.spec.nu_train;
    spec_json["nu_eval"] = pair.spec.nu_eval;
    spec_json["mu_train"] = pair.spec.mu_train;
    spec_json["mu_eval"] = pair.spec.mu_eval;
    spec_json["overlap"] = pair.spec.overlap;
    std::ofstream spec_out(root / "spec.json");
    check(spec_out.good(), "save_task_pair: cannot open spec.json");
    spec_out << spec_json.dump(2) << '\n';

    save_dataset(pair.nu_train, root / "nu_train.jsonl");
    save_dataset(pair.nu_eval, root / "nu_eval.jsonl");
    save_dataset(pair.mu_train, root / "mu_train.jsonl");
    save_dataset(pair.mu_eval, root / "mu_eval.jsonl");
}

TaskPair load_task_pair(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream vocab_in(root / "vocab.json");
    check(vocab_in.good(), "load_task_pair: missing vocab.json in " + dir);
    ordered_json vocab_json = ordered_json::parse(vocab_in);

    TaskPair pair;
    for (const auto& token : vocab_json.at("tokens")) {
        pair.vocab.add(token.get<std::string>());
    }

    std::ifstream spec_in(root / "spec.json");
    check(spec_in.good(), "load_task_pair: missing spec.json in " + dir);
    ordered_json spec_json = ordered_json::parse(spec_in);
    pair.spec.generator = spec_json.at("generator").get<std::string>();
    pair.spec.seed = spec_json.at("seed").get<std::uint64_t>();
    pair.spec.nu_train = spec_json.at("nu_train").get<std::size_t>();
    pair.spec.nu_eval = spec_json.at("nu_eval").get<std::size_t>();
    pair.spec.mu_train = spec_json.at("mu_train").get<std::size_t>();
    pair.spec.mu_eval = spec_json.at("mu_eval").get<std::size_t>();
    pair.spec.overlap = spec_json.at("overlap").get<double>();

    pair.nu_train = load_dataset(root / "nu_train.jsonl");
    pair.nu_eval = load_dataset(root / "nu_eval.jsonl");
    pair.mu_train = load_dataset(root / "mu_train.jsonl");
    pair.mu_eval = load_dataset(root / "mu_eval.jsonl");
    return pair;
}

} // namespace silora
