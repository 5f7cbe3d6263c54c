#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "silora/common.hpp"

namespace silora {

// One training/eval item. Pure language-modeling examples score every row
// whose target is >= 0; multiple-choice examples additionally carry the
// candidate answers and which logits row decides between them.
struct Example {
    std::vector<int> tokens;
    std::vector<int> targets;  // aligned with tokens: targets[t] is predicted after prefix ..t
    int answer_pos = -1;       // logits row compared across choices; -1 for plain LM
    std::vector<int> choices;  // candidate token ids in presented slot order
    int correct_index = -1;    // slot of the correct candidate

    bool is_choice() const { return !choices.empty(); }
    std::size_t choice_count() const { return choices.size(); }

    bool operator==(const Example&) const = default;
};

class Vocabulary {
public:
    int add(const std::string& token); // idempotent, returns id
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    bool operator==(const Vocabulary&) const = default;

private:
    std::vector<std::string> tokens_;
};

using Dataset = std::vector<Example>;

struct TaskSpec {
    std::string generator = "grammar-shift"; // or "mc-rules"
    std::uint64_t seed = 7;
    std::size_t nu_train = 3600;
    std::size_t nu_eval = 240;
    std::size_t mu_train = 2400;
    std::size_t mu_eval = 240;
    // grammar-shift: probability of keeping a mu sentence that also occurs in
    // the nu sets. 0 makes the nu and mu sentence sets disjoint.
    double overlap = 0.0;

    bool operator==(const TaskSpec&) const = default;
};

struct TaskPair {
    Vocabulary vocab;
    Dataset nu_train;
    Dataset nu_eval;
    Dataset mu_train;
    Dataset mu_eval;
    TaskSpec spec;

    std::size_t max_sequence_length() const;
};

// Deterministic in (spec, seed); the seed argument overrides spec.seed.
TaskPair gen_task_pair(const TaskSpec& spec, std::uint64_t seed);
TaskPair gen_task_pair(const TaskSpec& spec);

// Index batches for one epoch: shuffled, final partial batch included.
std::vector<std::vector<std::size_t>> batches(const Dataset& dataset, std::size_t batch_size,
                                              std::uint64_t epoch_seed);

// Line-delimited record export/import (one JSON object per example), plus
// vocab.json and spec.json alongside.
void save_task_pair(const TaskPair& pair, const std::string& dir);
TaskPair load_task_pair(const std::string& dir);

} // namespace silora
