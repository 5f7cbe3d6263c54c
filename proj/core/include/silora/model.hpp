#pragma once

#include <cstdint>
#include <vector>

#include "silora/graph.hpp"
#include "silora/lora.hpp"
#include "silora/tasks.hpp"

namespace silora {

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t n_blocks = 2;
    std::size_t d_ff = 64;
    std::size_t context_len = 64;

    bool operator==(const ModelConfig&) const = default;
};

// Small causal sequence model. Each block carries LoRA-adapted q_proj and
// v_proj; everything else (embedding, k_proj, the bilinear-gated feed
// forward, the output head) is frozen. Only the adapter factors train.
struct ToyModel {
    struct Block {
        LoraAdapter q_proj;
        LoraAdapter v_proj;
        Matrix k_proj; // d x d
        Matrix ff_in;  // d_ff x d
        Matrix ff_gate;// d_ff x d
        Matrix ff_out; // d x d_ff
    };

    ModelConfig cfg;
    std::size_t vocab_size = 0;
    std::uint64_t init_seed = 0;
    Matrix embedding;  // V x d
    Matrix positional; // context_len x d, sinusoidal
    std::vector<Block> blocks;
    Matrix head; // V x d

    std::vector<LoraAdapter*> adapters();
    std::vector<const LoraAdapter*> adapters() const;
    std::vector<std::string> adapter_ids() const;
    std::vector<Matrix> effective_weights() const;
};

ToyModel build_model(const ModelConfig& cfg, std::size_t vocab_size, std::size_t rank,
                     double alpha, ScalingMode mode, std::uint64_t seed);

// Forward pass for one example: records the graph, returns the summed-CE
// loss node plus the adapter factor nodes (canonical order) for gradient
// readout after backward.
struct ExampleGraph {
    Graph graph;
    Graph::NodeId loss = 0;
    Graph::NodeId logits = 0;
    std::size_t scored_tokens = 0;
    std::vector<std::pair<Graph::NodeId, Graph::NodeId>> factor_nodes; // (B, A) per adapter
};

ExampleGraph forward_example(const ToyModel& model, const Example& example);

// Logits only (no loss node); used by evaluation.
Matrix example_logits(const ToyModel& model, const Example& example);

} // namespace silora
