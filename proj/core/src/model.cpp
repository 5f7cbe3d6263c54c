#include "silora/model.hpp"

#include <cmath>

#include "silora/rng.hpp"

namespace silora {

namespace {

constexpr double kMaskValue = -1e9;

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
    Matrix m(rows, cols);
    Rng rng(seed);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal(0.0, stddev);
    }
    return m;
}

Matrix sinusoidal_positions(std::size_t context_len, std::size_t d_model) {
    Matrix p(context_len, d_model);
    for (std::size_t pos = 0; pos < context_len; ++pos) {
        for (std::size_t i = 0; i < d_model; ++i) {
            const double rate =
                std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) * rate;
            p.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return p;
}

Matrix causal_mask(std::size_t len) {
    Matrix m(len, len);
    for (std::size_t r = 0; r < len; ++r) {
        for (std::size_t c = r + 1; c < len; ++c) {
            m.at(r, c) = kMaskValue;
        }
    }
    return m;
}

} // namespace

std::vector<LoraAdapter*> ToyModel::adapters() {
    std::vector<LoraAdapter*> out;
    for (auto& block : blocks) {
        out.push_back(&block.q_proj);
        out.push_back(&block.v_proj);
    }
    return out;
}

std::vector<const LoraAdapter*> ToyModel::adapters() const {
    std::vector<const LoraAdapter*> out;
    for (const auto& block : blocks) {
        out.push_back(&block.q_proj);
        out.push_back(&block.v_proj);
    }
    return out;
}

std::vector<std::string> ToyModel::adapter_ids() const {
    std::vector<std::string> ids;
    for (const auto* a : adapters()) {
        ids.push_back(a->layer_id);
    }
    return ids;
}

std::vector<Matrix> ToyModel::effective_weights() const {
    std::vector<Matrix> out;
    for (const auto* a : adapters()) {
        out.push_back(effective_weight(*a));
    }
    return out;
}

ToyModel build_model(const ModelConfig& cfg, std::size_t vocab_size, std::size_t rank,
                     double alpha, ScalingMode mode, std::uint64_t seed) {
    check(vocab_size >= 2, "build_model: vocabulary too small");
    check(cfg.d_model >= 2 && cfg.n_blocks >= 1 && cfg.d_ff >= 1 && cfg.context_len >= 1,
          "build_model: degenerate model configuration");

    ToyModel model;
    model.cfg = cfg;
    model.vocab_size = vocab_size;
    model.init_seed = seed;

    const double d_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double ff_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));

    model.embedding = gaussian_matrix(vocab_size, cfg.d_model, 1.0, Rng::derive(seed, "embed"));
    model.positional = sinusoidal_positions(cfg.context_len, cfg.d_model);
    model.head = gaussian_matrix(vocab_size, cfg.d_model, d_std, Rng::derive(seed, "head"));

    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        ToyModel::Block block;
        const std::string prefix = "block" + std::to_string(b);
        block.q_proj = lora_init(prefix + ".q_proj", cfg.d_model, cfg.d_model, rank, alpha, mode,
                                 Rng::derive(seed, "lora.q", b));
        block.q_proj.theta0 =
            gaussian_matrix(cfg.d_model, cfg.d_model, d_std, Rng::derive(seed, "theta0.q", b));
        block.v_proj = lora_init(prefix + ".v_proj", cfg.d_model, cfg.d_model, rank, alpha, mode,
                                 Rng::derive(seed, "lora.v", b));
        block.v_proj.theta0 =
            gaussian_matrix(cfg.d_model, cfg.d_model, d_std, Rng::derive(seed, "theta0.v", b));
        block.k_proj =
            gaussian_matrix(cfg.d_model, cfg.d_model, d_std, Rng::derive(seed, "k_proj", b));
        block.ff_in = gaussian_matrix(cfg.d_ff, cfg.d_model, d_std, Rng::derive(seed, "ff_in", b));
        block.ff_gate =
            gaussian_matrix(cfg.d_ff, cfg.d_model, d_std, Rng::derive(seed, "ff_gate", b));
        block.ff_out = gaussian_matrix(cfg.d_model, cfg.d_ff, ff_std, Rng::derive(seed, "ff_out", b));
        model.blocks.push_back(std::move(block));
    }
    return model;
}

namespace {

Graph::NodeId adapted_weight(Graph& g, const LoraAdapter& adapter,
                             std::vector<std::pair<Graph::NodeId, Graph::NodeId>>& factors) {
    const Graph::NodeId b = g.param(adapter.B, adapter.layer_id + ".B");
    const Graph::NodeId a = g.param(adapter.A, adapter.layer_id + ".A");
    factors.emplace_back(b, a);
    const Graph::NodeId delta = g.scale(g.matmul(b, a), adapter.scaling());
    return g.add(g.value(adapter.theta0, adapter.layer_id + ".theta0"), delta);
}

// Shared trunk: embeddings through the final layer norm and head logits.
Graph::NodeId forward_logits(Graph& g, const ToyModel& model, const std::vector<int>& tokens,
                             std::vector<std::pair<Graph::NodeId, Graph::NodeId>>& factors) {
    const std::size_t len = tokens.size();
    check(len >= 2, "forward: sequences need at least two tokens");
    check(len <= model.cfg.context_len,
          "forward: sequence of length " + std::to_string(len) + " exceeds context " +
              std::to_string(model.cfg.context_len));

    const Graph::NodeId table = g.value(model.embedding, "embedding");
    Graph::NodeId x = g.embed(table, tokens);

    Matrix pos(len, model.cfg.d_model);
    for (std::size_t r = 0; r < len; ++r) {
        for (std::size_t c = 0; c < model.cfg.d_model; ++c) {
            pos.at(r, c) = model.positional.at(r, c);
        }
    }
    x = g.add(x, g.value(std::move(pos), "positions"));

    const Graph::NodeId mask = g.value(causal_mask(len), "causal_mask");
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(model.cfg.d_model));

    for (const auto& block : model.blocks) {
        const Graph::NodeId xn = g.layer_norm_rows(x);
        const Graph::NodeId wq = adapted_weight(g, block.q_proj, factors);
        const Graph::NodeId wv = adapted_weight(g, block.v_proj, factors);
        const Graph::NodeId q = g.matmul(xn, wq, false, true);
        const Graph::NodeId k = g.matmul(xn, g.value(block.k_proj, "k_proj"), false, true);
        const Graph::NodeId v = g.matmul(xn, wv, false, true);
        const Graph::NodeId scores =
            g.add(g.scale(g.matmul(q, k, false, true), attn_scale), mask);
        const Graph::NodeId attn = g.softmax_rows(scores);
        x = g.add(x, g.matmul(attn, v));

        const Graph::NodeId xf = g.layer_norm_rows(x);
        const Graph::NodeId gate = g.mul(g.matmul(xf, g.value(block.ff_in, "ff_in"), false, true),
                                         g.matmul(xf, g.value(block.ff_gate, "ff_gate"), false, true));
        x = g.add(x, g.matmul(gate, g.value(block.ff_out, "ff_out"), false, true));
    }

    const Graph::NodeId xn = g.layer_norm_rows(x);
    return g.matmul(xn, g.value(model.head, "head"), false, true);
}

} // namespace

ExampleGraph forward_example(const ToyModel& model, const Example& example) {
    check(example.tokens.size() == example.targets.size(),
          "forward: token/target length mismatch");
    ExampleGraph eg;
    eg.logits = forward_logits(eg.graph, model, example.tokens, eg.factor_nodes);
    eg.loss = eg.graph.cross_entropy_sum(eg.logits, example.targets, &eg.scored_tokens);
    check(eg.scored_tokens >= 1, "forward: example scores no target positions");
    return eg;
}

Matrix example_logits(const ToyModel& model, const Example& example) {
    Graph g;
    std::vector<std::pair<Graph::NodeId, Graph::NodeId>> factors;
    const Graph::NodeId logits = forward_logits(g, model, example.tokens, factors);
    return g.value_of(logits);
}

} // namespace silora
