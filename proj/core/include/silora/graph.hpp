#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "silora/matrix.hpp"

namespace silora {

// A graph node's payload: the value, and (once backward has run) the
// gradient of the graph output with respect to it.
struct Tensor {
    Matrix values;
    Matrix grad;               // empty until backward touches this node
    bool requires_grad = false;
};

// Reverse-mode autodiff over dense matrices, define-by-run: each builder call
// executes the forward computation immediately and records what backward
// needs. Node creation order is a topological order, so backward is a single
// reverse sweep that visits every node exactly once.
//
// The primitive set is fixed and closed: matmul (with transpose flags), add,
// elementwise multiply, row softmax, row layer norm, embedding lookup, and
// summed cross-entropy. No broadcasting. Every forward result is checked
// finite before the node is accepted.
class Graph {
public:
    using NodeId = std::uint32_t;

    // Leaf inputs. value() is constant; param() participates in backward.
    NodeId value(Matrix m, std::string name = {});
    NodeId param(Matrix m, std::string name = {});

    NodeId matmul(NodeId a, NodeId b, bool transpose_a = false, bool transpose_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId softmax_rows(NodeId a);
    NodeId layer_norm_rows(NodeId a);

    // Gathers one table row per id; ids are fixed at build time.
    NodeId embed(NodeId table, std::vector<int> ids);

    // Summed token cross-entropy over rows whose target is >= 0 (-1 ignores
    // the row). Returns a 1x1 node; counted (if given) receives the number of
    // scored rows.
    NodeId cross_entropy_sum(NodeId logits, std::vector<int> targets,
                             std::size_t* counted = nullptr);

    // Convenience: elementwise multiply by a constant-filled matrix.
    NodeId scale(NodeId a, double c);

    // Seeds the scalar output with gradient 1 and sweeps the tape in reverse.
    // Rejected if the output is not 1x1 or backward already ran.
    void backward(NodeId output);

    const Matrix& value_of(NodeId id) const;
    const Matrix& grad_of(NodeId id) const;
    const std::string& node_name(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    enum class Op : std::uint8_t {
        Input,
        Matmul,
        Add,
        Mul,
        Softmax,
        LayerNorm,
        Embed,
        CrossEntropy,
    };

    struct Node {
        Op op = Op::Input;
        Tensor tensor;
        NodeId in0 = 0;
        NodeId in1 = 0;
        bool transpose_a = false;
        bool transpose_b = false;
        std::vector<int> ids;    // embed ids or cross-entropy targets
        Matrix aux;              // softmax output copy / CE probabilities / LN cache
        std::string name;
    };

    NodeId push(Node node);
    const Node& node_at(NodeId id, const char* who) const;
    Matrix& grad_buffer(NodeId id);
    void backward_node(const Node& node);

    // deque: references returned by value_of/grad_of stay valid as the graph
    // grows
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace silora
