#include "silora/graph.hpp"

#include <cmath>

namespace silora {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

Graph::NodeId Graph::push(Node node) {
    check(!backward_done_, "graph: cannot extend a graph after backward");
    check(node.tensor.values.all_finite(),
          "graph: node " + node.name + " produced non-finite values");
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Graph::Node& Graph::node_at(NodeId id, const char* who) const {
    check(id < nodes_.size(), std::string(who) + ": unknown node id");
    return nodes_[id];
}

Graph::NodeId Graph::value(Matrix m, std::string name) {
    Node n;
    n.op = Op::Input;
    n.tensor.values = std::move(m);
    n.tensor.requires_grad = false;
    n.name = name.empty() ? "value#" + std::to_string(nodes_.size()) : std::move(name);
    return push(std::move(n));
}

Graph::NodeId Graph::param(Matrix m, std::string name) {
    Node n;
    n.op = Op::Input;
    n.tensor.values = std::move(m);
    n.tensor.requires_grad = true;
    n.name = name.empty() ? "param#" + std::to_string(nodes_.size()) : std::move(name);
    return push(std::move(n));
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b, bool ta, bool tb) {
    const Node& na = node_at(a, "matmul");
    const Node& nb = node_at(b, "matmul");
    const std::string name = "matmul#" + std::to_string(nodes_.size());
    Node n;
    n.op = Op::Matmul;
    n.in0 = a;
    n.in1 = b;
    n.transpose_a = ta;
    n.transpose_b = tb;
    try {
        n.tensor.values = silora::matmul(na.tensor.values, nb.tensor.values, ta, tb);
    } catch (const Error& e) {
        throw Error(name + "(" + na.name + ", " + nb.name + "): " + e.what());
    }
    n.tensor.requires_grad = na.tensor.requires_grad || nb.tensor.requires_grad;
    n.name = name;
    return push(std::move(n));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    const Node& na = node_at(a, "add");
    const Node& nb = node_at(b, "add");
    const std::string name = "add#" + std::to_string(nodes_.size());
    check(na.tensor.values.same_shape(nb.tensor.values),
          name + "(" + na.name + ", " + nb.name + "): shape mismatch");
    Node n;
    n.op = Op::Add;
    n.in0 = a;
    n.in1 = b;
    n.tensor.values = silora::add(na.tensor.values, nb.tensor.values);
    n.tensor.requires_grad = na.tensor.requires_grad || nb.tensor.requires_grad;
    n.name = name;
    return push(std::move(n));
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
    const Node& na = node_at(a, "mul");
    const Node& nb = node_at(b, "mul");
    const std::string name = "mul#" + std::to_string(nodes_.size());
    check(na.tensor.values.same_shape(nb.tensor.values),
          name + "(" + na.name + ", " + nb.name + "): shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.in0 = a;
    n.in1 = b;
    n.tensor.values = hadamard(na.tensor.values, nb.tensor.values);
    n.tensor.requires_grad = na.tensor.requires_grad || nb.tensor.requires_grad;
    n.name = name;
    return push(std::move(n));
}

Graph::NodeId Graph::scale(NodeId a, double c) {
    const Node& na = node_at(a, "scale");
    Matrix constant(na.tensor.values.rows(), na.tensor.values.cols(), c);
    const NodeId cn = value(std::move(constant), "const#" + std::to_string(nodes_.size()));
    return mul(a, cn);
}

Graph::NodeId Graph::softmax_rows(NodeId a) {
    const Node& na = node_at(a, "softmax");
    const Matrix& x = na.tensor.values;
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double row_max = x.at(r, 0);
        for (std::size_t c = 1; c < x.cols(); ++c) {
            row_max = std::max(row_max, x.at(r, c));
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double e = std::exp(x.at(r, c) - row_max);
            y.at(r, c) = e;
            denom += e;
        }
        for (std::size_t c = 0; c < x.cols(); ++c) {
            y.at(r, c) /= denom;
        }
    }
    Node n;
    n.op = Op::Softmax;
    n.in0 = a;
    n.tensor.values = y;
    n.tensor.requires_grad = na.tensor.requires_grad;
    n.name = "softmax#" + std::to_string(nodes_.size());
    return push(std::move(n));
}

Graph::NodeId Graph::layer_norm_rows(NodeId a) {
    const Node& na = node_at(a, "layer_norm");
    const Matrix& x = na.tensor.values;
    check(x.cols() >= 1, "layer_norm: empty rows");
    Matrix y(x.rows(), x.cols());
    Matrix inv_std(x.rows(), 1);
    const double inv_n = 1.0 / static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            mean += x.at(r, c);
        }
        mean *= inv_n;
        double var = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double d = x.at(r, c) - mean;
            var += d * d;
        }
        var *= inv_n;
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std.at(r, 0) = is;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            y.at(r, c) = (x.at(r, c) - mean) * is;
        }
    }
    Node n;
    n.op = Op::LayerNorm;
    n.in0 = a;
    n.tensor.values = y;
    n.aux = inv_std;
    n.tensor.requires_grad = na.tensor.requires_grad;
    n.name = "layer_norm#" + std::to_string(nodes_.size());
    return push(std::move(n));
}

Graph::NodeId Graph::embed(NodeId table, std::vector<int> ids) {
    const Node& nt = node_at(table, "embed");
    const Matrix& t = nt.tensor.values;
    const std::string name = "embed#" + std::to_string(nodes_.size());
    Matrix out(ids.size(), t.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        check(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < t.rows(),
              name + ": id " + std::to_string(ids[r]) + " outside table of " +
                  std::to_string(t.rows()) + " rows");
        for (std::size_t c = 0; c < t.cols(); ++c) {
            out.at(r, c) = t.at(static_cast<std::size_t>(ids[r]), c);
        }
    }
    Node n;
    n.op = Op::Embed;
    n.in0 = table;
    n.ids = std::move(ids);
    n.tensor.values = std::move(out);
    n.tensor.requires_grad = nt.tensor.requires_grad;
    n.name = name;
    return push(std::move(n));
}

Graph::NodeId Graph::cross_entropy_sum(NodeId logits, std::vector<int> targets,
                                       std::size_t* counted) {
    const Node& nl = node_at(logits, "cross_entropy");
    const Matrix& z = nl.tensor.values;
    const std::string name = "cross_entropy#" + std::to_string(nodes_.size());
    check(targets.size() == z.rows(),
          name + ": " + std::to_string(targets.size()) + " targets for " +
              std::to_string(z.rows()) + " logit rows");

    Matrix probs(z.rows(), z.cols());
    double loss = 0.0;
    std::size_t scored = 0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const int target = targets[r];
        if (target < 0) {
            continue;
        }
        check(static_cast<std::size_t>(target) < z.cols(),
              name + ": target " + std::to_string(target) + " outside vocabulary of " +
                  std::to_string(z.cols()));
        double row_max = z.at(r, 0);
        for (std::size_t c = 1; c < z.cols(); ++c) {
            row_max = std::max(row_max, z.at(r, c));
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < z.cols(); ++c) {
            const double e = std::exp(z.at(r, c) - row_max);
            probs.at(r, c) = e;
            denom += e;
        }
        for (std::size_t c = 0; c < z.cols(); ++c) {
            probs.at(r, c) /= denom;
        }
        loss += std::log(denom) + row_max - z.at(r, static_cast<std::size_t>(target));
        ++scored;
    }
    if (counted != nullptr) {
        *counted = scored;
    }
    Node n;
    n.op = Op::CrossEntropy;
    n.in0 = logits;
    n.ids = std::move(targets);
    n.aux = std::move(probs);
    n.tensor.values = Matrix(1, 1, loss);
    n.tensor.requires_grad = nl.tensor.requires_grad;
    n.name = name;
    return push(std::move(n));
}

Matrix& Graph::grad_buffer(NodeId id) {
    Tensor& t = nodes_[id].tensor;
    if (t.grad.empty()) {
        t.grad = Matrix(t.values.rows(), t.values.cols());
    }
    return t.grad;
}

void Graph::backward(NodeId output) {
    check(!nodes_.empty(), "backward: graph is empty, run forward ops first");
    check(!backward_done_, "backward: already ran on this graph");
    const Node& out = node_at(output, "backward");
    check(out.tensor.values.rows() == 1 && out.tensor.values.cols() == 1,
          "backward: output " + out.name + " is not a scalar");

    backward_done_ = true;
    grad_buffer(output).at(0, 0) = 1.0;

    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const Node& n = nodes_[i];
        if (!n.tensor.requires_grad || n.tensor.grad.empty() || n.op == Op::Input) {
            continue;
        }
        backward_node(n);
    }
}

void Graph::backward_node(const Node& n) {
    const Matrix& g = n.tensor.grad;
    switch (n.op) {
    case Op::Input:
        break;
    case Op::Matmul: {
        const Node& a = nodes_[n.in0];
        const Node& b = nodes_[n.in1];
        const bool ta = n.transpose_a;
        const bool tb = n.transpose_b;
        if (a.tensor.requires_grad) {
            Matrix& ga = grad_buffer(n.in0);
            if (!ta && !tb) {
                matmul_accumulate(ga, g, b.tensor.values, false, true);
            } else if (!ta && tb) {
                matmul_accumulate(ga, g, b.tensor.values, false, false);
            } else if (ta && !tb) {
                matmul_accumulate(ga, b.tensor.values, g, false, true);
            } else {
                matmul_accumulate(ga, b.tensor.values, g, true, true);
            }
        }
        if (b.tensor.requires_grad) {
            Matrix& gb = grad_buffer(n.in1);
            if (!ta && !tb) {
                matmul_accumulate(gb, a.tensor.values, g, true, false);
            } else if (!ta && tb) {
                matmul_accumulate(gb, g, a.tensor.values, true, false);
            } else if (ta && !tb) {
                matmul_accumulate(gb, a.tensor.values, g, false, false);
            } else {
                matmul_accumulate(gb, g, a.tensor.values, true, true);
            }
        }
        break;
    }
    case Op::Add: {
        if (nodes_[n.in0].tensor.requires_grad) {
            axpy(grad_buffer(n.in0), 1.0, g);
        }
        if (nodes_[n.in1].tensor.requires_grad) {
            axpy(grad_buffer(n.in1), 1.0, g);
        }
        break;
    }
    case Op::Mul: {
        if (nodes_[n.in0].tensor.requires_grad) {
            Matrix& ga = grad_buffer(n.in0);
            const Matrix& bv = nodes_[n.in1].tensor.values;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga.data()[i] += g.data()[i] * bv.data()[i];
            }
        }
        if (nodes_[n.in1].tensor.requires_grad) {
            Matrix& gb = grad_buffer(n.in1);
            const Matrix& av = nodes_[n.in0].tensor.values;
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb.data()[i] += g.data()[i] * av.data()[i];
            }
        }
        break;
    }
    case Op::Softmax: {
        if (!nodes_[n.in0].tensor.requires_grad) {
            break;
        }
        Matrix& gx = grad_buffer(n.in0);
        const Matrix& y = n.tensor.values;
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
                dot += g.at(r, c) * y.at(r, c);
            }
            for (std::size_t c = 0; c < y.cols(); ++c) {
                gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
            }
        }
        break;
    }
    case Op::LayerNorm: {
        if (!nodes_[n.in0].tensor.requires_grad) {
            break;
        }
        Matrix& gx = grad_buffer(n.in0);
        const Matrix& y = n.tensor.values;
        const Matrix& inv_std = n.aux;
        const double inv_n = 1.0 / static_cast<double>(y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double g_mean = 0.0;
            double gy_mean = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
                g_mean += g.at(r, c);
                gy_mean += g.at(r, c) * y.at(r, c);
            }
            g_mean *= inv_n;
            gy_mean *= inv_n;
            const double is = inv_std.at(r, 0);
            for (std::size_t c = 0; c < y.cols(); ++c) {
                gx.at(r, c) += is * (g.at(r, c) - g_mean - y.at(r, c) * gy_mean);
            }
        }
        break;
    }
    case Op::Embed: {
        if (!nodes_[n.in0].tensor.requires_grad) {
            break;
        }
        Matrix& gt = grad_buffer(n.in0);
        for (std::size_t r = 0; r < n.ids.size(); ++r) {
            const auto row = static_cast<std::size_t>(n.ids[r]);
            for (std::size_t c = 0; c < gt.cols(); ++c) {
                gt.at(row, c) += g.at(r, c);
            }
        }
        break;
    }
    case Op::CrossEntropy: {
        if (!nodes_[n.in0].tensor.requires_grad) {
            break;
        }
        Matrix& gz = grad_buffer(n.in0);
        const Matrix& probs = n.aux;
        const double upstream = g.at(0, 0);
        for (std::size_t r = 0; r < gz.rows(); ++r) {
            const int target = n.ids[r];
            if (target < 0) {
                continue;
            }
            for (std::size_t c = 0; c < gz.cols(); ++c) {
                const double onehot = (static_cast<std::size_t>(target) == c) ? 1.0 : 0.0;
                gz.at(r, c) += upstream * (probs.at(r, c) - onehot);
            }
        }
        break;
    }
    }
}

const Matrix& Graph::value_of(NodeId id) const {
    return node_at(id, "value_of").tensor.values;
}

const Matrix& Graph::grad_of(NodeId id) const {
    const Node& n = node_at(id, "grad_of");
    check(backward_done_, "grad_of: backward has not run");
    check(!n.tensor.grad.empty(),
          "grad_of: node " + n.name + " has no gradient (not on a parameter path)");
    return n.tensor.grad;
}

const std::string& Graph::node_name(NodeId id) const {
    return node_at(id, "node_name").name;
}

} // namespace silora
