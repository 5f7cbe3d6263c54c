#include "silora/importance.hpp"

#include <algorithm>

namespace silora {

void ImportanceTracker::register_layer(const std::string& layer_id, std::size_t rows,
                                       std::size_t cols) {
    check(!task_open_, "register_layer: cannot add layers while a task is open");
    for (const auto& existing : layer_ids_) {
        check(existing != layer_id, "register_layer: duplicate layer '" + layer_id + "'");
    }
    LayerImportance layer;
    layer.omega = Matrix(rows, cols);
    layer.Omega = Matrix(rows, cols);
    layer.theta_ref = Matrix(rows, cols);
    layer.delta_total = Matrix(rows, cols);
    layer.theta_task_start = Matrix(rows, cols);
    layer_ids_.push_back(layer_id);
    layers_.push_back(std::move(layer));
}

std::size_t ImportanceTracker::index_of(const std::string& layer_id, const char* who) const {
    for (std::size_t i = 0; i < layer_ids_.size(); ++i) {
        if (layer_ids_[i] == layer_id) {
            return i;
        }
    }
    throw Error(std::string(who) + ": unknown layer '" + layer_id + "'");
}

void ImportanceTracker::begin_task(const std::vector<Matrix>& effective_weights) {
    check(!task_open_, "begin_task: a task is already open, consolidate it first");
    check(effective_weights.size() == layers_.size(),
          "begin_task: expected " + std::to_string(layers_.size()) + " layer snapshots, got " +
              std::to_string(effective_weights.size()));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        check(effective_weights[i].same_shape(layers_[i].omega),
              "begin_task: snapshot shape mismatch for '" + layer_ids_[i] + "'");
        layers_[i].theta_task_start = effective_weights[i];
        layers_[i].omega.fill(0.0);
        layers_[i].omega_is_live = true;
    }
    task_open_ = true;
}

void ImportanceTracker::accumulate(const std::string& layer_id, const Matrix& virtual_grad,
                                   const Matrix& delta_theta) {
    check(task_open_,
          "accumulate: no open task (consolidated importance requires a task restart)");
    LayerImportance& layer = layers_[index_of(layer_id, "accumulate")];
    check(virtual_grad.same_shape(layer.omega) && delta_theta.same_shape(layer.omega),
          "accumulate: shape mismatch for '" + layer_id + "'");
    for (std::size_t i = 0; i < layer.omega.size(); ++i) {
        layer.omega.data()[i] -= virtual_grad.data()[i] * delta_theta.data()[i];
    }
}

void ImportanceTracker::consolidate(const std::vector<Matrix>& final_effective_weights,
                                    double xi) {
    check(task_open_, "consolidate: no open task to consolidate");
    check(xi > 0.0, "consolidate: xi must be positive");
    check(final_effective_weights.size() == layers_.size(),
          "consolidate: expected " + std::to_string(layers_.size()) + " layer snapshots");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        LayerImportance& layer = layers_[i];
        const Matrix& theta_now = final_effective_weights[i];
        check(theta_now.same_shape(layer.omega),
              "consolidate: snapshot shape mismatch for '" + layer_ids_[i] + "'");

        layer.delta_total = sub(theta_now, layer.theta_task_start);
        for (std::size_t j = 0; j < layer.omega.size(); ++j) {
            const double w = std::max(0.0, layer.omega.data()[j]);
            const double d = layer.delta_total.data()[j];
            layer.Omega.data()[j] += w / (d * d + xi);
        }
        layer.theta_ref = theta_now;
        layer.omega.fill(0.0);
        layer.omega_is_live = false;
    }
    task_open_ = false;
    ever_consolidated_ = true;
}

std::vector<std::pair<std::string, double>> ImportanceTracker::layer_l2_norms() const {
    check(ever_consolidated_, "layer_l2_norms: importance has not been consolidated");
    std::vector<std::pair<std::string, double>> norms;
    norms.reserve(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        norms.emplace_back(layer_ids_[i], layers_[i].Omega.frobenius_norm());
    }
    return norms;
}

const LayerImportance& ImportanceTracker::layer(const std::string& layer_id) const {
    return layers_[index_of(layer_id, "layer")];
}

void ImportanceTracker::restore(std::vector<std::string> layer_ids,
                                std::vector<LayerImportance> layers, bool task_open,
                                bool ever_consolidated) {
    check(layer_ids.size() == layers.size(), "restore: id/layer count mismatch");
    layer_ids_ = std::move(layer_ids);
    layers_ = std::move(layers);
    task_open_ = task_open;
    ever_consolidated_ = ever_consolidated;
}

} // namespace silora
