#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "silora/matrix.hpp"

namespace silora {

// Per-layer importance record. All matrices share the layer's effective
// weight shape. omega accumulates the running contribution -g~ (.) d_theta
// while a task is open; consolidation folds it into Omega and snapshots the
// reference weights the regularizer anchors to.
struct LayerImportance {
    Matrix omega;
    bool omega_is_live = false;
    Matrix Omega;            // consolidated importance, entries >= 0
    Matrix theta_ref;        // effective weights at the end of the last task
    Matrix delta_total;      // total excursion over the last task
    Matrix theta_task_start; // effective weights when the open task began
};

// Owns the importance lifecycle across tasks:
//   begin_task -> accumulate (per optimizer step) -> consolidate
// Consolidation adds max(0, omega) / (delta_total^2 + xi) into Omega, so
// importance from multiple recorded tasks sums. Layer order is fixed at
// registration and is the canonical order used everywhere downstream.
class ImportanceTracker {
public:
    void register_layer(const std::string& layer_id, std::size_t rows, std::size_t cols);

    // Snapshots per-layer start weights (canonical order) and opens a task.
    void begin_task(const std::vector<Matrix>& effective_weights);

    // omega -= virtual_grad (.) delta_theta, elementwise.
    void accumulate(const std::string& layer_id, const Matrix& virtual_grad,
                    const Matrix& delta_theta);

    // Closes the open task: computes delta_total against the task-start
    // snapshot, folds omega into Omega, re-anchors theta_ref, zeroes omega.
    void consolidate(const std::vector<Matrix>& final_effective_weights, double xi);

    // Frobenius norm of each layer's Omega, canonical order.
    std::vector<std::pair<std::string, double>> layer_l2_norms() const;

    bool task_open() const { return task_open_; }
    bool consolidated() const { return ever_consolidated_; }

    const std::vector<std::string>& layer_ids() const { return layer_ids_; }
    const LayerImportance& layer(const std::string& layer_id) const;
    std::size_t layer_count() const { return layer_ids_.size(); }

    // Checkpoint restore path: overwrite full state.
    void restore(std::vector<std::string> layer_ids, std::vector<LayerImportance> layers,
                 bool task_open, bool ever_consolidated);
    const std::vector<LayerImportance>& layers() const { return layers_; }

private:
    std::size_t index_of(const std::string& layer_id, const char* who) const;

    std::vector<std::string> layer_ids_;
    std::vector<LayerImportance> layers_;
    bool task_open_ = false;
    bool ever_consolidated_ = false;
};

} // namespace silora
