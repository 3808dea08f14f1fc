// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Unit and weight selection, rewinding, training to completion and the
// iterative prune, rewind and retrain driver.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ulga/criteria.hpp"
#include "ulga/models.hpp"
#include "ulga/nn.hpp"
#include "ulga/optim.hpp"

namespace ulga {

enum class Selection { local, global };
enum class PruneMode { mask, trim };

const char* to_string(Selection s);
const char* to_string(PruneMode m);
Selection selection_from_string(std::string_view s);
PruneMode prune_mode_from_string(std::string_view s);

// --- selection ---------------------------------------------------------------

/// Units to delete. Trim-group members are ranked together by the mean of
/// their scaled scores. Local removes round(fraction * n) units of every
/// group; global removes round(fraction * total) units pooled by score. Each
/// group keeps at least `min_units`. Ties go to the lower relative position
/// within its group, then to the lower layer index.
TrimPlan select_units(const ScoreTable& scores, double fraction, Selection selection, const Network& net,
                      std::size_t min_units = kMinUnits);

/// Mask removing the smallest |w| among the weights still unmasked: round(
/// fraction * alive) per layer (local) or over the whole network (global).
/// Composes with the network's current mask. Ties go to the lower
/// (layer, parameter, index).
PruneMask select_weights(const Network& net, double fraction, Selection selection);

/// Fraction of trimmable units whose incoming weights are all masked, over
/// every member of their trim group.
double prunability_from_mask(const Network& net, const PruneMask& mask);

/// Set every parameter of `net` to its value in `snapshot`, restricted to the
/// units that survive in `net`. The mask is re-applied. Throws ShapeError
/// when the snapshot does not cover the network.
void rewind(Network& net, const Network& snapshot);

// --- training ----------------------------------------------------------------

/// An 80/10/10 partition of a dataset.
struct DataSplit {
    std::vector<AudioExample> train, valid, test;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    AdamConfig adam;
    std::size_t max_epochs = 30;
    /// Epochs without a new best validation loss before the learning rate
    /// halves. A second plateau with no improvement in between stops training.
    std::size_t patience = 10;
    /// Upper bound on optimizer steps per epoch (0: a full pass).
    std::size_t max_steps_per_epoch = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    std::size_t epochs = 0;
    std::size_t steps = 0;
    double best_valid_loss = 0.0;
    double seconds = 0.0;
};

/// Mean loss over `items` in eval mode.
double evaluate(Network& net, const ModelConfig& cfg, const std::vector<AudioExample>& items,
                std::size_t batch_size = 64);

/// Train until the epoch budget or the second plateau; the weights with the
/// best validation loss are kept. `on_step(step, net)` runs before each
/// optimizer step (step counts from 0). Masked weights stay zero. Throws
/// NumericError when the loss becomes non-finite.
TrainResult train_model(Network& net, const ModelConfig& cfg, const DataSplit& data, const TrainConfig& tc,
                        const std::function<void(std::size_t, const Network&)>& on_step = {});

// --- iterative pruning -------------------------------------------------------

struct ImpConfig {
    double prune_fraction = 0.30;
    std::size_t iterations = 15;
    /// Training step whose weights surviving units are rewound to.
    std::size_t rewind_step = 0;
    PruneMode mode = PruneMode::trim;
    Selection selection = Selection::global;
    /// Iterations before this one use global selection and later ones local.
    std::optional<std::size_t> global_until;
    Criterion criterion = Criterion::magnitude;
    Scaling scaling = Scaling::layer_max;
    /// Stop after an iteration whose test error multiplier exceeds this.
    std::optional<double> stop_error_multiplier;
    std::size_t min_units = kMinUnits;
    TrainConfig train;
    CriteriaOptions criteria;

    void validate() const;
    Selection selection_at(std::size_t iteration) const;
};

struct ImpRecord {
    std::size_t iteration = 0;
    double weights_remaining_frac = 1.0;
    double units_remaining_frac = 1.0;
    std::vector<std::size_t> units_per_layer;  // n_out of every unit layer
    double valid_loss = 0.0;
    double test_loss = 0.0;
    double test_error_multiplier = 1.0;
    double flops_per_second_audio = 0.0;
    std::uint64_t disk_bytes = 0;
    double rw_accesses = 0.0;
    std::uint64_t weights = 0;
    double train_seconds = 0.0;
    std::size_t train_steps = 0;
};

struct ImpTrace {
    std::vector<ImpRecord> records;
    bool aborted = false;
    std::string stop_reason;
};

using ImpCallback = std::function<void(const ImpRecord&, const Network&)>;

/// Train the dense network, then repeat score, select, prune, rewind and
/// retrain. Iteration 0 is the dense baseline. `net` ends as the last model.
/// A non-finite loss ends the run with the trace so far and `aborted` set.
ImpTrace run_imp(Network& net, const ModelConfig& cfg, const DataSplit& data, const ImpConfig& imp,
                 const ImpCallback& on_iteration = {});

/// Columns: iteration, weights_remaining_frac, units_remaining_frac,
/// valid_loss, test_error_multiplier, flops_per_second_audio, disk_bytes,
/// rw_accesses.
void write_trace_csv(std::ostream& os, const ImpTrace& trace);
/// Columns: iteration, train_seconds, train_steps.
void write_timing_csv(std::ostream& os, const ImpTrace& trace);

/// Weights still present: unmasked entries of weight parameters.
std::uint64_t live_weight_count(const Network& net);

}  // namespace ulga
