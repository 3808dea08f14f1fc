// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Per-unit importance scores for structured pruning and their cross-layer
// scaling.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ulga/mi.hpp"
#include "ulga/models.hpp"
#include "ulga/nn.hpp"

namespace ulga {

enum class Criterion { magnitude, gradient, activation, normalization, information };
enum class Scaling { none, layer_max, fan_scaled };
enum class GradientAccumulation { per_batch_abs, whole_dataset };

const char* to_string(Criterion c);
const char* to_string(Scaling s);
Criterion criterion_from_string(std::string_view s);
Scaling scaling_from_string(std::string_view s);

struct CriterionScore {
    LayerId layer = 0;
    std::size_t unit = 0;
    double raw = 0.0;
    double scaled = 0.0;
    Criterion criterion = Criterion::magnitude;
};

using ScoreTable = std::vector<CriterionScore>;

/// One batch of scoring data. `loss` maps the network output to a scalar.
/// `target` is the waveform [B, T] the information criterion reads, sampled
/// `samples_per_step` audio samples per network step. Alternatively
/// `features` [B, d, steps] gives step-aligned target features directly.
struct ScoringBatch {
    Tensor input;
    std::function<Tensor(const Tensor&)> loss;
    Tensor target;
    Tensor features;
    std::size_t samples_per_step = 1;
};

using ScoringSet = std::vector<ScoringBatch>;

/// Scoring batch for a model: its loss and its target waveform.
ScoringBatch scoring_batch(const ModelConfig& cfg, const ModelBatch& batch);

struct CriteriaOptions {
    GradientAccumulation accumulation = GradientAccumulation::per_batch_abs;
    MiConfig mi;
    std::uint64_t seed = 0;
    /// STFT of the target waveform for the information criterion.
    std::size_t info_window = 256;
    std::size_t info_min_hop = 64;
    std::size_t info_max_bins = 8;
};

// --- single layers ---------------------------------------------------------

/// Sum of |incoming weights| per output unit. Unit layers only.
std::vector<double> score_magnitude(const Network& net, LayerId layer);

/// Sum of |dL/dW| over incoming weights per unit. Gradients of all unit layers
/// are returned at once, indexed by layer (empty for non-unit layers).
/// Weights are untouched and gradients are cleared afterwards.
std::vector<std::vector<double>> score_gradient_all(Network& net, const ScoringSet& data,
                                                    GradientAccumulation acc = GradientAccumulation::per_batch_abs);
std::vector<double> score_gradient(Network& net, LayerId layer, const ScoringSet& data,
                                   GradientAccumulation acc = GradientAccumulation::per_batch_abs);

/// Sum over samples and steps of |activation| at the unit's representative
/// node (see representative_node).
std::vector<double> score_activation(Network& net, LayerId layer, const ScoringSet& data);

/// |gamma| of a batchnorm node, attributed to the unit layer feeding it.
/// Returns the unit layer and the scores.
std::pair<LayerId, std::vector<double>> score_normalization(const Network& net, LayerId batchnorm_layer);

/// I(z_i + xi; y) per unit, clamped at zero.
std::vector<double> score_information(Network& net, LayerId layer, const ScoringSet& data,
                                      const CriteriaOptions& opt = {});

/// Node whose output stands for a unit layer's units: the layer itself
/// followed through single-consumer batchnorm and activation nodes.
LayerId representative_node(const Network& net, LayerId layer);

/// Fan-in of a unit layer's units.
std::size_t fan_in(const LayerSpec& spec);

// --- whole network ---------------------------------------------------------

/// Scores of every unit of every trimmable layer, scaled with `scaling`.
ScoreTable score_network(Network& net, Criterion criterion, const ScoringSet& data, Scaling scaling,
                         const CriteriaOptions& opt = {});

/// Populate `scaled` per layer. Monotone within each layer.
void scale_scores(ScoreTable& scores, Scaling scaling, const Network& net);

void write_scores_csv(std::ostream& os, const ScoreTable& scores);

}  // namespace ulga
