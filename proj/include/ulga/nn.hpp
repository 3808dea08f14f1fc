// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Prunable layers and the network container.
//
// A Network is an ordered list of nodes. Each node reads the outputs of
// earlier nodes (or the network input) and carries an activation layout of
// [B, C, T]. Channels flow through "unit spaces": linear, conv1d and gru
// layers open a new space for their outputs, normalization and activation
// nodes pass their input space through, and add/gate nodes force all their
// inputs into one space. The unit layers sharing a space form a trim group;
// trimming removes the same channel indices from every member and from every
// parameter axis indexed by that space.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulga/common.hpp"
#include "ulga/tensor.hpp"

namespace ulga {

enum class LayerKind { linear, conv1d, gru, batchnorm1d, activation, add, gate };
enum class Activation { identity, relu, tanh, sigmoid };

const char* to_string(LayerKind kind);
const char* to_string(Activation act);
LayerKind layer_kind_from_string(std::string_view s);
Activation activation_from_string(std::string_view s);

struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    std::size_t n_in = 1;
    std::size_t n_out = 1;
    std::size_t kernel = 1;    // conv1d only
    std::size_t dilation = 1;  // conv1d only
    bool causal = true;        // conv1d only
    Activation activation = Activation::identity;

    void validate() const;
    bool operator==(const LayerSpec&) const = default;

    static LayerSpec linear(std::size_t n_in, std::size_t n_out);
    static LayerSpec conv1d(std::size_t n_in, std::size_t n_out, std::size_t kernel, std::size_t dilation = 1,
                            bool causal = true);
    static LayerSpec gru(std::size_t n_in, std::size_t hidden);
    static LayerSpec batchnorm1d(std::size_t channels);
    static LayerSpec act(std::size_t channels, Activation fn);
    static LayerSpec add(std::size_t channels);
    static LayerSpec gate(std::size_t channels);
};

/// Which unit space a parameter axis is indexed by.
enum class AxisRole : std::uint8_t { none, out, in };

struct Parameter {
    std::string name;
    Tensor value;
    std::vector<AxisRole> roles;  // one per axis
    bool trainable = true;
    bool is_weight = false;  // weight matrices: maskable, counted in weight fractions

    Parameter() = default;
    Parameter(std::string n, Tensor v, std::vector<AxisRole> r, bool train, bool weight)
        : name(std::move(n)), value(std::move(v)), roles(std::move(r)), trainable(train), is_weight(weight) {}
    // Copies are deep so that copied networks never alias parameter storage.
    Parameter(const Parameter& o);
    Parameter& operator=(const Parameter& o);
    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;
};

inline constexpr int kNetworkInput = -1;

struct Layer {
    std::string name;
    LayerSpec spec;
    std::vector<int> inputs;  // node indices, kNetworkInput for the network input
    std::vector<Parameter> params;

    /// Linear, conv1d and gru layers own a unit space.
    bool is_unit_layer() const;
    bool has_params() const { return !params.empty(); }
    Parameter* find(std::string_view param_name);
    const Parameter* find(std::string_view param_name) const;
    Tensor& param(std::string_view param_name);
    const Tensor& param(std::string_view param_name) const;
};

using LayerId = std::size_t;

/// Structured removal: unit layer -> sorted unit indices to delete.
struct TrimPlan {
    std::map<LayerId, std::vector<std::size_t>> removals;
    bool empty() const;
};

/// Unstructured mask over weight parameters: bits[layer][param] is empty for
/// parameters that are not maskable weights.
struct PruneMask {
    std::vector<std::vector<std::vector<std::uint8_t>>> bits;

    std::size_t kept() const;
    std::size_t total() const;
    double kept_fraction() const;
};

enum class Mode { eval, train };

inline constexpr std::size_t kMinUnits = 1;

class Network;
Network deserialize(std::span<const std::uint8_t> bytes);

class Network {
public:
    Network() = default;
    explicit Network(std::size_t input_channels) : input_channels_(input_channels) {}

    /// Append a node. Parameters are initialized from `rng` (uniform in
    /// +-1/sqrt(fan_in); normalization starts at identity) or zero when null.
    LayerId add_layer(std::string name, LayerSpec spec, std::vector<int> inputs, Rng* rng = nullptr);

    std::size_t input_channels() const { return input_channels_; }
    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(LayerId id) const { return layers_.at(id); }
    Layer& layer(LayerId id) { return layers_.at(id); }
    std::optional<LayerId> find_layer(std::string_view name) const;
    std::size_t output_channels() const;

    /// x: [B, C, T], [B, C] or [C]; the output follows the same rank.
    Tensor forward(const Tensor& x, Mode mode = Mode::eval);
    /// Output of every node for x: [B, C, T].
    std::vector<Tensor> forward_all(const Tensor& x, Mode mode = Mode::eval);

    // --- topology --------------------------------------------------------
    std::size_t in_space(LayerId id) const { return in_space_.at(id); }
    std::size_t out_space(LayerId id) const { return out_space_.at(id); }
    std::size_t input_space() const { return 0; }
    std::size_t space_count() const { return space_size_.size(); }
    std::size_t space_size(std::size_t space) const { return space_size_.at(space); }
    bool space_protected(std::size_t space) const;
    /// Unit layers grouped by shared output space, in layer order. Only
    /// groups on trimmable (unprotected) spaces are listed.
    std::vector<std::vector<LayerId>> trim_groups() const;
    /// Unit layers whose output space is protected (network output / input).
    std::vector<LayerId> protected_layers() const;
    /// Downstream nodes that read node `id`.
    std::vector<LayerId> consumers(LayerId id) const;
    /// Original (pre-trim) unit index of each surviving unit of a space.
    const std::vector<std::size_t>& space_origin(std::size_t space) const { return space_origin_.at(space); }

    // --- counts ----------------------------------------------------------
    std::size_t param_count() const;
    std::size_t weight_count() const;
    /// Channels over all trimmable spaces.
    std::size_t trimmable_unit_count() const;

    std::vector<Tensor*> trainable_params();

    // --- masking ---------------------------------------------------------
    PruneMask full_mask() const;
    /// Install `mask` and zero masked weights. Throws on shape mismatch.
    void mask_apply(const PruneMask& mask);
    const std::optional<PruneMask>& mask() const { return mask_; }
    void clear_mask() { mask_.reset(); }
    /// Zero masked weights and their gradients.
    void enforce_mask();
    void mask_gradients();

    // --- trimming --------------------------------------------------------
    /// Validates a plan against group consistency and min-units; throws
    /// ConfigError describing the first violation.
    void validate_plan(const TrimPlan& plan) const;
    /// Physically delete the planned units. Atomic: on error *this is unchanged.
    void trim(const TrimPlan& plan);

    std::uint64_t iteration = 0;
    std::map<std::string, std::string> meta;

private:
    friend Network deserialize(std::span<const std::uint8_t> bytes);
    void rebuild_topology();

    std::size_t input_channels_ = 0;
    std::vector<Layer> layers_;
    std::vector<std::size_t> in_space_, out_space_, space_size_;
    std::vector<std::vector<std::size_t>> space_origin_;
    std::optional<PruneMask> mask_;
};

/// Functional form of Network::trim.
Network apply_trim(const Network& net, const TrimPlan& plan);
/// Functional form of Network::mask_apply.
void mask_apply(Network& net, const PruneMask& mask);

/// Copy `values` (laid out as `shape`) keeping only the listed indices on each
/// axis that has a non-null list.
std::vector<float> gather_axes(std::span<const float> values, const Shape& shape,
                               const std::vector<const std::vector<std::size_t>*>& keep);

// ---------------------------------------------------------------------------
// Streaming execution, one time step at a time, eval mode. Causal layers only.

struct OpCounter {
    std::uint64_t flops = 0;
};

class StreamRunner {
public:
    explicit StreamRunner(const Network& net, OpCounter* counter = nullptr);
    /// Advance one step with an input frame of input_channels() values.
    std::span<const float> step(std::span<const float> input);
    void reset();

private:
    template <bool kCount>
    std::uint64_t run(std::span<const float> input);

    const Network& net_;
    OpCounter* counter_;
    std::vector<std::vector<float>> outputs_;
    std::vector<std::vector<float>> history_;  // conv input ring buffers, [span][C]
    std::vector<std::size_t> history_pos_;
    std::vector<std::vector<float>> state_;    // gru hidden state
    std::vector<std::vector<float>> bn_inv_;   // 1/sqrt(var+eps)
};

// ---------------------------------------------------------------------------
// Checkpoints: "ULGA" | u16 version | u32 metadata length | metadata JSON |
// little-endian f32 parameter blocks in declaration order | CRC32.

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize(const Network& net);
Network deserialize(std::span<const std::uint8_t> bytes);
void save(const Network& net, const std::string& path);
Network load(const std::string& path);

}  // namespace ulga
