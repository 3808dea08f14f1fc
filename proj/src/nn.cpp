// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace ulga {

namespace {

constexpr float kBatchNormEps = 1e-6f;
constexpr float kBatchNormMomentum = 0.1f;

std::string join(const std::vector<std::size_t>& v) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << "]";
    return os.str();
}

Tensor init_uniform(const Shape& shape, double bound, Rng* rng) {
    std::vector<float> v(shape_numel(shape), 0.0f);
    if (rng) {
        for (auto& x : v) x = static_cast<float>(rng->uniform(-bound, bound));
    }
    return Tensor::parameter(shape, std::move(v));
}

Tensor init_fill(const Shape& shape, float value, bool trainable) {
    std::vector<float> v(shape_numel(shape), value);
    if (trainable) return Tensor::parameter(shape, std::move(v));
    return Tensor(shape, std::move(v));
}

std::vector<Parameter> make_params(const LayerSpec& s, Rng* rng) {
    using R = AxisRole;
    std::vector<Parameter> p;
    switch (s.kind) {
        case LayerKind::linear: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(s.n_in));
            p.emplace_back("W", init_uniform({s.n_out, s.n_in}, bound, rng), std::vector<R>{R::out, R::in}, true, true);
            p.emplace_back("b", init_uniform({s.n_out}, bound, rng), std::vector<R>{R::out}, true, false);
            break;
        }
        case LayerKind::conv1d: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(s.n_in * s.kernel));
            p.emplace_back("W", init_uniform({s.n_out, s.n_in, s.kernel}, bound, rng),
                           std::vector<R>{R::out, R::in, R::none}, true, true);
            p.emplace_back("b", init_uniform({s.n_out}, bound, rng), std::vector<R>{R::out}, true, false);
            break;
        }
        case LayerKind::gru: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(s.n_out));
            for (const char* n : {"W_z", "W_r", "W_h"})
                p.emplace_back(n, init_uniform({s.n_out, s.n_in}, bound, rng), std::vector<R>{R::out, R::in}, true,
                               true);
            for (const char* n : {"U_z", "U_r", "U_h"})
                p.emplace_back(n, init_uniform({s.n_out, s.n_out}, bound, rng), std::vector<R>{R::out, R::out}, true,
                               true);
            for (const char* n : {"b_z", "b_r", "b_h"})
                p.emplace_back(n, init_uniform({s.n_out}, bound, rng), std::vector<R>{R::out}, true, false);
            break;
        }
        case LayerKind::batchnorm1d:
            p.emplace_back("gamma", init_fill({s.n_out}, 1.0f, true), std::vector<R>{R::out}, true, false);
            p.emplace_back("beta", init_fill({s.n_out}, 0.0f, true), std::vector<R>{R::out}, true, false);
            p.emplace_back("running_mean", init_fill({s.n_out}, 0.0f, false), std::vector<R>{R::out}, false, false);
            p.emplace_back("running_var", init_fill({s.n_out}, 1.0f, false), std::vector<R>{R::out}, false, false);
            break;
        case LayerKind::activation:
        case LayerKind::add:
        case LayerKind::gate:
            break;
    }
    return p;
}

// Keep the listed indices along every axis that has a keep list.
std::vector<float> gather_impl(std::span<const float> src, const Shape& shape,
                               const std::vector<const std::vector<std::size_t>*>& keep, Shape& out_shape) {
    out_shape = shape;
    for (std::size_t a = 0; a < shape.size(); ++a)
        if (keep[a]) out_shape[a] = keep[a]->size();
    const std::size_t rank = shape.size();
    std::vector<std::size_t> stride(rank, 1);
    for (std::size_t a = rank; a-- > 1;) stride[a - 1] = stride[a] * shape[a];
    std::vector<float> out(shape_numel(out_shape));
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t a = 0; a < rank; ++a) off += (keep[a] ? (*keep[a])[idx[a]] : idx[a]) * stride[a];
        out[flat] = src[off];
        for (std::size_t a = rank; a-- > 0;) {
            if (++idx[a] < out_shape[a]) break;
            idx[a] = 0;
        }
    }
    return out;
}

}  // namespace

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::gru: return "gru";
        case LayerKind::batchnorm1d: return "batchnorm1d";
        case LayerKind::activation: return "activation";
        case LayerKind::add: return "add";
        case LayerKind::gate: return "gate";
    }
    return "?";
}

const char* to_string(Activation act) {
    switch (act) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

LayerKind layer_kind_from_string(std::string_view s) {
    for (auto k : {LayerKind::linear, LayerKind::conv1d, LayerKind::gru, LayerKind::batchnorm1d, LayerKind::activation,
                   LayerKind::add, LayerKind::gate})
        if (s == to_string(k)) return k;
    throw FormatError("unknown layer kind '" + std::string(s) + "'");
}

Activation activation_from_string(std::string_view s) {
    for (auto a : {Activation::identity, Activation::relu, Activation::tanh, Activation::sigmoid})
        if (s == to_string(a)) return a;
    throw FormatError("unknown activation '" + std::string(s) + "'");
}

void LayerSpec::validate() const {
    if (n_in < 1 || n_out < 1) throw ConfigError(std::string(to_string(kind)) + ": unit counts must be >= 1");
    if (kernel < 1 || dilation < 1) throw ConfigError("conv1d: kernel and dilation must be >= 1");
    const bool same = kind == LayerKind::batchnorm1d || kind == LayerKind::activation || kind == LayerKind::add ||
                      kind == LayerKind::gate;
    if (same && n_in != n_out)
        throw ConfigError(std::string(to_string(kind)) + ": n_in must equal n_out");
}

LayerSpec LayerSpec::linear(std::size_t n_in, std::size_t n_out) {
    LayerSpec s;
    s.kind = LayerKind::linear;
    s.n_in = n_in;
    s.n_out = n_out;
    return s;
}

LayerSpec LayerSpec::conv1d(std::size_t n_in, std::size_t n_out, std::size_t kernel, std::size_t dilation,
                            bool causal) {
    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.n_in = n_in;
    s.n_out = n_out;
    s.kernel = kernel;
    s.dilation = dilation;
    s.causal = causal;
    return s;
}

LayerSpec LayerSpec::gru(std::size_t n_in, std::size_t hidden) {
    LayerSpec s;
    s.kind = LayerKind::gru;
    s.n_in = n_in;
    s.n_out = hidden;
    return s;
}

LayerSpec LayerSpec::batchnorm1d(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::batchnorm1d;
    s.n_in = s.n_out = channels;
    return s;
}

LayerSpec LayerSpec::act(std::size_t channels, Activation fn) {
    LayerSpec s;
    s.kind = LayerKind::activation;
    s.n_in = s.n_out = channels;
    s.activation = fn;
    return s;
}

LayerSpec LayerSpec::add(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::add;
    s.n_in = s.n_out = channels;
    return s;
}

LayerSpec LayerSpec::gate(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::gate;
    s.n_in = s.n_out = channels;
    return s;
}

Parameter::Parameter(const Parameter& o)
    : name(o.name),
      value(o.value.defined() ? o.value.clone() : Tensor()),
      roles(o.roles),
      trainable(o.trainable),
      is_weight(o.is_weight) {}

Parameter& Parameter::operator=(const Parameter& o) {
    if (this != &o) {
        Parameter tmp(o);
        *this = std::move(tmp);
    }
    return *this;
}

bool Layer::is_unit_layer() const {
    return spec.kind == LayerKind::linear || spec.kind == LayerKind::conv1d || spec.kind == LayerKind::gru;
}

Parameter* Layer::find(std::string_view param_name) {
    for (auto& p : params)
        if (p.name == param_name) return &p;
    return nullptr;
}

const Parameter* Layer::find(std::string_view param_name) const {
    for (const auto& p : params)
        if (p.name == param_name) return &p;
    return nullptr;
}

Tensor& Layer::param(std::string_view param_name) {
    if (auto* p = find(param_name)) return p->value;
    throw ConfigError("layer '" + name + "' has no parameter '" + std::string(param_name) + "'");
}

const Tensor& Layer::param(std::string_view param_name) const {
    if (const auto* p = find(param_name)) return p->value;
    throw ConfigError("layer '" + name + "' has no parameter '" + std::string(param_name) + "'");
}

bool TrimPlan::empty() const {
    for (const auto& [id, idx] : removals)
        if (!idx.empty()) return false;
    return true;
}

std::size_t PruneMask::kept() const {
    std::size_t n = 0;
    for (const auto& layer : bits)
        for (const auto& p : layer)
            for (auto b : p) n += b ? 1 : 0;
    return n;
}

std::size_t PruneMask::total() const {
    std::size_t n = 0;
    for (const auto& layer : bits)
        for (const auto& p : layer) n += p.size();
    return n;
}

double PruneMask::kept_fraction() const {
    const std::size_t t = total();
    return t == 0 ? 1.0 : static_cast<double>(kept()) / static_cast<double>(t);
}

// ---------------------------------------------------------------------------

LayerId Network::add_layer(std::string name, LayerSpec spec, std::vector<int> inputs, Rng* rng) {
    spec.validate();
    if (input_channels_ == 0) throw ConfigError("network input channel count must be >= 1");
    for (const auto& l : layers_)
        if (l.name == name) throw ConfigError("duplicate layer name '" + name + "'");
    const std::size_t want = spec.kind == LayerKind::add ? 0 : spec.kind == LayerKind::gate ? 2 : 1;
    if (inputs.empty() || (want != 0 && inputs.size() != want) || (want == 0 && inputs.size() < 2))
        throw ConfigError("layer '" + name + "': wrong number of inputs for " + to_string(spec.kind));
    for (int in : inputs) {
        if (in < kNetworkInput || in >= static_cast<int>(layers_.size()))
            throw ConfigError("layer '" + name + "': input " + std::to_string(in) + " does not precede it");
        const std::size_t ch = in == kNetworkInput ? input_channels_ : layers_[in].spec.n_out;
        if (ch != spec.n_in)
            throw ShapeError("layer '" + name + "': expects " + std::to_string(spec.n_in) + " input channels, got " +
                             std::to_string(ch));
    }
    Layer layer;
    layer.name = std::move(name);
    layer.spec = spec;
    layer.inputs = std::move(inputs);
    layer.params = make_params(spec, rng);
    layers_.push_back(std::move(layer));
    mask_.reset();
    space_origin_.clear();
    rebuild_topology();
    return layers_.size() - 1;
}

void Network::rebuild_topology() {
    // Union-find over provisional spaces; 0 is the network input.
    std::vector<std::size_t> parent{0};
    auto find = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    std::vector<std::size_t> raw_in(layers_.size()), raw_out(layers_.size());
    auto space_of = [&](int node) -> std::size_t { return node == kNetworkInput ? 0 : raw_out[node]; };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        raw_in[i] = space_of(l.inputs[0]);
        if (l.is_unit_layer()) {
            parent.push_back(parent.size());
            raw_out[i] = parent.size() - 1;
        } else {
            for (std::size_t k = 1; k < l.inputs.size(); ++k) {
                const std::size_t a = find(raw_in[i]), b = find(space_of(l.inputs[k]));
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
            raw_out[i] = raw_in[i];
        }
    }
    std::vector<std::size_t> compact(parent.size(), SIZE_MAX);
    std::size_t next = 0;
    auto canon = [&](std::size_t raw) {
        const std::size_t r = find(raw);
        if (compact[r] == SIZE_MAX) compact[r] = next++;
        return compact[r];
    };
    canon(0);
    in_space_.assign(layers_.size(), 0);
    out_space_.assign(layers_.size(), 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        in_space_[i] = canon(raw_in[i]);
        out_space_[i] = canon(raw_out[i]);
    }
    space_size_.assign(next, 0);
    space_size_[0] = input_channels_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::size_t s = out_space_[i];
        if (space_size_[s] != 0 && space_size_[s] != layers_[i].spec.n_out)
            throw ShapeError("layer '" + layers_[i].name + "': channel count disagrees with its tied layers");
        space_size_[s] = layers_[i].spec.n_out;
    }
    if (space_origin_.size() != next) {
        space_origin_.assign(next, {});
        for (std::size_t s = 0; s < next; ++s) {
            space_origin_[s].resize(space_size_[s]);
            std::iota(space_origin_[s].begin(), space_origin_[s].end(), std::size_t{0});
        }
    }
}

std::optional<LayerId> Network::find_layer(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].name == name) return i;
    return std::nullopt;
}

std::size_t Network::output_channels() const {
    return layers_.empty() ? input_channels_ : layers_.back().spec.n_out;
}

bool Network::space_protected(std::size_t space) const {
    if (space == 0) return true;
    return !layers_.empty() && space == out_space_.back();
}

std::vector<std::vector<LayerId>> Network::trim_groups() const {
    std::vector<std::vector<LayerId>> by_space(space_size_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].is_unit_layer() && !space_protected(out_space_[i])) by_space[out_space_[i]].push_back(i);
    std::vector<std::vector<LayerId>> groups;
    for (auto& g : by_space)
        if (!g.empty()) groups.push_back(std::move(g));
    return groups;
}

std::vector<LayerId> Network::protected_layers() const {
    std::vector<LayerId> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].is_unit_layer() && space_protected(out_space_[i])) out.push_back(i);
    return out;
}

std::vector<LayerId> Network::consumers(LayerId id) const {
    std::vector<LayerId> out;
    for (std::size_t i = id + 1; i < layers_.size(); ++i)
        for (int in : layers_[i].inputs)
            if (in == static_cast<int>(id)) {
                out.push_back(i);
                break;
            }
    return out;
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        for (const auto& p : l.params)
            if (p.trainable) n += p.value.numel();
    return n;
}

std::size_t Network::weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        for (const auto& p : l.params)
            if (p.is_weight) n += p.value.numel();
    return n;
}

std::size_t Network::trimmable_unit_count() const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < space_size_.size(); ++s)
        if (!space_protected(s)) n += space_size_[s];
    return n;
}

std::vector<Tensor*> Network::trainable_params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (auto& p : l.params)
            if (p.trainable) out.push_back(&p.value);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> Network::forward_all(const Tensor& x, Mode mode) {
    if (!x.defined() || x.rank() != 3 || x.dim(1) != input_channels_)
        throw ShapeError("network forward: expected input [B, " + std::to_string(input_channels_) + ", T], got " +
                         (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
    std::vector<Tensor> out;
    out.reserve(layers_.size());
    auto in = [&](int node) -> const Tensor& { return node == kNetworkInput ? x : out[node]; };
    for (auto& l : layers_) {
        const Tensor& a = in(l.inputs[0]);
        const std::size_t n_out = l.spec.n_out;
        switch (l.spec.kind) {
            case LayerKind::linear:
                out.push_back(add(matmul(l.param("W"), a), reshape(l.param("b"), {n_out, 1})));
                break;
            case LayerKind::conv1d: {
                const Tensor& w = l.param("W");
                Tensor y;
                if (l.spec.causal) {
                    y = conv1d_dilated_causal(a, w, l.spec.dilation);
                } else {
                    const std::size_t shift = (l.spec.kernel - 1) * l.spec.dilation / 2;
                    const std::size_t T = a.dim(2);
                    Tensor padded = shift ? concat({a, Tensor({a.dim(0), a.dim(1), shift})}, 2) : a;
                    y = slice(conv1d_dilated_causal(padded, w, l.spec.dilation), 2, shift, shift + T);
                }
                out.push_back(add(y, reshape(l.param("b"), {n_out, 1})));
                break;
            }
            case LayerKind::gru: {
                GruWeights g{l.param("W_z"), l.param("W_r"), l.param("W_h"), l.param("U_z"), l.param("U_r"),
                             l.param("U_h"), l.param("b_z"), l.param("b_r"), l.param("b_h")};
                out.push_back(gru_sequence(a, g));
                break;
            }
            case LayerKind::batchnorm1d: {
                Tensor& rm = l.param("running_mean");
                Tensor& rv = l.param("running_var");
                if (mode == Mode::eval) {
                    BatchStats running{{rm.data().begin(), rm.data().end()}, {rv.data().begin(), rv.data().end()}};
                    out.push_back(batch_norm(a, l.param("gamma"), l.param("beta"), kBatchNormEps, &running));
                } else {
                    BatchStats batch;
                    out.push_back(batch_norm(a, l.param("gamma"), l.param("beta"), kBatchNormEps, nullptr, &batch));
                    auto m = rm.data_mut();
                    auto v = rv.data_mut();
                    for (std::size_t c = 0; c < n_out; ++c) {
                        m[c] = (1.0f - kBatchNormMomentum) * m[c] + kBatchNormMomentum * batch.mean[c];
                        v[c] = (1.0f - kBatchNormMomentum) * v[c] + kBatchNormMomentum * batch.var[c];
                    }
                }
                break;
            }
            case LayerKind::activation:
                switch (l.spec.activation) {
                    case Activation::identity: out.push_back(a); break;
                    case Activation::relu: out.push_back(relu(a)); break;
                    case Activation::tanh: out.push_back(tanh(a)); break;
                    case Activation::sigmoid: out.push_back(sigmoid(a)); break;
                }
                break;
            case LayerKind::add: {
                Tensor acc = add(a, in(l.inputs[1]));
                for (std::size_t k = 2; k < l.inputs.size(); ++k) acc = add(acc, in(l.inputs[k]));
                out.push_back(acc);
                break;
            }
            case LayerKind::gate:
                out.push_back(mul(tanh(a), sigmoid(in(l.inputs[1]))));
                break;
        }
    }
    return out;
}

Tensor Network::forward(const Tensor& x, Mode mode) {
    if (!x.defined()) throw ShapeError("network forward: undefined input");
    if (layers_.empty()) return x;
    const std::size_t r = x.rank();
    Tensor x3;
    if (r == 1) {
        x3 = reshape(x, {1, x.dim(0), 1});
    } else if (r == 2) {
        x3 = reshape(x, {x.dim(0), x.dim(1), 1});
    } else {
        x3 = x;
    }
    Tensor y = forward_all(x3, mode).back();
    if (r == 1) return reshape(y, {y.dim(1)});
    if (r == 2) return reshape(y, {y.dim(0), y.dim(1)});
    return y;
}

// ---------------------------------------------------------------------------

PruneMask Network::full_mask() const {
    PruneMask m;
    m.bits.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        m.bits[i].resize(layers_[i].params.size());
        for (std::size_t p = 0; p < layers_[i].params.size(); ++p)
            if (layers_[i].params[p].is_weight) m.bits[i][p].assign(layers_[i].params[p].value.numel(), 1);
    }
    return m;
}

void Network::mask_apply(const PruneMask& mask) {
    if (mask.bits.size() != layers_.size()) throw ShapeError("mask_apply: mask covers a different number of layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& lp = layers_[i].params;
        if (mask.bits[i].size() != lp.size())
            throw ShapeError("mask_apply: layer '" + layers_[i].name + "' parameter count mismatch");
        for (std::size_t p = 0; p < lp.size(); ++p) {
            const std::size_t want = lp[p].is_weight ? lp[p].value.numel() : 0;
            if (mask.bits[i][p].size() != want)
                throw ShapeError("mask_apply: mask for " + layers_[i].name + "." + lp[p].name + " has " +
                                 std::to_string(mask.bits[i][p].size()) + " entries, expected " +
                                 std::to_string(want));
        }
    }
    mask_ = mask;
    enforce_mask();
}

void Network::enforce_mask() {
    if (!mask_) return;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        for (std::size_t p = 0; p < layers_[i].params.size(); ++p) {
            const auto& bits = mask_->bits[i][p];
            if (bits.empty()) continue;
            auto d = layers_[i].params[p].value.data_mut();
            for (std::size_t k = 0; k < bits.size(); ++k)
                if (!bits[k]) d[k] = 0.0f;
        }
}

void Network::mask_gradients() {
    if (!mask_) return;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        for (std::size_t p = 0; p < layers_[i].params.size(); ++p) {
            const auto& bits = mask_->bits[i][p];
            Tensor& t = layers_[i].params[p].value;
            if (bits.empty() || !t.has_grad()) continue;
            auto g = t.grad_mut();
            for (std::size_t k = 0; k < bits.size(); ++k)
                if (!bits[k]) g[k] = 0.0f;
        }
}

void mask_apply(Network& net, const PruneMask& mask) { net.mask_apply(mask); }

// ---------------------------------------------------------------------------

void Network::validate_plan(const TrimPlan& plan) const {
    std::map<std::size_t, std::pair<LayerId, const std::vector<std::size_t>*>> per_space;
    for (const auto& [id, idx] : plan.removals) {
        if (idx.empty()) continue;
        if (id >= layers_.size()) throw ConfigError("trim plan: layer " + std::to_string(id) + " does not exist");
        const Layer& l = layers_[id];
        if (!l.is_unit_layer()) throw ConfigError("trim plan: layer '" + l.name + "' has no units to remove");
        if (space_protected(out_space_[id]))
            throw ConfigError("trim plan: layer '" + l.name + "' feeds a protected output and cannot be trimmed");
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] >= l.spec.n_out)
                throw ConfigError("trim plan: unit " + std::to_string(idx[k]) + " out of range for layer '" + l.name +
                                  "' with " + std::to_string(l.spec.n_out) + " units");
            if (k > 0 && idx[k] <= idx[k - 1])
                throw ConfigError("trim plan: indices for layer '" + l.name + "' must be sorted and unique");
        }
        auto [it, fresh] = per_space.try_emplace(out_space_[id], id, &idx);
        if (!fresh && *it->second.second != idx)
            throw ConfigError("trim plan: layers '" + layers_[it->second.first].name + "' and '" + l.name +
                              "' are tied but remove different units " + join(*it->second.second) + " vs " +
                              join(idx));
    }
    for (const auto& [space, entry] : per_space) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!layers_[i].is_unit_layer() || out_space_[i] != space) continue;
            auto it = plan.removals.find(i);
            if (it == plan.removals.end() || it->second.empty())
                throw ConfigError("trim plan: layer '" + layers_[i].name + "' is tied to '" +
                                  layers_[entry.first].name + "' but has no matching removals");
        }
        if (space_size_[space] - entry.second->size() < kMinUnits)
            throw ConfigError("trim plan: layer '" + layers_[entry.first].name + "' would keep fewer than " +
                              std::to_string(kMinUnits) + " unit(s)");
    }
}

void Network::trim(const TrimPlan& plan) {
    validate_plan(plan);
    if (plan.empty()) return;

    std::vector<std::optional<std::vector<std::size_t>>> keep(space_size_.size());
    for (const auto& [id, idx] : plan.removals) {
        if (idx.empty()) continue;
        const std::size_t s = out_space_[id];
        if (keep[s]) continue;
        std::vector<std::size_t> k;
        std::set<std::size_t> drop(idx.begin(), idx.end());
        for (std::size_t u = 0; u < space_size_[s]; ++u)
            if (!drop.count(u)) k.push_back(u);
        keep[s] = std::move(k);
    }

    std::vector<Layer> layers = layers_;
    std::optional<PruneMask> mask = mask_;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Layer& l = layers[i];
        const auto& kin = keep[in_space_[i]];
        const auto& kout = keep[out_space_[i]];
        for (std::size_t p = 0; p < l.params.size(); ++p) {
            Parameter& param = l.params[p];
            std::vector<const std::vector<std::size_t>*> axes(param.roles.size(), nullptr);
            bool touched = false;
            for (std::size_t a = 0; a < axes.size(); ++a) {
                if (param.roles[a] == AxisRole::out && kout) axes[a] = &*kout;
                if (param.roles[a] == AxisRole::in && kin) axes[a] = &*kin;
                touched = touched || axes[a];
            }
            if (!touched) continue;
            Shape shape;
            auto values = gather_impl(param.value.data(), param.value.shape(), axes, shape);
            const bool grad = param.value.requires_grad();
            param.value = grad ? Tensor::parameter(shape, std::move(values)) : Tensor(shape, std::move(values));
            if (mask && !mask->bits[i][p].empty()) {
                std::vector<float> bits(mask->bits[i][p].begin(), mask->bits[i][p].end());
                Shape unused;
                auto kept = gather_impl(bits, layers_[i].params[p].value.shape(), axes, unused);
                mask->bits[i][p].assign(kept.size(), 0);
                for (std::size_t k = 0; k < kept.size(); ++k) mask->bits[i][p][k] = kept[k] != 0.0f;
            }
        }
        if (kin) l.spec.n_in = kin->size();
        if (kout) l.spec.n_out = kout->size();
    }

    auto origins = space_origin_;
    for (std::size_t s = 0; s < keep.size(); ++s) {
        if (!keep[s]) continue;
        std::vector<std::size_t> o;
        for (std::size_t u : *keep[s]) o.push_back(origins[s][u]);
        origins[s] = std::move(o);
    }

    layers_ = std::move(layers);
    mask_ = std::move(mask);
    space_origin_ = std::move(origins);
    rebuild_topology();
}

Network apply_trim(const Network& net, const TrimPlan& plan) {
    Network out = net;
    out.trim(plan);
    return out;
}

std::vector<float> gather_axes(std::span<const float> values, const Shape& shape,
                               const std::vector<const std::vector<std::size_t>*>& keep) {
    if (keep.size() != shape.size()) throw ShapeError("gather_axes: one keep list per axis required");
    for (std::size_t a = 0; a < shape.size(); ++a)
        if (keep[a])
            for (std::size_t k : *keep[a])
                if (k >= shape[a]) throw ShapeError("gather_axes: index out of range for " + shape_str(shape));
    Shape unused;
    return gather_impl(values, shape, keep, unused);
}

// ---------------------------------------------------------------------------

StreamRunner::StreamRunner(const Network& net, OpCounter* counter) : net_(net), counter_(counter) {
    const auto& layers = net.layers();
    outputs_.resize(layers.size());
    history_.resize(layers.size());
    history_pos_.assign(layers.size(), 0);
    state_.resize(layers.size());
    bn_inv_.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        outputs_[i].assign(l.spec.n_out, 0.0f);
        if (l.spec.kind == LayerKind::conv1d) {
            if (!l.spec.causal) throw ConfigError("streaming: layer '" + l.name + "' is not causal");
            history_[i].assign(((l.spec.kernel - 1) * l.spec.dilation + 1) * l.spec.n_in, 0.0f);
        }
        if (l.spec.kind == LayerKind::gru) state_[i].assign(l.spec.n_out, 0.0f);
        if (l.spec.kind == LayerKind::batchnorm1d) {
            auto var = l.param("running_var").data();
            for (float v : var) bn_inv_[i].push_back(1.0f / std::sqrt(v + kBatchNormEps));
        }
    }
}

void StreamRunner::reset() {
    for (auto& h : history_) std::fill(h.begin(), h.end(), 0.0f);
    for (auto& s : state_) std::fill(s.begin(), s.end(), 0.0f);
    std::fill(history_pos_.begin(), history_pos_.end(), 0);
}

std::span<const float> StreamRunner::step(std::span<const float> input) {
    if (input.size() != net_.input_channels())
        throw ShapeError("streaming: expected " + std::to_string(net_.input_channels()) + " input values, got " +
                         std::to_string(input.size()));
    if (counter_) {
        counter_->flops += run<true>(input);
    } else {
        run<false>(input);
    }
    if (net_.layers().empty()) return input;
    return outputs_.back();
}

// Every scalar add, multiply and nonlinearity bumps `ops` when kCount is set.
template <bool kCount>
std::uint64_t StreamRunner::run(std::span<const float> input) {
    const auto& layers = net_.layers();
    std::uint64_t ops = 0;
    auto tick = [&ops](std::uint64_t n) {
        if constexpr (kCount) ops += n;
    };
    auto in = [&](int node) -> std::span<const float> {
        if (node == kNetworkInput) return input;
        return outputs_[node];
    };
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const Layer& l = layers[li];
        auto x = in(l.inputs[0]);
        auto& y = outputs_[li];
        const std::size_t n_in = l.spec.n_in, n_out = l.spec.n_out;
        switch (l.spec.kind) {
            case LayerKind::linear: {
                auto w = l.param("W").data();
                auto b = l.param("b").data();
                for (std::size_t o = 0; o < n_out; ++o) {
                    float acc = b[o];
                    for (std::size_t i = 0; i < n_in; ++i) {
                        acc += w[o * n_in + i] * x[i];
                        tick(2);
                    }
                    y[o] = acc;
                }
                break;
            }
            case LayerKind::conv1d: {
                const std::size_t k = l.spec.kernel, d = l.spec.dilation;
                const std::size_t span = (k - 1) * d + 1;
                auto& hist = history_[li];
                std::size_t& pos = history_pos_[li];
                std::copy(x.begin(), x.end(), hist.begin() + pos * n_in);
                auto w = l.param("W").data();
                auto b = l.param("b").data();
                for (std::size_t o = 0; o < n_out; ++o) {
                    float acc = b[o];
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t back = (k - 1 - j) * d;
                        const float* xs = hist.data() + ((pos + span - back) % span) * n_in;
                        const float* wr = w.data() + o * n_in * k + j;
                        for (std::size_t i = 0; i < n_in; ++i) {
                            acc += wr[i * k] * xs[i];
                            tick(2);
                        }
                    }
                    y[o] = acc;
                }
                pos = (pos + 1) % span;
                break;
            }
            case LayerKind::gru: {
                const std::size_t H = n_out;
                auto& h = state_[li];
                auto wz = l.param("W_z").data(), wr = l.param("W_r").data(), wh = l.param("W_h").data();
                auto uz = l.param("U_z").data(), ur = l.param("U_r").data(), uh = l.param("U_h").data();
                auto bz = l.param("b_z").data(), br = l.param("b_r").data(), bh = l.param("b_h").data();
                for (std::size_t o = 0; o < H; ++o) {
                    float az = bz[o], ar = br[o], ah = bh[o], hh = 0.0f;
                    for (std::size_t i = 0; i < n_in; ++i) {
                        az += wz[o * n_in + i] * x[i];
                        ar += wr[o * n_in + i] * x[i];
                        ah += wh[o * n_in + i] * x[i];
                        tick(6);
                    }
                    for (std::size_t j = 0; j < H; ++j) {
                        az += uz[o * H + j] * h[j];
                        ar += ur[o * H + j] * h[j];
                        hh += uh[o * H + j] * h[j];
                        tick(6);
                    }
                    const float z = 1.0f / (1.0f + std::exp(-az));  // 1
                    const float r = 1.0f / (1.0f + std::exp(-ar));  // 1
                    const float n = std::tanh(ah + r * hh);          // 3
                    y[o] = (1.0f - z) * n + z * h[o];                 // 4
                    tick(9);
                }
                std::copy(y.begin(), y.end(), h.begin());
                break;
            }
            case LayerKind::batchnorm1d: {
                auto m = l.param("running_mean").data();
                auto g = l.param("gamma").data();
                auto be = l.param("beta").data();
                const auto& inv = bn_inv_[li];
                for (std::size_t c = 0; c < n_out; ++c) {
                    y[c] = (x[c] - m[c]) * inv[c] * g[c] + be[c];
                    tick(4);
                }
                break;
            }
            case LayerKind::activation:
                for (std::size_t c = 0; c < n_out; ++c) {
                    switch (l.spec.activation) {
                        case Activation::identity: y[c] = x[c]; break;
                        case Activation::relu: y[c] = x[c] > 0.0f ? x[c] : 0.0f; tick(1); break;
                        case Activation::tanh: y[c] = std::tanh(x[c]); tick(1); break;
                        case Activation::sigmoid: y[c] = 1.0f / (1.0f + std::exp(-x[c])); tick(1); break;
                    }
                }
                break;
            case LayerKind::add:
                std::copy(x.begin(), x.end(), y.begin());
                for (std::size_t k = 1; k < l.inputs.size(); ++k) {
                    auto o = in(l.inputs[k]);
                    for (std::size_t c = 0; c < n_out; ++c) {
                        y[c] += o[c];
                        tick(1);
                    }
                }
                break;
            case LayerKind::gate: {
                auto g = in(l.inputs[1]);
                for (std::size_t c = 0; c < n_out; ++c) {
                    y[c] = std::tanh(x[c]) / (1.0f + std::exp(-g[c]));
                    tick(3);
                }
                break;
            }
        }
    }
    return ops;
}

}  // namespace ulga
