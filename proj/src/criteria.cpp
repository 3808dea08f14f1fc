// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>

namespace ulga {

const char* to_string(Criterion c) {
    switch (c) {
        case Criterion::magnitude: return "magnitude";
        case Criterion::gradient: return "gradient";
        case Criterion::activation: return "activation";
        case Criterion::normalization: return "normalization";
        case Criterion::information: return "information";
    }
    return "?";
}

const char* to_string(Scaling s) {
    switch (s) {
        case Scaling::none: return "none";
        case Scaling::layer_max: return "layer_max";
        case Scaling::fan_scaled: return "fan_scaled";
    }
    return "?";
}

Criterion criterion_from_string(std::string_view s) {
    for (auto c : {Criterion::magnitude, Criterion::gradient, Criterion::activation, Criterion::normalization,
                   Criterion::information})
        if (s == to_string(c)) return c;
    throw ConfigError("unknown criterion '" + std::string(s) + "'");
}

Scaling scaling_from_string(std::string_view s) {
    for (auto k : {Scaling::none, Scaling::layer_max, Scaling::fan_scaled})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown scaling scheme '" + std::string(s) + "'");
}

ScoringBatch scoring_batch(const ModelConfig& cfg, const ModelBatch& batch) {
    auto shared = std::make_shared<const ModelBatch>(batch);
    ScoringBatch s;
    s.input = batch.input;
    s.target = batch.target;
    s.samples_per_step = samples_per_step(cfg);
    s.loss = [cfg, shared](const Tensor& out) {
        if (cfg.kind == ModelKind::tiny_wavenet) return nll_loss_wavenet(out, shared->classes);
        return multiscale_spectral_loss(shared->target, render(cfg, out, *shared));
    };
    return s;
}

namespace {

void require_unit_layer(const Network& net, LayerId layer, const char* what) {
    if (layer >= net.size()) throw ConfigError(std::string(what) + ": layer index out of range");
    if (!net.layer(layer).is_unit_layer())
        throw ConfigError(std::string(what) + ": layer '" + net.layer(layer).name + "' (" +
                          to_string(net.layer(layer).spec.kind) + ") has no units to score");
}

void require_data(const ScoringSet& data, const char* what) {
    if (data.empty()) throw ConfigError(std::string(what) + ": empty validation set");
}

// Incoming weight tensors of a unit layer: weights indexed by output unit on
// axis 0, excluding recurrent matrices.
std::vector<const Parameter*> incoming(const Layer& l) {
    std::vector<const Parameter*> out;
    for (const auto& p : l.params)
        if (p.is_weight && !p.roles.empty() && p.roles[0] == AxisRole::out && p.name[0] != 'U') out.push_back(&p);
    return out;
}

template <class Get>
std::vector<double> row_sums(const Layer& l, Get values) {
    std::vector<double> s(l.spec.n_out, 0.0);
    for (const Parameter* p : incoming(l)) {
        const auto v = values(*p);
        const std::size_t row = v.size() / l.spec.n_out;
        for (std::size_t u = 0; u < l.spec.n_out; ++u)
            for (std::size_t k = 0; k < row; ++k) s[u] += std::abs(static_cast<double>(v[u * row + k]));
    }
    return s;
}

}  // namespace

std::vector<double> score_magnitude(const Network& net, LayerId layer) {
    require_unit_layer(net, layer, "magnitude criterion");
    return row_sums(net.layer(layer), [](const Parameter& p) { return p.value.data(); });
}

std::vector<std::vector<double>> score_gradient_all(Network& net, const ScoringSet& data, GradientAccumulation acc) {
    require_data(data, "gradient criterion");
    std::vector<std::vector<double>> scores(net.size());
    // Accumulated per-element gradient magnitudes for every incoming weight.
    std::map<const Parameter*, std::vector<double>> total;
    for (LayerId i = 0; i < net.size(); ++i)
        if (net.layer(i).is_unit_layer())
            for (const Parameter* p : incoming(net.layer(i))) total[p].assign(p->value.numel(), 0.0);
    auto params = net.trainable_params();
    auto clear = [&] {
        for (Tensor* t : params) t->zero_grad();
    };
    auto harvest = [&](bool absolute) {
        for (auto& [p, acc_values] : total) {
            if (!p->value.has_grad()) continue;
            const auto g = p->value.grad();
            for (std::size_t k = 0; k < g.size(); ++k)
                acc_values[k] += absolute ? std::abs(static_cast<double>(g[k])) : static_cast<double>(g[k]);
        }
    };
    clear();
    for (const auto& b : data) {
        if (!b.loss) throw ConfigError("gradient criterion: batch has no loss");
        backward(b.loss(net.forward(b.input, Mode::eval)));
        if (acc == GradientAccumulation::per_batch_abs) {
            harvest(true);
            clear();
        }
    }
    if (acc == GradientAccumulation::whole_dataset) {
        harvest(false);
        for (auto& [p, v] : total)
            for (auto& x : v) x = std::abs(x);
    }
    clear();
    for (LayerId i = 0; i < net.size(); ++i) {
        const Layer& l = net.layer(i);
        if (!l.is_unit_layer()) continue;
        scores[i].assign(l.spec.n_out, 0.0);
        for (const Parameter* p : incoming(l)) {
            const auto& v = total[p];
            const std::size_t row = v.size() / l.spec.n_out;
            for (std::size_t u = 0; u < l.spec.n_out; ++u)
                for (std::size_t k = 0; k < row; ++k) scores[i][u] += v[u * row + k];
        }
    }
    return scores;
}

std::vector<double> score_gradient(Network& net, LayerId layer, const ScoringSet& data, GradientAccumulation acc) {
    require_unit_layer(net, layer, "gradient criterion");
    return score_gradient_all(net, data, acc)[layer];
}

LayerId representative_node(const Network& net, LayerId layer) {
    LayerId cur = layer;
    for (;;) {
        const auto next = net.consumers(cur);
        if (next.size() != 1) return cur;
        const Layer& n = net.layer(next[0]);
        if (n.spec.kind != LayerKind::batchnorm1d && n.spec.kind != LayerKind::activation) return cur;
        cur = next[0];
    }
}

std::size_t fan_in(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::linear: return spec.n_in;
        case LayerKind::conv1d: return spec.n_in * spec.kernel;
        case LayerKind::gru: return spec.n_in + spec.n_out;
        default: return spec.n_in;
    }
}

namespace {

// Activations of `node` for every batch, [B, C, steps] each.
std::vector<Tensor> node_outputs(Network& net, LayerId node, const ScoringSet& data) {
    std::vector<Tensor> out;
    out.reserve(data.size());
    for (const auto& b : data) out.push_back(net.forward_all(b.input, Mode::eval)[node].detach());
    return out;
}

}  // namespace

std::vector<double> score_activation(Network& net, LayerId layer, const ScoringSet& data) {
    require_unit_layer(net, layer, "activation criterion");
    require_data(data, "activation criterion");
    const LayerId node = representative_node(net, layer);
    std::vector<double> s(net.layer(layer).spec.n_out, 0.0);
    for (const Tensor& a : node_outputs(net, node, data)) {
        const std::size_t B = a.dim(0), C = a.dim(1), T = a.dim(2);
        const auto v = a.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) s[c] += std::abs(static_cast<double>(v[(b * C + c) * T + t]));
    }
    return s;
}

std::pair<LayerId, std::vector<double>> score_normalization(const Network& net, LayerId bn) {
    if (bn >= net.size() || net.layer(bn).spec.kind != LayerKind::batchnorm1d)
        throw ConfigError("normalization criterion: node is not a batchnorm layer");
    int cur = net.layer(bn).inputs[0];
    while (cur != kNetworkInput && net.layer(static_cast<LayerId>(cur)).spec.kind == LayerKind::activation)
        cur = net.layer(static_cast<LayerId>(cur)).inputs[0];
    if (cur == kNetworkInput || !net.layer(static_cast<LayerId>(cur)).is_unit_layer())
        throw ConfigError("normalization criterion: batchnorm '" + net.layer(bn).name +
                          "' has no preceding parameterized layer");
    std::vector<double> s;
    for (float g : net.layer(bn).param("gamma").data()) s.push_back(std::abs(static_cast<double>(g)));
    return {static_cast<LayerId>(cur), s};
}

namespace {

// Step-aligned target features [N x d] for the information criterion, with
// the (batch, step) index each row belongs to.
struct InfoTargets {
    std::vector<double> y;
    std::size_t dims = 0;
    std::vector<std::pair<std::size_t, std::size_t>> rows;  // (batch item offset, step)
};

InfoTargets info_targets(const ScoringSet& data, const CriteriaOptions& opt) {
    InfoTargets out;
    std::size_t item_offset = 0;
    for (const auto& b : data) {
        const std::size_t B = b.input.dim(0), steps = b.input.dim(2);
        if (b.features.defined()) {
            const Tensor& f = b.features;
            if (f.rank() != 3 || f.dim(0) != B || f.dim(2) != steps)
                throw ShapeError("information criterion: features must be [B, d, steps]");
            const std::size_t d = f.dim(1);
            if (out.dims != 0 && out.dims != d) throw ShapeError("information criterion: feature width varies");
            out.dims = d;
            const auto v = f.data();
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t t = 0; t < steps; ++t) {
                    for (std::size_t k = 0; k < d; ++k) out.y.push_back(v[(i * d + k) * steps + t]);
                    out.rows.push_back({item_offset + i, t});
                }
        } else {
            if (!b.target.defined() || b.target.rank() != 2 || b.target.dim(0) != B)
                throw ShapeError("information criterion: batch carries neither features nor a [B, T] target");
            const std::size_t w = opt.info_window, sps = std::max<std::size_t>(1, b.samples_per_step);
            const std::size_t hop = std::max(sps, opt.info_min_hop);
            if (b.target.dim(1) < w)
                throw ShapeError("information criterion: targets shorter than the analysis window " +
                                 std::to_string(w));
            const Tensor spec = power_spectrogram(b.target.detach(), w, hop);  // [B, F, w/2+1]
            const std::size_t F = spec.dim(1), bins = spec.dim(2);
            const std::size_t d = std::min(opt.info_max_bins, bins);
            if (out.dims != 0 && out.dims != d) throw ShapeError("information criterion: feature width varies");
            out.dims = d;
            const auto v = spec.data();
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t f = 0; f < F; ++f) {
                    const std::size_t step = std::min(steps - 1, (f * hop + w / 2) / sps);
                    for (std::size_t k = 0; k < d; ++k) {
                        const std::size_t bin = d == 1 ? 0 : k * (bins - 1) / (d - 1);
                        out.y.push_back(std::log(static_cast<double>(v[(i * F + f) * bins + bin]) + 1e-6));
                    }
                    out.rows.push_back({item_offset + i, step});
                }
        }
        item_offset += B;
    }
    return out;
}

std::vector<std::vector<double>> info_scores_for_nodes(Network& net, const std::vector<LayerId>& layers,
                                                       const ScoringSet& data, const CriteriaOptions& opt) {
    require_data(data, "information criterion");
    opt.mi.validate();
    const InfoTargets tg = info_targets(data, opt);
    // Gather all representative activations with one forward per batch.
    std::vector<LayerId> nodes;
    for (LayerId l : layers) nodes.push_back(representative_node(net, l));
    std::vector<std::vector<Tensor>> acts(layers.size());
    for (const auto& b : data) {
        const auto all = net.forward_all(b.input, Mode::eval);
        for (std::size_t i = 0; i < layers.size(); ++i) acts[i].push_back(all[nodes[i]].detach());
    }
    // Item offset -> (batch, item) lookup.
    std::vector<std::pair<std::size_t, std::size_t>> where;
    for (std::size_t bi = 0; bi < data.size(); ++bi)
        for (std::size_t i = 0; i < data[bi].input.dim(0); ++i) where.push_back({bi, i});

    std::vector<std::vector<double>> out(layers.size());
    const std::size_t n = tg.rows.size();
    std::vector<double> z(n);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const std::size_t units = net.layer(layers[li]).spec.n_out;
        out[li].assign(units, 0.0);
        for (std::size_t u = 0; u < units; ++u) {
            double mean = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const auto [bi, item] = where[tg.rows[r].first];
                const Tensor& a = acts[li][bi];
                const std::size_t C = a.dim(1), T = a.dim(2);
                z[r] = a.data()[(item * C + u) * T + tg.rows[r].second];
                mean += z[r];
            }
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (double v : z) var += (v - mean) * (v - mean);
            const double sd = std::sqrt(var / static_cast<double>(n));
            if (!(sd > 0.0)) continue;  // a constant unit carries no information
            Rng rng(mix_seed(opt.seed, (static_cast<std::uint64_t>(layers[li]) << 20) + u));
            const double sigma = opt.mi.noise_sigma_relative * sd;
            for (double& v : z) v += sigma * rng.normal();
            out[li][u] = std::max(0.0, estimate_mi(z, tg.y, tg.dims, opt.mi));
        }
    }
    return out;
}

}  // namespace

std::vector<double> score_information(Network& net, LayerId layer, const ScoringSet& data,
                                      const CriteriaOptions& opt) {
    require_unit_layer(net, layer, "information criterion");
    return info_scores_for_nodes(net, {layer}, data, opt)[0];
}

ScoreTable score_network(Network& net, Criterion criterion, const ScoringSet& data, Scaling scaling,
                         const CriteriaOptions& opt) {
    std::vector<LayerId> layers;
    for (const auto& g : net.trim_groups()) layers.insert(layers.end(), g.begin(), g.end());
    std::sort(layers.begin(), layers.end());

    std::vector<std::vector<double>> raw(layers.size());
    switch (criterion) {
        case Criterion::magnitude:
            for (std::size_t i = 0; i < layers.size(); ++i) raw[i] = score_magnitude(net, layers[i]);
            break;
        case Criterion::gradient: {
            const auto all = score_gradient_all(net, data, opt.accumulation);
            for (std::size_t i = 0; i < layers.size(); ++i) raw[i] = all[layers[i]];
            break;
        }
        case Criterion::activation:
            for (std::size_t i = 0; i < layers.size(); ++i) raw[i] = score_activation(net, layers[i], data);
            break;
        case Criterion::normalization: {
            std::map<LayerId, std::vector<double>> attributed;
            for (LayerId i = 0; i < net.size(); ++i)
                if (net.layer(i).spec.kind == LayerKind::batchnorm1d) {
                    auto [unit_layer, s] = score_normalization(net, i);
                    attributed[unit_layer] = std::move(s);
                }
            for (std::size_t i = 0; i < layers.size(); ++i) {
                auto it = attributed.find(layers[i]);
                if (it == attributed.end())
                    throw ConfigError("normalization criterion: layer '" + net.layer(layers[i]).name +
                                      "' is not followed by a batchnorm layer");
                raw[i] = it->second;
            }
            break;
        }
        case Criterion::information:
            raw = info_scores_for_nodes(net, layers, data, opt);
            break;
    }
    ScoreTable table;
    for (std::size_t i = 0; i < layers.size(); ++i)
        for (std::size_t u = 0; u < raw[i].size(); ++u) {
            if (!std::isfinite(raw[i][u]))
                throw NumericError("criterion " + std::string(to_string(criterion)) + ": non-finite score in layer '" +
                                   net.layer(layers[i]).name + "'");
            table.push_back({layers[i], u, raw[i][u], raw[i][u], criterion});
        }
    scale_scores(table, scaling, net);
    return table;
}

void scale_scores(ScoreTable& scores, Scaling scaling, const Network& net) {
    std::map<LayerId, double> layer_max;
    for (const auto& s : scores) {
        auto& m = layer_max[s.layer];
        m = std::max(m, s.raw);
    }
    for (auto& s : scores) {
        switch (scaling) {
            case Scaling::none: s.scaled = s.raw; break;
            case Scaling::layer_max: {
                const double m = layer_max[s.layer];
                s.scaled = m > 0.0 ? s.raw / m : 0.0;
                break;
            }
            case Scaling::fan_scaled:
                s.scaled = s.raw * std::sqrt(1.0 / static_cast<double>(fan_in(net.layer(s.layer).spec)));
                break;
        }
    }
}

void write_scores_csv(std::ostream& os, const ScoreTable& scores) {
    os << "layer_id,unit,criterion,raw,scaled\n";
    char buf[160];
    for (const auto& s : scores) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.9g,%.9g\n", s.layer, s.unit, to_string(s.criterion), s.raw,
                      s.scaled);
        os << buf;
    }
}

}  // namespace ulga
