// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <tuple>
#include <unordered_map>

#include "ulga/embed.hpp"

namespace ulga {

const char* to_string(Selection s) { return s == Selection::local ? "local" : "global"; }
const char* to_string(PruneMode m) { return m == PruneMode::mask ? "mask" : "trim"; }

Selection selection_from_string(std::string_view s) {
    for (auto k : {Selection::local, Selection::global})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown selection '" + std::string(s) + "' (expected local or global)");
}

PruneMode prune_mode_from_string(std::string_view s) {
    for (auto k : {PruneMode::mask, PruneMode::trim})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown prune mode '" + std::string(s) + "' (expected mask or trim)");
}

namespace {

void check_fraction(double fraction, const char* what) {
    if (!(fraction >= 0.0 && fraction < 1.0))
        throw ConfigError(std::string(what) + ": fraction must be in [0, 1), got " + std::to_string(fraction));
}

std::size_t rounded(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

// ---------------------------------------------------------------------------

TrimPlan select_units(const ScoreTable& scores, double fraction, Selection selection, const Network& net,
                      std::size_t min_units) {
    check_fraction(fraction, "select_units");
    if (min_units < 1) throw ConfigError("select_units: min_units must be at least 1");
    TrimPlan plan;
    if (fraction == 0.0) return plan;

    std::map<std::pair<LayerId, std::size_t>, double> lookup;
    for (const auto& s : scores) lookup[{s.layer, s.unit}] = s.scaled;

    struct Group {
        std::vector<LayerId> layers;
        std::vector<double> mean;
        std::vector<std::size_t> order;  // units by (mean, index)
    };
    std::vector<Group> groups;
    for (const auto& members : net.trim_groups()) {
        Group g;
        g.layers = members;
        const std::size_t n = net.layer(members[0]).spec.n_out;
        g.mean.assign(n, 0.0);
        for (LayerId id : members)
            for (std::size_t u = 0; u < n; ++u) {
                auto it = lookup.find({id, u});
                if (it == lookup.end())
                    throw ConfigError("select_units: no score for unit " + std::to_string(u) + " of layer '" +
                                      net.layer(id).name + "'");
                g.mean[u] += it->second / static_cast<double>(members.size());
            }
        g.order.resize(n);
        for (std::size_t u = 0; u < n; ++u) g.order[u] = u;
        std::stable_sort(g.order.begin(), g.order.end(),
                         [&](std::size_t a, std::size_t b) { return g.mean[a] < g.mean[b]; });
        groups.push_back(std::move(g));
    }

    std::vector<std::vector<std::size_t>> removed(groups.size());
    auto capacity = [&](std::size_t gi) {
        const std::size_t n = groups[gi].mean.size();
        return n > min_units ? n - min_units : 0;
    };
    if (selection == Selection::local) {
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const std::size_t r = std::min(rounded(fraction, groups[gi].mean.size()), capacity(gi));
            removed[gi].assign(groups[gi].order.begin(), groups[gi].order.begin() + static_cast<std::ptrdiff_t>(r));
        }
    } else {
        struct Candidate {
            double score, position;
            LayerId first;
            std::size_t group, unit;
        };
        std::vector<Candidate> pool;
        std::size_t total = 0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const std::size_t n = groups[gi].mean.size();
            total += n;
            for (std::size_t p = 0; p < n; ++p) {
                const std::size_t u = groups[gi].order[p];
                pool.push_back({groups[gi].mean[u], static_cast<double>(p) / static_cast<double>(n),
                                groups[gi].layers[0], gi, u});
            }
        }
        std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
            return std::tie(a.score, a.position, a.first, a.unit) < std::tie(b.score, b.position, b.first, b.unit);
        });
        const std::size_t target = rounded(fraction, total);
        std::size_t taken = 0;
        for (const auto& c : pool) {
            if (taken == target) break;
            if (removed[c.group].size() >= capacity(c.group)) continue;
            removed[c.group].push_back(c.unit);
            ++taken;
        }
    }

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        if (removed[gi].empty()) continue;
        std::sort(removed[gi].begin(), removed[gi].end());
        for (LayerId id : groups[gi].layers) plan.removals[id] = removed[gi];
    }
    if (plan.empty())
        throw ConfigError("select_units: no unit can be removed at fraction " + std::to_string(fraction) +
                          " while keeping " + std::to_string(min_units) + " unit(s) per group");
    return plan;
}

PruneMask select_weights(const Network& net, double fraction, Selection selection) {
    check_fraction(fraction, "select_weights");
    PruneMask mask = net.mask() ? *net.mask() : net.full_mask();
    if (fraction == 0.0) return mask;

    struct Candidate {
        float magnitude;
        std::size_t layer, param, index;
    };
    auto less = [](const Candidate& a, const Candidate& b) {
        return std::tie(a.magnitude, a.layer, a.param, a.index) < std::tie(b.magnitude, b.layer, b.param, b.index);
    };
    std::vector<std::vector<Candidate>> pools(selection == Selection::local ? net.size() : 1);
    for (std::size_t i = 0; i < net.size(); ++i)
        for (std::size_t p = 0; p < net.layer(i).params.size(); ++p) {
            const auto& bits = mask.bits[i][p];
            if (bits.empty()) continue;
            const auto values = net.layer(i).params[p].value.data();
            for (std::size_t k = 0; k < bits.size(); ++k)
                if (bits[k]) pools[selection == Selection::local ? i : 0].push_back({std::abs(values[k]), i, p, k});
        }
    std::size_t dropped = 0;
    for (auto& pool : pools) {
        const std::size_t r = rounded(fraction, pool.size());
        if (r == 0) continue;
        std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(r - 1), pool.end(), less);
        std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(r), less);
        for (std::size_t j = 0; j < r; ++j) mask.bits[pool[j].layer][pool[j].param][pool[j].index] = 0;
        dropped += r;
    }
    if (dropped == 0)
        throw ConfigError("select_weights: no weight can be removed at fraction " + std::to_string(fraction));
    return mask;
}

double prunability_from_mask(const Network& net, const PruneMask& mask) {
    if (mask.bits.size() != net.size()) throw ShapeError("prunability: mask does not match the network");
    const std::size_t total = net.trimmable_unit_count();
    if (total == 0) return 0.0;
    std::size_t removable = 0;
    for (const auto& group : net.trim_groups()) {
        const std::size_t n = net.layer(group[0]).spec.n_out;
        std::vector<std::uint8_t> dead(n, 1);
        for (LayerId id : group) {
            const Layer& l = net.layer(id);
            if (mask.bits[id].size() != l.params.size()) throw ShapeError("prunability: mask does not match the network");
            for (std::size_t p = 0; p < l.params.size(); ++p) {
                const auto& prm = l.params[p];
                if (!prm.is_weight || prm.roles.empty() || prm.roles[0] != AxisRole::out) continue;
                const auto& bits = mask.bits[id][p];
                if (bits.empty()) {
                    std::fill(dead.begin(), dead.end(), 0);
                    continue;
                }
                if (bits.size() != prm.value.numel()) throw ShapeError("prunability: mask does not match the network");
                const std::size_t row = bits.size() / n;
                for (std::size_t u = 0; u < n; ++u)
                    for (std::size_t k = 0; k < row && dead[u]; ++k)
                        if (bits[u * row + k]) dead[u] = 0;
            }
        }
        removable += static_cast<std::size_t>(std::count(dead.begin(), dead.end(), 1));
    }
    return static_cast<double>(removable) / static_cast<double>(total);
}

void rewind(Network& net, const Network& snapshot) {
    if (snapshot.size() != net.size() || snapshot.space_count() != net.space_count())
        throw ShapeError("rewind: snapshot has a different topology");
    // Index of each surviving unit of a space inside the snapshot.
    std::vector<std::vector<std::size_t>> where(net.space_count());
    for (std::size_t s = 0; s < net.space_count(); ++s) {
        std::unordered_map<std::size_t, std::size_t> pos;
        const auto& snap = snapshot.space_origin(s);
        for (std::size_t j = 0; j < snap.size(); ++j) pos[snap[j]] = j;
        for (std::size_t origin : net.space_origin(s)) {
            auto it = pos.find(origin);
            if (it == pos.end()) throw ShapeError("rewind: snapshot lacks a surviving unit");
            where[s].push_back(it->second);
        }
    }
    for (std::size_t i = 0; i < net.size(); ++i) {
        Layer& l = net.layer(i);
        const Layer& src = snapshot.layer(i);
        if (l.spec.kind != src.spec.kind || l.params.size() != src.params.size())
            throw ShapeError("rewind: layer '" + l.name + "' differs from the snapshot");
        for (std::size_t p = 0; p < l.params.size(); ++p) {
            Parameter& dst = l.params[p];
            const Parameter& from = src.params[p];
            if (dst.name != from.name || dst.roles != from.roles)
                throw ShapeError("rewind: parameter '" + dst.name + "' of layer '" + l.name + "' differs");
            std::vector<const std::vector<std::size_t>*> keep;
            for (AxisRole r : from.roles)
                keep.push_back(r == AxisRole::out  ? &where[net.out_space(i)]
                               : r == AxisRole::in ? &where[net.in_space(i)]
                                                   : nullptr);
            const auto values = gather_axes(from.value.data(), from.value.shape(), keep);
            if (values.size() != dst.value.numel())
                throw ShapeError("rewind: parameter '" + dst.name + "' of layer '" + l.name + "' has the wrong size");
            std::copy(values.begin(), values.end(), dst.value.data_mut().begin());
        }
    }
    if (net.mask()) net.enforce_mask();
}

std::uint64_t live_weight_count(const Network& net) {
    if (net.mask()) return net.mask()->kept();
    return net.weight_count();
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("training: batch_size must be positive");
    if (patience == 0) throw ConfigError("training: patience must be positive");
    if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) throw ConfigError("training: learning rate must be positive");
    if (!(adam.weight_decay >= 0.0)) throw ConfigError("training: weight_decay must be nonnegative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw ConfigError("training: Adam betas must be in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("training: Adam eps must be positive");
}

namespace {

template <class F>
void for_each_batch(const std::vector<AudioExample>& items, const std::vector<std::size_t>& order,
                    std::size_t batch_size, F f) {
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::vector<const AudioExample*> batch;
        for (std::size_t j = start; j < std::min(order.size(), start + batch_size); ++j)
            batch.push_back(&items[order[j]]);
        f(std::span<const AudioExample* const>(batch));
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double evaluate(Network& net, const ModelConfig& cfg, const std::vector<AudioExample>& items, std::size_t batch_size) {
    if (items.empty()) throw ConfigError("evaluate: empty dataset");
    if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double total = 0.0;
    for_each_batch(items, order, batch_size, [&](std::span<const AudioExample* const> batch) {
        const ModelBatch b = make_batch(cfg, batch);
        total += model_loss(net, cfg, b, Mode::eval).item() * static_cast<double>(batch.size());
    });
    return total / static_cast<double>(items.size());
}

TrainResult train_model(Network& net, const ModelConfig& cfg, const DataSplit& data, const TrainConfig& tc,
                        const std::function<void(std::size_t, const Network&)>& on_step) {
    tc.validate();
    if (data.train.empty() || data.valid.empty()) throw ConfigError("training: empty train or validation split");
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    AdamW opt(net.trainable_params(), tc.adam);
    double best = std::numeric_limits<double>::infinity();
    Network best_net;
    std::size_t since = 0, plateaus = 0;
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(tc.seed, epoch));
        rng.shuffle(order);
        if (tc.max_steps_per_epoch > 0 && order.size() > tc.max_steps_per_epoch * tc.batch_size)
            order.resize(tc.max_steps_per_epoch * tc.batch_size);
        for_each_batch(data.train, order, tc.batch_size, [&](std::span<const AudioExample* const> batch) {
            if (on_step) on_step(result.steps, net);
            const ModelBatch b = make_batch(cfg, batch);
            Tensor loss = model_loss(net, cfg, b, Mode::train);
            if (!std::isfinite(loss.item()))
                throw NumericError("training diverged: non-finite loss at step " + std::to_string(result.steps));
            backward(loss);
            net.mask_gradients();
            opt.step();
            net.enforce_mask();
            ++result.steps;
        });
        ++result.epochs;
        const double v = evaluate(net, cfg, data.valid, tc.batch_size);
        if (!std::isfinite(v)) throw NumericError("training diverged: non-finite validation loss");
        if (v < best) {
            best = v;
            best_net = net;
            since = 0;
            plateaus = 0;
        } else if (++since >= tc.patience) {
            if (++plateaus >= 2) break;
            opt.set_lr(opt.lr() * 0.5);
            since = 0;
        }
    }
    if (result.epochs == 0) {
        best = evaluate(net, cfg, data.valid, tc.batch_size);
    } else {
        net = std::move(best_net);
    }
    result.best_valid_loss = best;
    result.seconds = seconds_since(t0);
    return result;
}

// ---------------------------------------------------------------------------

void ImpConfig::validate() const {
    if (!(prune_fraction > 0.0 && prune_fraction < 1.0)) throw ConfigError("imp: prune_fraction must be in (0, 1)");
    if (min_units < 1) throw ConfigError("imp: min_units must be at least 1");
    if (stop_error_multiplier && !(*stop_error_multiplier > 0.0))
        throw ConfigError("imp: stop_error_multiplier must be positive");
    if (mode == PruneMode::mask && criterion != Criterion::magnitude)
        throw ConfigError("imp: mask mode ranks individual weights by magnitude; criterion must be magnitude");
    train.validate();
}

Selection ImpConfig::selection_at(std::size_t iteration) const {
    if (global_until) return iteration < *global_until ? Selection::global : Selection::local;
    return selection;
}

namespace {

ScoringSet scoring_set(const ModelConfig& cfg, const std::vector<AudioExample>& items, std::size_t batch_size) {
    ScoringSet set;
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for_each_batch(items, order, batch_size, [&](std::span<const AudioExample* const> batch) {
        set.push_back(scoring_batch(cfg, make_batch(cfg, batch)));
    });
    return set;
}

}  // namespace

ImpTrace run_imp(Network& net, const ModelConfig& cfg, const DataSplit& data, const ImpConfig& imp,
                 const ImpCallback& on_iteration) {
    imp.validate();
    if (data.train.empty() || data.valid.empty() || data.test.empty())
        throw ConfigError("imp: train, validation and test splits must be nonempty");
    ImpTrace trace;
    const double initial_weights = static_cast<double>(std::max<std::uint64_t>(1, live_weight_count(net)));
    const double initial_units = static_cast<double>(std::max<std::size_t>(1, net.trimmable_unit_count()));
    double baseline_test = 0.0;

    auto record = [&](std::size_t iteration, const TrainResult& tr) {
        ImpRecord r;
        r.iteration = iteration;
        r.weights = live_weight_count(net);
        r.weights_remaining_frac = static_cast<double>(r.weights) / initial_weights;
        if (imp.mode == PruneMode::mask) {
            r.units_remaining_frac = net.mask() ? 1.0 - prunability_from_mask(net, *net.mask()) : 1.0;
        } else {
            r.units_remaining_frac = static_cast<double>(net.trimmable_unit_count()) / initial_units;
        }
        for (const auto& l : net.layers())
            if (l.is_unit_layer()) r.units_per_layer.push_back(l.spec.n_out);
        r.valid_loss = evaluate(net, cfg, data.valid, imp.train.batch_size);
        r.test_loss = evaluate(net, cfg, data.test, imp.train.batch_size);
        if (iteration == 0) baseline_test = r.test_loss;
        r.test_error_multiplier = baseline_test > 0.0 ? r.test_loss / baseline_test : 1.0;
        r.flops_per_second_audio = count_flops(net, cfg);
        r.disk_bytes = disk_size(net);
        r.rw_accesses = rw_memory(net, cfg);
        r.train_seconds = tr.seconds;
        r.train_steps = tr.steps;
        trace.records.push_back(r);
        if (on_iteration) on_iteration(r, net);
        return r;
    };

    Network snapshot;
    bool captured = false;
    if (imp.rewind_step == 0) {
        snapshot = net;
        captured = true;
    }
    TrainResult dense;
    TrainConfig tc = imp.train;
    try {
        dense = train_model(net, cfg, data, tc, [&](std::size_t step, const Network& n) {
            if (!captured && step == imp.rewind_step) {
                snapshot = n;
                captured = true;
            }
        });
    } catch (const NumericError& e) {
        trace.aborted = true;
        trace.stop_reason = e.what();
        return trace;
    }
    if (!captured)
        throw ConfigError("imp: rewind_step " + std::to_string(imp.rewind_step) +
                          " is not below the number of training steps (" + std::to_string(dense.steps) + ")");
    record(0, dense);

    for (std::size_t it = 1; it <= imp.iterations; ++it) {
        const Selection sel = imp.selection_at(it);
        if (imp.mode == PruneMode::mask) {
            PruneMask mask;
            try {
                mask = select_weights(net, imp.prune_fraction, sel);
            } catch (const ConfigError& e) {
                trace.stop_reason = e.what();
                break;
            }
            net.mask_apply(mask);
        } else {
            CriteriaOptions co = imp.criteria;
            co.seed = mix_seed(imp.criteria.seed, it);
            const ScoreTable scores =
                score_network(net, imp.criterion, scoring_set(cfg, data.valid, imp.train.batch_size), imp.scaling, co);
            TrimPlan plan;
            try {
                plan = select_units(scores, imp.prune_fraction, sel, net, imp.min_units);
            } catch (const ConfigError& e) {
                trace.stop_reason = e.what();
                break;
            }
            net.trim(plan);
        }
        rewind(net, snapshot);
        tc.seed = mix_seed(imp.train.seed, it);
        TrainResult tr;
        try {
            tr = train_model(net, cfg, data, tc);
        } catch (const NumericError& e) {
            trace.aborted = true;
            trace.stop_reason = "iteration " + std::to_string(it) + ": " + e.what();
            return trace;
        }
        const ImpRecord r = record(it, tr);
        if (imp.stop_error_multiplier && r.test_error_multiplier > *imp.stop_error_multiplier) {
            trace.stop_reason = "test error multiplier exceeded the stop threshold";
            break;
        }
    }
    return trace;
}

void write_trace_csv(std::ostream& os, const ImpTrace& trace) {
    os << "iteration,weights_remaining_frac,units_remaining_frac,valid_loss,test_error_multiplier,"
          "flops_per_second_audio,disk_bytes,rw_accesses\n";
    char buf[320];
    for (const auto& r : trace.records) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%llu,%.9g\n", r.iteration,
                      r.weights_remaining_frac, r.units_remaining_frac, r.valid_loss, r.test_error_multiplier,
                      r.flops_per_second_audio, static_cast<unsigned long long>(r.disk_bytes), r.rw_accesses);
        os << buf;
    }
}

void write_timing_csv(std::ostream& os, const ImpTrace& trace) {
    os << "iteration,train_seconds,train_steps\n";
    char buf[128];
    for (const auto& r : trace.records) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%zu\n", r.iteration, r.train_seconds, r.train_steps);
        os << buf;
    }
}

}  // namespace ulga
