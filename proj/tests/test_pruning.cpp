// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "random_nets.hpp"
#include "ulga/pruning.hpp"

using namespace ulga;

namespace {

// Two trimmable layers of `n` units feeding a protected output layer.
Network two_layer_net(std::size_t n, std::uint64_t seed = 1) {
    Rng rng(seed);
    Network net(4);
    net.add_layer("a", LayerSpec::linear(4, n), {kNetworkInput}, &rng);
    net.add_layer("a_act", LayerSpec::act(n, Activation::relu), {0});
    net.add_layer("b", LayerSpec::linear(n, n), {1}, &rng);
    net.add_layer("b_act", LayerSpec::act(n, Activation::relu), {2});
    net.add_layer("out", LayerSpec::linear(n, 2), {3}, &rng);
    return net;
}

ScoreTable table_from(const std::map<LayerId, std::vector<double>>& s) {
    ScoreTable t;
    for (const auto& [layer, v] : s)
        for (std::size_t u = 0; u < v.size(); ++u) t.push_back({layer, u, v[u], v[u], Criterion::magnitude});
    return t;
}

ScoreTable random_scores(Rng& rng, const Network& net, bool ties = false) {
    ScoreTable t;
    for (const auto& g : net.trim_groups())
        for (LayerId id : g)
            for (std::size_t u = 0; u < net.layer(id).spec.n_out; ++u) {
                const double v = ties ? 1.0 : rng.uniform();
                t.push_back({id, u, v, v, Criterion::magnitude});
            }
    return t;
}

AudioExample tone(double f0, double amp, std::size_t length) {
    AudioExample ex;
    ex.wave.resize(length);
    for (std::size_t t = 0; t < length; ++t)
        ex.wave[t] = static_cast<float>(amp * std::sin(2.0 * M_PI * f0 * t / 16000.0) +
                                        0.3 * amp * std::sin(4.0 * M_PI * f0 * t / 16000.0));
    const std::size_t frames = (length - 1) / 64 + 1;
    ex.f0.assign(frames, static_cast<float>(f0));
    ex.loudness.assign(frames, static_cast<float>(amp));
    return ex;
}

DataSplit tone_split(std::size_t n_train, std::size_t length) {
    DataSplit d;
    for (std::size_t i = 0; i < n_train; ++i) d.train.push_back(tone(110.0 + 37.0 * i, 0.3 + 0.02 * i, length));
    for (std::size_t i = 0; i < 4; ++i) d.valid.push_back(tone(150.0 + 41.0 * i, 0.35, length));
    for (std::size_t i = 0; i < 2; ++i) d.test.push_back(tone(170.0 + 53.0 * i, 0.3, length));
    return d;
}

std::vector<std::size_t> removal_counts(const TrimPlan& plan, const Network& net) {
    std::vector<std::size_t> c;
    for (const auto& g : net.trim_groups()) {
        auto it = plan.removals.find(g[0]);
        c.push_back(it == plan.removals.end() ? 0 : it->second.size());
    }
    return c;
}

std::string trace_text(const ImpTrace& t) {
    std::ostringstream os;
    write_trace_csv(os, t);
    return os.str();
}

}  // namespace

TEST_CASE("local and global unit selection examples") {
    const Network net = two_layer_net(10);
    std::vector<double> a(10), b(10);
    for (std::size_t u = 0; u < 10; ++u) {
        a[u] = static_cast<double>((u * 7) % 10);
        b[u] = static_cast<double>((u * 3) % 10);
    }
    const TrimPlan local = select_units(table_from({{0, a}, {2, b}}), 0.3, Selection::local, net);
    CHECK(local.removals.at(0) == std::vector<std::size_t>{0, 3, 6});  // scores 0, 1, 2
    CHECK(local.removals.at(2) == std::vector<std::size_t>{0, 4, 7});  // scores 0, 1, 2

    const TrimPlan global =
        select_units(table_from({{0, std::vector<double>(10, 1.0)}, {2, std::vector<double>(10, 0.1)}}), 0.3,
                     Selection::global, net);
    CHECK(global.removals.count(0) == 0);
    CHECK(global.removals.at(2).size() == 6);

    CHECK(select_units(table_from({{0, a}, {2, b}}), 0.0, Selection::local, net).empty());
    CHECK_THROWS_AS(select_units(table_from({{0, a}}), 0.3, Selection::local, net), ConfigError);
    CHECK_THROWS_AS(select_units(table_from({{0, a}, {2, b}}), 1.0, Selection::local, net), ConfigError);

    const Network thin = two_layer_net(1);
    CHECK_THROWS_AS(select_units(table_from({{0, {1.0}}, {2, {1.0}}}), 0.5, Selection::global, thin), ConfigError);
    CHECK_THROWS_AS(select_units(table_from({{0, {1.0}}, {2, {1.0}}}), 0.5, Selection::local, thin), ConfigError);
}

TEST_CASE("global selection respects min_units per group") {
    Rng rng(2);
    Network net(3);
    net.add_layer("small", LayerSpec::linear(3, 3), {kNetworkInput}, &rng);
    net.add_layer("big", LayerSpec::linear(3, 40), {0}, &rng);
    net.add_layer("out", LayerSpec::linear(40, 1), {1}, &rng);
    std::vector<double> big(40, 5.0);
    const TrimPlan plan = select_units(table_from({{0, {0.1, 0.2, 0.3}}, {1, big}}), 0.5, Selection::global, net, 2);
    CHECK(plan.removals.at(0) == std::vector<std::size_t>{0});
    CHECK(plan.removals.at(1).size() == 21);  // round(0.5 * 43) - 1
    CHECK_NOTHROW(net.validate_plan(plan));
}

TEST_CASE("selected plans are valid and count-exact on random networks") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const Network net = testing::random_network(rng);
        const auto groups = net.trim_groups();
        if (groups.empty()) continue;
        const ScoreTable scores = random_scores(rng, net);
        const double f = rng.uniform(0.05, 0.9);
        for (Selection sel : {Selection::local, Selection::global}) {
            TrimPlan plan;
            try {
                plan = select_units(scores, f, sel, net);
            } catch (const ConfigError&) {
                continue;
            }
            CHECK_NOTHROW(net.validate_plan(plan));
            const auto counts = removal_counts(plan, net);
            std::size_t total = 0, n_all = 0;
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const std::size_t n = net.layer(groups[g][0]).spec.n_out;
                n_all += n;
                total += counts[g];
                CHECK(counts[g] <= n - 1);
                if (sel == Selection::local) CHECK(counts[g] == std::min<std::size_t>(std::llround(f * n), n - 1));
            }
            if (sel == Selection::global) CHECK(total <= static_cast<std::size_t>(std::llround(f * n_all)));
            // Members of a group lose the same units.
            for (const auto& g : groups)
                for (LayerId id : g) {
                    const bool a = plan.removals.count(id) > 0, b = plan.removals.count(g[0]) > 0;
                    CHECK(a == b);
                    if (a && b) CHECK(plan.removals.at(id) == plan.removals.at(g[0]));
                }
        }
    }
}

TEST_CASE("global selection with uniform scores matches local counts") {
    Rng rng(4);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t layers = 2 + rng.below(4), n = 4 + rng.below(40);
        Network net(2);
        int prev = kNetworkInput;
        std::size_t in = 2;
        for (std::size_t l = 0; l < layers; ++l) {
            prev = static_cast<int>(net.add_layer("l" + std::to_string(l), LayerSpec::linear(in, n), {prev}, &rng));
            in = n;
        }
        net.add_layer("out", LayerSpec::linear(n, 1), {prev}, &rng);
        const double f = rng.uniform(0.05, 0.7);
        if (std::llround(f * static_cast<double>(layers * n)) !=
            static_cast<long long>(layers) * std::llround(f * static_cast<double>(n)))
            continue;
        const ScoreTable scores = random_scores(rng, net, true);
        CHECK(removal_counts(select_units(scores, f, Selection::global, net), net) ==
              removal_counts(select_units(scores, f, Selection::local, net), net));
        ++checked;
    }
    CHECK(checked > 50);
}

TEST_CASE("weight selection") {
    Rng rng(5);
    Network net(10);
    net.add_layer("l", LayerSpec::linear(10, 10), {kNetworkInput}, &rng);
    REQUIRE(net.weight_count() == 100);
    PruneMask m = select_weights(net, 0.3, Selection::local);
    CHECK(m.kept() == 70);
    // The 30 smallest magnitudes are gone.
    const auto w = net.layer(0).param("W").data();
    float max_removed = 0.0f, min_kept = 1e9f;
    for (std::size_t k = 0; k < 100; ++k) {
        if (m.bits[0][0][k]) {
            min_kept = std::min(min_kept, std::abs(w[k]));
        } else {
            max_removed = std::max(max_removed, std::abs(w[k]));
        }
    }
    CHECK(max_removed <= min_kept);
    net.mask_apply(m);
    const PruneMask m2 = select_weights(net, 0.3, Selection::global);
    CHECK(m2.kept() == 49);
    for (std::size_t k = 0; k < 100; ++k)
        if (!m.bits[0][0][k]) CHECK(m2.bits[0][0][k] == 0);
    CHECK(select_weights(net, 0.0, Selection::local).kept() == 70);

    // Monotone over many iterations on random networks, for both selections.
    for (int trial = 0; trial < 30; ++trial) {
        Network r = testing::random_network(rng);
        const Selection sel = trial % 2 ? Selection::local : Selection::global;
        PruneMask prev = r.full_mask();
        for (int it = 0; it < 6; ++it) {
            PruneMask next;
            try {
                next = select_weights(r, 0.3, sel);
            } catch (const ConfigError&) {
                break;
            }
            CHECK(next.kept() < prev.kept());
            for (std::size_t i = 0; i < next.bits.size(); ++i)
                for (std::size_t p = 0; p < next.bits[i].size(); ++p)
                    for (std::size_t k = 0; k < next.bits[i][p].size(); ++k)
                        CHECK(next.bits[i][p][k] <= prev.bits[i][p][k]);
            r.mask_apply(next);
            prev = next;
        }
    }
}

TEST_CASE("prunability from a mask") {
    Rng rng(6);
    Network net(4);
    net.add_layer("wide", LayerSpec::linear(4, 100), {kNetworkInput}, &rng);
    net.add_layer("act", LayerSpec::act(100, Activation::relu), {0});
    net.add_layer("out", LayerSpec::linear(100, 2), {1}, &rng);
    PruneMask m = net.full_mask();
    CHECK(prunability_from_mask(net, m) == 0.0);
    for (std::size_t k = 0; k < 4; ++k) m.bits[0][0][3 * 4 + k] = 0;
    CHECK(prunability_from_mask(net, m) == doctest::Approx(0.01));
    // Outgoing weights do not make a unit removable.
    m = net.full_mask();
    for (std::size_t r = 0; r < 2; ++r) m.bits[2][0][r * 100 + 5] = 0;
    CHECK(prunability_from_mask(net, m) == 0.0);

    Network wide(64);
    wide.add_layer("h", LayerSpec::linear(64, 256), {kNetworkInput}, &rng);
    wide.add_layer("out", LayerSpec::linear(256, 1), {0}, &rng);
    PruneMask sparse = wide.full_mask();
    for (auto& b : sparse.bits[0][0]) b = rng.uniform() < 0.01 ? 1 : 0;
    const double p = prunability_from_mask(wide, sparse);
    MESSAGE("random 99% sparse mask, removable units: " << p);
    CHECK(p < 0.99);
}

TEST_CASE("rewind restores the snapshot") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_ddsp);
    const Network fresh = build(cfg, 7);
    Network net = fresh;
    Rng rng(7);
    for (auto* t : net.trainable_params())
        for (auto& v : t->data_mut()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
    rewind(net, fresh);
    CHECK(serialize(net) == serialize(fresh));

    // Mask mode: unmasked entries are the snapshot's, masked entries zero.
    for (auto* t : net.trainable_params())
        for (auto& v : t->data_mut()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
    net.mask_apply(select_weights(net, 0.5, Selection::global));
    rewind(net, fresh);
    for (std::size_t i = 0; i < net.size(); ++i)
        for (std::size_t p = 0; p < net.layer(i).params.size(); ++p) {
            const auto a = net.layer(i).params[p].value.data();
            const auto b = fresh.layer(i).params[p].value.data();
            const auto& bits = net.mask()->bits[i][p];
            for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == (bits.empty() || bits[k] ? b[k] : 0.0f));
        }

    CHECK_THROWS_AS(rewind(net, build(ModelConfig::desk(ModelKind::tiny_sing), 7)), ShapeError);
    Network trimmed = apply_trim(fresh, TrimPlan{{{0, {1, 2}}}});
    Network other = apply_trim(fresh, TrimPlan{{{0, {3}}}});
    CHECK_THROWS_AS(rewind(other, trimmed), ShapeError);
}

TEST_CASE("trim then rewind equals the masked snapshot") {
    Rng rng(8);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Network snapshot = testing::random_network(rng);
        Network net = snapshot;
        for (auto* t : net.trainable_params())
            for (auto& v : t->data_mut()) v += static_cast<float>(rng.uniform(-0.5, 0.5));
        // Two rounds of trimming, the second in trimmed coordinates.
        net.trim(testing::random_plan(rng, net, 0.5));
        net.trim(testing::random_plan(rng, net, 0.5));
        rewind(net, snapshot);
        TrimPlan cumulative;
        for (const auto& g : snapshot.trim_groups()) {
            const auto& kept = net.space_origin(net.out_space(g[0]));
            std::vector<std::size_t> gone;
            for (std::size_t u = 0; u < snapshot.layer(g[0]).spec.n_out; ++u)
                if (std::find(kept.begin(), kept.end(), u) == kept.end()) gone.push_back(u);
            if (!gone.empty())
                for (LayerId id : g) cumulative.removals[id] = gone;
        }
        Network masked = testing::mask_equivalent(snapshot, cumulative);
        const Tensor x = testing::random_tensor(rng, {2, snapshot.input_channels(), 5});
        const Tensor ya = net.forward(x), yb = masked.forward(x);
        const auto a = ya.data();
        const auto b = yb.data();
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-6);
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("training lowers the loss and keeps masked weights at zero") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_ddsp);
    const DataSplit data = tone_split(6, 2048);
    TrainConfig tc;
    tc.batch_size = 3;
    tc.max_epochs = 6;
    tc.adam.lr = 1e-2;
    Network net = build(cfg, 9);
    net.mask_apply(select_weights(net, 0.5, Selection::global));
    const double before = evaluate(net, cfg, data.valid);
    std::size_t calls = 0;
    const TrainResult r = train_model(net, cfg, data, tc, [&](std::size_t step, const Network&) {
        CHECK(step == calls);
        ++calls;
    });
    CHECK(r.epochs == 6);
    CHECK(r.steps == 12);
    CHECK(calls == 12);
    CHECK(r.best_valid_loss < before);
    CHECK(evaluate(net, cfg, data.valid) == doctest::Approx(r.best_valid_loss));
    CHECK(net.mask()->kept() == select_weights(net, 0.0, Selection::local).kept());
    for (std::size_t i = 0; i < net.size(); ++i)
        for (std::size_t p = 0; p < net.layer(i).params.size(); ++p) {
            const auto& bits = net.mask()->bits[i][p];
            const auto v = net.layer(i).params[p].value.data();
            for (std::size_t k = 0; k < bits.size(); ++k)
                if (!bits[k]) CHECK(v[k] == 0.0f);
        }

    Network again = build(cfg, 9);
    again.mask_apply(select_weights(again, 0.5, Selection::global));
    train_model(again, cfg, data, tc);
    CHECK(serialize(again) == serialize(net));

    TrainConfig wild = tc;
    wild.adam.lr = 1e30;
    Network w = build(cfg, 9);
    CHECK_THROWS_AS(train_model(w, cfg, data, wild), NumericError);
    tc.batch_size = 0;
    CHECK_THROWS_AS(train_model(w, cfg, data, tc), ConfigError);
}

TEST_CASE("iterative pruning driver") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_ddsp);
    const DataSplit data = tone_split(4, 2048);
    ImpConfig imp;
    imp.train.batch_size = 2;
    imp.train.max_epochs = 2;
    imp.train.adam.lr = 1e-2;
    imp.rewind_step = 1;

    SUBCASE("no iterations gives the dense baseline only") {
        imp.iterations = 0;
        Network net = build(cfg, 1);
        const ImpTrace t = run_imp(net, cfg, data, imp);
        REQUIRE(t.records.size() == 1);
        CHECK(t.records[0].test_error_multiplier == 1.0);
        CHECK(t.records[0].weights_remaining_frac == 1.0);
    }
    SUBCASE("mask mode follows the geometric schedule and stays monotone") {
        imp.mode = PruneMode::mask;
        imp.selection = Selection::local;
        imp.iterations = 4;
        Network net = build(cfg, 1);
        std::vector<PruneMask> masks;
        const ImpTrace t = run_imp(net, cfg, data, imp, [&](const ImpRecord&, const Network& n) {
            masks.push_back(n.mask() ? *n.mask() : n.full_mask());
        });
        REQUIRE(t.records.size() == 5);
        for (std::size_t i = 1; i < t.records.size(); ++i) {
            CHECK(t.records[i].weights_remaining_frac < t.records[i - 1].weights_remaining_frac);
            CHECK(t.records[i].weights_remaining_frac == doctest::Approx(std::pow(0.7, i)).epsilon(0.01));
            CHECK(t.records[i].flops_per_second_audio == t.records[0].flops_per_second_audio);
            for (std::size_t l = 0; l < masks[i].bits.size(); ++l)
                for (std::size_t p = 0; p < masks[i].bits[l].size(); ++p)
                    for (std::size_t k = 0; k < masks[i].bits[l][p].size(); ++k)
                        CHECK(masks[i].bits[l][p][k] <= masks[i - 1].bits[l][p][k]);
        }
    }
    SUBCASE("trim mode shrinks the model every iteration") {
        imp.iterations = 3;
        imp.selection = Selection::local;
        imp.criterion = Criterion::information;
        Network net = build(cfg, 1);
        const std::size_t w0 = net.weight_count();
        const ImpTrace t = run_imp(net, cfg, data, imp);
        REQUIRE(t.records.size() == 4);
        for (std::size_t i = 1; i < t.records.size(); ++i) {
            const auto& r = t.records[i];
            CHECK(r.units_remaining_frac < t.records[i - 1].units_remaining_frac);
            CHECK(r.weights_remaining_frac < t.records[i - 1].weights_remaining_frac);
            CHECK(r.flops_per_second_audio < t.records[i - 1].flops_per_second_audio);
            CHECK(r.disk_bytes < t.records[i - 1].disk_bytes);
            const double bound = std::ceil(static_cast<double>(w0) * std::pow(0.7, i));
            MESSAGE("iteration " << i << ": weights " << r.weights << ", bound " << bound);
            CHECK(static_cast<double>(r.weights) <= bound);
        }
    }
    SUBCASE("identical configuration gives an identical trace") {
        imp.iterations = 2;
        Network a = build(cfg, 3), b = build(cfg, 3);
        CHECK(trace_text(run_imp(a, cfg, data, imp)) == trace_text(run_imp(b, cfg, data, imp)));
    }
    SUBCASE("stop threshold and configuration errors") {
        imp.iterations = 5;
        imp.stop_error_multiplier = 1e-6;
        Network net = build(cfg, 1);
        const ImpTrace t = run_imp(net, cfg, data, imp);
        CHECK(t.records.size() == 2);
        CHECK_FALSE(t.stop_reason.empty());

        ImpConfig bad = imp;
        bad.rewind_step = 100;
        Network n2 = build(cfg, 1);
        CHECK_THROWS_AS(run_imp(n2, cfg, data, bad), ConfigError);
        bad = imp;
        bad.prune_fraction = 1.0;
        CHECK_THROWS_AS(run_imp(n2, cfg, data, bad), ConfigError);
        bad = imp;
        bad.mode = PruneMode::mask;
        bad.criterion = Criterion::gradient;
        CHECK_THROWS_AS(run_imp(n2, cfg, data, bad), ConfigError);
    }
    SUBCASE("divergence aborts with the trace so far") {
        imp.iterations = 2;
        imp.train.adam.lr = 1e30;
        Network net = build(cfg, 1);
        const ImpTrace t = run_imp(net, cfg, data, imp);
        CHECK(t.aborted);
        CHECK(t.records.empty());
    }
}

TEST_CASE("hybrid schedule switches from global to local") {
    ImpConfig imp;
    imp.global_until = 3;
    CHECK(imp.selection_at(1) == Selection::global);
    CHECK(imp.selection_at(2) == Selection::global);
    CHECK(imp.selection_at(3) == Selection::local);
    imp.global_until.reset();
    imp.selection = Selection::local;
    CHECK(imp.selection_at(1) == Selection::local);
    CHECK(selection_from_string("global") == Selection::global);
    CHECK(prune_mode_from_string("mask") == PruneMode::mask);
    CHECK_THROWS_AS(prune_mode_from_string("prune"), ConfigError);
}

TEST_CASE("retraining gets faster as the model is trimmed") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_sing);
    const DataSplit data = tone_split(8, 4096);
    std::vector<std::vector<double>> per_iter;  // [iteration][seed]
    for (std::uint64_t seed : {1, 2, 3}) {
        ImpConfig imp;
        imp.iterations = 4;
        imp.prune_fraction = 0.3;
        imp.train.batch_size = 2;
        imp.train.max_epochs = 3;
        imp.train.patience = 100;
        imp.train.seed = seed;
        Network net = build(cfg, seed);
        const ImpTrace t = run_imp(net, cfg, data, imp);
        REQUIRE(t.records.size() == 5);
        per_iter.resize(t.records.size());
        for (std::size_t i = 0; i < t.records.size(); ++i) {
            CHECK(t.records[i].train_steps == t.records[0].train_steps);
            per_iter[i].push_back(t.records[i].train_seconds);
        }
    }
    std::vector<double> median;
    for (auto& v : per_iter) {
        std::sort(v.begin(), v.end());
        median.push_back(v[1]);
    }
    // Retraining starts at iteration 1; iteration 0 also scores nothing.
    for (std::size_t i = 2; i < median.size(); ++i) {
        MESSAGE("iteration " << i << " median retrain seconds " << median[i]);
        CHECK(median[i] <= median[i - 1] * 1.05);
    }
    CHECK(median.back() < median[1]);
}
