// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "random_nets.hpp"
#include "ulga/embed.hpp"

using namespace ulga;

#ifndef ULGA_DATA_DIR
#define ULGA_DATA_DIR "data"
#endif

TEST_CASE("hand counts for a single linear layer") {
    Network net(3);
    net.add_layer("l", LayerSpec::linear(3, 2), {kNetworkInput});
    CHECK(flops_per_step(net) == 12);
    CHECK(rw_accesses_per_step(net) == 13);
    CHECK(count_flops(net, 1, 16000.0) == 12.0 * 16000.0);
    CHECK(rw_memory(net, 4) == 13.0 / 4.0);
    // Doubling the units follows the closed form w*in*out + out + in + out.
    CHECK(rw_accesses_per_step(LayerSpec::linear(3, 4)) == 3 * 4 + 4 + 3 + 4);
    CHECK(rw_accesses_per_step(Network(5)) == 0);
    CHECK(flops_per_step(Network(5)) == 0);
    // Parameters (8 floats) plus input (3) and output (2) live together.
    CHECK(working_set_bytes(net) == 4 * (8 + 3 + 2));
}

TEST_CASE("closed-form FLOPs equal the instrumented counter") {
    Rng rng(1);
    testing::RandomNetOptions opt;
    opt.allow_noncausal = false;
    for (int trial = 0; trial < 50; ++trial) {
        const Network net = testing::random_network(rng, opt);
        OpCounter counter;
        StreamRunner runner(net, &counter);
        std::vector<float> frame(net.input_channels());
        for (int step = 0; step < 3; ++step) {
            for (auto& v : frame) v = static_cast<float>(rng.uniform(-1, 1));
            const std::uint64_t before = counter.flops;
            runner.step(frame);
            CHECK(counter.flops - before == flops_per_step(net));
        }
    }
    for (auto kind : {ModelKind::tiny_wavenet, ModelKind::tiny_sing, ModelKind::tiny_ddsp}) {
        const ModelConfig cfg = ModelConfig::desk(kind);
        const Network net = build(cfg, 1);
        OpCounter counter;
        StreamRunner runner(net, &counter);
        runner.step(std::vector<float>(net.input_channels(), 0.25f));
        CHECK(counter.flops == flops_per_step(net));
        CHECK(count_flops(net, cfg) ==
              doctest::Approx(static_cast<double>(counter.flops) * cfg.sample_rate / samples_per_step(cfg)));
    }
}

TEST_CASE("trimming half the units shrinks the conv stack interior below half") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_sing);
    const Network net = build(cfg, 2);
    TrimPlan plan;
    for (const auto& g : net.trim_groups()) {
        const std::size_t n = net.layer(g[0]).spec.n_out;
        std::vector<std::size_t> idx;
        for (std::size_t u = 0; u < n / 2; ++u) idx.push_back(2 * u);
        for (LayerId id : g) plan.removals[id] = idx;
    }
    const Network small = apply_trim(net, plan);
    auto interior = [](const Network& n) {
        std::uint64_t f = 0;
        for (const auto& l : n.layers())
            if (l.spec.kind == LayerKind::conv1d && l.name != "conv0" && l.name != "out") f += flops_per_step(l.spec);
        return f;
    };
    CHECK(interior(small) * 2 < interior(net));
    CHECK(flops_per_step(small) < flops_per_step(net));
}

TEST_CASE("disk size is the checkpoint length") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Network net = testing::random_network(rng);
        const std::string path =
            (std::filesystem::temp_directory_path() / ("ulga_embed_" + std::to_string(::getpid()))).string();
        save(net, path);
        CHECK(disk_size(net) == std::filesystem::file_size(path));
        std::filesystem::remove(path);
        CHECK(disk_size(net) >= 4 * net.param_count());
        const TrimPlan plan = testing::random_plan(rng, net);
        const Network t = apply_trim(net, plan);
        if (!plan.empty()) {
            CHECK(disk_size(t) < disk_size(net));
        } else {
            CHECK(disk_size(t) == disk_size(net));
        }
        // Trimming never increases any cost.
        CHECK(flops_per_step(t) <= flops_per_step(net));
        CHECK(rw_accesses_per_step(t) <= rw_accesses_per_step(net));
        CHECK(working_set_bytes(t) <= working_set_bytes(net));
    }
}

TEST_CASE("platform table") {
    const auto shipped = load_platforms(std::string(ULGA_DATA_DIR) + "/platforms_table1.json");
    const auto table = table1_platforms();
    REQUIRE(shipped.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(shipped[i].name == table[i].name);
        CHECK(shipped[i].cpu_hz == table[i].cpu_hz);
        CHECK(shipped[i].flops_per_sec == table[i].flops_per_sec);
        CHECK(shipped[i].drive_bytes == table[i].drive_bytes);
        CHECK(shipped[i].ram_bytes == table[i].ram_bytes);
    }
    CHECK(table[0].name == "ATMega1280");
    CHECK(table[0].cpu_hz == 16e6);
    CHECK(table[0].flops_per_sec == 160e3);
    CHECK(table[0].drive_bytes == 128 * 1024);
    CHECK(table[0].ram_bytes == 8 * 1024);

    ModelCosts c;
    c.flops_per_audio_second = 40e6;
    c.disk_bytes = 1 << 20;
    c.working_set_bytes = 1 << 20;
    const auto rpi = feasibility(c, table[2]);
    CHECK(rpi.realtime_ok);
    CHECK(rpi.embeddable_ok);
    c.flops_per_audio_second = 200e3;
    CHECK_FALSE(feasibility(c, table[0]).realtime_ok);

    CHECK_THROWS_AS(parse_platforms("{\"platforms\": [{\"name\": \"x\", \"cpu_hz\": 1}]}"), ConfigError);
    CHECK_THROWS_AS(parse_platforms("{\"platforms\": [], \"extra\": 1}"), ConfigError);
    CHECK_THROWS_AS(parse_platforms("not json"), ConfigError);
    CHECK_THROWS_AS(load_platforms("/nonexistent/platforms.json"), ConfigError);
    CHECK_THROWS_AS(parse_platforms(R"({"platforms": [{"name": "x", "cpu_hz": 1, "flops_per_sec": 1,
        "drive_bytes": 1, "ram_bytes": -4}]})"),
                    ConfigError);
}

TEST_CASE("verdicts are threshold functions of their inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        PlatformProfile p{"p", "", rng.uniform(1e6, 1e9), std::exp(rng.uniform(10, 20)), std::exp(rng.uniform(10, 22)),
                          std::exp(rng.uniform(10, 22))};
        ModelCosts c;
        c.flops_per_audio_second = std::exp(rng.uniform(8, 22));
        c.disk_bytes = static_cast<std::uint64_t>(std::exp(rng.uniform(8, 23)));
        c.working_set_bytes = static_cast<std::uint64_t>(std::exp(rng.uniform(8, 23)));
        if (trial % 10 == 0) c.flops_per_audio_second = p.flops_per_sec;
        if (trial % 10 == 1) c.disk_bytes = static_cast<std::uint64_t>(p.drive_bytes);
        const auto v = feasibility(c, p);
        CHECK(v.realtime_ok == (c.flops_per_audio_second <= p.flops_per_sec));
        CHECK(v.embeddable_ok == (static_cast<double>(c.disk_bytes) <= p.drive_bytes &&
                                  static_cast<double>(c.working_set_bytes) <= p.ram_bytes));
    }
}

TEST_CASE("pareto front") {
    const std::vector<ParetoPoint> pts = {{1.0, 100, 0}, {1.2, 50, 1}, {1.1, 80, 2}, {1.3, 60, 3}};
    const auto front = pareto_front(pts);
    REQUIRE(front.size() == 3);
    CHECK(front[0].tag == 1);
    CHECK(front[1].tag == 2);
    CHECK(front[2].tag == 0);
    CHECK(pareto_front({{2.0, 3.0, 7}}).size() == 1);
    const auto dup = pareto_front({{1.0, 1.0, 0}, {1.0, 1.0, 1}});
    REQUIRE(dup.size() == 1);
    CHECK(dup[0].tag == 0);

    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ParetoPoint> p;
        const std::size_t n = 1 + rng.below(30);
        for (std::size_t i = 0; i < n; ++i)
            p.push_back({static_cast<double>(rng.below(10)), static_cast<double>(rng.below(10)), i});
        const auto f = pareto_front(p);
        auto dominates = [](const ParetoPoint& a, const ParetoPoint& b) {
            return a.error <= b.error && a.cost <= b.cost && (a.error < b.error || a.cost < b.cost);
        };
        for (const auto& a : f)
            for (const auto& b : f) CHECK_FALSE(dominates(a, b));
        for (const auto& q : p) {
            bool in = false, covered = false;
            for (const auto& a : f) {
                in = in || a.tag == q.tag;
                covered = covered || dominates(a, q) || (a.error == q.error && a.cost == q.cost);
            }
            CHECK((in || covered));
        }
        for (std::size_t i = 1; i < f.size(); ++i) CHECK(f[i - 1].cost <= f[i].cost);
    }
}

TEST_CASE("cost report output") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_ddsp);
    const Network net = build(cfg, 1);
    const EmbedReport r = embed_report(measure_costs(net, cfg, 1.0), table1_platforms());
    std::ostringstream csv, text;
    write_embed_csv(csv, r);
    write_embed_summary(text, r);
    const std::string rows = csv.str();
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 5);
    CHECK(text.str().find("RPi 2B") != std::string::npos);
    CHECK(r.costs.disk_bytes == disk_size(net));
}
