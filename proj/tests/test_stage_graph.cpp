#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "pipelearn/stage_graph.hpp"
#include "test_support.hpp"

using namespace pipelearn;
using namespace pipelearn::test_support;

namespace {

std::size_t edge_count(const StageGraph& g) {
    std::size_t count = 0;
    for (const auto& p : g.preds) count += p.size();
    return count;
}

bool respects_order(const StageGraph& g, const std::vector<std::size_t>& order) {
    std::vector<std::size_t> position(g.stages.size());
    for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
    for (std::size_t to = 0; to < g.stages.size(); ++to) {
        for (std::size_t from : g.preds[to]) {
            if (position[from] >= position[to]) return false;
        }
    }
    return true;
}

StageTimes random_times(const StageGraph& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> time(0.0, 2.0);
    StageTimes t;
    t.by_stage.resize(g.stages.size());
    for (double& v : t.by_stage) v = time(rng);
    return t;
}

}  // namespace

TEST_CASE("stage graph: one parallel batch degenerates to the six-stage chain") {
    const StageGraph g = build_iteration_graph(1);
    REQUIRE(g.stages.size() == 6);
    CHECK(edge_count(g) == 5);
    // Single chain: every stage except the source has exactly one predecessor.
    CHECK(g.preds[g.index_of(StageKind::DeviceForward, 1)].empty());
    for (StageKind kind : {StageKind::Upload, StageKind::ServerForward,
                           StageKind::ServerBackward, StageKind::Download,
                           StageKind::DeviceBackward}) {
        CHECK(g.preds[g.index_of(kind, 1)].size() == 1);
    }
    // The device forward to device backward shortcut only exists for N > 1.
    CHECK(graph_predecessors(g, StageKind::DeviceBackward, 1) ==
          std::vector<Stage>{{StageKind::Download, 1}});
}

TEST_CASE("stage graph: spot checks at two parallel batches") {
    const StageGraph g = build_iteration_graph(2);
    REQUIRE(g.stages.size() == 12);
    CHECK(graph_predecessors(g, StageKind::DeviceBackward, 1) ==
          std::vector<Stage>{{StageKind::DeviceForward, 2}, {StageKind::Download, 1}});
    CHECK(graph_predecessors(g, StageKind::ServerForward, 2) ==
          std::vector<Stage>{{StageKind::Upload, 2}, {StageKind::ServerBackward, 1}});
    CHECK(graph_predecessors(g, StageKind::Upload, 2) ==
          std::vector<Stage>{{StageKind::DeviceForward, 2}, {StageKind::Upload, 1}});
}

TEST_CASE("stage graph: dependency table holds for every stage and batch index") {
    for (std::size_t n_count : {std::size_t{1}, std::size_t{2}, std::size_t{3}, std::size_t{5}}) {
        const StageGraph g = build_iteration_graph(n_count);
        REQUIRE(g.stages.size() == 6 * n_count);
        for (int k = 0; k < kStageKindCount; ++k) {
            const StageKind kind = static_cast<StageKind>(k);
            for (std::size_t n = 1; n <= n_count; ++n) {
                CAPTURE(n_count);
                CAPTURE(k);
                CAPTURE(n);
                CHECK(graph_predecessors(g, kind, n) == expected_predecessors(kind, n, n_count));
                CHECK(graph_successors(g, kind, n) == expected_successors(kind, n, n_count));
            }
        }
    }
}

TEST_CASE("stage graph: unique source and sink") {
    for (std::size_t n_count = 1; n_count <= 6; ++n_count) {
        const StageGraph g = build_iteration_graph(n_count);
        std::size_t sources = 0;
        std::size_t sinks = 0;
        for (std::size_t i = 0; i < g.stages.size(); ++i) {
            if (g.preds[i].empty()) {
                ++sources;
                CHECK(g.stages[i] == Stage{StageKind::DeviceForward, 1});
            }
            if (g.succs[i].empty()) {
                ++sinks;
                CHECK(g.stages[i] == Stage{StageKind::DeviceBackward, n_count});
            }
        }
        CHECK(sources == 1);
        CHECK(sinks == 1);
    }
}

TEST_CASE("stage graph: construction and lookup errors") {
    CHECK_THROWS_AS(build_iteration_graph(0), std::invalid_argument);
    const StageGraph g = build_iteration_graph(2);
    CHECK_THROWS_AS(g.index_of(StageKind::Upload, 0), std::out_of_range);
    CHECK_THROWS_AS(g.index_of(StageKind::Upload, 3), std::out_of_range);
    CHECK(g.device == 1);
    CHECK(build_iteration_graph(2, 4).device == 4);
    CHECK(build_iteration_graph(2, 4).stages.front().device == 4);
}

TEST_CASE("stage graph: labels and lane names") {
    CHECK(stage_label({StageKind::DeviceForward, 3}) == "dev_fwd_3");
    CHECK(stage_label({StageKind::Upload, 1}) == "upload_1");
    CHECK(stage_label({StageKind::ServerBackward, 2}) == "srv_bwd_2");
    CHECK(std::string(stage_lane_name(StageKind::DeviceForward)) == "device_compute");
    CHECK(std::string(stage_lane_name(StageKind::Upload)) == "uplink");
    CHECK(std::string(stage_lane_name(StageKind::ServerForward)) == "server_compute");
    CHECK(std::string(stage_lane_name(StageKind::Download)) == "downlink");
}

TEST_CASE("stage graph: topological order is valid for any width") {
    for (std::size_t n_count : {std::size_t{1}, std::size_t{2}, std::size_t{4}, std::size_t{9}}) {
        const StageGraph g = build_iteration_graph(n_count);
        const std::vector<std::size_t> order = topological_order(g);
        CHECK(order.size() == g.stages.size());
        CHECK(respects_order(g, order));
    }
}

TEST_CASE("stage durations: arithmetic matches the stage-time equations") {
    LayerProfiles p;
    p.device_forward_s = {0.2, 0.3, 0.4};
    p.device_backward_s = {0.5, 0.6, 0.7};
    p.server_forward_s = {0.1, 0.15, 0.25};
    p.server_backward_s = {0.3, 0.35, 0.4};
    p.forward_volume_mb = {10.0, 20.0, 5.0};
    p.backward_volume_mb = {12.0, 24.0, 6.0};
    p.parameter_mb = {1.0, 2.0, 3.0};
    const NetworkProfile net{10.0, 25.0, "4g"};

    SUBCASE("split in the middle") {
        const StageDurations d = stage_durations(p, net, 2, 4);
        CHECK(d.device_forward == doctest::Approx((0.2 + 0.3) / 4.0));
        CHECK(d.device_backward == doctest::Approx((0.5 + 0.6) / 4.0));
        CHECK(d.server_forward == doctest::Approx(0.25 / 4.0));
        CHECK(d.server_backward == doctest::Approx(0.4 / 4.0));
        CHECK(d.upload == doctest::Approx(20.0 / (10.0 * 4.0)));
        CHECK(d.download == doctest::Approx(24.0 / (25.0 * 4.0)));
    }

    SUBCASE("upload of ten megabits over ten megabits per second takes one second") {
        const StageDurations d = stage_durations(p, net, 1, 1);
        CHECK(d.upload == doctest::Approx(1.0));
    }

    SUBCASE("split at the last layer leaves the server idle") {
        const StageDurations d = stage_durations(p, net, 3, 2);
        CHECK(d.server_forward == 0.0);
        CHECK(d.server_backward == 0.0);
    }

    SUBCASE("doubling the parallel batches halves every stage") {
        const StageDurations one = stage_durations(p, net, 2, 1);
        const StageDurations two = stage_durations(p, net, 2, 2);
        CHECK(two.device_forward == doctest::Approx(one.device_forward / 2.0));
        CHECK(two.upload == doctest::Approx(one.upload / 2.0));
        CHECK(two.server_forward == doctest::Approx(one.server_forward / 2.0));
        CHECK(two.server_backward == doctest::Approx(one.server_backward / 2.0));
        CHECK(two.download == doctest::Approx(one.download / 2.0));
        CHECK(two.device_backward == doctest::Approx(one.device_backward / 2.0));
    }

    SUBCASE("invalid arguments throw") {
        CHECK_THROWS_AS(stage_durations(p, net, 0, 1), std::out_of_range);
        CHECK_THROWS_AS(stage_durations(p, net, 4, 1), std::out_of_range);
        CHECK_THROWS_AS(stage_durations(p, net, 1, 0), std::invalid_argument);
        CHECK_THROWS_AS(stage_durations(p, NetworkProfile{0.0, 25.0, "x"}, 1, 1),
                        std::invalid_argument);
    }

    SUBCASE("stage_times assigns each stage its kind duration") {
        const StageGraph g = build_iteration_graph(3);
        const StageTimes t = stage_times(g, p, net, 2);
        const StageDurations d = stage_durations(p, net, 2, 3);
        REQUIRE(t.by_stage.size() == g.stages.size());
        for (std::size_t i = 0; i < g.stages.size(); ++i) {
            CHECK(t.by_stage[i] == d.of(g.stages[i].kind));
        }
    }
}

TEST_CASE("makespan: chain graph equals the sum of its stages") {
    std::mt19937_64 rng(5);
    LayerProfiles p = random_profiles(rng, 4);
    const NetworkProfile net{12.0, 30.0, "x"};
    const StageGraph g = build_iteration_graph(1);
    const StageDurations d = stage_durations(p, net, 2, 1);
    const StageTimes t = uniform_stage_times(g, d);
    CHECK(estimate_makespan(g, t) == doctest::Approx(d.chain_total()).epsilon(1e-12));
}

TEST_CASE("makespan: zero durations give zero") {
    const StageGraph g = build_iteration_graph(4);
    StageTimes t;
    t.by_stage.assign(g.stages.size(), 0.0);
    CHECK(estimate_makespan(g, t) == 0.0);
}

TEST_CASE("makespan: equals exhaustive path enumeration on small graphs") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<std::size_t> width(1, 4);
        const StageGraph g = build_iteration_graph(width(rng));
        const StageTimes t = random_times(g, rng);
        const double dp = estimate_makespan(g, t);
        const double enumerated = max_path_makespan(g, t);
        CHECK(std::fabs(dp - enumerated) <= 1e-12 * std::max(1.0, enumerated));
    }
}

TEST_CASE("makespan: equals an event-driven list schedule on a thousand instances") {
    std::mt19937_64 rng(401);
    for (int trial = 0; trial < 1000; ++trial) {
        std::uniform_int_distribution<std::size_t> width(1, 20);
        const StageGraph g = build_iteration_graph(width(rng));
        const StageTimes t = random_times(g, rng);
        const double dp = estimate_makespan(g, t);
        const double scheduled = list_schedule_makespan(g, t);
        CAPTURE(trial);
        CHECK(std::fabs(dp - scheduled) <= 1e-12 * std::max(1.0, scheduled));
    }
}

TEST_CASE("makespan: monotone in every stage duration and below total work") {
    std::mt19937_64 rng(88);
    const StageGraph g = build_iteration_graph(3);
    const StageTimes t = random_times(g, rng);
    const double base = estimate_makespan(g, t);

    double total = 0.0;
    for (double v : t.by_stage) total += v;
    CHECK(base <= total + 1e-12);

    for (std::size_t i = 0; i < t.by_stage.size(); ++i) {
        StageTimes longer = t;
        longer.by_stage[i] += 0.5;
        CHECK(estimate_makespan(g, longer) >= base);
    }
}

TEST_CASE("makespan: input validation") {
    const StageGraph g = build_iteration_graph(2);
    StageTimes short_times;
    short_times.by_stage.assign(5, 1.0);
    CHECK_THROWS_AS(estimate_makespan(g, short_times), std::invalid_argument);
    StageTimes negative;
    negative.by_stage.assign(g.stages.size(), 1.0);
    negative.by_stage[3] = -0.1;
    CHECK_THROWS_AS(estimate_makespan(g, negative), std::invalid_argument);
}

TEST_CASE("schedule: earliest-start schedule is consistent with the makespan") {
    std::mt19937_64 rng(91);
    const StageGraph g = build_iteration_graph(4);
    const StageTimes t = random_times(g, rng);
    const std::vector<ScheduleEntry> schedule = earliest_start_schedule(g, t);
    REQUIRE(schedule.size() == g.stages.size());

    double last_end = 0.0;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (i > 0) CHECK(schedule[i].start >= schedule[i - 1].start);
        CHECK(schedule[i].end >= schedule[i].start);
        last_end = std::max(last_end, schedule[i].end);
        CHECK(schedule[i].lane == stage_lane_name(schedule[i].stage.kind));
    }
    CHECK(last_end == doctest::Approx(estimate_makespan(g, t)).epsilon(1e-12));

    // Every stage starts only after each predecessor has finished.
    std::vector<double> start(g.stages.size()), end(g.stages.size());
    for (const ScheduleEntry& e : schedule) {
        const std::size_t i = g.index_of(e.stage.kind, e.stage.batch);
        start[i] = e.start;
        end[i] = e.end;
    }
    for (std::size_t to = 0; to < g.stages.size(); ++to) {
        for (std::size_t from : g.preds[to]) CHECK(start[to] >= end[from] - 1e-12);
    }

    std::ostringstream out;
    write_schedule_csv(out, schedule);
    CHECK(out.str().rfind("lane,stage,device,start_s,end_s\n", 0) == 0);
}

TEST_CASE("epoch time: iteration count times the iteration makespan") {
    std::mt19937_64 rng(14);
    const LayerProfiles p = random_profiles(rng, 5);
    const NetworkProfile net{20.0, 40.0, "4g+"};

    SUBCASE("one iteration at one parallel batch is the chain total") {
        const EpochShape shape{100, 100};
        const double chain = stage_durations(p, net, 3, 1).chain_total();
        CHECK(epoch_time(p, net, 3, 1, shape) == doctest::Approx(chain).epsilon(1e-12));
    }

    SUBCASE("ten thousand rows in hundreds make one hundred iterations") {
        const EpochShape shape{10000, 100};
        const StageGraph g = build_iteration_graph(4);
        const double single = estimate_makespan(g, stage_times(g, p, net, 2));
        CHECK(epoch_time(p, net, 2, 4, shape) == doctest::Approx(100.0 * single));
    }

    SUBCASE("doubling the dataset doubles the epoch") {
        const EpochShape small{600, 60};
        const EpochShape large{1200, 60};
        CHECK(epoch_time(p, net, 2, 3, large) ==
              doctest::Approx(2.0 * epoch_time(p, net, 2, 3, small)));
    }

    SUBCASE("baseline modes") {
        const EpochShape shape{500, 50};
        const double chain = stage_durations(p, net, 2, 1).chain_total();
        CHECK(epoch_time(p, net, 2, 1, shape, ScheduleMode::ConventionalSplit) ==
              doctest::Approx(10.0 * chain));
        const double full_compute =
            p.device_forward_sum(p.layer_count()) + p.device_backward_sum(p.layer_count());
        CHECK(epoch_time(p, net, 2, 1, shape, ScheduleMode::FederatedLocal) ==
              doctest::Approx(10.0 * full_compute));
    }

    SUBCASE("a pipelined iteration never loses to the chain iteration") {
        for (std::size_t split = 1; split <= p.layer_count(); ++split) {
            const double chain = stage_durations(p, net, split, 1).chain_total();
            for (std::size_t n = 2; n <= 10; ++n) {
                const StageGraph g = build_iteration_graph(n);
                CHECK(estimate_makespan(g, stage_times(g, p, net, split)) <= chain + 1e-9);
            }
        }
    }
}

TEST_CASE("schedule mode names round-trip") {
    for (ScheduleMode m : {ScheduleMode::PipeLearnParallelServer,
                           ScheduleMode::PipeLearnSequentialServer,
                           ScheduleMode::ConventionalSplit, ScheduleMode::FederatedLocal}) {
        CHECK(schedule_mode_from_name(schedule_mode_name(m)) == m);
    }
    CHECK(std::string(schedule_mode_name(ScheduleMode::PipeLearnParallelServer)) == "pipelearn");
    CHECK(std::string(schedule_mode_name(ScheduleMode::PipeLearnSequentialServer)) ==
          "pipelearn-seq");
    CHECK(std::string(schedule_mode_name(ScheduleMode::ConventionalSplit)) == "sfl");
    CHECK(std::string(schedule_mode_name(ScheduleMode::FederatedLocal)) == "fl");
    CHECK_THROWS_AS(schedule_mode_from_name("unknown"), std::invalid_argument);
}
