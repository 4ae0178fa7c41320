#pragma once

#include <cstdint>
#include <string>

namespace pipelearn::cli {

// Exit codes shared by every subcommand: 0 success, 1 config error,
// 2 runtime error, 3 failed in-command acceptance assertion (CI signal).
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadConfig = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailed = 3;

struct CommandOptions {
    std::string config_path;  // empty: built-in defaults
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    std::string network_filter;  // restrict to one network preset
    std::string mode_filter;     // restrict to one schedule mode
    bool quiet = false;
};

// Epoch-time and utilisation study over model/network presets and schedule
// modes; writes efficiency.csv.
int cmd_efficiency(const CommandOptions& options);

// Scores the pipeline-parameter selector against an exhaustive simulator
// sweep on randomly drawn profiles; writes opt_score.csv.
int cmd_optimizer_score(const CommandOptions& options);

// Trains the split pipeline and the local-update reference on the same data
// and init, comparing loss traces; writes equivalence.csv.
int cmd_equivalence(const CommandOptions& options);

// Simulates one epoch and writes the event trace (trace.csv), per-lane usage
// (lanes.csv) and the single-iteration earliest-start schedule (schedule.csv).
int cmd_trace(const CommandOptions& options);

}  // namespace pipelearn::cli
