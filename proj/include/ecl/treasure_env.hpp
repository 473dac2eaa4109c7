#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/rng.hpp"

namespace ecl {

// Treasure Hunt gridworld. Row 0 is the top of the grid. The top corridor
// (row 1) hosts the collector; the bottom corridor (row 16) hosts the finder.
// Four vertical tunnels drop from the top corridor to row 14, two rows above
// the bottom corridor, so the finder can see the treasure but never reach it.

struct TreasureMap {
    static constexpr int kRows = 18;
    static constexpr int kCols = 24;
    static constexpr int kTopRow = 1;
    static constexpr int kBottomRow = 16;
    static constexpr int kTunnelBottomRow = 14;
    static constexpr int kCorridorMin = 1;
    static constexpr int kCorridorMax = 22;
    static constexpr int kNumTunnels = 4;
    static constexpr int kMinTunnelGap = 3;
    static constexpr int kEpisodeLength = 500;

    std::array<int, kNumTunnels> tunnel_cols{};
    int treasure_row = 0, treasure_col = 0;
    int finder_row = kBottomRow, finder_col = 0;
    int collector_row = kTopRow, collector_col = 0;
    int step_count = 0;

    bool in_grid(int r, int c) const { return r >= 0 && r < kRows && c >= 0 && c < kCols; }

    bool is_tunnel(int r, int c) const {
        if (!in_grid(r, c)) return false;
        if ((r == kTopRow || r == kBottomRow) && c >= kCorridorMin && c <= kCorridorMax) return true;
        if (r >= kTopRow && r <= kTunnelBottomRow)
            for (int tc : tunnel_cols)
                if (c == tc) return true;
        return false;
    }

    // index 0..3 of the tunnel holding the treasure
    int treasure_tunnel() const {
        for (int i = 0; i < kNumTunnels; ++i)
            if (tunnel_cols[static_cast<size_t>(i)] == treasure_col) return i;
        fail("treasure is not at a tunnel column");
    }
};

TreasureMap generate_map(Rng& rng);

// Actions, in the order used by the message/action correlation tables.
enum Action : int { kNoop = 0, kUp = 1, kRight = 2, kDown = 3, kLeft = 4 };
inline constexpr int kTreasureActions = 5;
inline constexpr int kTreasureMessages = 5;

enum AgentId : int { kFinder = 0, kCollector = 1 };

struct JointAction {
    std::array<int, 2> action{kNoop, kNoop};    // indexed by AgentId
    std::array<int, 2> message{0, 0};
};

struct StepResult {
    int reward = 0;  // shared by both agents
    bool done = false;
    bool collected = false;
};

inline constexpr int kObsSide = 5;
inline constexpr int kObsChannels = 3;
using Observation = std::array<float, kObsSide * kObsSide * kObsChannels>;

class TreasureEnv {
public:
    TreasureEnv() = default;
    TreasureEnv(const TreasureMap& map, Rng rng) : map_(map), rng_(rng) {}

    static TreasureEnv make(Rng rng) {
        TreasureMap m = generate_map(rng);
        return TreasureEnv(m, rng);
    }

    const TreasureMap& map() const { return map_; }
    bool done() const { return map_.step_count >= TreasureMap::kEpisodeLength; }

    // Fresh map from the env's own rng stream; clears message buffers.
    void reset() {
        map_ = generate_map(rng_);
        prev_message_ = {-1, -1};
    }

    // Message sent by `agent` on the previous step (-1 before the first step;
    // incoming messages are delivered with a one-step delay, and the t=0
    // incoming message is the all-zeros vector).
    int previous_message(int agent) const { return prev_message_[static_cast<size_t>(agent)]; }

    // Moves both agents simultaneously, credits a collection if the collector
    // ends the step on the treasure, respawns treasure uniformly over the four
    // tunnel bottoms, and buffers the outgoing messages for next-step delivery.
    StepResult step(const JointAction& joint);

    // 5x5 egocentric RGB crop, [0,1], out-of-bounds padded wall-grey.
    Observation observe(int agent) const;

    // Full 18x24 RGB frame (finder red, collector blue).
    std::vector<uint8_t> render_frame() const;
    void write_ppm(const std::string& path) const;

    Rng& rng() { return rng_; }
    void serialize(std::vector<uint8_t>& out) const;
    size_t deserialize(const uint8_t* data, size_t size);

private:
    TreasureMap map_;
    Rng rng_;
    std::array<int, 2> prev_message_{-1, -1};
};

// ---- scripted reference agents (analysis + harness baselines) ----

struct ScriptedDecision {
    int action = kNoop;
    int message = 0;
};

// Finder that broadcasts the treasure tunnel index. "oracle" always knows it;
// "sighted" reports only when the treasure is inside its 5x5 view (symbol 4 =
// nothing seen) and otherwise walks to the nearest tunnel it has not checked
// since the last sighting. "random" emits uniformly random symbols.
class ScriptedFinder {
public:
    enum class Mode { oracle, sighted, random };
    explicit ScriptedFinder(Mode mode, uint64_t rng_seed = 0) : mode_(mode), rng_(rng_seed) {}

    ScriptedDecision act(const TreasureEnv& env);
    void reset() { checked_ = {false, false, false, false}; }

private:
    Mode mode_;
    Rng rng_;
    std::array<bool, 4> checked_{false, false, false, false};
};

// Collector that decodes symbols 0..3 as "descend that tunnel"; on symbol 4
// (nothing seen) it returns to the top corridor so the next report costs only
// the horizontal leg plus the descent.
class ScriptedCollector {
public:
    ScriptedDecision act(const TreasureEnv& env, int incoming_message);
    void reset() { target_ = -1; }

private:
    int target_ = -1;
};

}  // namespace ecl
