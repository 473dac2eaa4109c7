#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>

#include "ecl/treasure_env.hpp"

using namespace ecl;
namespace fs = std::filesystem;

namespace {

void check_map_invariants(const TreasureMap& m) {
    // corridor rows
    for (int c = TreasureMap::kCorridorMin; c <= TreasureMap::kCorridorMax; ++c) {
        REQUIRE(m.is_tunnel(TreasureMap::kTopRow, c));
        REQUIRE(m.is_tunnel(TreasureMap::kBottomRow, c));
    }
    REQUIRE(!m.is_tunnel(1, 0));
    REQUIRE(!m.is_tunnel(1, 23));
    // tunnels: pairwise >= 3 apart, inside the corridor, spanning rows 1..14
    auto cols = m.tunnel_cols;
    std::sort(cols.begin(), cols.end());
    for (int i = 0; i < 4; ++i) {
        REQUIRE(cols[i] >= TreasureMap::kCorridorMin);
        REQUIRE(cols[i] <= TreasureMap::kCorridorMax);
        if (i > 0) REQUIRE(cols[i] - cols[i - 1] >= 3);
        for (int r = TreasureMap::kTopRow; r <= TreasureMap::kTunnelBottomRow; ++r)
            REQUIRE(m.is_tunnel(r, cols[i]));
        REQUIRE(!m.is_tunnel(TreasureMap::kTunnelBottomRow + 1, cols[i]));
    }
    // treasure at a tunnel bottom
    REQUIRE(m.treasure_row == TreasureMap::kTunnelBottomRow);
    REQUIRE(std::count(cols.begin(), cols.end(), m.treasure_col) == 1);
    // spawn regions
    REQUIRE(m.finder_row == TreasureMap::kBottomRow);
    REQUIRE(m.collector_row == TreasureMap::kTopRow);
    REQUIRE(m.finder_col >= 1);
    REQUIRE(m.finder_col <= 22);
    REQUIRE(m.collector_col >= 1);
    REQUIRE(m.collector_col <= 22);
}

// all cells an agent can reach by legal moves from its spawn
std::set<std::pair<int, int>> reachable_from(const TreasureMap& m, int row, int col) {
    std::set<std::pair<int, int>> seen{{row, col}};
    std::queue<std::pair<int, int>> frontier;
    frontier.push({row, col});
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    while (!frontier.empty()) {
        auto [r, c] = frontier.front();
        frontier.pop();
        for (int k = 0; k < 4; ++k) {
            const int nr = r + dr[k], nc = c + dc[k];
            if (m.is_tunnel(nr, nc) && !seen.count({nr, nc})) {
                seen.insert({nr, nc});
                frontier.push({nr, nc});
            }
        }
    }
    return seen;
}

}  // namespace

TEST_SUITE("treasure_env") {

TEST_CASE("generated maps satisfy every layout invariant") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        auto m = generate_map(rng);
        check_map_invariants(m);
    }
}

TEST_CASE("minimum-gap configuration {1,4,7,10} is accepted by the invariants") {
    TreasureMap m;
    m.tunnel_cols = {1, 4, 7, 10};
    m.treasure_row = TreasureMap::kTunnelBottomRow;
    m.treasure_col = 4;
    m.finder_col = 5;
    m.collector_col = 3;
    check_map_invariants(m);
}

TEST_CASE("each tunnel holds the treasure about a quarter of the time") {
    Rng rng(2);
    int counts[4] = {0};
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        auto m = generate_map(rng);
        counts[m.treasure_tunnel()] += 1;
    }
    for (int t = 0; t < 4; ++t) {
        CHECK(counts[t] / double(n) > 0.20);
        CHECK(counts[t] / double(n) < 0.30);
    }
}

TEST_CASE("collector reaches every tunnel bottom; finder never leaves its row") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        auto m = generate_map(rng);
        auto collector = reachable_from(m, m.collector_row, m.collector_col);
        for (int t = 0; t < 4; ++t)
            CHECK(collector.count({TreasureMap::kTunnelBottomRow, m.tunnel_cols[t]}) == 1);
        CHECK(collector.count({TreasureMap::kBottomRow, m.finder_col}) == 0);

        auto finder = reachable_from(m, m.finder_row, m.finder_col);
        for (auto& [r, c] : finder) CHECK(r == TreasureMap::kBottomRow);
        CHECK(finder.size() == 22);  // the whole bottom corridor
    }
}

TEST_CASE("collection rewards both respawn and step bookkeeping") {
    Rng rng(4);
    auto m = generate_map(rng);
    m.collector_col = m.treasure_col;
    m.collector_row = 13;
    TreasureEnv env(m, rng.split(99));
    JointAction joint;
    joint.action[kCollector] = kDown;
    auto res = env.step(joint);
    CHECK(res.reward == 1);
    CHECK(res.collected);
    CHECK(env.map().treasure_row == TreasureMap::kTunnelBottomRow);
    CHECK(env.map().collector_row == TreasureMap::kTunnelBottomRow);
}

TEST_CASE("finder cannot move up and noop changes only the step counter") {
    Rng rng(5);
    auto m = generate_map(rng);
    TreasureEnv env(m, rng.split(1));
    JointAction up;
    up.action[kFinder] = kUp;
    env.step(up);
    CHECK(env.map().finder_row == TreasureMap::kBottomRow);
    CHECK(env.map().finder_col == m.finder_col);

    auto before = env.map();
    JointAction noop;
    env.step(noop);
    CHECK(env.map().step_count == before.step_count + 1);
    CHECK(env.map().finder_col == before.finder_col);
    CHECK(env.map().collector_col == before.collector_col);
    CHECK(env.map().treasure_col == before.treasure_col);
}

TEST_CASE("episode ends after 500 steps and further steps are an error") {
    Rng rng(6);
    TreasureEnv env = TreasureEnv::make(rng);
    JointAction noop;
    for (int t = 0; t < TreasureMap::kEpisodeLength; ++t) {
        CHECK(!env.done());
        env.step(noop);
    }
    CHECK(env.done());
    CHECK_THROWS_AS(env.step(noop), Error);
}

TEST_CASE("observation colors, padding and centering") {
    Rng rng(7);
    auto m = generate_map(rng);
    // place the finder right below the treasure tunnel
    m.finder_col = m.treasure_col;
    TreasureEnv env(m, rng.split(2));
    auto obs = env.observe(kFinder);
    auto px = [&](int dy, int dx, int ch) {
        return obs[((dy + 2) * 5 + (dx + 2)) * 3 + ch];
    };
    // center is always self-blue
    CHECK(px(0, 0, 0) == 0.f);
    CHECK(px(0, 0, 1) == 0.f);
    CHECK(px(0, 0, 2) == 1.f);
    // treasure is two rows up: yellow
    CHECK(px(-2, 0, 0) == 1.f);
    CHECK(px(-2, 0, 1) == 1.f);
    CHECK(px(-2, 0, 2) == 0.f);
    // row below the finder is out of... row 17 is wall, row 18 out of grid: both grey
    CHECK(px(2, 0, 0) == doctest::Approx(128.f / 255.f));

    // agent at column 1: left edge of the view is padded wall-grey
    auto m2 = generate_map(rng);
    m2.finder_col = 1;
    TreasureEnv env2(m2, rng.split(3));
    auto obs2 = env2.observe(kFinder);
    for (int dy = -2; dy <= 2; ++dy) {
        const float r = obs2[((dy + 2) * 5 + 0) * 3 + 0];
        const float g = obs2[((dy + 2) * 5 + 0) * 3 + 1];
        const float b = obs2[((dy + 2) * 5 + 0) * 3 + 2];
        // column -1 from col 1 is col 0: wall; fine either way it must be grey
        CHECK(r == doctest::Approx(128.f / 255.f));
        CHECK(g == doctest::Approx(128.f / 255.f));
        CHECK(b == doctest::Approx(128.f / 255.f));
    }
}

TEST_CASE("finder sees the treasure exactly when within two columns") {
    Rng rng(8);
    auto m = generate_map(rng);
    for (int col = 1; col <= 22; ++col) {
        m.finder_col = col;
        TreasureEnv env(m, rng.split(static_cast<uint64_t>(col)));
        auto obs = env.observe(kFinder);
        bool yellow = false;
        for (int i = 0; i < 25; ++i)
            yellow = yellow ||
                     (obs[i * 3 + 0] == 1.f && obs[i * 3 + 1] == 1.f && obs[i * 3 + 2] == 0.f);
        CHECK(yellow == (std::abs(col - m.treasure_col) <= 2));
    }
}

TEST_CASE("messages are delivered with a one-step delay") {
    Rng rng(9);
    TreasureEnv env = TreasureEnv::make(rng);
    CHECK(env.previous_message(kFinder) == -1);
    CHECK(env.previous_message(kCollector) == -1);
    JointAction joint;
    joint.message[kFinder] = 3;
    joint.message[kCollector] = 1;
    env.step(joint);
    CHECK(env.previous_message(kFinder) == 3);
    CHECK(env.previous_message(kCollector) == 1);
}

TEST_CASE("identical seeds and actions give identical trajectories") {
    for (int trial = 0; trial < 3; ++trial) {
        TreasureEnv a = TreasureEnv::make(Rng(1234));
        TreasureEnv b = TreasureEnv::make(Rng(1234));
        Rng act_rng(trial);
        for (int t = 0; t < 200; ++t) {
            JointAction joint;
            joint.action[0] = act_rng.uniform_int(5);
            joint.action[1] = act_rng.uniform_int(5);
            joint.message[0] = act_rng.uniform_int(5);
            joint.message[1] = act_rng.uniform_int(5);
            auto ra = a.step(joint);
            auto rb = b.step(joint);
            CHECK(ra.reward == rb.reward);
            CHECK(a.map().collector_row == b.map().collector_row);
            CHECK(a.map().collector_col == b.map().collector_col);
            CHECK(a.map().treasure_col == b.map().treasure_col);
        }
    }
}

TEST_CASE("env state serialization round-trips") {
    TreasureEnv env = TreasureEnv::make(Rng(77));
    JointAction joint;
    joint.action[kCollector] = kRight;
    joint.message[kFinder] = 2;
    for (int i = 0; i < 10; ++i) env.step(joint);
    std::vector<uint8_t> blob;
    env.serialize(blob);
    TreasureEnv restored;
    CHECK(restored.deserialize(blob.data(), blob.size()) == blob.size());
    std::vector<uint8_t> blob2;
    restored.serialize(blob2);
    CHECK(blob == blob2);
    CHECK(restored.previous_message(kFinder) == 2);
}

TEST_CASE("ppm export writes a valid P6 frame") {
    TreasureEnv env = TreasureEnv::make(Rng(5));
    const auto path = (fs::temp_directory_path() / "ecl_frame.ppm").string();
    env.write_ppm(path);
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    int w, h, maxv;
    in >> magic >> w >> h >> maxv;
    CHECK(magic == "P6");
    CHECK(w == TreasureMap::kCols);
    CHECK(h == TreasureMap::kRows);
    in.get();  // single whitespace
    std::vector<char> payload(static_cast<size_t>(w) * h * 3);
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    CHECK(in.gcount() == static_cast<std::streamsize>(payload.size()));
}

TEST_CASE("scripted sighted pair collects a plausible full-information reward") {
    // consistency band against the best published run (~15.4): scripted agents
    // with search + one-step message latency land in [14, 17]
    Rng rng(10);
    double total = 0;
    const int episodes = 20;
    for (int ep = 0; ep < episodes; ++ep) {
        TreasureEnv env = TreasureEnv::make(rng.split(static_cast<uint64_t>(ep)));
        ScriptedFinder finder(ScriptedFinder::Mode::sighted);
        ScriptedCollector collector;
        double reward = 0;
        while (!env.done()) {
            JointAction joint;
            auto fd = finder.act(env);
            auto cd = collector.act(env, env.previous_message(kFinder));
            joint.action[kFinder] = fd.action;
            joint.message[kFinder] = fd.message;
            joint.action[kCollector] = cd.action;
            joint.message[kCollector] = cd.message;
            reward += env.step(joint).reward;
        }
        total += reward;
    }
    const double mean = total / episodes;
    CAPTURE(mean);
    CHECK(mean >= 14.0);
    CHECK(mean <= 17.0);
}

}  // TEST_SUITE
