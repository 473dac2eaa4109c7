#include "ecl/treasure_env.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace ecl {

namespace {

struct Rgb {
    uint8_t r, g, b;
};
constexpr Rgb kWallGrey{128, 128, 128};
constexpr Rgb kTunnelBlack{0, 0, 0};
constexpr Rgb kTreasureYellow{255, 255, 0};
constexpr Rgb kSelfBlue{0, 0, 255};
constexpr Rgb kPartnerRed{255, 0, 0};

constexpr int kDr[kTreasureActions] = {0, -1, 0, 1, 0};  // noop, up, right, down, left
constexpr int kDc[kTreasureActions] = {0, 0, 1, 0, -1};

}  // namespace

TreasureMap generate_map(Rng& rng) {
    TreasureMap m;
    // Uniform over all 4-subsets of corridor columns that are pairwise >= 3
    // apart, via rejection sampling.
    while (true) {
        std::array<int, TreasureMap::kNumTunnels> cols{};
        bool distinct = true;
        for (auto& c : cols) c = TreasureMap::kCorridorMin + rng.uniform_int(TreasureMap::kCorridorMax -
                                                                             TreasureMap::kCorridorMin + 1);
        std::sort(cols.begin(), cols.end());
        for (int i = 0; i + 1 < TreasureMap::kNumTunnels; ++i)
            if (cols[static_cast<size_t>(i + 1)] - cols[static_cast<size_t>(i)] < TreasureMap::kMinTunnelGap)
                distinct = false;
        if (!distinct) continue;
        m.tunnel_cols = cols;
        break;
    }
    const int t = rng.uniform_int(TreasureMap::kNumTunnels);
    m.treasure_row = TreasureMap::kTunnelBottomRow;
    m.treasure_col = m.tunnel_cols[static_cast<size_t>(t)];
    m.collector_row = TreasureMap::kTopRow;
    m.collector_col = TreasureMap::kCorridorMin +
                      rng.uniform_int(TreasureMap::kCorridorMax - TreasureMap::kCorridorMin + 1);
    m.finder_row = TreasureMap::kBottomRow;
    m.finder_col = TreasureMap::kCorridorMin +
                   rng.uniform_int(TreasureMap::kCorridorMax - TreasureMap::kCorridorMin + 1);
    m.step_count = 0;
    return m;
}

StepResult TreasureEnv::step(const JointAction& joint) {
    if (done()) fail("TreasureEnv::step: episode is done (step ", map_.step_count, ")");
    for (int agent = 0; agent < 2; ++agent) {
        const int a = joint.action[static_cast<size_t>(agent)];
        if (a < 0 || a >= kTreasureActions) fail("TreasureEnv::step: bad action ", a);
        const int msg = joint.message[static_cast<size_t>(agent)];
        if (msg < 0 || msg >= kTreasureMessages) fail("TreasureEnv::step: bad message ", msg);
        int& row = agent == kFinder ? map_.finder_row : map_.collector_row;
        int& col = agent == kFinder ? map_.finder_col : map_.collector_col;
        const int nr = row + kDr[a], nc = col + kDc[a];
        if (map_.is_tunnel(nr, nc)) {  // moves into walls are no-ops
            row = nr;
            col = nc;
        }
    }
    StepResult res;
    if (map_.collector_row == map_.treasure_row && map_.collector_col == map_.treasure_col) {
        res.reward = 1;
        res.collected = true;
        const int t = rng_.uniform_int(TreasureMap::kNumTunnels);  // possibly the same tunnel
        map_.treasure_col = map_.tunnel_cols[static_cast<size_t>(t)];
        map_.treasure_row = TreasureMap::kTunnelBottomRow;
    }
    prev_message_ = joint.message;
    map_.step_count += 1;
    res.done = done();
    return res;
}

Observation TreasureEnv::observe(int agent) const {
    if (agent != kFinder && agent != kCollector) fail("observe: no agent ", agent);
    const int ar = agent == kFinder ? map_.finder_row : map_.collector_row;
    const int ac = agent == kFinder ? map_.finder_col : map_.collector_col;
    const int pr = agent == kFinder ? map_.collector_row : map_.finder_row;
    const int pc = agent == kFinder ? map_.collector_col : map_.finder_col;

    Observation obs{};
    const int half = kObsSide / 2;
    for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
            const int r = ar + dy, c = ac + dx;
            Rgb px = kWallGrey;  // out-of-bounds padding is wall grey
            if (map_.in_grid(r, c)) px = map_.is_tunnel(r, c) ? kTunnelBlack : kWallGrey;
            if (r == map_.treasure_row && c == map_.treasure_col) px = kTreasureYellow;
            if (r == pr && c == pc) px = kPartnerRed;
            if (dy == 0 && dx == 0) px = kSelfBlue;
            const size_t base =
                (static_cast<size_t>(dy + half) * kObsSide + static_cast<size_t>(dx + half)) * kObsChannels;
            obs[base + 0] = static_cast<float>(px.r) / 255.0f;
            obs[base + 1] = static_cast<float>(px.g) / 255.0f;
            obs[base + 2] = static_cast<float>(px.b) / 255.0f;
        }
    return obs;
}

std::vector<uint8_t> TreasureEnv::render_frame() const {
    std::vector<uint8_t> frame(static_cast<size_t>(TreasureMap::kRows) * TreasureMap::kCols * 3);
    for (int r = 0; r < TreasureMap::kRows; ++r)
        for (int c = 0; c < TreasureMap::kCols; ++c) {
            Rgb px = map_.is_tunnel(r, c) ? kTunnelBlack : kWallGrey;
            if (r == map_.treasure_row && c == map_.treasure_col) px = kTreasureYellow;
            if (r == map_.finder_row && c == map_.finder_col) px = kPartnerRed;
            if (r == map_.collector_row && c == map_.collector_col) px = kSelfBlue;
            const size_t base = (static_cast<size_t>(r) * TreasureMap::kCols + c) * 3;
            frame[base + 0] = px.r;
            frame[base + 1] = px.g;
            frame[base + 2] = px.b;
        }
    return frame;
}

void TreasureEnv::write_ppm(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("write_ppm: cannot open ", path);
    out << "P6\n" << TreasureMap::kCols << ' ' << TreasureMap::kRows << "\n255\n";
    const auto frame = render_frame();
    out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
    if (!out) fail("write_ppm: short write to ", path);
}

void TreasureEnv::serialize(std::vector<uint8_t>& out) const {
    auto put_i32 = [&](int32_t v) {
        const auto* b = reinterpret_cast<const uint8_t*>(&v);
        out.insert(out.end(), b, b + 4);
    };
    for (int tc : map_.tunnel_cols) put_i32(tc);
    put_i32(map_.treasure_row);
    put_i32(map_.treasure_col);
    put_i32(map_.finder_row);
    put_i32(map_.finder_col);
    put_i32(map_.collector_row);
    put_i32(map_.collector_col);
    put_i32(map_.step_count);
    put_i32(prev_message_[0]);
    put_i32(prev_message_[1]);
    const auto st = rng_.state();
    const auto* b = reinterpret_cast<const uint8_t*>(st.data());
    out.insert(out.end(), b, b + sizeof(st));
}

size_t TreasureEnv::deserialize(const uint8_t* data, size_t size) {
    const size_t need = 13 * 4 + 32;
    if (size < need) fail("TreasureEnv::deserialize: blob too small (", size, " < ", need, ")");
    size_t off = 0;
    auto get_i32 = [&]() {
        int32_t v;
        std::memcpy(&v, data + off, 4);
        off += 4;
        return v;
    };
    for (auto& tc : map_.tunnel_cols) tc = get_i32();
    map_.treasure_row = get_i32();
    map_.treasure_col = get_i32();
    map_.finder_row = get_i32();
    map_.finder_col = get_i32();
    map_.collector_row = get_i32();
    map_.collector_col = get_i32();
    map_.step_count = get_i32();
    prev_message_[0] = get_i32();
    prev_message_[1] = get_i32();
    std::array<uint64_t, 4> st;
    std::memcpy(st.data(), data + off, 32);
    off += 32;
    rng_.set_state(st);
    return off;
}

ScriptedDecision ScriptedFinder::act(const TreasureEnv& env) {
    const TreasureMap& m = env.map();
    ScriptedDecision d;
    if (mode_ == Mode::oracle) {
        d.message = m.treasure_tunnel();
        d.action = kNoop;
        return d;
    }
    if (mode_ == Mode::random) {
        d.message = rng_.uniform_int(kTreasureMessages);
        d.action = kNoop;
        return d;
    }
    // sighted: treasure is visible iff within 2 columns (rows differ by 2)
    const int dc = m.treasure_col - m.finder_col;
    if (std::abs(dc) <= 2) {
        d.message = m.treasure_tunnel();
        d.action = dc > 0 ? kRight : dc < 0 ? kLeft : kNoop;  // settle under it
        checked_ = {false, false, false, false};
        return d;
    }
    d.message = 4;  // nothing seen
    // any tunnel within view distance has been checked this sweep
    for (int i = 0; i < TreasureMap::kNumTunnels; ++i)
        if (std::abs(m.tunnel_cols[static_cast<size_t>(i)] - m.finder_col) <= 2)
            checked_[static_cast<size_t>(i)] = true;
    int target = -1, best = 1 << 20;
    for (int pass = 0; pass < 2 && target < 0; ++pass) {
        for (int i = 0; i < TreasureMap::kNumTunnels; ++i) {
            if (checked_[static_cast<size_t>(i)]) continue;
            const int dist = std::abs(m.tunnel_cols[static_cast<size_t>(i)] - m.finder_col);
            if (dist < best) {
                best = dist;
                target = i;
            }
        }
        if (target < 0) checked_ = {false, false, false, false};  // full sweep done, start over
    }
    if (target < 0) {
        d.action = kNoop;
        return d;
    }
    d.action = m.tunnel_cols[static_cast<size_t>(target)] > m.finder_col ? kRight : kLeft;
    return d;
}

ScriptedDecision ScriptedCollector::act(const TreasureEnv& env, int incoming_message) {
    const TreasureMap& m = env.map();
    if (incoming_message >= 0 && incoming_message < TreasureMap::kNumTunnels) target_ = incoming_message;
    if (incoming_message == TreasureMap::kNumTunnels) target_ = -1;  // nothing seen: head back up
    ScriptedDecision d;
    d.message = 0;
    if (target_ < 0) {
        d.action = m.collector_row > TreasureMap::kTopRow ? kUp : kNoop;
        return d;
    }
    const int tc = m.tunnel_cols[static_cast<size_t>(target_)];
    if (m.collector_col == tc) {
        d.action = m.collector_row < TreasureMap::kTunnelBottomRow ? kDown : kNoop;
    } else if (m.collector_row == TreasureMap::kTopRow) {
        d.action = m.collector_col < tc ? kRight : kLeft;
    } else {
        d.action = kUp;  // climb out of the wrong tunnel first
    }
    return d;
}

}  // namespace ecl
