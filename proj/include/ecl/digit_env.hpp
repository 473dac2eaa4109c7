#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/rng.hpp"

namespace ecl {

// One-step digit-sum game: speaker and listener each observe a digit, the
// listener must act the sum. 20 messages, 19 actions, shared 0/1 reward.

inline constexpr int kDigits = 10;
inline constexpr int kSumActions = 2 * kDigits - 1;

struct DigitRound {
    int speaker_digit = 0;
    int listener_digit = 0;
    int speaker_index = -1;  // dataset index in image mode, -1 in symbolic mode
    int listener_index = -1;
};

// MNIST-style IDX container (big-endian headers, magic 2051/2049).
struct IdxDataset {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> images;  // count * rows * cols bytes
    std::vector<uint8_t> labels;  // count bytes, each 0..9

    size_t count() const { return labels.size(); }
    // pixels normalized to [0,1]
    std::vector<float> image(int index) const;
    int label(int index) const;
};

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path);

DigitRound sample_round_symbolic(Rng& rng);
DigitRound sample_round(const IdxDataset& dataset, Rng& rng);

// reward 1 iff action == d_s + d_l; pure function; errors on out-of-range action.
int resolve_round(const DigitRound& round, int listener_action);

}  // namespace ecl
