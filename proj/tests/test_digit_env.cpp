#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ecl/digit_env.hpp"

using namespace ecl;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& f, uint32_t v) {
    uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

struct TmpIdx {
    std::string images, labels;
    TmpIdx(int count, int rows, int cols, bool break_magic = false, bool truncate = false,
           int label_count = -1) {
        const auto dir = fs::temp_directory_path() / "ecl_idx_test";
        fs::create_directories(dir);
        static int serial = 0;
        images = (dir / ("img" + std::to_string(serial))).string();
        labels = (dir / ("lbl" + std::to_string(serial))).string();
        ++serial;
        {
            std::ofstream f(images, std::ios::binary);
            put_be32(f, break_magic ? 2049 : 2051);
            put_be32(f, static_cast<uint32_t>(count));
            put_be32(f, static_cast<uint32_t>(rows));
            put_be32(f, static_cast<uint32_t>(cols));
            const int total = count * rows * cols - (truncate ? 7 : 0);
            for (int i = 0; i < total; ++i) f.put(static_cast<char>(i % 251));
        }
        {
            std::ofstream f(labels, std::ios::binary);
            put_be32(f, 2049);
            const int n = label_count < 0 ? count : label_count;
            put_be32(f, static_cast<uint32_t>(n));
            for (int i = 0; i < n; ++i) f.put(static_cast<char>(i % 10));
        }
    }
};

}  // namespace

TEST_SUITE("digit_env") {

TEST_CASE("idx loader reads headers and payload") {
    TmpIdx t(10, 28, 28);
    auto ds = load_idx(t.images, t.labels);
    CHECK(ds.count() == 10);
    CHECK(ds.rows == 28);
    CHECK(ds.cols == 28);
    CHECK(ds.label(3) == 3);
    auto img = ds.image(0);
    CHECK(img.size() == 28 * 28);
    for (float p : img) {
        CHECK(p >= 0.f);
        CHECK(p <= 1.f);
    }
}

TEST_CASE("idx loader distinguishes error cases") {
    TmpIdx wrong_magic(4, 4, 4, /*break_magic=*/true);
    CHECK_THROWS_WITH_AS(load_idx(wrong_magic.images, wrong_magic.labels),
                         doctest::Contains("wrong magic"), Error);

    TmpIdx truncated(4, 4, 4, false, /*truncate=*/true);
    CHECK_THROWS_WITH_AS(load_idx(truncated.images, truncated.labels),
                         doctest::Contains("truncated"), Error);

    TmpIdx mismatch(4, 4, 4, false, false, /*label_count=*/3);
    CHECK_THROWS_WITH_AS(load_idx(mismatch.images, mismatch.labels),
                         doctest::Contains("count mismatch"), Error);

    // a label file passed as the image file hits the magic check
    TmpIdx ok(4, 4, 4);
    CHECK_THROWS_WITH_AS(load_idx(ok.labels, ok.labels), doctest::Contains("wrong magic"), Error);
}

TEST_CASE("symbolic sampling is reproducible and roughly uniform") {
    Rng a(123), b(123);
    for (int i = 0; i < 10; ++i) {
        auto ra = sample_round_symbolic(a);
        auto rb = sample_round_symbolic(b);
        CHECK(ra.speaker_digit == rb.speaker_digit);
        CHECK(ra.listener_digit == rb.listener_digit);
    }

    Rng rng(7);
    int speaker_counts[10] = {0}, listener_counts[10] = {0};
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto r = sample_round_symbolic(rng);
        speaker_counts[r.speaker_digit] += 1;
        listener_counts[r.listener_digit] += 1;
    }
    for (int d = 0; d < 10; ++d) {
        CHECK(speaker_counts[d] / double(n) > 0.09);
        CHECK(speaker_counts[d] / double(n) < 0.11);
        CHECK(listener_counts[d] / double(n) > 0.09);
        CHECK(listener_counts[d] / double(n) < 0.11);
    }
}

TEST_CASE("image-mode rounds carry the sampled image's label") {
    TmpIdx t(20, 4, 4);
    auto ds = load_idx(t.images, t.labels);
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        auto r = sample_round(ds, rng);
        CHECK(r.speaker_digit == ds.label(r.speaker_index));
        CHECK(r.listener_digit == ds.label(r.listener_index));
    }
}

TEST_CASE("resolve_round rewards exactly the digit sum") {
    DigitRound r;
    r.speaker_digit = 4;
    r.listener_digit = 5;
    CHECK(resolve_round(r, 9) == 1);
    CHECK(resolve_round(r, 8) == 0);
    DigitRound zero;
    CHECK(resolve_round(zero, 0) == 1);
    CHECK_THROWS_AS(resolve_round(r, 19), Error);
    CHECK_THROWS_AS(resolve_round(r, -1), Error);
}

TEST_CASE("rewards over all 19 actions sum to exactly 1") {
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        auto r = sample_round_symbolic(rng);
        int total = 0;
        for (int a = 0; a < kSumActions; ++a) total += resolve_round(r, a);
        CHECK(total == 1);
    }
}

}  // TEST_SUITE
