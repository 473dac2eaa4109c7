#include <doctest.h>

#include <cmath>
#include <vector>

#include "ecl/rng.hpp"

using namespace ecl;

TEST_SUITE("rng") {

TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("state roundtrip resumes the stream exactly") {
    Rng a(7);
    for (int i = 0; i < 13; ++i) a.next_u64();
    auto snapshot = a.state();
    std::vector<uint64_t> expect;
    for (int i = 0; i < 20; ++i) expect.push_back(a.next_u64());
    Rng b(999);
    b.set_state(snapshot);
    for (int i = 0; i < 20; ++i) CHECK(b.next_u64() == expect[static_cast<size_t>(i)]);
}

TEST_CASE("uniform stays in [0,1) and uniform_int in range") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const int k = rng.uniform_int(7);
        CHECK(k >= 0);
        CHECK(k < 7);
    }
    CHECK_THROWS(rng.uniform_int(0));
}

TEST_CASE("split streams differ from the parent and each other") {
    Rng parent(5);
    Rng a = parent.split(1);
    Rng b = parent.split(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64() ? 1 : 0;
    CHECK(same == 0);
}

TEST_CASE("sample_index follows the distribution roughly") {
    Rng rng(11);
    const float p[3] = {0.2f, 0.5f, 0.3f};
    int counts[3] = {0, 0, 0};
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[rng.sample_index(p, 3)] += 1;
    CHECK(std::abs(counts[0] / double(n) - 0.2) < 0.01);
    CHECK(std::abs(counts[1] / double(n) - 0.5) < 0.01);
    CHECK(std::abs(counts[2] / double(n) - 0.3) < 0.01);
}

}  // TEST_SUITE
