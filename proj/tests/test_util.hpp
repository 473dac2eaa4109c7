#pragma once

#include <cmath>
#include <vector>

#include "ecl/rng.hpp"

namespace ecl::testutil {

template <typename T>
std::vector<T> rand_vec(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

// Values bounded away from zero (for relu/abs kink avoidance).
template <typename T>
std::vector<T> rand_vec_away_from_zero(Rng& rng, int64_t n, double margin) {
    std::vector<T> v(static_cast<size_t>(n));
    for (auto& x : v) {
        double m = rng.uniform(margin, 1.0);
        x = static_cast<T>(rng.uniform() < 0.5 ? -m : m);
    }
    return v;
}

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace ecl::testutil
