#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ecl/nets.hpp"
#include "test_util.hpp"

using namespace ecl;
using namespace ecl::testutil;

namespace {

// double copy of a float ParamSet, for finite-difference runs
std::vector<double> to_double(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("digit speaker and listener logit widths") {
    Rng rng(1);
    DigitNetConfig sc;
    sc.symbolic = true;
    auto speaker = make_digit_net(sc, rng);
    TapeF tp;
    auto bs = bind_params(tp, speaker, false);
    auto obs = tp.constant({3, 10}, std::vector<float>(30, 0.1f));
    auto logits = digit_forward(tp, bs, sc, obs);
    CHECK(logits.shape() == Shape{3, 20});

    DigitNetConfig lc = sc;
    lc.listener = true;
    auto listener = make_digit_net(lc, rng);
    auto bl = bind_params(tp, listener, false);
    auto msg = tp.constant({3, 20}, std::vector<float>(60, 0.f));
    auto llog = digit_forward(tp, bl, lc, obs, msg);
    CHECK(llog.shape() == Shape{3, 19});

    CHECK_THROWS_AS(digit_forward(tp, bl, lc, obs), Error);  // listener needs a message
    CHECK_THROWS_AS(digit_forward(tp, bs, sc, obs, msg), Error);
}

TEST_CASE("image-mode digit net produces 20 logits from 28x28 input") {
    Rng rng(2);
    DigitNetConfig sc;  // image speaker
    auto speaker = make_digit_net(sc, rng);
    TapeF tp;
    auto bs = bind_params(tp, speaker, false);
    auto obs = tp.constant({1, 28, 28, 1}, rand_vec<float>(rng, 28 * 28, 0, 1));
    auto logits = digit_forward(tp, bs, sc, obs);
    CHECK(logits.shape() == Shape{1, 20});
    for (float v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("listener with zeroed message-path weights is exactly message-invariant") {
    Rng rng(3);
    DigitNetConfig lc;
    lc.symbolic = true;
    lc.listener = true;
    auto listener = make_digit_net(lc, rng);
    // message inputs occupy fc1/w rows 10..29
    auto& w = listener.at("fc1/w");
    for (int row = 10; row < 30; ++row)
        for (int j = 0; j < lc.mlp_hidden; ++j)
            w.value[static_cast<size_t>(row * lc.mlp_hidden + j)] = 0.f;

    auto oh10 = [](int i) { std::vector<float> v(10, 0.f); v[static_cast<size_t>(i)] = 1.f; return v; };
    auto oh20 = [](int i) { std::vector<float> v(20, 0.f); if (i >= 0) v[static_cast<size_t>(i)] = 1.f; return v; };
    auto run2 = [&](int msg) {
        TapeF tp;
        auto b = bind_params(tp, listener, false);
        auto obs = tp.constant({1, 10}, oh10(4));
        auto m = tp.constant({1, 20}, oh20(msg));
        return digit_forward(tp, b, lc, obs, m).values();
    };
    auto a = run2(0);
    for (int msg = 1; msg < 20; ++msg) {
        auto b = run2(msg);
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("listener logits differ across messages in general") {
    Rng rng(4);
    DigitNetConfig lc;
    lc.symbolic = true;
    lc.listener = true;
    auto listener = make_digit_net(lc, rng);
    auto oh10 = [](int i) { std::vector<float> v(10, 0.f); v[static_cast<size_t>(i)] = 1.f; return v; };
    auto oh20 = [](int i) { std::vector<float> v(20, 0.f); v[static_cast<size_t>(i)] = 1.f; return v; };
    auto run = [&](int msg) {
        TapeF tp;
        auto b = bind_params(tp, listener, false);
        return digit_forward(tp, b, lc, tp.constant({1, 10}, oh10(4)), tp.constant({1, 20}, oh20(msg)))
            .values();
    };
    auto a = run(0), b = run(7);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a[i] != b[i];
    CHECK(any_diff);
}

TEST_CASE("zero input with zeroed head gives the uniform policy") {
    Rng rng(5);
    DigitNetConfig sc;
    sc.symbolic = true;
    auto net = make_digit_net(sc, rng);
    for (auto& x : net.at("head/w").value) x = 0.f;
    for (auto& x : net.at("head/b").value) x = 0.f;
    TapeF tp;
    auto b = bind_params(tp, net, false);
    auto logits = digit_forward(tp, b, sc, tp.constant({1, 10}, std::vector<float>(10, 0.f)));
    auto probs = tp.softmax(logits);
    for (float p : probs.values()) CHECK(p == doctest::Approx(0.05).epsilon(1e-6));
}

TEST_CASE("treasure net output widths and state size") {
    Rng rng(6);
    TreasureNetConfig cfg;  // paper defaults: 6 channels, 64 MLP, 128 LSTM
    auto net = make_treasure_net(cfg, rng);
    TapeF tp;
    auto b = bind_params(tp, net, false);
    auto obs = tp.constant({2, 5, 5, 3}, rand_vec<float>(rng, 2 * 75, 0, 1));
    auto msg = tp.constant_full({2, 5}, 0.f);  // zeroed message is a valid input
    auto h = tp.constant_full({2, 128}, 0.f);
    auto c = tp.constant_full({2, 128}, 0.f);
    auto out = treasure_step(tp, b, cfg, obs, msg, h, c);
    CHECK(out.action_logits.shape() == Shape{2, 5});
    CHECK(out.message_logits.shape() == Shape{2, 5});
    CHECK(out.value.shape() == Shape{2});
    CHECK(out.h.shape() == Shape{2, 128});
    CHECK(out.c.shape() == Shape{2, 128});
    for (float v : out.action_logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("identical inputs with different carried state give different logits") {
    Rng rng(7);
    TreasureNetConfig cfg;
    cfg.lstm_hidden = 32;
    cfg.mlp_hidden = 16;
    auto net = make_treasure_net(cfg, rng);
    TapeF tp;
    auto b = bind_params(tp, net, false);
    auto obs = tp.constant({1, 5, 5, 3}, rand_vec<float>(rng, 75, 0, 1));
    auto msg = tp.constant({1, 5}, std::vector<float>{0, 1, 0, 0, 0});
    auto h0 = tp.constant_full({1, 32}, 0.f);
    auto c0 = tp.constant_full({1, 32}, 0.f);
    auto s1 = treasure_step(tp, b, cfg, obs, msg, h0, c0);
    auto s2 = treasure_step(tp, b, cfg, obs, msg, s1.h, s1.c);
    bool diff = false;
    for (size_t i = 0; i < s1.action_logits.values().size(); ++i)
        diff = diff || s1.action_logits.values()[i] != s2.action_logits.values()[i];
    CHECK(diff);
}

// Architecture-level finite differences. A relu net evaluated at a random
// instance can straddle a kink within the +-h window (bias coordinates shift
// every pre-activation that shares them), so a failed instance is re-rolled;
// a genuine backward bug fails every instance.
namespace {

template <typename MakeF>
bool fd_pass_any_instance(MakeF&& make_f, const Shape& shape, const std::vector<double>& x0,
                          int tries = 8, int max_coords = 24) {
    for (int attempt = 0; attempt < tries; ++attempt) {
        auto f = make_f(attempt);
        auto rep = check_gradient<double>(f, shape, x0, 1e-3, 1e-3, max_coords,
                                          static_cast<uint64_t>(attempt * 131 + 7));
        if (rep.pass) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("full architectures pass the finite-difference check") {
    Rng rng(8);
    // symbolic digit listener (covers concat + MLP path)
    {
        DigitNetConfig lc;
        lc.symbolic = true;
        lc.listener = true;
        lc.mlp_hidden = 16;
        auto net = make_digit_net(lc, rng);
        for (const auto& p : net.params) {
            auto make_f = [&](int attempt) {
                Rng irng(static_cast<uint64_t>(1000 + attempt));
                auto obs = rand_vec<double>(irng, 10, 0, 1);
                auto msg = rand_vec<double>(irng, 20, 0, 1);
                auto wgt = rand_vec<double>(irng, 19);
                return [&, obs, msg, wgt](Tape<double>& t, TensorT<double> x) {
                    BoundParams<double> bound;
                    for (const auto& q : net.params)
                        bound.tensors.emplace(q.name, q.name == p.name
                                                          ? x
                                                          : t.constant(q.shape, to_double(q.value)));
                    auto logits = digit_forward(t, bound, lc, t.constant({1, 10}, obs),
                                                t.constant({1, 20}, msg));
                    auto probs = t.softmax(logits);
                    return t.sum(t.multiply(probs, t.constant({1, 19}, wgt)));
                };
            };
            CAPTURE(p.name);
            CHECK(fd_pass_any_instance(make_f, p.shape, to_double(p.value)));
        }
    }
    // treasure net, 3-step BPTT
    {
        TreasureNetConfig cfg;
        cfg.conv_channels = 4;
        cfg.mlp_hidden = 12;
        cfg.lstm_hidden = 8;
        auto net = make_treasure_net(cfg, rng);
        for (const auto& p : net.params) {
            auto make_f = [&](int attempt) {
                Rng irng(static_cast<uint64_t>(2000 + attempt));
                auto obs = rand_vec<double>(irng, 3 * 75, 0, 1);
                auto wgt = rand_vec<double>(irng, 5);
                return [&, obs, wgt](Tape<double>& t, TensorT<double> x) {
                    BoundParams<double> bound;
                    for (const auto& q : net.params)
                        bound.tensors.emplace(q.name, q.name == p.name
                                                          ? x
                                                          : t.constant(q.shape, to_double(q.value)));
                    auto h = t.constant_full({1, cfg.lstm_hidden}, 0.0);
                    auto c = t.constant_full({1, cfg.lstm_hidden}, 0.0);
                    TensorT<double> acc;
                    for (int step = 0; step < 3; ++step) {
                        auto o = t.constant({1, 5, 5, 3},
                                            std::vector<double>(obs.begin() + step * 75,
                                                                obs.begin() + (step + 1) * 75));
                        auto m = t.constant({1, 5}, std::vector<double>{0, 0, 1, 0, 0});
                        auto out = treasure_step(t, bound, cfg, o, m, h, c);
                        auto term = t.add(t.sum(t.multiply(t.softmax(out.action_logits),
                                                           t.constant({1, 5}, wgt)), -1),
                                          t.sum(out.value, -1));
                        acc = step == 0 ? term : t.add(acc, term);
                        h = out.h;
                        c = out.c;
                    }
                    return acc;
                };
            };
            CAPTURE(p.name);
            CHECK(fd_pass_any_instance(make_f, p.shape, to_double(p.value), 8, 20));
        }
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Rng rng(9);
    ParamSet ps;
    ps.add("w", {4}).value = {1.f, -2.f, 3.f, 0.5f};
    auto st = OptimizerState::adam(ps, 0.01);
    auto before = ps.at("w").value;
    adam_step(st, ps, {{0, 0, 0, 0}});
    CHECK(ps.at("w").value == before);
}

TEST_CASE("adam: first step from zero moments is -lr * sign(g)") {
    ParamSet ps;
    ps.add("w", {3}).value = {0.f, 0.f, 0.f};
    const double lr = 0.01;
    auto st = OptimizerState::adam(ps, lr);
    adam_step(st, ps, {{0.5f, -2.0f, 1e-3f}});
    CHECK(ps.at("w").value[0] == doctest::Approx(-lr).epsilon(1e-4));
    CHECK(ps.at("w").value[1] == doctest::Approx(lr).epsilon(1e-4));
    CHECK(ps.at("w").value[2] == doctest::Approx(-lr).epsilon(1e-2));  // eps matters at tiny g
}

TEST_CASE("adam: constant gradient step magnitude approaches lr") {
    ParamSet ps;
    ps.add("w", {1}).value = {0.f};
    const double lr = 0.001;
    auto st = OptimizerState::adam(ps, lr);
    float prev = 0.f;
    double step_mag = 0;
    for (int i = 0; i < 3000; ++i) {
        prev = ps.at("w").value[0];
        adam_step(st, ps, {{0.37f}});
        step_mag = std::abs(ps.at("w").value[0] - prev);
    }
    CHECK(step_mag == doctest::Approx(lr).epsilon(0.02));
}

TEST_CASE("rmsprop: annealing rule and fixed points") {
    ParamSet ps;
    ps.add("w", {2}).value = {1.f, 1.f};
    auto st = OptimizerState::rmsprop(ps, 0.001);
    CHECK(rmsprop_effective_lr(st, 2000000) == doctest::Approx(0.001 * 0.99 * 0.99).epsilon(1e-9));

    auto before = ps.at("w").value;
    rmsprop_step(st, ps, {{0, 0}}, 0);
    CHECK(ps.at("w").value == before);

    // constant gradient: step magnitude approaches lr
    ParamSet ps2;
    ps2.add("w", {1}).value = {0.f};
    auto st2 = OptimizerState::rmsprop(ps2, 0.001);
    float prev = 0.f;
    double mag = 0;
    for (int i = 0; i < 2000; ++i) {
        prev = ps2.at("w").value[0];
        rmsprop_step(st2, ps2, {{0.25f}}, 0);
        mag = std::abs(ps2.at("w").value[0] - prev);
    }
    CHECK(mag == doctest::Approx(0.001).epsilon(0.02));
}

TEST_CASE("optimizer updates are deterministic and reject shape mismatches") {
    Rng rng(10);
    ParamSet a, b;
    a.add("w", {8}).value = rand_vec<float>(rng, 8);
    b.add("w", {8}).value = a.at("w").value;
    auto sa = OptimizerState::adam(a, 0.01);
    auto sb = OptimizerState::adam(b, 0.01);
    std::vector<std::vector<float>> g{rand_vec<float>(rng, 8)};
    adam_step(sa, a, g);
    adam_step(sb, b, g);
    CHECK(a.at("w").value == b.at("w").value);

    CHECK_THROWS_AS(adam_step(sa, a, {{1.f, 2.f}}), Error);
}

}  // TEST_SUITE
