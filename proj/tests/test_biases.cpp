#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ecl/biases.hpp"
#include "ecl/nets.hpp"
#include "test_util.hpp"

using namespace ecl;
using namespace ecl::testutil;

namespace {

using TD = TensorT<double>;

std::vector<double> random_distribution(Rng& rng, int k) {
    std::vector<double> p(static_cast<size_t>(k));
    double z = 0;
    for (auto& x : p) {
        x = rng.uniform(0.05, 1.0);
        z += x;
    }
    for (auto& x : p) x /= z;
    return p;
}

// Straight-line reimplementation of the positive-signalling loss over a batch
// of explicit probability rows (the published algorithm, normalized per row):
// marginal-entropy term plus lambda-weighted squared entropy targeting.
double lps_oracle(const std::vector<std::vector<double>>& rows, double h_target,
                  double lambda_marginal, double lambda_conditional) {
    const size_t k = rows[0].size();
    std::vector<double> avg(k, 0.0);
    for (const auto& r : rows)
        for (size_t i = 0; i < k; ++i) avg[i] += r[i] / static_cast<double>(rows.size());
    double marginal_h = 0;
    for (double p : avg)
        if (p > 0) marginal_h -= p * std::log(p);
    double cond = 0;
    for (const auto& r : rows) {
        double h = 0;
        for (double p : r)
            if (p > 0) h -= p * std::log(p);
        cond += (h - h_target) * (h - h_target);
    }
    cond /= static_cast<double>(rows.size());
    return -lambda_marginal * marginal_h + lambda_conditional * cond;
}

}  // namespace

TEST_SUITE("biases") {

TEST_CASE("entropy closed forms") {
    CHECK(entropy(std::vector<double>{0.2, 0.2, 0.2, 0.2, 0.2}) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(entropy(std::vector<double>{0, 1, 0}) == doctest::Approx(0.0));
    CHECK(entropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(entropy(std::vector<double>{-0.1, 1.1}), Error);
}

TEST_CASE("mutual information estimator on closed-form batches") {
    // identical policies carry no information
    std::vector<double> batch;
    for (int i = 0; i < 6; ++i) batch.insert(batch.end(), {0.3, 0.5, 0.2});
    CHECK(message_mutual_information(batch, 3) == doctest::Approx(0.0).epsilon(1e-12));

    // |M| distinct one-hot policies with uniform frequencies: I = ln|M|
    std::vector<double> onehots;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> row(4, 0.0);
        row[static_cast<size_t>(i)] = 1.0;
        onehots.insert(onehots.end(), row.begin(), row.end());
    }
    CHECK(message_mutual_information(onehots, 4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS_AS(message_mutual_information({}, 3), Error);
}

TEST_CASE("mutual information matches exact enumeration on tabular batches") {
    // exact I(m;x) for x uniform over the batch rows: sum_x P(x) KL(p_x || mean)
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const int rows = 2 + rng.uniform_int(6), k = 2 + rng.uniform_int(5);
        std::vector<std::vector<double>> table;
        std::vector<double> flat;
        for (int r = 0; r < rows; ++r) {
            table.push_back(random_distribution(rng, k));
            flat.insert(flat.end(), table.back().begin(), table.back().end());
        }
        std::vector<double> mean(static_cast<size_t>(k), 0.0);
        for (const auto& row : table)
            for (int i = 0; i < k; ++i) mean[static_cast<size_t>(i)] += row[static_cast<size_t>(i)] / rows;
        double exact = 0;
        for (const auto& row : table)
            for (int i = 0; i < k; ++i)
                exact += (1.0 / rows) * row[static_cast<size_t>(i)] *
                         std::log(row[static_cast<size_t>(i)] / mean[static_cast<size_t>(i)]);
        CHECK(message_mutual_information(flat, k) == doctest::Approx(exact).epsilon(1e-9));
    }
}

TEST_CASE("positive signalling loss closed forms") {
    TapeD tp;
    // every row at exactly H_target entropy and a uniform marginal:
    // rows alternate (a, 1-a) and (1-a, a) with H(a) = H_target
    const double h_t = 0.5;
    // solve H(a) = 0.5 by bisection
    double lo = 1e-6, hi = 0.5;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double h = -(mid * std::log(mid) + (1 - mid) * std::log(1 - mid));
        (h < h_t ? lo : hi) = mid;
    }
    const double a = 0.5 * (lo + hi);
    auto probs = tp.leaf({4, 2}, {a, 1 - a, 1 - a, a, a, 1 - a, 1 - a, a});
    auto loss = positive_signalling_loss(tp, probs, h_t, 2.0, 3.0);
    CHECK(loss.scalar() == doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-6));

    // constant one-hot messages: marginal entropy 0, conditional 0
    TapeD tp2;
    auto onehot = tp2.leaf({3, 4}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
    auto loss2 = positive_signalling_loss(tp2, onehot, 0.7, 1.0, 2.0);
    CHECK(loss2.scalar() == doctest::Approx(2.0 * 0.7 * 0.7).epsilon(1e-9));

    CHECK_THROWS_AS(positive_signalling_loss(tp2, onehot, 5.0, 1.0, 1.0), Error);  // H_target > ln 4
    CHECK_THROWS_AS(positive_signalling_loss(tp2, onehot, -0.1, 1.0, 1.0), Error);
}

TEST_CASE("positive signalling loss matches the straight-line oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int rows = 3 + rng.uniform_int(6), k = 2 + rng.uniform_int(5);
        std::vector<std::vector<double>> table;
        std::vector<double> flat;
        for (int r = 0; r < rows; ++r) {
            table.push_back(random_distribution(rng, k));
            flat.insert(flat.end(), table.back().begin(), table.back().end());
        }
        const double h_t = rng.uniform(0.1, std::log(k) * 0.9);
        const double lm = rng.uniform(0.5, 3.0), lc = rng.uniform(0.5, 3.0);
        TapeD tp;
        auto probs = tp.leaf({rows, k}, flat);
        auto loss = positive_signalling_loss(tp, probs, h_t, lm, lc);
        CHECK(loss.scalar() == doctest::Approx(lps_oracle(table, h_t, lm, lc)).epsilon(1e-9));

        // the per-step variant agrees with the single-tensor version
        TapeD tp2;
        std::vector<TD> steps;
        for (const auto& row : table) steps.push_back(tp2.leaf({1, k}, row));
        auto loss2 = positive_signalling_loss_steps(tp2, steps, h_t, lm, lc);
        CHECK(loss2.scalar() == doctest::Approx(loss.scalar()).epsilon(1e-9));
    }
}

TEST_CASE("positive signalling loss gradient passes finite differences") {
    Rng rng(7);
    auto logits = rand_vec<double>(rng, 6 * 4, -1, 1);
    auto rep = check_gradient<double>(
        [&](TapeD& t, TD x) {
            auto probs = t.softmax(x);
            return positive_signalling_loss(t, probs, 0.6, 1.0, 3.0);
        },
        {6, 4}, logits, 1e-4, 1e-3);
    CAPTURE(rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("cross-entropy fit loss closed forms and gradient routing") {
    // pibar == pi: L_ce equals the summed entropy
    TapeD tp;
    std::vector<double> p{0.3, 0.5, 0.2};
    auto actual = tp.leaf({1, 3}, p);
    auto cf = tp.leaf({1, 3}, p);
    auto lce = cross_entropy_fit_loss(tp, {actual}, {cf});
    CHECK(lce.scalar() == doctest::Approx(entropy(p)).epsilon(1e-9));

    // one-hot actual vs uniform counterfactual: ln K per step
    TapeD tp2;
    auto oh = tp2.leaf({1, 4}, {1, 0, 0, 0});
    auto un = tp2.leaf({1, 4}, {0.25, 0.25, 0.25, 0.25});
    auto lce2 = cross_entropy_fit_loss(tp2, {oh, oh}, {un, un});
    CHECK(lce2.scalar() == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-9));

    // gradients flow only into the counterfactual side
    TapeD tp3;
    auto actual_logits = tp3.leaf({1, 3}, {0.2, -0.1, 0.4});
    auto cf_logits = tp3.leaf({1, 3}, {0.0, 0.3, -0.2});
    auto loss = cross_entropy_fit_loss(tp3, {tp3.softmax(actual_logits)}, {tp3.softmax(cf_logits)});
    tp3.backward(loss);
    for (double g : tp3.grad(actual_logits)) CHECK(g == 0.0);
    double cf_norm = 0;
    for (double g : tp3.grad(cf_logits)) cf_norm += std::abs(g);
    CHECK(cf_norm > 1e-6);

    CHECK_THROWS_AS(cross_entropy_fit_loss(tp3, {actual}, {}), Error);
}

TEST_CASE("positive listening loss closed forms and gradient routing") {
    TapeD tp;
    std::vector<double> p{0.3, 0.5, 0.2};
    auto a = tp.leaf({1, 3}, p);
    auto b = tp.leaf({1, 3}, p);
    CHECK(positive_listening_loss(tp, {a}, {b}).scalar() == doctest::Approx(0.0));

    // disjoint supports: -2 per step
    TapeD tp2;
    auto x = tp2.leaf({1, 4}, {0.5, 0.5, 0.0, 0.0});
    auto y = tp2.leaf({1, 4}, {0.0, 0.0, 0.5, 0.5});
    CHECK(positive_listening_loss(tp2, {x, x, x}, {y, y, y}).scalar() ==
          doctest::Approx(-6.0).epsilon(1e-9));

    // |0.3| + |0.3| = 0.6
    TapeD tp3;
    auto p1 = tp3.leaf({1, 2}, {0.8, 0.2});
    auto p2 = tp3.leaf({1, 2}, {0.5, 0.5});
    CHECK(positive_listening_loss(tp3, {p1}, {p2}).scalar() == doctest::Approx(-0.6).epsilon(1e-9));

    // gradients flow only into the actual policy
    TapeD tp4;
    auto actual_logits = tp4.leaf({1, 3}, {0.2, -0.1, 0.4});
    auto cf_logits = tp4.leaf({1, 3}, {0.5, 0.3, -0.2});
    auto loss = positive_listening_loss(tp4, {tp4.softmax(actual_logits)}, {tp4.softmax(cf_logits)});
    tp4.backward(loss);
    for (double g : tp4.grad(cf_logits)) CHECK(g == 0.0);
    double a_norm = 0;
    for (double g : tp4.grad(actual_logits)) a_norm += std::abs(g);
    CHECK(a_norm > 1e-6);
}

TEST_CASE("positive listening loss is bounded in [-2T, 0]") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int T = 1 + rng.uniform_int(5), k = 2 + rng.uniform_int(5);
        TapeD tp;
        std::vector<TD> act, cf;
        for (int t = 0; t < T; ++t) {
            act.push_back(tp.leaf({1, k}, random_distribution(rng, k)));
            cf.push_back(tp.leaf({1, k}, random_distribution(rng, k)));
        }
        const double v = positive_listening_loss(tp, act, cf).scalar();
        CHECK(v <= 1e-12);
        CHECK(v >= -2.0 * T - 1e-12);
    }
}

TEST_CASE("L_pl and L_ce gradients pass finite differences through a network") {
    // Both policy passes share the weights; the stop-gradient side must be
    // frozen at the unperturbed weights in the finite-difference function,
    // which is exactly what the stop-gradient contract promises.
    Rng rng(13);
    const int k = 4;
    auto x_actual = rand_vec<double>(rng, 6, 0, 1);
    auto x_cf = x_actual;
    for (int i = 3; i < 6; ++i) x_cf[static_cast<size_t>(i)] = 0.0;  // message slots zeroed
    auto w0 = rand_vec<double>(rng, 6 * k);

    auto forward = [&](const std::vector<double>& w, const std::vector<double>& x) {
        TapeD t;
        auto probs = t.softmax(t.matmul(t.constant({1, 6}, x), t.constant({6, k}, w)));
        return std::vector<double>(probs.values().begin(), probs.values().end());
    };
    const auto act0 = forward(w0, x_actual);
    const auto cf0 = forward(w0, x_cf);

    struct Case {
        const char* name;
        bool pl;  // else ce
    } cases[] = {{"pl", true}, {"ce", false}};
    for (const auto& cs : cases) {
        CAPTURE(cs.name);
        // analytic gradient from the real loss with both live passes
        TapeD t;
        auto w = t.leaf({6, k}, w0);
        auto act = t.softmax(t.matmul(t.constant({1, 6}, x_actual), w));
        auto cf = t.softmax(t.matmul(t.constant({1, 6}, x_cf), w));
        auto loss = cs.pl ? positive_listening_loss(t, {act}, {cf})
                          : cross_entropy_fit_loss(t, {act}, {cf});
        t.backward(loss);
        const auto analytic = t.grad(w);

        // finite differences with the stop-gradient side held at w0
        auto frozen_loss = [&](const std::vector<double>& w_val) {
            if (cs.pl) {
                auto a = forward(w_val, x_actual);
                double s = 0;
                for (int i = 0; i < k; ++i) s += std::abs(a[static_cast<size_t>(i)] - cf0[static_cast<size_t>(i)]);
                return -s;
            }
            auto c = forward(w_val, x_cf);
            double s = 0;
            for (int i = 0; i < k; ++i)
                s += act0[static_cast<size_t>(i)] * std::log(std::max(c[static_cast<size_t>(i)], 1e-10));
            return -s;
        };
        const double h = 1e-5;
        double max_rel = 0;
        auto wp = w0;
        for (size_t i = 0; i < w0.size(); ++i) {
            const double orig = wp[i];
            wp[i] = orig + h;
            const double fp = frozen_loss(wp);
            wp[i] = orig - h;
            const double fm = frozen_loss(wp);
            wp[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
            max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
        }
        CAPTURE(max_rel);
        CHECK(max_rel < 1e-3);
    }
}

TEST_CASE("CIC estimator closed forms and exact tabular agreement") {
    // message-ignoring listener: identical distributions
    std::vector<double> p{0.4, 0.6};
    CHECK(estimate_cic(p, p, 2) == doctest::Approx(0.0));

    // deterministic vs uniform: ln 2
    CHECK(estimate_cic({1.0, 0.0}, {0.5, 0.5}, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    // exact KL agreement on random tabular cases
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int k = 2 + rng.uniform_int(5);
        auto a = random_distribution(rng, k);
        auto b = random_distribution(rng, k);
        double exact = 0;
        for (int i = 0; i < k; ++i)
            exact += a[static_cast<size_t>(i)] *
                     std::log(a[static_cast<size_t>(i)] / b[static_cast<size_t>(i)]);
        CHECK(estimate_cic(a, b, k) == doctest::Approx(exact).epsilon(1e-9));
        CHECK(estimate_cic(a, b, k) >= -1e-12);
    }

    CHECK_THROWS_AS(estimate_cic({0.5, 0.5}, {1.0}, 2), Error);
}

TEST_CASE("counterfactual rollout modes") {
    // tabular "net": policy is one-hot on the incoming message when present,
    // uniform otherwise; hidden state counts messages seen.
    TapeD tp;
    const int k = 4;
    std::vector<int> messages{2, 0, 3};
    auto step_fn = [&](int t, TD h, TD c, bool zero) {
        std::vector<double> row(static_cast<size_t>(k), 1.0 / k);
        if (!zero) {
            row.assign(static_cast<size_t>(k), 0.0);
            row[static_cast<size_t>(messages[static_cast<size_t>(t)])] = 1.0;
        }
        auto probs = tp.constant({1, k}, row);
        return std::tuple(probs, h, c);
    };
    auto h0 = tp.constant({1, 1}, {0.0});
    auto c0 = tp.constant({1, 1}, {0.0});
    std::vector<std::pair<TD, TD>> states(3, {h0, c0});
    auto cf = counterfactual_rollout(3, CounterfactualMode::all_messages_zeroed, h0, c0, states, step_fn);
    REQUIRE(cf.size() == 3);
    for (const auto& p : cf)
        for (double v : p.values()) CHECK(v == doctest::Approx(0.25));

    // actual policies are one-hot; CIC = ln 4 per step
    std::vector<double> actual_flat, cf_flat;
    for (int t = 0; t < 3; ++t) {
        std::vector<double> row(static_cast<size_t>(k), 0.0);
        row[static_cast<size_t>(messages[static_cast<size_t>(t)])] = 1.0;
        actual_flat.insert(actual_flat.end(), row.begin(), row.end());
        cf_flat.insert(cf_flat.end(), cf[static_cast<size_t>(t)].values().begin(),
                       cf[static_cast<size_t>(t)].values().end());
    }
    CHECK(estimate_cic(actual_flat, cf_flat, k) == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    // single-step trajectory: both modes coincide
    auto cf_multi = counterfactual_rollout(1, CounterfactualMode::all_messages_zeroed, h0, c0,
                                           {{h0, c0}}, step_fn);
    auto cf_single = counterfactual_rollout(1, CounterfactualMode::final_message_zeroed, h0, c0,
                                            {{h0, c0}}, step_fn);
    CHECK(cf_multi[0].values() == cf_single[0].values());
}

TEST_CASE("counterfactual rollout through a message-invariant net is bit-equal") {
    Rng rng(19);
    TreasureNetConfig cfg;
    cfg.conv_channels = 3;
    cfg.mlp_hidden = 8;
    cfg.lstm_hidden = 6;
    auto net = make_treasure_net(cfg, rng);
    // zero the message rows of the lstm input weights (message enters after the MLP)
    auto& wx = net.at("lstm/wx");
    for (int row = cfg.mlp_hidden; row < cfg.mlp_hidden + cfg.n_messages; ++row)
        for (int j = 0; j < 4 * cfg.lstm_hidden; ++j)
            wx.value[static_cast<size_t>(row * 4 * cfg.lstm_hidden + j)] = 0.f;

    TapeF tp;
    auto bound = bind_params(tp, net, false);
    auto obs = tp.constant({1, 5, 5, 3}, rand_vec<float>(rng, 75, 0, 1));
    auto h0 = tp.constant_full({1, 6}, 0.f);
    auto c0 = tp.constant_full({1, 6}, 0.f);
    std::vector<float> actual_vals, cf_vals;
    {
        Tensor h = h0, c = c0;
        for (int t = 0; t < 3; ++t) {
            auto msg = tp.constant({1, 5}, std::vector<float>{0, 0, 1, 0, 0});
            auto out = treasure_step(tp, bound, cfg, obs, msg, h, c);
            auto probs = tp.softmax(out.action_logits);
            actual_vals.insert(actual_vals.end(), probs.values().begin(), probs.values().end());
            h = out.h;
            c = out.c;
        }
    }
    {
        Tensor h = h0, c = c0;
        for (int t = 0; t < 3; ++t) {
            auto msg = tp.constant_full({1, 5}, 0.f);
            auto out = treasure_step(tp, bound, cfg, obs, msg, h, c);
            auto probs = tp.softmax(out.action_logits);
            cf_vals.insert(cf_vals.end(), probs.values().begin(), probs.values().end());
            h = out.h;
            c = out.c;
        }
    }
    CHECK(std::memcmp(actual_vals.data(), cf_vals.data(), actual_vals.size() * sizeof(float)) == 0);
}

TEST_CASE("social influence reward scales the listener CIC") {
    auto zero = social_influence_reward({0.5, 1.0, 0.2}, 0.0);
    for (double r : zero) CHECK(r == 0.0);
    // message-copying listener against a uniform speaker: weight * ln|M| per step
    const double cic = std::log(5.0);
    auto rewards = social_influence_reward({cic, cic}, 0.3);
    for (double r : rewards) CHECK(r == doctest::Approx(0.3 * std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("gradient descent on L_ps alone reaches the target entropies") {
    // 8-state tabular speaker over 4 messages, plain gradient descent
    Rng rng(23);
    const int S = 8, M = 4;
    const double h_target = std::log(4.0) / 2.0;
    std::vector<float> logits(S * M);
    for (auto& x : logits) x = static_cast<float>(rng.uniform(-0.5, 0.5));
    double marginal = 0, worst_cond = 0;
    const double lr = 0.25;
    for (int step = 0; step < 5000; ++step) {
        TapeF tp;
        auto l = tp.leaf({S, M}, logits);
        auto probs = tp.softmax(l);
        auto loss = positive_signalling_loss(tp, probs, h_target, 1.0, 3.0);
        tp.backward(loss);
        const auto& g = tp.grad(l);
        for (int i = 0; i < S * M; ++i) logits[static_cast<size_t>(i)] -= static_cast<float>(lr * g[static_cast<size_t>(i)]);
        if (step == 4999 || step % 500 == 0) {
            const auto& pv = probs.values();
            std::vector<double> avg(M, 0.0);
            worst_cond = 0;
            for (int s = 0; s < S; ++s) {
                std::vector<double> row(pv.begin() + s * M, pv.begin() + (s + 1) * M);
                for (int m = 0; m < M; ++m) avg[static_cast<size_t>(m)] += row[static_cast<size_t>(m)] / S;
                worst_cond = std::max(worst_cond, std::abs(entropy(row) - h_target));
            }
            marginal = entropy(avg);
            if (std::abs(marginal - std::log(4.0)) < 0.05 && worst_cond < 0.05) break;
        }
    }
    CAPTURE(marginal);
    CAPTURE(worst_cond);
    CHECK(std::abs(marginal - std::log(4.0)) < 0.05);
    CHECK(worst_cond < 0.05);
}

}  // TEST_SUITE
