#include <algorithm>
#include <cmath>

#include "ecl/harness.hpp"

namespace ecl {

std::vector<float> one_hot(int index, int width) {
    std::vector<float> v(static_cast<size_t>(width), 0.f);
    if (index >= 0) {
        if (index >= width) fail("one_hot: index ", index, " out of range [0,", width, ")");
        v[static_cast<size_t>(index)] = 1.f;
    }
    return v;
}

bool classify_good_run(const std::string& env, double final_mean_reward) {
    if (env == "digit") return final_mean_reward > 0.2;
    if (env == "treasure") return final_mean_reward > 13.0;
    fail("classify_good_run: unknown env '", env, "'");
}

DigitAgents make_digit_agents(const ExperimentConfig& cfg, Rng& init_rng) {
    DigitAgents a;
    a.speaker_cfg.listener = false;
    a.speaker_cfg.symbolic = cfg.mode == "symbolic";
    a.speaker_cfg.mlp_hidden = cfg.digit_mlp_hidden;
    a.listener_cfg = a.speaker_cfg;
    a.listener_cfg.listener = true;
    Rng rs = init_rng.split(1), rl = init_rng.split(2);
    a.speaker = make_digit_net(a.speaker_cfg, rs);
    a.listener = make_digit_net(a.listener_cfg, rl);
    if (cfg.optimizer == "adam") {
        a.opt_speaker = OptimizerState::adam(a.speaker, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        a.opt_listener = OptimizerState::adam(a.listener, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    } else {
        a.opt_speaker = OptimizerState::rmsprop(a.speaker, cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps,
                                                cfg.lr_anneal_factor, cfg.lr_anneal_every);
        a.opt_listener = OptimizerState::rmsprop(a.listener, cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps,
                                                 cfg.lr_anneal_factor, cfg.lr_anneal_every);
    }
    return a;
}

namespace {

Tensor batch_obs(TapeF& tape, const ExperimentConfig& cfg, const IdxDataset* dataset,
                 const std::vector<DigitRound>& rounds, bool speaker) {
    const int b = static_cast<int>(rounds.size());
    if (cfg.mode == "symbolic") {
        std::vector<float> v;
        v.reserve(static_cast<size_t>(b) * kDigits);
        for (const auto& r : rounds) {
            auto oh = one_hot(speaker ? r.speaker_digit : r.listener_digit, kDigits);
            v.insert(v.end(), oh.begin(), oh.end());
        }
        return tape.constant({b, kDigits}, std::move(v));
    }
    if (!dataset) fail("reinforce_update: image mode requires a dataset");
    std::vector<float> v;
    v.reserve(static_cast<size_t>(b) * 28 * 28);
    for (const auto& r : rounds) {
        auto img = dataset->image(speaker ? r.speaker_index : r.listener_index);
        v.insert(v.end(), img.begin(), img.end());
    }
    return tape.constant({b, 28, 28, 1}, std::move(v));
}

std::vector<int> sample_rows(const std::vector<float>& probs, int b, int k, Rng& rng) {
    std::vector<int> out(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i)
        out[static_cast<size_t>(i)] = rng.sample_index(probs.data() + static_cast<size_t>(i) * k, k);
    return out;
}

}  // namespace

DigitUpdateResult reinforce_update(const ExperimentConfig& cfg, DigitAgents& agents,
                                   const IdxDataset* dataset, Rng& env_rng, Rng& sample_rng) {
    const int B = cfg.batch_size;
    const int M = agents.speaker_cfg.message_alphabet;
    const int A = agents.listener_cfg.head_width();
    const bool no_comm = cfg.bias == "no-comm";
    const bool want_counterfactual = cfg.w_pl > 0 || cfg.w_ce > 0 || cfg.w_si > 0;

    std::vector<DigitRound> rounds(static_cast<size_t>(B));
    for (auto& r : rounds)
        r = cfg.mode == "symbolic" ? sample_round_symbolic(env_rng) : sample_round(*dataset, env_rng);

    // ---- speaker forward (own tape; decentralized) ----
    TapeF ts;
    auto bs = bind_params(ts, agents.speaker);
    auto obs_s = batch_obs(ts, cfg, dataset, rounds, /*speaker=*/true);
    auto logits_s = digit_forward(ts, bs, agents.speaker_cfg, obs_s);
    auto probs_s = ts.softmax(logits_s);
    auto logp_s = ts.log_softmax(logits_s);
    const std::vector<int> messages = sample_rows(probs_s.values(), B, M, sample_rng);

    // ---- listener forward ----
    TapeF tl;
    auto bl = bind_params(tl, agents.listener);
    auto obs_l = batch_obs(tl, cfg, dataset, rounds, /*speaker=*/false);
    std::vector<float> msg_onehots;
    msg_onehots.reserve(static_cast<size_t>(B) * M);
    for (int i = 0; i < B; ++i) {
        auto oh = one_hot(no_comm ? -1 : messages[static_cast<size_t>(i)], M);
        msg_onehots.insert(msg_onehots.end(), oh.begin(), oh.end());
    }
    auto msg_in = tl.constant({B, M}, std::move(msg_onehots));
    auto logits_l = digit_forward(tl, bl, agents.listener_cfg, obs_l, msg_in);
    auto probs_l = tl.softmax(logits_l);
    auto logp_l = tl.log_softmax(logits_l);
    const std::vector<int> actions = sample_rows(probs_l.values(), B, A, sample_rng);

    std::vector<double> rewards(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i)
        rewards[static_cast<size_t>(i)] = resolve_round(rounds[static_cast<size_t>(i)],
                                                        actions[static_cast<size_t>(i)]);
    DigitUpdateResult res;
    res.mean_reward = 0;
    for (double r : rewards) res.mean_reward += r;
    res.mean_reward /= B;

    // ---- counterfactual listener pass (zero message), same tape ----
    Tensor probs_cf;
    std::vector<double> cic_per_round;
    if (want_counterfactual) {
        auto zero_msg = tl.constant_full({B, M}, 0.f);
        auto logits_cf = digit_forward(tl, bl, agents.listener_cfg, obs_l, zero_msg);
        probs_cf = tl.softmax(logits_cf);
        cic_per_round.resize(static_cast<size_t>(B));
        for (int i = 0; i < B; ++i) {
            std::vector<double> p(probs_l.values().begin() + static_cast<size_t>(i) * A,
                                  probs_l.values().begin() + static_cast<size_t>(i + 1) * A);
            std::vector<double> q(probs_cf.values().begin() + static_cast<size_t>(i) * A,
                                  probs_cf.values().begin() + static_cast<size_t>(i + 1) * A);
            cic_per_round[static_cast<size_t>(i)] = kl_divergence(p, q);
        }
    }

    // ---- per-agent losses; rewards cross as data only ----
    auto advantage_const = [&](TapeF& tape, const std::vector<double>& rs) {
        double base = 0;
        if (cfg.reinforce_baseline) {
            for (double r : rs) base += r;
            base /= static_cast<double>(rs.size());
        }
        std::vector<float> adv(rs.size());
        for (size_t i = 0; i < rs.size(); ++i) adv[i] = static_cast<float>(rs[i] - base);
        return tape.constant({B}, std::move(adv));
    };

    // speaker: policy gradient on the message policy (+ optional L_ps / SI reward)
    {
        std::vector<double> speaker_rewards = rewards;
        if (cfg.w_si > 0)
            for (int i = 0; i < B; ++i)
                speaker_rewards[static_cast<size_t>(i)] += cfg.w_si * cic_per_round[static_cast<size_t>(i)];
        auto adv = advantage_const(ts, speaker_rewards);
        auto pg = ts.scale(ts.mean(ts.multiply(ts.gather(logp_s, messages), adv), -1), -1.0);
        auto ent = ts.mean(entropy_rows(ts, probs_s), -1);
        auto loss = ts.add(pg, ts.scale(ent, -cfg.entropy_message));
        if (cfg.w_ps > 0) {
            auto lps = positive_signalling_loss(ts, probs_s, cfg.h_target, 1.0, cfg.lambda_ps);
            loss = ts.add(loss, ts.scale(lps, cfg.w_ps));
            res.speaker.bias.l_ps = lps.scalar();
        }
        res.speaker.pg = pg.scalar();
        res.speaker.entropy_message = ent.scalar();
        res.speaker.total = loss.scalar();
        if (!std::isfinite(res.speaker.total))
            fail("reinforce_update: non-finite speaker loss (pg=", res.speaker.pg, ")");
        ts.backward(loss);
        auto grads = collect_grads(ts, agents.speaker, bs);
        optimizer_step(agents.opt_speaker, agents.speaker, grads, 0);

        // message-policy diagnostics
        const auto& pv = probs_s.values();
        std::vector<double> pd(pv.begin(), pv.end());
        res.speaker.bias.mutual_information = message_mutual_information(pd, M);
        std::vector<double> avg(static_cast<size_t>(M), 0);
        double mch = 0;
        for (int i = 0; i < B; ++i) {
            std::vector<double> row(pv.begin() + static_cast<size_t>(i) * M,
                                    pv.begin() + static_cast<size_t>(i + 1) * M);
            mch += entropy(row);
            for (int m = 0; m < M; ++m) avg[static_cast<size_t>(m)] += row[static_cast<size_t>(m)] / B;
        }
        res.speaker.bias.marginal_entropy = entropy(avg);
        res.speaker.bias.mean_conditional_entropy = mch / B;
    }

    // listener: policy gradient on the action policy (+ optional L_pl / L_ce)
    {
        auto adv = advantage_const(tl, rewards);
        auto pg = tl.scale(tl.mean(tl.multiply(tl.gather(logp_l, actions), adv), -1), -1.0);
        auto ent = tl.mean(entropy_rows(tl, probs_l), -1);
        auto loss = tl.add(pg, tl.scale(ent, -cfg.entropy_action));
        if (cfg.w_pl > 0) {
            auto lpl = positive_listening_loss(tl, {probs_l}, {probs_cf});
            loss = tl.add(loss, tl.scale(lpl, cfg.w_pl / B));
            res.listener.bias.l_pl = lpl.scalar() / B;
        }
        if (cfg.w_ce > 0) {
            auto lce = cross_entropy_fit_loss(tl, {probs_l}, {probs_cf});
            loss = tl.add(loss, tl.scale(lce, cfg.w_ce / B));
            res.listener.bias.l_ce = lce.scalar() / B;
        }
        res.listener.pg = pg.scalar();
        res.listener.entropy_action = ent.scalar();
        res.listener.total = loss.scalar();
        if (!std::isfinite(res.listener.total))
            fail("reinforce_update: non-finite listener loss (pg=", res.listener.pg, ")");
        tl.backward(loss);
        auto grads = collect_grads(tl, agents.listener, bl);
        optimizer_step(agents.opt_listener, agents.listener, grads, 0);

        if (want_counterfactual) {
            double cic = 0;
            for (double c : cic_per_round) cic += c;
            res.listener.bias.cic = cic / B;
        }
    }
    return res;
}

namespace {

// Evaluate a digit net on a batch of explicit inputs; returns softmax rows.
std::vector<double> eval_policy_rows(const ParamSet& ps, const DigitNetConfig& cfg,
                                     const std::vector<float>& obs, int b, int obs_w,
                                     const std::vector<float>* msgs) {
    TapeF tape;
    auto bound = bind_params(tape, ps, /*trainable=*/false);
    auto obs_t = tape.constant({b, obs_w}, obs);
    Tensor logits;
    if (cfg.listener) {
        auto msg_t = tape.constant({b, cfg.message_alphabet}, *msgs);
        logits = digit_forward(tape, bound, cfg, obs_t, msg_t);
    } else {
        logits = digit_forward(tape, bound, cfg, obs_t);
    }
    auto probs = tape.softmax(logits);
    return std::vector<double>(probs.values().begin(), probs.values().end());
}

}  // namespace

std::vector<std::vector<double>> digit_speaker_table(const DigitAgents& agents) {
    if (!agents.speaker_cfg.symbolic) fail("digit_speaker_table: symbolic mode only");
    const int M = agents.speaker_cfg.message_alphabet;
    std::vector<float> obs;
    for (int d = 0; d < kDigits; ++d) {
        auto oh = one_hot(d, kDigits);
        obs.insert(obs.end(), oh.begin(), oh.end());
    }
    auto rows = eval_policy_rows(agents.speaker, agents.speaker_cfg, obs, kDigits, kDigits, nullptr);
    std::vector<std::vector<double>> table(kDigits, std::vector<double>(M));
    for (int d = 0; d < kDigits; ++d)
        for (int m = 0; m < M; ++m) table[d][m] = rows[static_cast<size_t>(d) * M + m];
    return table;
}

std::vector<std::vector<std::vector<double>>> digit_listener_table(const DigitAgents& agents,
                                                                   bool zero_message) {
    if (!agents.listener_cfg.symbolic) fail("digit_listener_table: symbolic mode only");
    const int M = agents.listener_cfg.message_alphabet;
    const int A = agents.listener_cfg.head_width();
    std::vector<float> obs, msgs;
    for (int d = 0; d < kDigits; ++d)
        for (int m = 0; m < M; ++m) {
            auto od = one_hot(d, kDigits);
            obs.insert(obs.end(), od.begin(), od.end());
            auto om = one_hot(zero_message ? -1 : m, M);
            msgs.insert(msgs.end(), om.begin(), om.end());
        }
    auto rows = eval_policy_rows(agents.listener, agents.listener_cfg, obs, kDigits * M, kDigits, &msgs);
    std::vector<std::vector<std::vector<double>>> table(
        kDigits, std::vector<std::vector<double>>(static_cast<size_t>(M), std::vector<double>(A)));
    for (int d = 0; d < kDigits; ++d)
        for (int m = 0; m < M; ++m)
            for (int a = 0; a < A; ++a)
                table[static_cast<size_t>(d)][static_cast<size_t>(m)][static_cast<size_t>(a)] =
                    rows[(static_cast<size_t>(d) * M + m) * A + a];
    return table;
}

double digit_estimate_reward(const ExperimentConfig& cfg, const DigitAgents& agents,
                             const IdxDataset* dataset, int rounds, uint64_t eval_seed) {
    Rng rng(eval_seed);
    const int M = agents.speaker_cfg.message_alphabet;
    const int A = agents.listener_cfg.head_width();
    const bool no_comm = cfg.bias == "no-comm";
    const int B = 64;
    double total = 0;
    int done = 0;
    while (done < rounds) {
        const int b = std::min(B, rounds - done);
        std::vector<DigitRound> rs(static_cast<size_t>(b));
        for (auto& r : rs)
            r = cfg.mode == "symbolic" ? sample_round_symbolic(rng) : sample_round(*dataset, rng);
        TapeF ts;
        auto bs = bind_params(ts, agents.speaker, false);
        auto logits_s = digit_forward(ts, bs, agents.speaker_cfg, batch_obs(ts, cfg, dataset, rs, true));
        auto probs_s = ts.softmax(logits_s);
        std::vector<float> msg;
        for (int i = 0; i < b; ++i) {
            const int m = rng.sample_index(probs_s.values().data() + static_cast<size_t>(i) * M, M);
            auto oh = one_hot(no_comm ? -1 : m, M);
            msg.insert(msg.end(), oh.begin(), oh.end());
        }
        TapeF tl;
        auto bl = bind_params(tl, agents.listener, false);
        auto logits_l = digit_forward(tl, bl, agents.listener_cfg, batch_obs(tl, cfg, dataset, rs, false),
                                      tl.constant({b, M}, std::move(msg)));
        auto probs_l = tl.softmax(logits_l);
        for (int i = 0; i < b; ++i) {
            const int sum = rs[static_cast<size_t>(i)].speaker_digit + rs[static_cast<size_t>(i)].listener_digit;
            total += probs_l.values()[static_cast<size_t>(i) * A + static_cast<size_t>(sum)];
        }
        done += b;
    }
    return total / rounds;
}

double digit_exact_expected_reward(const DigitAgents& agents, bool no_comm) {
    auto speaker = digit_speaker_table(agents);
    auto listener = digit_listener_table(agents, no_comm);
    const int M = agents.speaker_cfg.message_alphabet;
    double total = 0;
    for (int ds = 0; ds < kDigits; ++ds)
        for (int dl = 0; dl < kDigits; ++dl) {
            const int sum = ds + dl;
            double p = 0;
            for (int m = 0; m < M; ++m)
                p += speaker[static_cast<size_t>(ds)][static_cast<size_t>(m)] *
                     listener[static_cast<size_t>(dl)][static_cast<size_t>(no_comm ? 0 : m)]
                             [static_cast<size_t>(sum)];
            total += p / (kDigits * kDigits);
        }
    return total;
}

}  // namespace ecl
