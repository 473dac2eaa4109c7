#include <algorithm>
#include <cmath>

#include "ecl/harness.hpp"

namespace ecl {

namespace {

constexpr int kObsLen = kObsSide * kObsSide * kObsChannels;

int other(int agent) { return 1 - agent; }

}  // namespace

TreasureAgents make_treasure_agents(const ExperimentConfig& cfg, Rng& init_rng) {
    TreasureAgents a;
    a.net_cfg.conv_channels = cfg.treasure_conv_channels;
    a.net_cfg.mlp_hidden = cfg.treasure_mlp_hidden;
    a.net_cfg.lstm_hidden = cfg.treasure_lstm_hidden;
    a.scripted_finder = cfg.treasure_finder != "net";
    for (int i = 0; i < 2; ++i) {
        Rng r = init_rng.split(static_cast<uint64_t>(10 + i));
        a.net[static_cast<size_t>(i)] = make_treasure_net(a.net_cfg, r);
        if (cfg.optimizer == "adam")
            a.opt[static_cast<size_t>(i)] = OptimizerState::adam(a.net[static_cast<size_t>(i)], cfg.lr,
                                                                 cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        else
            a.opt[static_cast<size_t>(i)] =
                OptimizerState::rmsprop(a.net[static_cast<size_t>(i)], cfg.lr, cfg.rmsprop_decay,
                                        cfg.rmsprop_eps, cfg.lr_anneal_factor, cfg.lr_anneal_every);
    }
    return a;
}

TreasureWorkers TreasureWorkers::make(const ExperimentConfig& cfg, Rng& seed_rng) {
    TreasureWorkers w;
    const int C = cfg.env_copies;
    const int H = cfg.treasure_lstm_hidden;
    for (int i = 0; i < C; ++i) {
        w.envs.push_back(TreasureEnv::make(seed_rng.split(static_cast<uint64_t>(100 + i))));
        w.sample_rngs.push_back(seed_rng.split(static_cast<uint64_t>(1000 + i)));
        w.h.push_back({std::vector<float>(static_cast<size_t>(H), 0.f),
                       std::vector<float>(static_cast<size_t>(H), 0.f)});
        w.c.push_back({std::vector<float>(static_cast<size_t>(H), 0.f),
                       std::vector<float>(static_cast<size_t>(H), 0.f)});
        w.h_cf.push_back({std::vector<float>(static_cast<size_t>(H), 0.f),
                          std::vector<float>(static_cast<size_t>(H), 0.f)});
        w.c_cf.push_back({std::vector<float>(static_cast<size_t>(H), 0.f),
                          std::vector<float>(static_cast<size_t>(H), 0.f)});
        w.scripted.emplace_back(cfg.treasure_finder == "scripted-sighted" ? ScriptedFinder::Mode::sighted
                                                                          : ScriptedFinder::Mode::oracle);
        w.episode_return.push_back(0.0);
    }
    return w;
}

namespace {

struct BatchForwardOut {
    std::vector<float> probs_a, probs_m, logp_a, logp_m, value;  // [C x width]
    std::vector<float> h, c;                                     // [C x H]
};

// One no-grad forward for one agent across all env copies.
BatchForwardOut batch_forward(const ExperimentConfig& cfg, const TreasureAgents& agents, int agent,
                              const std::vector<float>& obs, const std::vector<int>& in_msg,
                              const std::vector<std::array<std::vector<float>, 2>>& h,
                              const std::vector<std::array<std::vector<float>, 2>>& c) {
    const int C = static_cast<int>(in_msg.size());
    const int H = cfg.treasure_lstm_hidden;
    TapeF tape;
    auto bound = bind_params(tape, agents.net[static_cast<size_t>(agent)], /*trainable=*/false);
    auto obs_t = tape.constant({C, kObsSide, kObsSide, kObsChannels}, obs);
    std::vector<float> msgs;
    msgs.reserve(static_cast<size_t>(C) * kTreasureMessages);
    for (int i = 0; i < C; ++i) {
        auto oh = one_hot(in_msg[static_cast<size_t>(i)], kTreasureMessages);
        msgs.insert(msgs.end(), oh.begin(), oh.end());
    }
    std::vector<float> hv, cv;
    hv.reserve(static_cast<size_t>(C) * H);
    cv.reserve(static_cast<size_t>(C) * H);
    for (int i = 0; i < C; ++i) {
        hv.insert(hv.end(), h[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin(),
                  h[static_cast<size_t>(i)][static_cast<size_t>(agent)].end());
        cv.insert(cv.end(), c[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin(),
                  c[static_cast<size_t>(i)][static_cast<size_t>(agent)].end());
    }
    auto out = treasure_step(tape, bound, agents.net_cfg, obs_t,
                             tape.constant({C, kTreasureMessages}, std::move(msgs)),
                             tape.constant({C, H}, std::move(hv)), tape.constant({C, H}, std::move(cv)));
    BatchForwardOut r;
    auto pa = tape.softmax(out.action_logits);
    auto pm = tape.softmax(out.message_logits);
    auto la = tape.log_softmax(out.action_logits);
    auto lm = tape.log_softmax(out.message_logits);
    r.probs_a = pa.values();
    r.probs_m = pm.values();
    r.logp_a = la.values();
    r.logp_m = lm.values();
    r.value = out.value.values();
    r.h = out.h.values();
    r.c = out.c.values();
    return r;
}

std::vector<float> gather_obs(const TreasureEnv& env, int agent) {
    auto o = env.observe(agent);
    return std::vector<float>(o.begin(), o.end());
}

}  // namespace

std::vector<TreasureUnroll> collect_unrolls(const ExperimentConfig& cfg, const TreasureAgents& agents,
                                            TreasureWorkers& workers) {
    const int C = cfg.env_copies;
    const int T = cfg.unroll_length;
    const int H = cfg.treasure_lstm_hidden;
    const bool no_comm = cfg.bias == "no-comm";
    const bool si = cfg.w_si > 0;

    std::vector<TreasureUnroll> unrolls(static_cast<size_t>(C));
    for (int i = 0; i < C; ++i) {
        unrolls[static_cast<size_t>(i)].T = T;
        unrolls[static_cast<size_t>(i)].episode_end.assign(static_cast<size_t>(T), 0);
        for (int agent = 0; agent < 2; ++agent) {
            auto& pa = unrolls[static_cast<size_t>(i)].agent[static_cast<size_t>(agent)];
            pa.h0 = workers.h[static_cast<size_t>(i)][static_cast<size_t>(agent)];
            pa.c0 = workers.c[static_cast<size_t>(i)][static_cast<size_t>(agent)];
            pa.obs.reserve(static_cast<size_t>(T) * kObsLen);
            pa.reward.assign(static_cast<size_t>(T), 0.f);
        }
    }

    for (int t = 0; t < T; ++t) {
        // observations + incoming messages (one-step delivery latency)
        std::array<std::vector<float>, 2> obs;
        std::array<std::vector<int>, 2> in_msg;
        for (int agent = 0; agent < 2; ++agent) {
            obs[static_cast<size_t>(agent)].reserve(static_cast<size_t>(C) * kObsLen);
            for (int i = 0; i < C; ++i) {
                auto o = gather_obs(workers.envs[static_cast<size_t>(i)], agent);
                obs[static_cast<size_t>(agent)].insert(obs[static_cast<size_t>(agent)].end(), o.begin(),
                                                       o.end());
                in_msg[static_cast<size_t>(agent)].push_back(
                    no_comm ? -1 : workers.envs[static_cast<size_t>(i)].previous_message(other(agent)));
            }
        }

        std::array<BatchForwardOut, 2> fwd;
        for (int agent = 0; agent < 2; ++agent) {
            if (agent == kFinder && agents.scripted_finder) continue;
            fwd[static_cast<size_t>(agent)] =
                batch_forward(cfg, agents, agent, obs[static_cast<size_t>(agent)],
                              in_msg[static_cast<size_t>(agent)], workers.h, workers.c);
        }

        // counterfactual tracking for the social-influence intrinsic reward
        std::array<BatchForwardOut, 2> cf;
        if (si) {
            std::vector<int> zeros(static_cast<size_t>(C), -1);
            for (int agent = 0; agent < 2; ++agent) {
                if (agent == kFinder && agents.scripted_finder) continue;
                cf[static_cast<size_t>(agent)] =
                    batch_forward(cfg, agents, agent, obs[static_cast<size_t>(agent)], zeros,
                                  workers.h_cf, workers.c_cf);
            }
        }

        // sample, script, and step every copy
        for (int i = 0; i < C; ++i) {
            JointAction joint;
            auto& env = workers.envs[static_cast<size_t>(i)];
            for (int agent = 0; agent < 2; ++agent) {
                auto& pa = unrolls[static_cast<size_t>(i)].agent[static_cast<size_t>(agent)];
                pa.obs.insert(pa.obs.end(),
                              obs[static_cast<size_t>(agent)].begin() + static_cast<size_t>(i) * kObsLen,
                              obs[static_cast<size_t>(agent)].begin() + static_cast<size_t>(i + 1) * kObsLen);
                pa.in_msg.push_back(in_msg[static_cast<size_t>(agent)][static_cast<size_t>(i)]);
                if (agent == kFinder && agents.scripted_finder) {
                    auto d = workers.scripted[static_cast<size_t>(i)].act(env);
                    pa.action.push_back(d.action);
                    pa.message.push_back(d.message);
                    pa.logp_action.push_back(0.f);
                    pa.logp_message.push_back(0.f);
                } else {
                    const auto& f = fwd[static_cast<size_t>(agent)];
                    auto& rng = workers.sample_rngs[static_cast<size_t>(i)];
                    const int a = rng.sample_index(
                        f.probs_a.data() + static_cast<size_t>(i) * kTreasureActions, kTreasureActions);
                    const int m = rng.sample_index(
                        f.probs_m.data() + static_cast<size_t>(i) * kTreasureMessages, kTreasureMessages);
                    pa.action.push_back(a);
                    pa.message.push_back(m);
                    pa.logp_action.push_back(
                        f.logp_a[static_cast<size_t>(i) * kTreasureActions + static_cast<size_t>(a)]);
                    pa.logp_message.push_back(
                        f.logp_m[static_cast<size_t>(i) * kTreasureMessages + static_cast<size_t>(m)]);
                    // carry recurrent state
                    std::copy_n(f.h.begin() + static_cast<size_t>(i) * H, H,
                                workers.h[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin());
                    std::copy_n(f.c.begin() + static_cast<size_t>(i) * H, H,
                                workers.c[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin());
                    if (si) {
                        const auto& g = cf[static_cast<size_t>(agent)];
                        std::copy_n(g.h.begin() + static_cast<size_t>(i) * H, H,
                                    workers.h_cf[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin());
                        std::copy_n(g.c.begin() + static_cast<size_t>(i) * H, H,
                                    workers.c_cf[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin());
                    }
                }
                joint.action[static_cast<size_t>(agent)] = pa.action.back();
                joint.message[static_cast<size_t>(agent)] = pa.message.back();
            }

            auto res = env.step(joint);
            workers.episode_return[static_cast<size_t>(i)] += res.reward;
            for (int agent = 0; agent < 2; ++agent)
                unrolls[static_cast<size_t>(i)].agent[static_cast<size_t>(agent)].reward[static_cast<size_t>(t)] =
                    static_cast<float>(res.reward);

            // social influence: the speaker is rewarded for the listener's CIC
            if (si) {
                for (int agent = 0; agent < 2; ++agent) {
                    const int listener = other(agent);
                    if (listener == kFinder && agents.scripted_finder) continue;
                    const auto& f = fwd[static_cast<size_t>(listener)];
                    const auto& g = cf[static_cast<size_t>(listener)];
                    std::vector<double> p(f.probs_a.begin() + static_cast<size_t>(i) * kTreasureActions,
                                          f.probs_a.begin() + static_cast<size_t>(i + 1) * kTreasureActions);
                    std::vector<double> q(g.probs_a.begin() + static_cast<size_t>(i) * kTreasureActions,
                                          g.probs_a.begin() + static_cast<size_t>(i + 1) * kTreasureActions);
                    unrolls[static_cast<size_t>(i)].agent[static_cast<size_t>(agent)].reward[static_cast<size_t>(t)] +=
                        static_cast<float>(cfg.w_si * kl_divergence(p, q));
                }
            }

            if (res.done) {
                unrolls[static_cast<size_t>(i)].episode_end[static_cast<size_t>(t)] = 1;
                workers.finished_returns.push_back(workers.episode_return[static_cast<size_t>(i)]);
                workers.episode_return[static_cast<size_t>(i)] = 0.0;
                env.reset();
                workers.scripted[static_cast<size_t>(i)].reset();
                for (int agent = 0; agent < 2; ++agent) {
                    std::fill(workers.h[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin(),
                              workers.h[static_cast<size_t>(i)][static_cast<size_t>(agent)].end(), 0.f);
                    std::fill(workers.c[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin(),
                              workers.c[static_cast<size_t>(i)][static_cast<size_t>(agent)].end(), 0.f);
                    std::fill(workers.h_cf[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin(),
                              workers.h_cf[static_cast<size_t>(i)][static_cast<size_t>(agent)].end(), 0.f);
                    std::fill(workers.c_cf[static_cast<size_t>(i)][static_cast<size_t>(agent)].begin(),
                              workers.c_cf[static_cast<size_t>(i)][static_cast<size_t>(agent)].end(), 0.f);
                }
            }
        }
    }

    // bootstrap inputs (value computed with the learner's parameters at update time)
    for (int agent = 0; agent < 2; ++agent) {
        for (int i = 0; i < C; ++i) {
            auto& pa = unrolls[static_cast<size_t>(i)].agent[static_cast<size_t>(agent)];
            auto& env = workers.envs[static_cast<size_t>(i)];
            auto o = gather_obs(env, agent);
            pa.obs.insert(pa.obs.end(), o.begin(), o.end());  // stored as step T
            pa.in_msg.push_back(no_comm ? -1 : env.previous_message(other(agent)));
        }
    }
    return unrolls;
}

VtraceResult vtrace_targets(const std::vector<double>& rewards, const std::vector<double>& values,
                            double bootstrap, const std::vector<double>& rhos,
                            const std::vector<uint8_t>& episode_end, double gamma) {
    const size_t T = rewards.size();
    if (values.size() != T || rhos.size() != T || episode_end.size() != T)
        fail("vtrace_targets: length mismatch");
    VtraceResult out;
    out.vs.resize(T);
    out.adv.resize(T);
    for (size_t i = 0; i < T; ++i) {
        const size_t t = T - 1 - i;
        const double cont = episode_end[t] ? 0.0 : 1.0;
        const double rho = std::min(1.0, rhos[t]);
        const double v_next = (t + 1 == T) ? bootstrap : values[t + 1];
        const double vs_next = (t + 1 == T) ? bootstrap : out.vs[t + 1];
        const double delta = rho * (rewards[t] + gamma * cont * v_next - values[t]);
        out.vs[t] = values[t] + delta + gamma * cont * rho * (vs_next - v_next);
        out.adv[t] = rho * (rewards[t] + gamma * cont * vs_next - values[t]);
    }
    return out;
}

LossBreakdown actor_critic_update(const ExperimentConfig& cfg, TreasureAgents& agents, int agent_id,
                                  const std::vector<const TreasureUnroll*>& batch, int64_t global_step) {
    const int B = static_cast<int>(batch.size());
    if (B == 0) fail("actor_critic_update: empty batch");
    const int T = batch[0]->T;
    const int H = cfg.treasure_lstm_hidden;
    const bool no_comm = cfg.bias == "no-comm";
    const bool want_cf = cfg.w_pl > 0 || cfg.w_ce > 0 || cfg.w_si > 0;
    const double denom = static_cast<double>(T) * B;

    TapeF tape;
    auto bound = bind_params(tape, agents.net[static_cast<size_t>(agent_id)]);

    auto initial_state = [&](bool /*cf*/) {
        std::vector<float> hv, cv;
        for (int b = 0; b < B; ++b) {
            const auto& pa = batch[static_cast<size_t>(b)]->agent[static_cast<size_t>(agent_id)];
            hv.insert(hv.end(), pa.h0.begin(), pa.h0.end());
            cv.insert(cv.end(), pa.c0.begin(), pa.c0.end());
        }
        return std::pair(tape.constant({B, H}, std::move(hv)), tape.constant({B, H}, std::move(cv)));
    };

    auto obs_const = [&](int t) {
        std::vector<float> v;
        v.reserve(static_cast<size_t>(B) * kObsLen);
        for (int b = 0; b < B; ++b) {
            const auto& pa = batch[static_cast<size_t>(b)]->agent[static_cast<size_t>(agent_id)];
            v.insert(v.end(), pa.obs.begin() + static_cast<size_t>(t) * kObsLen,
                     pa.obs.begin() + static_cast<size_t>(t + 1) * kObsLen);
        }
        return tape.constant({B, kObsSide, kObsSide, kObsChannels}, std::move(v));
    };

    auto msg_const = [&](int t, bool zero) {
        std::vector<float> v;
        v.reserve(static_cast<size_t>(B) * kTreasureMessages);
        for (int b = 0; b < B; ++b) {
            const auto& pa = batch[static_cast<size_t>(b)]->agent[static_cast<size_t>(agent_id)];
            auto oh = one_hot(zero ? -1 : pa.in_msg[static_cast<size_t>(t)], kTreasureMessages);
            v.insert(v.end(), oh.begin(), oh.end());
        }
        return tape.constant({B, kTreasureMessages}, std::move(v));
    };

    // 0/1 row mask that clears recurrent state where an episode ended at t-1
    auto boundary_mask = [&](int t) -> Tensor {
        bool any = false;
        for (int b = 0; b < B; ++b) any = any || batch[static_cast<size_t>(b)]->episode_end[static_cast<size_t>(t - 1)];
        if (!any) return {};
        std::vector<float> m(static_cast<size_t>(B) * H, 1.f);
        for (int b = 0; b < B; ++b)
            if (batch[static_cast<size_t>(b)]->episode_end[static_cast<size_t>(t - 1)])
                std::fill_n(m.begin() + static_cast<size_t>(b) * H, H, 0.f);
        return tape.constant({B, H}, std::move(m));
    };

    // ---- actual forward (BPTT) ----
    std::vector<Tensor> logp_a(static_cast<size_t>(T)), probs_a(static_cast<size_t>(T));
    std::vector<Tensor> logp_m(static_cast<size_t>(T)), probs_m(static_cast<size_t>(T));
    std::vector<Tensor> values_t(static_cast<size_t>(T));
    std::vector<std::pair<Tensor, Tensor>> states;  // (h_{t-1}, c_{t-1}) per step
    auto [h, c] = initial_state(false);
    std::vector<Tensor> obs_cache(static_cast<size_t>(T + 1));
    for (int t = 0; t <= T; ++t) obs_cache[static_cast<size_t>(t)] = obs_const(t);
    for (int t = 0; t < T; ++t) {
        if (t > 0) {
            auto mask = boundary_mask(t);
            if (mask.valid()) {
                h = tape.multiply(h, mask);
                c = tape.multiply(c, mask);
            }
        }
        states.emplace_back(h, c);
        auto out = treasure_step(tape, bound, agents.net_cfg, obs_cache[static_cast<size_t>(t)],
                                 msg_const(t, false), h, c);
        logp_a[static_cast<size_t>(t)] = tape.log_softmax(out.action_logits);
        probs_a[static_cast<size_t>(t)] = tape.softmax(out.action_logits);
        logp_m[static_cast<size_t>(t)] = tape.log_softmax(out.message_logits);
        probs_m[static_cast<size_t>(t)] = tape.softmax(out.message_logits);
        values_t[static_cast<size_t>(t)] = out.value;
        h = out.h;
        c = out.c;
    }
    // bootstrap value from the current parameters
    Tensor boot_value;
    {
        auto mask = boundary_mask(T);
        Tensor hb = h, cb = c;
        if (mask.valid()) {
            hb = tape.multiply(hb, mask);
            cb = tape.multiply(cb, mask);
        }
        auto out = treasure_step(tape, bound, agents.net_cfg, obs_cache[static_cast<size_t>(T)],
                                 msg_const(T, false), hb, cb);
        boot_value = tape.stop_gradient(out.value);
    }

    // ---- targets (plain arithmetic; enters the graph as constants) ----
    std::vector<float> adv_flat(static_cast<size_t>(T) * B), vs_flat(static_cast<size_t>(T) * B);
    for (int b = 0; b < B; ++b) {
        const auto& un = *batch[static_cast<size_t>(b)];
        const auto& pa = un.agent[static_cast<size_t>(agent_id)];
        std::vector<double> rewards(static_cast<size_t>(T)), values(static_cast<size_t>(T)),
            rhos(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t) {
            rewards[static_cast<size_t>(t)] = pa.reward[static_cast<size_t>(t)];
            values[static_cast<size_t>(t)] =
                values_t[static_cast<size_t>(t)].values()[static_cast<size_t>(b)];
            const double cur_lp =
                logp_a[static_cast<size_t>(t)].values()[static_cast<size_t>(b) * kTreasureActions +
                                                        static_cast<size_t>(pa.action[static_cast<size_t>(t)])] +
                (no_comm ? 0.0
                         : logp_m[static_cast<size_t>(t)].values()[static_cast<size_t>(b) * kTreasureMessages +
                                                                   static_cast<size_t>(pa.message[static_cast<size_t>(t)])]);
            const double beh_lp = pa.logp_action[static_cast<size_t>(t)] +
                                  (no_comm ? 0.0 : pa.logp_message[static_cast<size_t>(t)]);
            rhos[static_cast<size_t>(t)] = std::min(1.0, std::exp(cur_lp - beh_lp));
        }
        auto vt = vtrace_targets(rewards, values, boot_value.values()[static_cast<size_t>(b)], rhos,
                                 un.episode_end, cfg.discount);
        for (int t = 0; t < T; ++t) {
            adv_flat[static_cast<size_t>(t) * B + b] = static_cast<float>(vt.adv[static_cast<size_t>(t)]);
            vs_flat[static_cast<size_t>(t) * B + b] = static_cast<float>(vt.vs[static_cast<size_t>(t)]);
        }
    }

    // ---- loss assembly ----
    LossBreakdown out;
    Tensor pg_sum, value_sum, ent_a_sum, ent_m_sum;
    for (int t = 0; t < T; ++t) {
        const auto advs = std::vector<float>(adv_flat.begin() + static_cast<size_t>(t) * B,
                                             adv_flat.begin() + static_cast<size_t>(t + 1) * B);
        const auto vss = std::vector<float>(vs_flat.begin() + static_cast<size_t>(t) * B,
                                            vs_flat.begin() + static_cast<size_t>(t + 1) * B);
        auto adv_c = tape.constant({B}, advs);
        auto vs_c = tape.constant({B}, vss);
        std::vector<int> acts(static_cast<size_t>(B)), msgs(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            acts[static_cast<size_t>(b)] =
                batch[static_cast<size_t>(b)]->agent[static_cast<size_t>(agent_id)].action[static_cast<size_t>(t)];
            msgs[static_cast<size_t>(b)] =
                batch[static_cast<size_t>(b)]->agent[static_cast<size_t>(agent_id)].message[static_cast<size_t>(t)];
        }
        auto lp = tape.gather(logp_a[static_cast<size_t>(t)], acts);
        if (!no_comm) lp = tape.add(lp, tape.gather(logp_m[static_cast<size_t>(t)], msgs));
        auto pg_t = tape.sum(tape.multiply(lp, adv_c), -1);
        pg_sum = t == 0 ? pg_t : tape.add(pg_sum, pg_t);

        auto verr = tape.subtract(values_t[static_cast<size_t>(t)], vs_c);
        auto v_t = tape.sum(tape.square(verr), -1);
        value_sum = t == 0 ? v_t : tape.add(value_sum, v_t);

        auto ea = tape.sum(entropy_rows(tape, probs_a[static_cast<size_t>(t)]), -1);
        ent_a_sum = t == 0 ? ea : tape.add(ent_a_sum, ea);
        auto em = tape.sum(entropy_rows(tape, probs_m[static_cast<size_t>(t)]), -1);
        ent_m_sum = t == 0 ? em : tape.add(ent_m_sum, em);
    }

    auto loss = tape.scale(pg_sum, -1.0 / denom);
    out.pg = loss.scalar();
    auto value_loss = tape.scale(value_sum, cfg.value_cost / denom);
    out.value = value_loss.scalar();
    loss = tape.add(loss, value_loss);
    loss = tape.add(loss, tape.scale(ent_a_sum, -cfg.entropy_action / denom));
    out.entropy_action = ent_a_sum.scalar() / denom;
    if (!no_comm) {
        loss = tape.add(loss, tape.scale(ent_m_sum, -cfg.entropy_message / denom));
        out.entropy_message = ent_m_sum.scalar() / denom;
    }

    if (cfg.w_ps > 0 && !no_comm) {
        auto lps = positive_signalling_loss_steps(tape, probs_m, cfg.h_target, 1.0, cfg.lambda_ps);
        loss = tape.add(loss, tape.scale(lps, cfg.w_ps));
        out.bias.l_ps = lps.scalar();
    }

    // ---- counterfactual pass and listening losses ----
    if (want_cf) {
        std::vector<Tensor> probs_cf(static_cast<size_t>(T));
        const bool multi = cfg.cic_mode == "multi";
        if (multi) {
            auto [hc, cc] = initial_state(true);
            for (int t = 0; t < T; ++t) {
                if (t > 0) {
                    auto mask = boundary_mask(t);
                    if (mask.valid()) {
                        hc = tape.multiply(hc, mask);
                        cc = tape.multiply(cc, mask);
                    }
                }
                auto o = treasure_step(tape, bound, agents.net_cfg, obs_cache[static_cast<size_t>(t)],
                                       msg_const(t, true), hc, cc);
                probs_cf[static_cast<size_t>(t)] = tape.softmax(o.action_logits);
                hc = o.h;
                cc = o.c;
            }
        } else {
            for (int t = 0; t < T; ++t) {
                auto o = treasure_step(tape, bound, agents.net_cfg, obs_cache[static_cast<size_t>(t)],
                                       msg_const(t, true), states[static_cast<size_t>(t)].first,
                                       states[static_cast<size_t>(t)].second);
                probs_cf[static_cast<size_t>(t)] = tape.softmax(o.action_logits);
            }
        }
        if (cfg.w_pl > 0) {
            auto lpl = positive_listening_loss(tape, probs_a, probs_cf);
            loss = tape.add(loss, tape.scale(lpl, cfg.w_pl / denom));
            out.bias.l_pl = lpl.scalar() / denom;
        }
        if (cfg.w_ce > 0) {
            auto lce = cross_entropy_fit_loss(tape, probs_a, probs_cf);
            loss = tape.add(loss, tape.scale(lce, cfg.w_ce / denom));
            out.bias.l_ce = lce.scalar() / denom;
        }
        double cic = 0;
        for (int t = 0; t < T; ++t) {
            std::vector<double> p(probs_a[static_cast<size_t>(t)].values().begin(),
                                  probs_a[static_cast<size_t>(t)].values().end());
            std::vector<double> q(probs_cf[static_cast<size_t>(t)].values().begin(),
                                  probs_cf[static_cast<size_t>(t)].values().end());
            cic += estimate_cic(p, q, kTreasureActions) * B;  // per-row mean times rows
        }
        out.bias.cic = cic / denom;
    }

    // message-policy diagnostics
    {
        std::vector<double> all;
        all.reserve(static_cast<size_t>(T) * B * kTreasureMessages);
        for (int t = 0; t < T; ++t)
            all.insert(all.end(), probs_m[static_cast<size_t>(t)].values().begin(),
                       probs_m[static_cast<size_t>(t)].values().end());
        out.bias.mutual_information = message_mutual_information(all, kTreasureMessages);
        std::vector<double> avg(kTreasureMessages, 0.0);
        double mch = 0;
        const size_t rows = all.size() / kTreasureMessages;
        for (size_t rix = 0; rix < rows; ++rix) {
            std::vector<double> row(all.begin() + static_cast<ptrdiff_t>(rix * kTreasureMessages),
                                    all.begin() + static_cast<ptrdiff_t>((rix + 1) * kTreasureMessages));
            mch += entropy(row);
            for (int m = 0; m < kTreasureMessages; ++m) avg[static_cast<size_t>(m)] += row[static_cast<size_t>(m)];
        }
        for (auto& a : avg) a /= static_cast<double>(rows);
        out.bias.marginal_entropy = entropy(avg);
        out.bias.mean_conditional_entropy = mch / static_cast<double>(rows);
    }

    out.total = loss.scalar();
    if (!std::isfinite(out.total))
        fail("actor_critic_update: non-finite loss (pg=", out.pg, ", value=", out.value, ")");
    tape.backward(loss);
    auto grads = collect_grads(tape, agents.net[static_cast<size_t>(agent_id)], bound);
    optimizer_step(agents.opt[static_cast<size_t>(agent_id)], agents.net[static_cast<size_t>(agent_id)],
                   grads, global_step);
    return out;
}

double evaluate_treasure(const ExperimentConfig& cfg, const TreasureAgents& agents, int episodes,
                         uint64_t eval_seed) {
    const int H = cfg.treasure_lstm_hidden;
    Rng seed_rng(eval_seed);
    double total = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        TreasureEnv env = TreasureEnv::make(seed_rng.split(static_cast<uint64_t>(ep)));
        Rng srng = seed_rng.split(static_cast<uint64_t>(50000 + ep));
        ScriptedFinder scripted(cfg.treasure_finder == "scripted-sighted" ? ScriptedFinder::Mode::sighted
                                                                          : ScriptedFinder::Mode::oracle);
        std::vector<std::array<std::vector<float>, 2>> h(1), c(1);
        h[0] = {std::vector<float>(static_cast<size_t>(H), 0.f), std::vector<float>(static_cast<size_t>(H), 0.f)};
        c[0] = h[0];
        double ep_reward = 0;
        while (!env.done()) {
            JointAction joint;
            for (int agent = 0; agent < 2; ++agent) {
                if (agent == kFinder && agents.scripted_finder) {
                    auto d = scripted.act(env);
                    joint.action[static_cast<size_t>(agent)] = d.action;
                    joint.message[static_cast<size_t>(agent)] = d.message;
                    continue;
                }
                std::vector<int> in_msg{cfg.bias == "no-comm" ? -1 : env.previous_message(other(agent))};
                auto f = batch_forward(cfg, agents, agent, gather_obs(env, agent), in_msg, h, c);
                const int a = srng.sample_index(f.probs_a.data(), kTreasureActions);
                const int m = srng.sample_index(f.probs_m.data(), kTreasureMessages);
                joint.action[static_cast<size_t>(agent)] = a;
                joint.message[static_cast<size_t>(agent)] = m;
                h[0][static_cast<size_t>(agent)] = f.h;
                c[0][static_cast<size_t>(agent)] = f.c;
            }
            ep_reward += env.step(joint).reward;
        }
        total += ep_reward;
    }
    return total / episodes;
}

}  // namespace ecl
