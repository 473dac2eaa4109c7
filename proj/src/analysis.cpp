#include "ecl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace ecl {

using nlohmann::json;

namespace {

void check_speaker_table(const SpeakerTable& s, const DigitGameDef& game) {
    if (static_cast<int>(s.size()) != game.n_digits)
        fail("speaker table has ", s.size(), " rows, want ", game.n_digits);
    for (const auto& row : s)
        if (static_cast<int>(row.size()) != game.n_messages)
            fail("speaker table row has ", row.size(), " entries, want ", game.n_messages);
}

}  // namespace

double expected_reward(const SpeakerTable& speaker, const ListenerTable& listener,
                       const DigitGameDef& game) {
    check_speaker_table(speaker, game);
    const double pd = 1.0 / game.n_digits;
    double total = 0;
    for (int ds = 0; ds < game.n_digits; ++ds)
        for (int dl = 0; dl < game.n_digits; ++dl) {
            const int sum = ds + dl;
            double p = 0;
            for (int m = 0; m < game.n_messages; ++m)
                p += speaker[static_cast<size_t>(ds)][static_cast<size_t>(m)] *
                     listener[static_cast<size_t>(dl)][static_cast<size_t>(m)][static_cast<size_t>(sum)];
            total += pd * pd * p;
        }
    return total;
}

FittedListener fit_optimal_listener(const SpeakerTable& speaker, const DigitGameDef& game,
                                    bool with_messages) {
    check_speaker_table(speaker, game);
    const double pd = 1.0 / game.n_digits;
    FittedListener out;
    out.with_messages = with_messages;

    // Fallback action per d_l (also the whole policy when with_messages is
    // false): argmax_a P(d_s = a - d_l). Under uniform digits every feasible
    // action ties at 1/n; ties take the lowest action.
    std::vector<int> fallback(static_cast<size_t>(game.n_digits), 0);
    std::vector<double> fallback_value(static_cast<size_t>(game.n_digits), 0);
    for (int dl = 0; dl < game.n_digits; ++dl) {
        int best_a = 0;
        double best = -1;
        for (int a = 0; a < game.n_actions(); ++a) {
            const int ds = a - dl;
            const double v = (ds >= 0 && ds < game.n_digits) ? pd : 0.0;
            if (v > best + 1e-15) {
                best = v;
                best_a = a;
            }
        }
        fallback[static_cast<size_t>(dl)] = best_a;
        fallback_value[static_cast<size_t>(dl)] = best;
    }

    if (!with_messages) {
        out.action.assign(static_cast<size_t>(game.n_digits), std::vector<int>(1, 0));
        double reward = 0;
        for (int dl = 0; dl < game.n_digits; ++dl) {
            out.action[static_cast<size_t>(dl)][0] = fallback[static_cast<size_t>(dl)];
            reward += pd * fallback_value[static_cast<size_t>(dl)];
        }
        out.expected_reward = reward;
        return out;
    }

    // P(m) and the per-(d_l, m) best response to P(d_s | m).
    std::vector<double> pm(static_cast<size_t>(game.n_messages), 0);
    for (int ds = 0; ds < game.n_digits; ++ds)
        for (int m = 0; m < game.n_messages; ++m)
            pm[static_cast<size_t>(m)] += pd * speaker[static_cast<size_t>(ds)][static_cast<size_t>(m)];

    out.action.assign(static_cast<size_t>(game.n_digits),
                      std::vector<int>(static_cast<size_t>(game.n_messages), 0));
    double reward = 0;
    for (int dl = 0; dl < game.n_digits; ++dl)
        for (int m = 0; m < game.n_messages; ++m) {
            if (pm[static_cast<size_t>(m)] <= 0.0) {
                // unseen message: fall back to the no-message action
                out.action[static_cast<size_t>(dl)][static_cast<size_t>(m)] = fallback[static_cast<size_t>(dl)];
                continue;
            }
            int best_a = fallback[static_cast<size_t>(dl)];
            double best = -1;
            for (int a = 0; a < game.n_actions(); ++a) {
                const int ds = a - dl;
                const double v = (ds >= 0 && ds < game.n_digits)
                                     ? pd * speaker[static_cast<size_t>(ds)][static_cast<size_t>(m)]
                                     : 0.0;
                if (v > best + 1e-15) {
                    best = v;
                    best_a = a;
                }
            }
            out.action[static_cast<size_t>(dl)][static_cast<size_t>(m)] = best_a;
            reward += pd * best;  // sum over d_l of P(d_l) * P(d_s = a* - d_l, m)
        }
    out.expected_reward = reward;
    return out;
}

FittedSpeaker fit_optimal_speaker(const ListenerTable& listener, const DigitGameDef& game, bool uniform) {
    const double pd = 1.0 / game.n_digits;
    FittedSpeaker out;
    out.uniform = uniform;
    double reward = 0;
    for (int ds = 0; ds < game.n_digits; ++ds) {
        // value(m) = sum_dl P(d_l) pi_L(ds + dl | dl, m)
        double best = -1;
        int best_m = 0;
        double uniform_acc = 0;
        for (int m = 0; m < game.n_messages; ++m) {
            double v = 0;
            for (int dl = 0; dl < game.n_digits; ++dl)
                v += pd * listener[static_cast<size_t>(dl)][static_cast<size_t>(m)]
                                  [static_cast<size_t>(ds + dl)];
            if (v > best + 1e-15) {
                best = v;
                best_m = m;
            }
            uniform_acc += v / game.n_messages;
        }
        if (uniform) {
            reward += pd * uniform_acc;
        } else {
            out.message.push_back(best_m);
            reward += pd * best;
        }
        (void)best_m;
    }
    out.expected_reward = reward;
    return out;
}

SpeakerTable estimate_speaker_table(const ExperimentConfig& cfg, const DigitAgents& agents,
                                    const IdxDataset* dataset, int samples, uint64_t seed) {
    Rng rng(seed);
    const int M = agents.speaker_cfg.message_alphabet;
    std::vector<std::vector<double>> counts(kDigits, std::vector<double>(static_cast<size_t>(M), 0));
    std::vector<double> row_totals(kDigits, 0);
    const int B = 64;
    int done = 0;
    while (done < samples) {
        const int b = std::min(B, samples - done);
        std::vector<DigitRound> rs(static_cast<size_t>(b));
        std::vector<float> obs;
        for (auto& r : rs) {
            r = cfg.mode == "symbolic" ? sample_round_symbolic(rng) : sample_round(*dataset, rng);
        }
        TapeF tape;
        auto bound = bind_params(tape, agents.speaker, false);
        Tensor obs_t;
        if (cfg.mode == "symbolic") {
            for (const auto& r : rs) {
                auto oh = one_hot(r.speaker_digit, kDigits);
                obs.insert(obs.end(), oh.begin(), oh.end());
            }
            obs_t = tape.constant({b, kDigits}, std::move(obs));
        } else {
            for (const auto& r : rs) {
                auto img = dataset->image(r.speaker_index);
                obs.insert(obs.end(), img.begin(), img.end());
            }
            obs_t = tape.constant({b, 28, 28, 1}, std::move(obs));
        }
        auto probs = tape.softmax(digit_forward(tape, bound, agents.speaker_cfg, obs_t));
        for (int i = 0; i < b; ++i) {
            const int m = rng.sample_index(probs.values().data() + static_cast<size_t>(i) * M, M);
            counts[static_cast<size_t>(rs[static_cast<size_t>(i)].speaker_digit)][static_cast<size_t>(m)] += 1;
            row_totals[static_cast<size_t>(rs[static_cast<size_t>(i)].speaker_digit)] += 1;
        }
        done += b;
    }
    for (int d = 0; d < kDigits; ++d)
        for (int m = 0; m < M; ++m)
            counts[static_cast<size_t>(d)][static_cast<size_t>(m)] =
                row_totals[static_cast<size_t>(d)] > 0
                    ? counts[static_cast<size_t>(d)][static_cast<size_t>(m)] / row_totals[static_cast<size_t>(d)]
                    : 1.0 / M;
    return counts;
}

ProbeReport power_probe(const ExperimentConfig& cfg, const DigitAgents& agents,
                        const IdxDataset* dataset, int samples) {
    DigitGameDef game;
    game.n_messages = agents.speaker_cfg.message_alphabet;
    SpeakerTable speaker = cfg.mode == "symbolic"
                               ? digit_speaker_table(agents)
                               : estimate_speaker_table(cfg, agents, dataset, samples, cfg.seed ^ 0x9B0BEu);
    ListenerTable listener;
    if (cfg.mode == "symbolic") {
        listener = digit_listener_table(agents);
    } else {
        // estimation mode keeps the probe exact w.r.t. labels by averaging the
        // listener's policy over sampled images per (label, message) cell
        Rng rng(cfg.seed ^ 0x5EEDu);
        const int M = game.n_messages;
        const int A = game.n_actions();
        listener.assign(kDigits, std::vector<std::vector<double>>(static_cast<size_t>(M),
                                                                  std::vector<double>(static_cast<size_t>(A), 0)));
        std::vector<int> cell_counts(kDigits, 0);
        const int per_label = std::max(1, samples / kDigits);
        for (int i = 0; i < per_label * kDigits; ++i) {
            auto r = sample_round(*dataset, rng);
            TapeF tape;
            auto bound = bind_params(tape, agents.listener, false);
            auto img = dataset->image(r.listener_index);
            auto obs_t = tape.constant({1, 28, 28, 1}, std::vector<float>(img.begin(), img.end()));
            for (int m = 0; m < M; ++m) {
                auto msg = tape.constant({1, M}, one_hot(m, M));
                auto probs = tape.softmax(digit_forward(tape, bound, agents.listener_cfg, obs_t, msg));
                for (int a = 0; a < A; ++a)
                    listener[static_cast<size_t>(r.listener_digit)][static_cast<size_t>(m)]
                            [static_cast<size_t>(a)] += probs.values()[static_cast<size_t>(a)];
            }
            cell_counts[static_cast<size_t>(r.listener_digit)] += 1;
        }
        for (int d = 0; d < kDigits; ++d)
            for (int m = 0; m < M; ++m)
                for (int a = 0; a < A; ++a)
                    listener[static_cast<size_t>(d)][static_cast<size_t>(m)][static_cast<size_t>(a)] /=
                        std::max(1, cell_counts[static_cast<size_t>(d)]);
    }

    ProbeReport rep;
    rep.r_lc = fit_optimal_listener(speaker, game, true).expected_reward;
    rep.r_lnc = fit_optimal_listener(speaker, game, false).expected_reward;
    rep.r_sc = fit_optimal_speaker(listener, game, false).expected_reward;
    rep.r_su = fit_optimal_speaker(listener, game, true).expected_reward;
    return rep;
}

std::string probe_report_json(const ProbeReport& r) {
    json j;
    j["r_optimal_listener"] = r.r_lc;
    j["r_nocomm_listener"] = r.r_lnc;
    j["r_optimal_speaker"] = r.r_sc;
    j["r_uniform_speaker"] = r.r_su;
    j["listener_power"] = r.listener_power();
    j["speaker_power"] = r.speaker_power();
    return j.dump(2);
}

// ---- statistics ----

Interval wilson_interval(int successes, int n, double z) {
    if (n <= 0) fail("wilson_interval: n must be positive, got ", n);
    if (successes < 0 || successes > n)
        fail("wilson_interval: successes ", successes, " outside [0,", n, "]");
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

double metrics_field(const MetricsRow& row, const std::string& field) {
    if (field == "mean_reward") return row.mean_reward;
    if (field == "loss_total") return row.loss_total;
    if (field == "loss_pg") return row.loss_pg;
    if (field == "loss_value") return row.loss_value;
    if (field == "entropy_action") return row.entropy_action;
    if (field == "entropy_message") return row.entropy_message;
    if (field == "l_ps") return row.bias.l_ps;
    if (field == "l_pl") return row.bias.l_pl;
    if (field == "l_ce") return row.bias.l_ce;
    if (field == "marginal_entropy") return row.bias.marginal_entropy;
    if (field == "conditional_entropy") return row.bias.mean_conditional_entropy;
    if (field == "cic") return row.bias.cic;
    if (field == "mutual_information") return row.bias.mutual_information;
    fail("metrics: unknown field '", field, "'");
}

std::vector<CurvePoint> learning_curve(const std::vector<std::vector<MetricsRow>>& runs, int windows,
                                       const std::string& field) {
    if (runs.empty()) fail("learning_curve: no runs");
    size_t shortest = runs[0].size();
    for (const auto& r : runs) shortest = std::min(shortest, r.size());
    if (shortest == 0) fail("learning_curve: a run has no metrics rows");
    bool truncated = false;
    for (const auto& r : runs) truncated = truncated || r.size() != shortest;
    if (truncated)
        std::cerr << "learning_curve: runs of unequal length truncated to " << shortest << " rows\n";

    windows = std::min<int>(windows, static_cast<int>(shortest));
    std::vector<CurvePoint> out;
    const double z = 1.959964;
    for (int w = 0; w < windows; ++w) {
        const size_t lo = shortest * static_cast<size_t>(w) / static_cast<size_t>(windows);
        const size_t hi = shortest * static_cast<size_t>(w + 1) / static_cast<size_t>(windows);
        if (hi == lo) continue;
        std::vector<double> run_means;
        double step_acc = 0;
        for (const auto& r : runs) {
            double acc = 0;
            for (size_t i = lo; i < hi; ++i) acc += metrics_field(r[i], field);
            run_means.push_back(acc / static_cast<double>(hi - lo));
            step_acc += 0.5 * (static_cast<double>(r[lo].global_step) + static_cast<double>(r[hi - 1].global_step));
        }
        CurvePoint pt;
        pt.window_center = step_acc / static_cast<double>(runs.size());
        double mean = 0;
        for (double m : run_means) mean += m;
        mean /= static_cast<double>(run_means.size());
        double var = 0;
        for (double m : run_means) var += (m - mean) * (m - mean);
        var = run_means.size() > 1 ? var / static_cast<double>(run_means.size() - 1) : 0.0;
        const double half = run_means.size() > 1
                                ? z * std::sqrt(var / static_cast<double>(run_means.size()))
                                : 0.0;
        pt.mean = mean;
        pt.lo = mean - half;
        pt.hi = mean + half;
        out.push_back(pt);
    }
    return out;
}

// ---- treasure rollouts for analysis ----

namespace {

struct RolloutHooks {
    // forced channel override: symbol broadcast by the finder from this frame on
    int forced_symbol = -1;
    int force_from = 0;
};

struct EpisodeTrace {
    std::vector<int> finder_symbol;     // message sent by the finder at each step
    std::vector<int> treasure_tunnel;   // tunnel index at each step (before stepping)
    std::vector<int> collector_action;
    std::vector<std::pair<int, int>> collector_pos;  // after the step
};

EpisodeTrace roll_episode(const ExperimentConfig& cfg, const TreasurePolicyPair& pair, Rng env_rng,
                          Rng sample_rng, const RolloutHooks& hooks) {
    TreasureEnv env = TreasureEnv::make(env_rng);
    ScriptedFinder finder(pair.scripted_finder_sighted ? ScriptedFinder::Mode::sighted
                                                       : ScriptedFinder::Mode::oracle);
    ScriptedCollector collector;
    const int H = cfg.treasure_lstm_hidden;
    std::vector<std::array<std::vector<float>, 2>> h(1), c(1);
    h[0] = {std::vector<float>(static_cast<size_t>(H), 0.f), std::vector<float>(static_cast<size_t>(H), 0.f)};
    c[0] = h[0];

    EpisodeTrace trace;
    int t = 0;
    while (!env.done()) {
        JointAction joint;
        trace.treasure_tunnel.push_back(env.map().treasure_tunnel());

        for (int agent = 0; agent < 2; ++agent) {
            const bool scripted = pair.agents == nullptr ||
                                  (agent == kFinder && pair.agents->scripted_finder);
            if (scripted) {
                ScriptedDecision d = agent == kFinder
                                         ? finder.act(env)
                                         : collector.act(env, env.previous_message(kFinder));
                joint.action[static_cast<size_t>(agent)] = d.action;
                joint.message[static_cast<size_t>(agent)] = d.message;
            } else {
                TapeF tape;
                auto bound = bind_params(tape, pair.agents->net[static_cast<size_t>(agent)], false);
                auto o = env.observe(agent);
                auto obs_t = tape.constant({1, kObsSide, kObsSide, kObsChannels},
                                           std::vector<float>(o.begin(), o.end()));
                const int in = env.previous_message(agent == kFinder ? kCollector : kFinder);
                auto msg_t = tape.constant({1, kTreasureMessages}, one_hot(in, kTreasureMessages));
                auto out = treasure_step(tape, bound, pair.agents->net_cfg, obs_t, msg_t,
                                         tape.constant({1, H}, h[0][static_cast<size_t>(agent)]),
                                         tape.constant({1, H}, c[0][static_cast<size_t>(agent)]));
                auto pa = tape.softmax(out.action_logits);
                auto pm = tape.softmax(out.message_logits);
                joint.action[static_cast<size_t>(agent)] =
                    sample_rng.sample_index(pa.values().data(), kTreasureActions);
                joint.message[static_cast<size_t>(agent)] =
                    sample_rng.sample_index(pm.values().data(), kTreasureMessages);
                h[0][static_cast<size_t>(agent)] = out.h.values();
                c[0][static_cast<size_t>(agent)] = out.c.values();
            }
        }
        if (hooks.forced_symbol >= 0 && t >= hooks.force_from)
            joint.message[kFinder] = hooks.forced_symbol;

        trace.finder_symbol.push_back(joint.message[kFinder]);
        trace.collector_action.push_back(joint.action[kCollector]);
        env.step(joint);
        trace.collector_pos.emplace_back(env.map().collector_row, env.map().collector_col);
        ++t;
    }
    return trace;
}

CorrelationTable make_table(const std::vector<std::vector<int>>& counts,
                            const std::vector<std::string>& columns) {
    CorrelationTable table;
    table.columns = columns;
    for (int s = 0; s < static_cast<int>(counts.size()); ++s) {
        CorrelationRow row;
        row.symbol = s;
        int total = 0;
        for (int v : counts[static_cast<size_t>(s)]) total += v;
        row.count = total;
        if (total == 0) {
            row.absent = true;
        } else {
            for (int v : counts[static_cast<size_t>(s)]) {
                row.p.push_back(static_cast<double>(v) / total);
                auto iv = wilson_interval(v, total);
                row.half_width.push_back(0.5 * (iv.hi - iv.lo));
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace

ProtocolTables protocol_tables(const ExperimentConfig& cfg, const TreasurePolicyPair& pair,
                               int episodes, uint64_t seed) {
    Rng master(seed);
    std::vector<std::vector<int>> tunnel_counts(kTreasureMessages,
                                                std::vector<int>(TreasureMap::kNumTunnels, 0));
    std::vector<std::vector<int>> action_counts(kTreasureMessages,
                                                std::vector<int>(kTreasureActions, 0));
    for (int ep = 0; ep < episodes; ++ep) {
        auto trace = roll_episode(cfg, pair, master.split(static_cast<uint64_t>(ep)),
                                  master.split(static_cast<uint64_t>(70000 + ep)), {});
        for (size_t t = 0; t < trace.finder_symbol.size(); ++t) {
            const int s = trace.finder_symbol[t];
            tunnel_counts[static_cast<size_t>(s)][static_cast<size_t>(trace.treasure_tunnel[t])] += 1;
            action_counts[static_cast<size_t>(s)][static_cast<size_t>(trace.collector_action[t])] += 1;
        }
    }
    ProtocolTables out;
    out.tunnel = make_table(tunnel_counts, {"P(T=1|S)", "P(T=2|S)", "P(T=3|S)", "P(T=4|S)"});
    out.action = make_table(action_counts,
                            {"P(Noop|S)", "P(Up|S)", "P(Right|S)", "P(Down|S)", "P(Left|S)"});
    return out;
}

std::string correlation_table_csv(const CorrelationTable& table) {
    std::ostringstream out;
    out << "symbol,count,absent";
    for (const auto& c : table.columns) out << ',' << c << ",half_width";
    out << '\n';
    out.setf(std::ios::fixed);
    out.precision(4);
    for (const auto& row : table.rows) {
        out << row.symbol << ',' << row.count << ',' << (row.absent ? 1 : 0);
        if (row.absent) {
            for (size_t i = 0; i < table.columns.size(); ++i) out << ",,";
        } else {
            for (size_t i = 0; i < row.p.size(); ++i) out << ',' << row.p[i] << ',' << row.half_width[i];
        }
        out << '\n';
    }
    return out.str();
}

std::optional<int> strongest_symbol_for_tunnel(const CorrelationTable& tunnel_table, int tunnel,
                                               int min_emissions) {
    std::optional<int> best;
    double best_p = -1;
    for (const auto& row : tunnel_table.rows) {
        if (row.absent || row.count < min_emissions) continue;
        const double p = row.p[static_cast<size_t>(tunnel)];
        if (p > best_p) {
            best_p = p;
            best = row.symbol;
        }
    }
    return best;
}

InterventionResult intervention_experiment(const ExperimentConfig& cfg, const TreasurePolicyPair& pair,
                                           int forced_symbol, int target_tunnel, int episodes,
                                           uint64_t seed) {
    if (forced_symbol < 0 || forced_symbol >= kTreasureMessages)
        fail("intervention: forced symbol ", forced_symbol, " outside [0,", kTreasureMessages, ")");
    if (target_tunnel < 0 || target_tunnel >= TreasureMap::kNumTunnels)
        fail("intervention: target tunnel ", target_tunnel, " outside [0,", TreasureMap::kNumTunnels, ")");
    constexpr int kForceFrom = 100;
    // "3 from the bottom": 3 rows above the tunnel's lowest cell, the closest
    // cell from which the treasure is outside the 5x5 view.
    constexpr int kTargetRow = TreasureMap::kTunnelBottomRow - 3;

    auto measure = [&](bool forced) {
        InterventionArm arm;
        arm.episodes = episodes;
        std::vector<double> times;
        Rng master(seed);
        for (int ep = 0; ep < episodes; ++ep) {
            Rng env_rng = master.split(static_cast<uint64_t>(ep));
            Rng sample_rng = master.split(static_cast<uint64_t>(70000 + ep));
            TreasureEnv env = TreasureEnv::make(env_rng);
            const int target_col = env.map().tunnel_cols[static_cast<size_t>(target_tunnel)];
            ScriptedFinder finder(pair.scripted_finder_sighted ? ScriptedFinder::Mode::sighted
                                                               : ScriptedFinder::Mode::oracle);
            ScriptedCollector collector;
            const int H = cfg.treasure_lstm_hidden;
            std::array<std::vector<float>, 2> h{
                std::vector<float>(static_cast<size_t>(H), 0.f),
                std::vector<float>(static_cast<size_t>(H), 0.f)};
            std::array<std::vector<float>, 2> c = h;
            int visit = -1;
            int t = 0;
            while (!env.done()) {
                JointAction joint;
                for (int agent = 0; agent < 2; ++agent) {
                    const bool scripted = pair.agents == nullptr ||
                                          (agent == kFinder && pair.agents->scripted_finder);
                    if (scripted) {
                        ScriptedDecision d = agent == kFinder
                                                 ? finder.act(env)
                                                 : collector.act(env, env.previous_message(kFinder));
                        joint.action[static_cast<size_t>(agent)] = d.action;
                        joint.message[static_cast<size_t>(agent)] = d.message;
                    } else {
                        TapeF tape;
                        auto bound = bind_params(tape, pair.agents->net[static_cast<size_t>(agent)], false);
                        auto o = env.observe(agent);
                        auto obs_t = tape.constant({1, kObsSide, kObsSide, kObsChannels},
                                                   std::vector<float>(o.begin(), o.end()));
                        const int in = env.previous_message(agent == kFinder ? kCollector : kFinder);
                        auto msg_t = tape.constant({1, kTreasureMessages}, one_hot(in, kTreasureMessages));
                        auto out = treasure_step(tape, bound, pair.agents->net_cfg, obs_t, msg_t,
                                                 tape.constant({1, H}, h[static_cast<size_t>(agent)]),
                                                 tape.constant({1, H}, c[static_cast<size_t>(agent)]));
                        auto pa = tape.softmax(out.action_logits);
                        auto pm = tape.softmax(out.message_logits);
                        joint.action[static_cast<size_t>(agent)] =
                            sample_rng.sample_index(pa.values().data(), kTreasureActions);
                        joint.message[static_cast<size_t>(agent)] =
                            sample_rng.sample_index(pm.values().data(), kTreasureMessages);
                        h[static_cast<size_t>(agent)] = out.h.values();
                        c[static_cast<size_t>(agent)] = out.c.values();
                    }
                }
                if (forced && t >= kForceFrom) joint.message[kFinder] = forced_symbol;
                env.step(joint);
                ++t;
                if (visit < 0 && t >= kForceFrom && env.map().collector_row == kTargetRow &&
                    env.map().collector_col == target_col)
                    visit = t;
            }
            if (visit < 0) {
                arm.censored += 1;
                visit = TreasureMap::kEpisodeLength;  // horizon substitution, flagged via censored
            }
            times.push_back(static_cast<double>(visit));
        }
        double mean = 0;
        for (double x : times) mean += x;
        mean /= static_cast<double>(times.size());
        double var = 0;
        for (double x : times) var += (x - mean) * (x - mean);
        var = times.size() > 1 ? var / static_cast<double>(times.size() - 1) : 0.0;
        const double half = 1.959964 * std::sqrt(var / static_cast<double>(times.size()));
        arm.mean_visit_time = mean;
        arm.ci_lo = mean - half;
        arm.ci_hi = mean + half;
        return arm;
    };

    InterventionResult out;
    out.forced_symbol = forced_symbol;
    out.target_tunnel = target_tunnel;
    out.unmodified = measure(false);
    out.modified = measure(true);
    return out;
}

std::string intervention_json(const InterventionResult& r) {
    json j;
    j["forced_symbol"] = r.forced_symbol;
    j["target_tunnel"] = r.target_tunnel;
    auto arm = [](const InterventionArm& a) {
        json x;
        x["mean_visit_time"] = a.mean_visit_time;
        x["ci_lo"] = a.ci_lo;
        x["ci_hi"] = a.ci_hi;
        x["censored"] = a.censored;
        x["episodes"] = a.episodes;
        return x;
    };
    j["unmodified"] = arm(r.unmodified);
    j["modified"] = arm(r.modified);
    return j.dump(2);
}

}  // namespace ecl
