#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/harness.hpp"

namespace ecl {

// ---- digit-game power probes (section: optimal partner fitting) ----

// The game over d in 0..n_digits-1 (uniform), messages 0..n_messages-1,
// actions 0..2*(n_digits-1); reward 1 iff action == d_s + d_l.
struct DigitGameDef {
    int n_digits = 10;
    int n_messages = 20;
    int n_actions() const { return 2 * n_digits - 1; }
};

// speaker[d][m] = P(m | d_s = d)
using SpeakerTable = std::vector<std::vector<double>>;
// listener[d][m][a] = pi(a | d_l = d, m)
using ListenerTable = std::vector<std::vector<std::vector<double>>>;

struct FittedListener {
    std::vector<std::vector<int>> action;  // [d_l][m]; single column when no messages
    bool with_messages = true;
    double expected_reward = 0;
};

struct FittedSpeaker {
    std::vector<int> message;  // [d_s]; empty in uniform mode
    bool uniform = false;
    double expected_reward = 0;
};

// Exact best-response listener given P(m|d_s); with_messages=false restricts
// the listener to its own digit (the no-communication probe).
FittedListener fit_optimal_listener(const SpeakerTable& speaker, const DigitGameDef& game,
                                    bool with_messages);

// Exact best-response speaker against pi_L(a|d_l,m); ties take the lowest
// symbol. uniform=true evaluates the uniform-message speaker instead.
FittedSpeaker fit_optimal_speaker(const ListenerTable& listener, const DigitGameDef& game, bool uniform);

// Expected reward of explicit (speaker, listener) tables.
double expected_reward(const SpeakerTable& speaker, const ListenerTable& listener,
                       const DigitGameDef& game);

// Estimate P(m|d_s) by sampling messages from the speaker net over `samples`
// rounds (image-mode probes; the labels index the table).
SpeakerTable estimate_speaker_table(const ExperimentConfig& cfg, const DigitAgents& agents,
                                    const IdxDataset* dataset, int samples, uint64_t seed);

struct ProbeReport {
    double r_lc = 0;   // optimal listener vs current speaker
    double r_lnc = 0;  // no-communication listener vs current speaker
    double r_sc = 0;   // current listener vs optimal speaker
    double r_su = 0;   // current listener vs uniform speaker
    double listener_power() const { return r_lc - r_lnc; }
    double speaker_power() const { return r_sc - r_su; }
};

// Powers P_l and P_s for the current (speaker, listener) pair. Exact in
// symbolic mode; estimation with `samples` rounds in image mode.
ProbeReport power_probe(const ExperimentConfig& cfg, const DigitAgents& agents,
                        const IdxDataset* dataset = nullptr, int samples = 10000);

std::string probe_report_json(const ProbeReport& report);

// ---- statistics ----

struct Interval {
    double lo = 0, hi = 0;
};

// Wilson score interval; z defaults to the 95% two-sided quantile.
Interval wilson_interval(int successes, int n, double z = 1.959964);

// Normal-approximation CI for a mean over runs.
struct CurvePoint {
    double window_center = 0;  // global-step midpoint of the window
    double mean = 0;
    double lo = 0, hi = 0;
};

// Windowed learning curves across runs: per window, per-run means are
// aggregated into a cross-run mean with a 95% normal CI. Runs of unequal
// length are truncated to the shortest (warning on stderr).
std::vector<CurvePoint> learning_curve(const std::vector<std::vector<MetricsRow>>& runs,
                                       int windows = 100, const std::string& field = "mean_reward");

double metrics_field(const MetricsRow& row, const std::string& field);

// ---- treasure-hunt protocol analysis ----

// Policy sources for analysis rollouts: trained nets or the scripted pair.
struct TreasurePolicyPair {
    const TreasureAgents* agents = nullptr;  // null -> fully scripted pair
    bool scripted_finder_sighted = false;    // scripted finder mode when scripted
};

struct CorrelationRow {
    int symbol = 0;
    bool absent = false;  // symbol never emitted
    int count = 0;
    std::vector<double> p;           // P(event | symbol)
    std::vector<double> half_width;  // Wilson half-widths
};

struct CorrelationTable {
    std::vector<std::string> columns;
    std::vector<CorrelationRow> rows;
};

struct ProtocolTables {
    CorrelationTable tunnel;  // P(T = i | S)
    CorrelationTable action;  // P(collector action | S)
};

ProtocolTables protocol_tables(const ExperimentConfig& cfg, const TreasurePolicyPair& pair,
                               int episodes, uint64_t seed);

std::string correlation_table_csv(const CorrelationTable& table);

// ---- intervention experiment ----

struct InterventionArm {
    double mean_visit_time = 0;
    double ci_lo = 0, ci_hi = 0;
    int censored = 0;  // episodes that never reached the target (count the horizon)
    int episodes = 0;
};

struct InterventionResult {
    InterventionArm unmodified;
    InterventionArm modified;
    int forced_symbol = 0;
    int target_tunnel = 0;
};

// Overrides the channel with `forced_symbol` from frame 100 on and measures
// the collector's first visit (>= frame 100) to the cell 3 rows above the
// target tunnel's bottom, against the unmodified baseline.
InterventionResult intervention_experiment(const ExperimentConfig& cfg, const TreasurePolicyPair& pair,
                                           int forced_symbol, int target_tunnel, int episodes,
                                           uint64_t seed);

std::string intervention_json(const InterventionResult& r);

// Symbol most strongly indicating each tunnel (argmax_s P(T=t|S=s) among
// symbols with at least min_emissions emissions).
std::optional<int> strongest_symbol_for_tunnel(const CorrelationTable& tunnel_table, int tunnel,
                                               int min_emissions = 50);

}  // namespace ecl
