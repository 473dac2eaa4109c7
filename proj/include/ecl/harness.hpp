#pragma once

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ecl/biases.hpp"
#include "ecl/checkpoint.hpp"
#include "ecl/config.hpp"
#include "ecl/digit_env.hpp"
#include "ecl/metrics.hpp"
#include "ecl/nets.hpp"
#include "ecl/treasure_env.hpp"

namespace ecl {

// Per-update loss diagnostics shared by both trainers.
struct LossBreakdown {
    double total = 0, pg = 0, value = 0;
    double entropy_action = 0, entropy_message = 0;
    BiasTerms bias;
};

bool classify_good_run(const std::string& env, double final_mean_reward);

std::vector<float> one_hot(int index, int width);  // index -1 -> all zeros

// ---------------- digit game (REINFORCE) ----------------

struct DigitAgents {
    DigitNetConfig speaker_cfg, listener_cfg;
    ParamSet speaker, listener;
    OptimizerState opt_speaker, opt_listener;
};

DigitAgents make_digit_agents(const ExperimentConfig& cfg, Rng& init_rng);

struct DigitUpdateResult {
    LossBreakdown speaker, listener;
    double mean_reward = 0;
};

// One decentralized REINFORCE step for both agents: separate tapes, messages
// cross as plain symbols. dataset may be null in symbolic mode.
DigitUpdateResult reinforce_update(const ExperimentConfig& cfg, DigitAgents& agents,
                                   const IdxDataset* dataset, Rng& env_rng, Rng& sample_rng);

// P(m | d_s) evaluated exactly on the 10 one-hot inputs (symbolic mode).
std::vector<std::vector<double>> digit_speaker_table(const DigitAgents& agents);
// pi_L(a | d_l, m) on all 200 (digit, message) pairs (symbolic mode).
std::vector<std::vector<std::vector<double>>> digit_listener_table(const DigitAgents& agents,
                                                                   bool zero_message = false);
// Exact expected task reward under uniform digits (symbolic mode).
double digit_exact_expected_reward(const DigitAgents& agents, bool no_comm = false);

// Sampled estimate for image mode: expected probability of the correct action
// over fresh rounds, parameters frozen.
double digit_estimate_reward(const ExperimentConfig& cfg, const DigitAgents& agents,
                             const IdxDataset* dataset, int rounds, uint64_t eval_seed);

// ---------------- treasure hunt (synchronous actor-critic) ----------------

struct TreasureAgents {
    TreasureNetConfig net_cfg;
    std::array<ParamSet, 2> net;           // [finder, collector]
    std::array<OptimizerState, 2> opt;
    bool scripted_finder = false;
};

TreasureAgents make_treasure_agents(const ExperimentConfig& cfg, Rng& init_rng);

// One unroll from one env copy. Rewards already include any social-influence
// intrinsic bonus for the sending agent.
struct TreasureUnroll {
    int T = 0;
    struct PerAgent {
        std::vector<float> obs;           // T * 75
        std::vector<int> in_msg;          // incoming symbol (-1 = none)
        std::vector<int> action, message;
        std::vector<float> logp_action, logp_message;  // behavior log-probs
        std::vector<float> reward;
        std::vector<float> h0, c0;        // recurrent state at unroll start
        float bootstrap_value = 0;
    };
    std::array<PerAgent, 2> agent;
    std::vector<uint8_t> episode_end;     // 1 where the episode terminated at that step
};

// Carried simulation state across unrolls (and into checkpoints).
struct TreasureWorkers {
    std::vector<TreasureEnv> envs;
    std::vector<Rng> sample_rngs;
    // [copy][agent]: carried LSTM state
    std::vector<std::array<std::vector<float>, 2>> h, c;
    // counterfactual state for social-influence CIC tracking
    std::vector<std::array<std::vector<float>, 2>> h_cf, c_cf;
    std::vector<ScriptedFinder> scripted;
    std::vector<double> episode_return;
    std::deque<double> finished_returns;  // window since the last metrics row

    static TreasureWorkers make(const ExperimentConfig& cfg, Rng& seed_rng);
};

std::vector<TreasureUnroll> collect_unrolls(const ExperimentConfig& cfg, const TreasureAgents& agents,
                                            TreasureWorkers& workers);

// V-trace with clipping thresholds fixed at 1; on-policy collection makes the
// importance weights exactly 1 and this reduces to n-step returns.
struct VtraceResult {
    std::vector<double> vs;   // value targets, length T
    std::vector<double> adv;  // policy-gradient advantages, length T
};
VtraceResult vtrace_targets(const std::vector<double>& rewards, const std::vector<double>& values,
                            double bootstrap, const std::vector<double>& rhos,
                            const std::vector<uint8_t>& episode_end, double gamma);

LossBreakdown actor_critic_update(const ExperimentConfig& cfg, TreasureAgents& agents, int agent_id,
                                  const std::vector<const TreasureUnroll*>& batch, int64_t global_step);

// Mean episode reward over fresh evaluation episodes with frozen parameters.
double evaluate_treasure(const ExperimentConfig& cfg, const TreasureAgents& agents, int episodes,
                         uint64_t eval_seed);

// ---------------- experiment runner ----------------

struct RunResult {
    std::string run_dir;
    double final_reward = 0;
    bool good_run = false;
    int64_t global_step = 0;
};

// Trains per config into run_dir (metrics.jsonl, checkpoints/, report.json).
// With resume=true, picks up from the newest checkpoint in run_dir.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& run_dir, bool resume = false);

// Rehydrates config + trained parameters from a finished (or checkpointed) run.
struct LoadedRun {
    ExperimentConfig cfg;
    std::unique_ptr<DigitAgents> digit;
    std::unique_ptr<TreasureAgents> treasure;
    uint64_t global_step = 0;
};
LoadedRun load_run(const std::string& run_dir);

}  // namespace ecl
