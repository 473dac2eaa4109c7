#pragma once

#include <map>
#include <string>
#include <vector>

#include "ecl/common.hpp"

namespace ecl {

// Run definition. Serialized as a flat key = value text file; every key below
// is documented in config_key_docs() and accepted as a CLI override.
struct ExperimentConfig {
    std::string run_id = "run";
    std::string env = "digit";       // digit | treasure
    std::string mode = "symbolic";   // digit game: symbolic | image
    std::string bias = "no-bias";    // no-comm | no-bias | ps | pl | both | si
    uint64_t seed = 1;

    int total_updates = 2000;
    int batch_size = 32;
    int env_copies = 32;             // treasure
    int unroll_length = 20;          // treasure
    double discount = 0.99;          // treasure; the digit game is single-step

    std::string optimizer = "adam";  // adam | rmsprop
    double lr = 3e-4;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double rmsprop_decay = 0.99, rmsprop_eps = 1e-6;
    double lr_anneal_factor = 0.99;
    double lr_anneal_every = 1e6;

    double entropy_action = 0.03;
    double entropy_message = 0.03;
    double w_ps = 0.0;
    double lambda_ps = 0.0;          // conditional/marginal weight ratio inside L_ps
    double h_target = -1.0;
    double w_pl = 0.0;
    double w_ce = 0.0;
    double w_si = 0.0;
    double value_cost = 0.5;
    bool reinforce_baseline = true;  // batch-mean baseline for REINFORCE
    std::string cic_mode = "multi";  // multi | single (which messages the counterfactual zeroes)

    int digit_mlp_hidden = 64;
    int treasure_conv_channels = 6;
    int treasure_mlp_hidden = 64;
    int treasure_lstm_hidden = 128;

    std::string treasure_finder = "net";  // net | scripted-oracle | scripted-sighted

    int metrics_every = 10;     // updates between MetricsRow appends
    int checkpoint_every = 0;   // updates between checkpoints; 0 = final only
    int eval_rounds = 0;        // digit: extra sampled eval rounds (0 = exact only)
    int eval_episodes = 20;     // treasure: fresh episodes evaluated at the end
    std::string mnist_dir = "data/mnist";
};

struct ConfigKeyDoc {
    std::string key;
    std::string doc;
};

std::vector<ConfigKeyDoc> config_key_docs();

// Parse `key = value` lines ('#' comments, blank lines ignored).
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Unknown key or unparsable value -> Error naming the key.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Bias setting determines which weights must be set; inconsistent configs are
// rejected here rather than surfacing mid-run.
void validate(const ExperimentConfig& cfg);

std::string serialize_config(const ExperimentConfig& cfg);

// Appendix-style defaults for each (env, bias) pair.
ExperimentConfig default_config(const std::string& env, const std::string& bias);

}  // namespace ecl
