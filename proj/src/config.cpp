#include "ecl/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace ecl {

namespace {

struct KeyEntry {
    std::string key;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& key, const std::string& text);

template <>
std::string parse_value<std::string>(const std::string&, const std::string& text) {
    return text;
}
template <>
double parse_value<double>(const std::string& key, const std::string& text) {
    try {
        size_t pos = 0;
        double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        fail("config: key '", key, "': cannot parse '", text, "' as a number");
    }
}
template <>
int parse_value<int>(const std::string& key, const std::string& text) {
    try {
        size_t pos = 0;
        int v = std::stoi(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        fail("config: key '", key, "': cannot parse '", text, "' as an integer");
    }
}
template <>
uint64_t parse_value<uint64_t>(const std::string& key, const std::string& text) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        fail("config: key '", key, "': cannot parse '", text, "' as an unsigned integer");
    }
}
template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    fail("config: key '", key, "': cannot parse '", text, "' as a bool");
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out.precision(12);
    out << v;
    return out.str();
}

const std::vector<KeyEntry>& registry() {
    static const std::vector<KeyEntry> entries = [] {
        std::vector<KeyEntry> r;
        auto add = [&r](const std::string& key, const std::string& doc, auto member) {
            using M = std::decay_t<decltype(ExperimentConfig{}.*member)>;
            r.push_back(KeyEntry{
                key, doc,
                [member](const ExperimentConfig& c) {
                    if constexpr (std::is_same_v<M, double>) return fmt_double(c.*member);
                    else if constexpr (std::is_same_v<M, std::string>) return c.*member;
                    else if constexpr (std::is_same_v<M, bool>) return std::string(c.*member ? "true" : "false");
                    else return std::to_string(c.*member);
                },
                [key, member](ExperimentConfig& c, const std::string& v) {
                    c.*member = parse_value<M>(key, v);
                }});
        };
        add("run_id", "run identifier used in metrics rows", &ExperimentConfig::run_id);
        add("env", "environment: digit | treasure", &ExperimentConfig::env);
        add("mode", "digit observations: symbolic | image", &ExperimentConfig::mode);
        add("bias", "bias setting: no-comm | no-bias | ps | pl | both | si", &ExperimentConfig::bias);
        add("seed", "master seed; fixes the whole run", &ExperimentConfig::seed);
        add("total_updates", "gradient updates per agent", &ExperimentConfig::total_updates);
        add("batch_size", "rounds (digit) or unrolls (treasure) per update", &ExperimentConfig::batch_size);
        add("env_copies", "parallel environment copies (treasure)", &ExperimentConfig::env_copies);
        add("unroll_length", "steps per unroll (treasure)", &ExperimentConfig::unroll_length);
        add("discount", "discount factor gamma (treasure)", &ExperimentConfig::discount);
        add("optimizer", "adam | rmsprop", &ExperimentConfig::optimizer);
        add("lr", "learning rate", &ExperimentConfig::lr);
        add("adam_beta1", "Adam beta1", &ExperimentConfig::adam_beta1);
        add("adam_beta2", "Adam beta2", &ExperimentConfig::adam_beta2);
        add("adam_eps", "Adam epsilon", &ExperimentConfig::adam_eps);
        add("rmsprop_decay", "RMSProp square-average decay", &ExperimentConfig::rmsprop_decay);
        add("rmsprop_eps", "RMSProp epsilon (inside the square root)", &ExperimentConfig::rmsprop_eps);
        add("lr_anneal_factor", "lr multiplier applied continuously per lr_anneal_every steps",
            &ExperimentConfig::lr_anneal_factor);
        add("lr_anneal_every", "env steps per annealing factor", &ExperimentConfig::lr_anneal_every);
        add("entropy_action", "action policy entropy bonus", &ExperimentConfig::entropy_action);
        add("entropy_message", "message policy entropy bonus", &ExperimentConfig::entropy_message);
        add("w_ps", "weight of the positive-signalling loss", &ExperimentConfig::w_ps);
        add("lambda_ps", "conditional/marginal ratio inside L_ps", &ExperimentConfig::lambda_ps);
        add("h_target", "target conditional message entropy (nats); -1 = unset",
            &ExperimentConfig::h_target);
        add("w_pl", "weight of the positive-listening (L1) loss", &ExperimentConfig::w_pl);
        add("w_ce", "weight of the counterfactual cross-entropy fit loss", &ExperimentConfig::w_ce);
        add("w_si", "weight of the social-influence intrinsic reward", &ExperimentConfig::w_si);
        add("value_cost", "value loss coefficient", &ExperimentConfig::value_cost);
        add("reinforce_baseline", "use the batch-mean reward baseline in REINFORCE",
            &ExperimentConfig::reinforce_baseline);
        add("cic_mode", "counterfactual mode: multi (all messages zeroed) | single (final only)",
            &ExperimentConfig::cic_mode);
        add("digit_mlp_hidden", "hidden width of the symbolic digit MLP", &ExperimentConfig::digit_mlp_hidden);
        add("treasure_conv_channels", "treasure net conv channels", &ExperimentConfig::treasure_conv_channels);
        add("treasure_mlp_hidden", "treasure net MLP hidden width", &ExperimentConfig::treasure_mlp_hidden);
        add("treasure_lstm_hidden", "treasure net LSTM hidden size", &ExperimentConfig::treasure_lstm_hidden);
        add("treasure_finder", "finder: net | scripted-oracle | scripted-sighted",
            &ExperimentConfig::treasure_finder);
        add("metrics_every", "updates between metrics rows", &ExperimentConfig::metrics_every);
        add("checkpoint_every", "updates between checkpoints (0 = final only)",
            &ExperimentConfig::checkpoint_every);
        add("eval_rounds", "digit: sampled eval rounds for the final report (0 = exact only)",
            &ExperimentConfig::eval_rounds);
        add("eval_episodes", "treasure: evaluation episodes for the final report",
            &ExperimentConfig::eval_episodes);
        add("mnist_dir", "directory with MNIST idx files (image mode)", &ExperimentConfig::mnist_dir);
        return r;
    }();
    return entries;
}

const KeyEntry* find_key(const std::string& key) {
    for (const auto& e : registry())
        if (e.key == key) return &e;
    return nullptr;
}

}  // namespace

std::vector<ConfigKeyDoc> config_key_docs() {
    std::vector<ConfigKeyDoc> out;
    for (const auto& e : registry()) out.push_back({e.key, e.doc});
    return out;
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const KeyEntry* e = find_key(key);
    if (!e) fail("config: unknown key '", key, "'");
    e->set(cfg, value);
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail("config: line ", lineno, " is not 'key = value': '", line, "'");
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("config: cannot open ", path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    for (const auto& e : registry()) out << e.key << " = " << e.get(cfg) << "\n";
    return out.str();
}

void validate(const ExperimentConfig& cfg) {
    auto is_one_of = [](const std::string& v, std::initializer_list<const char*> opts) {
        for (const char* o : opts)
            if (v == o) return true;
        return false;
    };
    if (!is_one_of(cfg.env, {"digit", "treasure"})) fail("config: env '", cfg.env, "'");
    if (!is_one_of(cfg.mode, {"symbolic", "image"})) fail("config: mode '", cfg.mode, "'");
    if (!is_one_of(cfg.bias, {"no-comm", "no-bias", "ps", "pl", "both", "si"}))
        fail("config: bias '", cfg.bias, "'");
    if (!is_one_of(cfg.optimizer, {"adam", "rmsprop"})) fail("config: optimizer '", cfg.optimizer, "'");
    if (!is_one_of(cfg.cic_mode, {"multi", "single"})) fail("config: cic_mode '", cfg.cic_mode, "'");
    if (!is_one_of(cfg.treasure_finder, {"net", "scripted-oracle", "scripted-sighted"}))
        fail("config: treasure_finder '", cfg.treasure_finder, "'");
    if (cfg.total_updates <= 0 || cfg.batch_size <= 0 || cfg.env_copies <= 0 || cfg.unroll_length <= 0)
        fail("config: sizes must be positive");
    if (cfg.env == "treasure" && cfg.env_copies % cfg.batch_size != 0)
        fail("config: env_copies (", cfg.env_copies, ") must be a multiple of batch_size (",
             cfg.batch_size, ") for treasure");
    if (cfg.discount < 0.0 || cfg.discount >= 1.0) fail("config: discount must be in [0,1)");

    const bool uses_ps = cfg.bias == "ps" || cfg.bias == "both";
    const bool uses_pl = cfg.bias == "pl" || cfg.bias == "both";
    const bool uses_si = cfg.bias == "si";
    if (uses_ps) {
        if (cfg.w_ps <= 0.0) fail("config: bias '", cfg.bias, "' requires w_ps > 0");
        if (cfg.lambda_ps <= 0.0) fail("config: bias '", cfg.bias, "' requires lambda_ps > 0");
        if (cfg.h_target < 0.0) fail("config: bias '", cfg.bias, "' requires h_target");
    } else if (cfg.w_ps != 0.0) {
        fail("config: w_ps must be 0 for bias '", cfg.bias, "'");
    }
    if (uses_pl) {
        if (cfg.w_pl <= 0.0) fail("config: bias '", cfg.bias, "' requires w_pl > 0");
    } else if (cfg.w_pl != 0.0) {
        fail("config: w_pl must be 0 for bias '", cfg.bias, "'");
    }
    if (uses_si) {
        if (cfg.w_si <= 0.0) fail("config: bias 'si' requires w_si > 0");
    } else if (cfg.w_si != 0.0) {
        fail("config: w_si must be 0 for bias '", cfg.bias, "'");
    }
    if (cfg.w_ce < 0.0 || cfg.w_pl < 0.0 || cfg.w_ps < 0.0 || cfg.w_si < 0.0)
        fail("config: loss weights must be nonnegative");
    if (cfg.bias == "no-comm" && (cfg.w_pl != 0 || cfg.w_ce != 0 || cfg.w_ps != 0 || cfg.w_si != 0))
        fail("config: no-comm admits no bias weights");
}

ExperimentConfig default_config(const std::string& env, const std::string& bias) {
    ExperimentConfig c;
    c.env = env;
    c.bias = bias;
    if (env == "digit") {
        c.mode = "symbolic";
        c.optimizer = "adam";
        c.lr = 3e-4;
        c.batch_size = 32;
        c.total_updates = 20000;
        c.entropy_action = 0.03;
        c.entropy_message = 0.03;
        if (bias == "ps") {
            c.entropy_message = 0.0;
            c.w_ps = 0.1;
            c.lambda_ps = 3.0;
            c.h_target = 1.0;
        } else if (bias == "pl") {
            c.w_pl = 0.01;
            c.w_ce = 0.001;
        } else if (bias == "both") {
            c.entropy_message = 0.0;
            c.w_ps = 0.1;
            c.lambda_ps = 3.0;
            c.h_target = 1.0;
            c.w_pl = 0.01;
            c.w_ce = 0.001;
        } else if (bias == "si") {
            c.entropy_action = 0.01;
            c.entropy_message = 0.01;
            c.w_si = 0.1;
            c.w_ce = 0.001;
        }
    } else if (env == "treasure") {
        c.optimizer = "rmsprop";
        c.lr = 1e-3;
        c.batch_size = 16;
        c.env_copies = 32;
        c.unroll_length = 20;
        c.discount = 0.99;
        c.total_updates = 20000;
        c.entropy_action = 0.006;
        c.entropy_message = 0.0;
        if (bias == "ps") {
            c.w_ps = 0.001;
            c.lambda_ps = 3.0;
            c.h_target = 0.8;
        } else if (bias == "pl") {
            c.w_pl = 0.003;
            c.w_ce = 0.01;
        } else if (bias == "both") {
            c.w_ps = 0.001;
            c.lambda_ps = 3.0;
            c.h_target = 0.8;
            c.w_pl = 0.003;
            c.w_ce = 0.01;
        } else if (bias == "si") {
            c.w_si = 0.01;
            c.w_ce = 0.01;
        }
    } else {
        fail("default_config: unknown env '", env, "'");
    }
    validate(c);
    return c;
}

}  // namespace ecl
