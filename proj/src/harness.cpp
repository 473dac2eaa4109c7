#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ecl/harness.hpp"

namespace ecl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct RunState {
    ExperimentConfig cfg;
    int update = 0;          // completed updates
    int64_t global_step = 0; // env steps per agent (digit: rounds seen)

    // digit
    std::unique_ptr<DigitAgents> digit;
    std::unique_ptr<IdxDataset> dataset;
    Rng env_rng, sample_rng;
    double reward_window_sum = 0;
    int reward_window_count = 0;

    // treasure
    std::unique_ptr<TreasureAgents> treasure;
    std::unique_ptr<TreasureWorkers> workers;
};

std::vector<uint8_t> serialize_progress(const RunState& st) {
    ByteWriter w;
    w.put_u32(static_cast<uint32_t>(st.update));
    w.put_u64(static_cast<uint64_t>(st.global_step));
    w.put_f64(st.reward_window_sum);
    w.put_u32(static_cast<uint32_t>(st.reward_window_count));
    if (st.workers) {
        w.put_u32(static_cast<uint32_t>(st.workers->episode_return.size()));
        for (double r : st.workers->episode_return) w.put_f64(r);
        w.put_u32(static_cast<uint32_t>(st.workers->finished_returns.size()));
        for (double r : st.workers->finished_returns) w.put_f64(r);
    } else {
        w.put_u32(0);
        w.put_u32(0);
    }
    return std::move(w.bytes);
}

void deserialize_progress(const std::vector<uint8_t>& bytes, RunState& st) {
    ByteReader r(bytes);
    st.update = static_cast<int>(r.get_u32());
    st.global_step = static_cast<int64_t>(r.get_u64());
    st.reward_window_sum = r.get_f64();
    st.reward_window_count = static_cast<int>(r.get_u32());
    const uint32_t n = r.get_u32();
    if (st.workers) {
        if (n != st.workers->episode_return.size())
            fail("checkpoint: env copy count mismatch (", n, " vs ", st.workers->episode_return.size(), ")");
        for (auto& x : st.workers->episode_return) x = r.get_f64();
        st.workers->finished_returns.clear();
        const uint32_t m = r.get_u32();
        for (uint32_t i = 0; i < m; ++i) st.workers->finished_returns.push_back(r.get_f64());
    }
}

std::vector<uint8_t> serialize_recurrent(const TreasureWorkers& w) {
    ByteWriter out;
    out.put_u32(static_cast<uint32_t>(w.h.size()));
    for (size_t i = 0; i < w.h.size(); ++i)
        for (int agent = 0; agent < 2; ++agent) {
            auto dump = [&](const std::vector<float>& v) {
                out.put_u32(static_cast<uint32_t>(v.size()));
                out.put_raw(v.data(), v.size() * sizeof(float));
            };
            dump(w.h[i][static_cast<size_t>(agent)]);
            dump(w.c[i][static_cast<size_t>(agent)]);
            dump(w.h_cf[i][static_cast<size_t>(agent)]);
            dump(w.c_cf[i][static_cast<size_t>(agent)]);
        }
    return std::move(out.bytes);
}

void deserialize_recurrent(const std::vector<uint8_t>& bytes, TreasureWorkers& w) {
    ByteReader r(bytes);
    const uint32_t n = r.get_u32();
    if (n != w.h.size()) fail("checkpoint: recurrent state copy count mismatch");
    for (size_t i = 0; i < w.h.size(); ++i)
        for (int agent = 0; agent < 2; ++agent) {
            auto load = [&](std::vector<float>& v) {
                const uint32_t len = r.get_u32();
                if (len != v.size()) fail("checkpoint: recurrent state width mismatch");
                r.get_raw(v.data(), v.size() * sizeof(float));
            };
            load(w.h[i][static_cast<size_t>(agent)]);
            load(w.c[i][static_cast<size_t>(agent)]);
            load(w.h_cf[i][static_cast<size_t>(agent)]);
            load(w.c_cf[i][static_cast<size_t>(agent)]);
        }
}

void save_run_checkpoint(const RunState& st, const std::string& path) {
    CheckpointBlob blob;
    blob.global_step = static_cast<uint64_t>(st.global_step);
    blob.sections["config"] = [&] {
        const std::string text = serialize_config(st.cfg);
        return std::vector<uint8_t>(text.begin(), text.end());
    }();
    blob.sections["progress"] = serialize_progress(st);
    if (st.digit) {
        blob.sections["params/speaker"] = serialize_params(st.digit->speaker);
        blob.sections["params/listener"] = serialize_params(st.digit->listener);
        blob.sections["opt/speaker"] = serialize_optimizer(st.digit->opt_speaker);
        blob.sections["opt/listener"] = serialize_optimizer(st.digit->opt_listener);
        blob.sections["rng/env"] = serialize_rng(st.env_rng);
        blob.sections["rng/sample"] = serialize_rng(st.sample_rng);
    }
    if (st.treasure) {
        blob.sections["params/finder"] = serialize_params(st.treasure->net[0]);
        blob.sections["params/collector"] = serialize_params(st.treasure->net[1]);
        blob.sections["opt/finder"] = serialize_optimizer(st.treasure->opt[0]);
        blob.sections["opt/collector"] = serialize_optimizer(st.treasure->opt[1]);
        ByteWriter envs;
        envs.put_u32(static_cast<uint32_t>(st.workers->envs.size()));
        for (const auto& env : st.workers->envs) {
            std::vector<uint8_t> b;
            env.serialize(b);
            envs.put_u64(b.size());
            envs.put_raw(b.data(), b.size());
        }
        blob.sections["envs"] = std::move(envs.bytes);
        ByteWriter rngs;
        for (const auto& rng : st.workers->sample_rngs)
            for (uint64_t s : rng.state()) rngs.put_u64(s);
        blob.sections["rng/sample"] = std::move(rngs.bytes);
        blob.sections["recurrent"] = serialize_recurrent(*st.workers);
    }
    save_checkpoint(path, blob);
}

void load_run_checkpoint(RunState& st, const std::string& path) {
    CheckpointBlob blob = load_checkpoint(path);
    auto section = [&](const std::string& name) -> const std::vector<uint8_t>& {
        auto it = blob.sections.find(name);
        if (it == blob.sections.end()) fail("checkpoint: missing section '", name, "' in ", path);
        return it->second;
    };
    if (st.digit) {
        deserialize_params(section("params/speaker"), st.digit->speaker);
        deserialize_params(section("params/listener"), st.digit->listener);
        deserialize_optimizer(section("opt/speaker"), st.digit->opt_speaker);
        deserialize_optimizer(section("opt/listener"), st.digit->opt_listener);
        deserialize_rng(section("rng/env"), st.env_rng);
        deserialize_rng(section("rng/sample"), st.sample_rng);
    }
    if (st.treasure) {
        deserialize_params(section("params/finder"), st.treasure->net[0]);
        deserialize_params(section("params/collector"), st.treasure->net[1]);
        deserialize_optimizer(section("opt/finder"), st.treasure->opt[0]);
        deserialize_optimizer(section("opt/collector"), st.treasure->opt[1]);
        {
            ByteReader r(section("envs"));
            const uint32_t n = r.get_u32();
            if (n != st.workers->envs.size()) fail("checkpoint: env copy count mismatch");
            for (auto& env : st.workers->envs) {
                const uint64_t len = r.get_u64();
                std::vector<uint8_t> b(len);
                r.get_raw(b.data(), len);
                env.deserialize(b.data(), b.size());
            }
        }
        {
            ByteReader r(section("rng/sample"));
            for (auto& rng : st.workers->sample_rngs) {
                std::array<uint64_t, 4> s;
                for (auto& x : s) x = r.get_u64();
                rng.set_state(s);
            }
        }
        deserialize_recurrent(section("recurrent"), *st.workers);
    }
    deserialize_progress(section("progress"), st);
}

std::string checkpoint_path(const std::string& dir, int update) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%08d.ecl", update);
    return dir + "/" + buf;
}

std::string find_latest_checkpoint(const std::string& dir) {
    std::string best;
    if (!fs::exists(dir)) return best;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() == 17 && name.rfind("ckpt_", 0) == 0 && name.substr(13) == ".ecl")
            if (best.empty() || name > best) best = name;
    }
    return best.empty() ? best : dir + "/" + best;
}

}  // namespace

LoadedRun load_run(const std::string& run_dir) {
    LoadedRun out;
    out.cfg = load_config_file(run_dir + "/config.cfg");
    const std::string latest = find_latest_checkpoint(run_dir + "/checkpoints");
    if (latest.empty()) fail("load_run: no checkpoint under ", run_dir);
    CheckpointBlob blob = load_checkpoint(latest);
    out.global_step = blob.global_step;
    auto section = [&](const std::string& name) -> const std::vector<uint8_t>& {
        auto it = blob.sections.find(name);
        if (it == blob.sections.end()) fail("load_run: missing section '", name, "' in ", latest);
        return it->second;
    };
    Rng init_rng(out.cfg.seed);
    Rng split = init_rng.split(1);
    if (out.cfg.env == "digit") {
        out.digit = std::make_unique<DigitAgents>(make_digit_agents(out.cfg, split));
        deserialize_params(section("params/speaker"), out.digit->speaker);
        deserialize_params(section("params/listener"), out.digit->listener);
    } else {
        out.treasure = std::make_unique<TreasureAgents>(make_treasure_agents(out.cfg, split));
        deserialize_params(section("params/finder"), out.treasure->net[0]);
        deserialize_params(section("params/collector"), out.treasure->net[1]);
    }
    return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& run_dir, bool resume) {
    validate(cfg);
    if (cfg.checkpoint_every > 0 && cfg.checkpoint_every % cfg.metrics_every != 0)
        fail("run_experiment: checkpoint_every must be a multiple of metrics_every");
    if (cfg.env == "treasure" && cfg.checkpoint_every > 0 &&
        cfg.checkpoint_every % (cfg.env_copies / cfg.batch_size) != 0)
        fail("run_experiment: checkpoint_every must align with collection boundaries (",
             cfg.env_copies / cfg.batch_size, " updates per collection)");
    fs::create_directories(run_dir);
    fs::create_directories(run_dir + "/checkpoints");
    const std::string metrics_path = run_dir + "/metrics.jsonl";

    RunState st;
    st.cfg = cfg;
    Rng master(cfg.seed);
    Rng init_rng = master.split(1);

    if (cfg.env == "digit") {
        st.digit = std::make_unique<DigitAgents>(make_digit_agents(cfg, init_rng));
        st.env_rng = master.split(2);
        st.sample_rng = master.split(3);
        if (cfg.mode == "image") {
            st.dataset = std::make_unique<IdxDataset>(load_idx(cfg.mnist_dir + "/train-images-idx3-ubyte",
                                                               cfg.mnist_dir + "/train-labels-idx1-ubyte"));
        }
    } else {
        st.treasure = std::make_unique<TreasureAgents>(make_treasure_agents(cfg, init_rng));
        Rng worker_rng = master.split(4);
        st.workers = std::make_unique<TreasureWorkers>(TreasureWorkers::make(cfg, worker_rng));
    }

    if (resume) {
        const std::string latest = find_latest_checkpoint(run_dir + "/checkpoints");
        if (latest.empty()) fail("run_experiment: resume requested but no checkpoint in ", run_dir);
        load_run_checkpoint(st, latest);
    } else {
        std::ofstream cfg_out(run_dir + "/config.cfg");
        cfg_out << serialize_config(cfg);
        std::ofstream clear(metrics_path, std::ios::trunc);
    }

    const double t0 = now_seconds();
    std::vector<TreasureUnroll> pending;  // unconsumed unrolls from the last collection

    while (st.update < cfg.total_updates) {
        LossBreakdown row_losses;
        if (cfg.env == "digit") {
            auto res = reinforce_update(cfg, *st.digit, st.dataset.get(), st.env_rng, st.sample_rng);
            st.global_step += cfg.batch_size;
            st.reward_window_sum += res.mean_reward;
            st.reward_window_count += 1;
            row_losses = res.listener;
            row_losses.bias.l_ps = res.speaker.bias.l_ps;
            row_losses.bias.marginal_entropy = res.speaker.bias.marginal_entropy;
            row_losses.bias.mean_conditional_entropy = res.speaker.bias.mean_conditional_entropy;
            row_losses.bias.mutual_information = res.speaker.bias.mutual_information;
            row_losses.entropy_message = res.speaker.entropy_message;
            st.update += 1;
        } else {
            if (pending.empty()) pending = collect_unrolls(cfg, *st.treasure, *st.workers);
            std::vector<const TreasureUnroll*> batch;
            const size_t take = static_cast<size_t>(cfg.batch_size);
            const size_t offset = pending.size() >= take ? pending.size() - take : 0;
            for (size_t i = offset; i < pending.size(); ++i) batch.push_back(&pending[i]);
            pending.resize(offset);
            st.global_step += static_cast<int64_t>(batch.size()) * cfg.unroll_length;
            for (int agent = 0; agent < 2; ++agent) {
                if (agent == kFinder && st.treasure->scripted_finder) continue;
                auto res = actor_critic_update(cfg, *st.treasure, agent, batch, st.global_step);
                if (agent == kCollector) row_losses = res;
            }
            st.update += 1;
        }

        if (st.update % cfg.metrics_every == 0) {
            MetricsRow row;
            row.run_id = cfg.run_id;
            row.global_step = st.global_step;
            row.update = st.update;
            if (cfg.env == "digit") {
                row.mean_reward = st.reward_window_count ? st.reward_window_sum / st.reward_window_count : 0;
                st.reward_window_sum = 0;
                st.reward_window_count = 0;
                row.lr = cfg.lr;
            } else {
                auto& fr = st.workers->finished_returns;
                double sum = 0;
                for (double r : fr) sum += r;
                row.mean_reward = fr.empty() ? 0.0 : sum / static_cast<double>(fr.size());
                fr.clear();
                row.lr = cfg.optimizer == "rmsprop"
                             ? rmsprop_effective_lr(st.treasure->opt[kCollector], st.global_step)
                             : cfg.lr;
            }
            row.loss_total = row_losses.total;
            row.loss_pg = row_losses.pg;
            row.loss_value = row_losses.value;
            row.entropy_action = row_losses.entropy_action;
            row.entropy_message = row_losses.entropy_message;
            row.bias = row_losses.bias;
            row.wall_clock_s = now_seconds() - t0;
            append_metrics(metrics_path, row);
        }
        if (cfg.checkpoint_every > 0 && st.update % cfg.checkpoint_every == 0)
            save_run_checkpoint(st, checkpoint_path(run_dir + "/checkpoints", st.update));
    }

    save_run_checkpoint(st, checkpoint_path(run_dir + "/checkpoints", st.update));

    RunResult out;
    out.run_dir = run_dir;
    out.global_step = st.global_step;
    if (cfg.env == "digit") {
        out.final_reward =
            cfg.mode == "symbolic"
                ? digit_exact_expected_reward(*st.digit, cfg.bias == "no-comm")
                : digit_estimate_reward(cfg, *st.digit, st.dataset.get(),
                                        std::max(cfg.eval_rounds, 1000), cfg.seed ^ 0xD161u);
    } else {
        out.final_reward = evaluate_treasure(cfg, *st.treasure, cfg.eval_episodes, cfg.seed ^ 0xE7A1u);
    }
    out.good_run = classify_good_run(cfg.env, out.final_reward);

    json report;
    report["run_id"] = cfg.run_id;
    report["env"] = cfg.env;
    report["bias"] = cfg.bias;
    report["seed"] = cfg.seed;
    report["updates"] = st.update;
    report["global_step"] = st.global_step;
    report["final_reward"] = out.final_reward;
    report["good_run"] = out.good_run;
    std::ofstream rep(run_dir + "/report.json");
    rep << report.dump(2) << "\n";
    return out;
}

}  // namespace ecl
