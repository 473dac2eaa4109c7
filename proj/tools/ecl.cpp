// Command-line entry point: training runs, sweeps, probes, protocol analysis,
// interventions, statistics and plots, all driven by flat key=value configs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecl/analysis.hpp"
#include "ecl/fetch.hpp"
#include "ecl/harness.hpp"
#include "ecl/plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void die(const std::string& msg) {
    json err;
    err["error"] = msg;
    std::cerr << err.dump() << "\n";
    std::exit(1);
}

void refuse_overwrite(const std::string& path, bool force) {
    if (!force && fs::exists(path))
        die("output '" + path + "' already exists (pass --force to overwrite)");
}

ecl::ExperimentConfig build_config(const std::string& config_path, const std::string& env,
                                   const std::string& bias, const std::vector<std::string>& overrides,
                                   int64_t seed) {
    ecl::ExperimentConfig cfg;
    if (!config_path.empty())
        cfg = ecl::load_config_file(config_path);
    else if (!env.empty())
        cfg = ecl::default_config(env, bias.empty() ? "no-bias" : bias);
    else
        die("need --config or --env");
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) die("override '" + ov + "' is not key=value");
        ecl::apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    ecl::validate(cfg);
    return cfg;
}

ecl::TreasurePolicyPair policy_pair_from(const ecl::LoadedRun* run, bool scripted, bool sighted) {
    ecl::TreasurePolicyPair pair;
    if (scripted) {
        pair.agents = nullptr;
        pair.scripted_finder_sighted = sighted;
    } else {
        pair.agents = run->treasure.get();
        pair.scripted_finder_sighted = run->cfg.treasure_finder == "scripted-sighted";
    }
    return pair;
}

// ---- sweep ----

struct SweepPoint {
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string label;
};

std::vector<SweepPoint> parse_grid_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) die("cannot open grid file " + path);
    std::vector<std::vector<std::vector<std::pair<std::string, std::string>>>> dims;
    std::string line;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.rfind("grid ", 0) == 0) {
            // grid key = v1, v2, v3
            const auto eq = line.find('=');
            if (eq == std::string::npos) die("grid line without '=': " + line);
            const std::string key = trim(line.substr(5, eq - 5));
            std::vector<std::vector<std::pair<std::string, std::string>>> dim;
            std::stringstream vals(line.substr(eq + 1));
            std::string v;
            while (std::getline(vals, v, ',')) dim.push_back({{key, trim(v)}});
            if (dim.empty()) die("grid key '" + key + "' has no values");
            dims.push_back(std::move(dim));
        } else if (line.rfind("pair", 0) == 0) {
            // pair = k1=v1 k2=v2 | k1=v1' k2=v2'   (joint settings, one dimension)
            const auto eq = line.find('=');
            std::vector<std::vector<std::pair<std::string, std::string>>> dim;
            std::stringstream bundles(line.substr(eq + 1));
            std::string bundle;
            while (std::getline(bundles, bundle, '|')) {
                std::vector<std::pair<std::string, std::string>> assigns;
                std::stringstream parts(bundle);
                std::string part;
                while (parts >> part) {
                    const auto peq = part.find('=');
                    if (peq == std::string::npos) die("pair assignment '" + part + "' is not key=value");
                    assigns.emplace_back(part.substr(0, peq), part.substr(peq + 1));
                }
                if (assigns.empty()) die("empty bundle in pair line");
                dim.push_back(std::move(assigns));
            }
            dims.push_back(std::move(dim));
        } else {
            die("grid file line not understood: " + line);
        }
    }
    // cross product
    std::vector<SweepPoint> points{{}};
    for (const auto& dim : dims) {
        std::vector<SweepPoint> next;
        for (const auto& base : points)
            for (const auto& choice : dim) {
                SweepPoint p = base;
                for (const auto& [k, v] : choice) {
                    p.overrides.emplace_back(k, v);
                    p.label += (p.label.empty() ? "" : ",") + k + "=" + v;
                }
                next.push_back(std::move(p));
            }
        points = std::move(next);
    }
    return points;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ecl: decentralized emergent-communication experiments"};
    app.require_subcommand(1);

    // shared options
    std::string config_path, env, bias, out_dir, run_dir;
    std::vector<std::string> overrides;
    int64_t seed = -1;
    bool force = false;

    auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (flat key = value)");
        cmd->add_option("--env", env, "environment for built-in defaults: digit | treasure");
        cmd->add_option("--bias", bias, "bias setting for built-in defaults");
        cmd->add_option("--set", overrides, "config override key=value (repeatable)");
        cmd->add_option("--seed", seed, "seed override");
    };

    // ---- train ----
    auto* train = app.add_subcommand("train", "train one run into an output directory");
    add_config_opts(train);
    bool resume = false;
    train->add_option("--out", out_dir, "run directory")->required();
    train->add_flag("--resume", resume, "resume from the newest checkpoint in --out");
    train->add_flag("--force", force, "overwrite an existing run directory");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "re-evaluate a finished run");
    eval_cmd->add_option("--run", run_dir, "run directory")->required();
    int eval_episodes = 0;
    eval_cmd->add_option("--episodes", eval_episodes, "treasure evaluation episodes (default: config)");

    // ---- probe ----
    auto* probe = app.add_subcommand("probe", "listener/speaker power probe (digit game)");
    probe->add_option("--run", run_dir, "run directory")->required();
    std::string out_file;
    int probe_samples = 10000;
    probe->add_option("--out", out_file, "output json (default stdout)");
    probe->add_option("--samples", probe_samples, "samples for image-mode estimation");
    probe->add_flag("--force", force, "overwrite existing output");

    // ---- analyze ----
    auto* analyze = app.add_subcommand("analyze", "message/tunnel and message/action tables (treasure)");
    analyze->add_option("--run", run_dir, "run directory (omit with --scripted)");
    bool scripted = false, scripted_sighted = false;
    analyze->add_flag("--scripted", scripted, "use the scripted reference pair");
    analyze->add_flag("--sighted", scripted_sighted, "scripted finder must sight the treasure");
    int episodes = 100;
    analyze->add_option("--episodes", episodes, "rollout episodes");
    analyze->add_option("--out", out_dir, "output directory for tables/*.csv")->required();
    int64_t analysis_seed = 7;
    analyze->add_option("--rollout-seed", analysis_seed, "episode seed");
    analyze->add_flag("--force", force, "overwrite existing output");

    // ---- intervene ----
    auto* intervene = app.add_subcommand("intervene", "channel-override intervention experiment");
    intervene->add_option("--run", run_dir, "run directory (omit with --scripted)");
    intervene->add_flag("--scripted", scripted, "use the scripted reference pair");
    intervene->add_flag("--sighted", scripted_sighted, "scripted finder must sight the treasure");
    int symbol = -1, tunnel = -1;
    intervene->add_option("--symbol", symbol, "forced symbol (default: strongest for --tunnel)");
    intervene->add_option("--tunnel", tunnel, "target tunnel 0..3")->required();
    intervene->add_option("--episodes", episodes, "episodes per arm");
    intervene->add_option("--out", out_file, "output json (default stdout)");
    intervene->add_option("--rollout-seed", analysis_seed, "episode seed");
    intervene->add_flag("--force", force, "overwrite existing output");

    // ---- stats ----
    auto* stats = app.add_subcommand("stats", "Wilson score interval");
    int successes = 0, trials = 0;
    stats->add_option("--successes", successes, "success count")->required();
    stats->add_option("--n", trials, "trial count")->required();

    // ---- sweep ----
    auto* sweep = app.add_subcommand("sweep", "grid sweep with seeded repeats per point");
    add_config_opts(sweep);
    std::string grid_path;
    int runs_per_point = 5, jobs = 1;
    double baseline = 13.0;
    sweep->add_option("--grid", grid_path, "grid file (grid/pair lines)")->required();
    sweep->add_option("--out", out_dir, "sweep output directory")->required();
    sweep->add_option("--runs-per-point", runs_per_point, "seeded runs per grid point");
    sweep->add_option("--jobs", jobs, "parallel runs");
    sweep->add_option("--baseline", baseline, "no-communication baseline (treasure ranking)");
    sweep->add_flag("--force", force, "overwrite existing sweep directory");

    // ---- plot ----
    auto* plot = app.add_subcommand("plot", "windowed learning curves as CSV + SVG");
    std::vector<std::string> metrics_files;
    std::string kind = "mean_reward", out_prefix;
    int windows = 100;
    plot->add_option("--metrics", metrics_files, "metrics.jsonl files (one per run)")->required();
    plot->add_option("--kind", kind, "metrics field to plot");
    plot->add_option("--windows", windows, "time windows");
    plot->add_option("--out", out_prefix, "output prefix (.csv/.svg appended)")->required();
    plot->add_flag("--force", force, "overwrite existing outputs");

    // ---- fetch-mnist ----
    auto* fetch = app.add_subcommand("fetch-mnist", "download and verify the MNIST idx files");
    std::string url_base = "http://yann.lecun.com/exdb/mnist";
    std::string sha_file;
    fetch->add_option("--url-base", url_base, "http base url");
    fetch->add_option("--sha256-file", sha_file, "manifest with '<filename> <hex-digest>' lines");
    fetch->add_option("--out", out_dir, "output directory")->required();
    fetch->add_flag("--force", force, "refetch existing files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return app.exit(e);
    }

    try {
        if (train->parsed()) {
            auto cfg = build_config(config_path, env, bias, overrides, seed);
            if (!resume) refuse_overwrite(out_dir + "/report.json", force);
            auto res = ecl::run_experiment(cfg, out_dir, resume);
            std::cout << "run " << res.run_dir << ": final_reward=" << res.final_reward
                      << " good_run=" << (res.good_run ? "true" : "false") << "\n";
        } else if (eval_cmd->parsed()) {
            auto run = ecl::load_run(run_dir);
            double reward = 0;
            if (run.cfg.env == "digit") {
                reward = ecl::digit_exact_expected_reward(*run.digit, run.cfg.bias == "no-comm");
            } else {
                reward = ecl::evaluate_treasure(run.cfg, *run.treasure,
                                                eval_episodes > 0 ? eval_episodes : run.cfg.eval_episodes,
                                                run.cfg.seed ^ 0xE7A1u);
            }
            json j;
            j["final_reward"] = reward;
            j["good_run"] = ecl::classify_good_run(run.cfg.env, reward);
            std::cout << j.dump(2) << "\n";
        } else if (probe->parsed()) {
            auto run = ecl::load_run(run_dir);
            if (run.cfg.env != "digit") die("probe applies to digit runs");
            std::unique_ptr<ecl::IdxDataset> ds;
            if (run.cfg.mode == "image")
                ds = std::make_unique<ecl::IdxDataset>(
                    ecl::load_idx(run.cfg.mnist_dir + "/train-images-idx3-ubyte",
                                  run.cfg.mnist_dir + "/train-labels-idx1-ubyte"));
            auto rep = ecl::power_probe(run.cfg, *run.digit, ds.get(), probe_samples);
            const std::string text = ecl::probe_report_json(rep);
            if (out_file.empty()) {
                std::cout << text << "\n";
            } else {
                refuse_overwrite(out_file, force);
                ecl::write_text_file(out_file, text + "\n");
            }
        } else if (analyze->parsed()) {
            ecl::LoadedRun run;
            ecl::ExperimentConfig cfg = ecl::default_config("treasure", "no-bias");
            if (!scripted) {
                if (run_dir.empty()) die("analyze needs --run or --scripted");
                run = ecl::load_run(run_dir);
                if (run.cfg.env != "treasure") die("analyze applies to treasure runs");
                cfg = run.cfg;
            }
            auto pair = policy_pair_from(&run, scripted, scripted_sighted);
            auto tables = ecl::protocol_tables(cfg, pair, episodes, static_cast<uint64_t>(analysis_seed));
            fs::create_directories(out_dir);
            refuse_overwrite(out_dir + "/message_tunnel.csv", force);
            ecl::write_text_file(out_dir + "/message_tunnel.csv", ecl::correlation_table_csv(tables.tunnel));
            ecl::write_text_file(out_dir + "/message_action.csv", ecl::correlation_table_csv(tables.action));
            std::cout << "wrote " << out_dir << "/message_tunnel.csv and message_action.csv\n";
        } else if (intervene->parsed()) {
            ecl::LoadedRun run;
            ecl::ExperimentConfig cfg = ecl::default_config("treasure", "no-bias");
            if (!scripted) {
                if (run_dir.empty()) die("intervene needs --run or --scripted");
                run = ecl::load_run(run_dir);
                if (run.cfg.env != "treasure") die("intervene applies to treasure runs");
                cfg = run.cfg;
            }
            auto pair = policy_pair_from(&run, scripted, scripted_sighted);
            if (symbol < 0) {
                auto tables = ecl::protocol_tables(cfg, pair, episodes, static_cast<uint64_t>(analysis_seed));
                auto s = ecl::strongest_symbol_for_tunnel(tables.tunnel, tunnel);
                if (!s) die("no symbol with enough emissions indicates tunnel " + std::to_string(tunnel));
                symbol = *s;
            }
            auto res = ecl::intervention_experiment(cfg, pair, symbol, tunnel, episodes,
                                                    static_cast<uint64_t>(analysis_seed));
            const std::string text = ecl::intervention_json(res);
            if (out_file.empty()) {
                std::cout << text << "\n";
            } else {
                refuse_overwrite(out_file, force);
                ecl::write_text_file(out_file, text + "\n");
            }
        } else if (stats->parsed()) {
            auto iv = ecl::wilson_interval(successes, trials);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f %.2f", iv.lo, iv.hi);
            std::cout << buf << "\n";
        } else if (sweep->parsed()) {
            auto points = parse_grid_file(grid_path);
            refuse_overwrite(out_dir + "/sweep.csv", force);
            fs::create_directories(out_dir);
            ecl::ExperimentConfig base = build_config(config_path, env, bias, overrides, seed);
            struct PointResult {
                std::string label;
                std::vector<double> rewards;
                int failures = 0;
            };
            std::vector<PointResult> results(points.size());
            std::vector<std::pair<size_t, int>> tasks;  // (point, repeat)
            for (size_t p = 0; p < points.size(); ++p)
                for (int r = 0; r < runs_per_point; ++r) tasks.emplace_back(p, r);
            std::mutex mu;
            size_t next = 0;
            auto worker = [&] {
                while (true) {
                    size_t task;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= tasks.size()) return;
                        task = next++;
                    }
                    const auto [p, r] = tasks[task];
                    ecl::ExperimentConfig cfg = base;
                    try {
                        for (const auto& [k, v] : points[p].overrides) ecl::apply_override(cfg, k, v);
                        cfg.seed = base.seed + static_cast<uint64_t>(r);
                        cfg.run_id = "point" + std::to_string(p) + "_seed" + std::to_string(cfg.seed);
                        ecl::validate(cfg);
                        auto res = ecl::run_experiment(cfg, out_dir + "/" + cfg.run_id, false);
                        std::lock_guard<std::mutex> lock(mu);
                        results[p].rewards.push_back(res.final_reward);
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lock(mu);
                        results[p].failures += 1;
                        std::cerr << "sweep point " << p << " seed " << r << " failed: " << e.what() << "\n";
                    }
                }
            };
            std::vector<std::thread> pool;
            for (int j = 0; j < std::max(1, jobs); ++j) pool.emplace_back(worker);
            for (auto& th : pool) th.join();

            const bool digit_rank = base.env == "digit";
            std::vector<size_t> order(points.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            auto score = [&](size_t p) {
                const auto& rw = results[p].rewards;
                if (rw.empty()) return -1e18;
                if (digit_rank) {
                    double s = 0;
                    for (double x : rw) s += x;
                    return s / static_cast<double>(rw.size());
                }
                int exceed = 0;
                for (double x : rw) exceed += x > baseline ? 1 : 0;
                return static_cast<double>(exceed) / static_cast<double>(rw.size());
            };
            std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return score(a) > score(b); });
            std::ostringstream csv;
            csv << "rank,point,score,runs,failures,label\n";
            for (size_t i = 0; i < order.size(); ++i) {
                const size_t p = order[i];
                results[p].label = points[p].label;
                csv << i + 1 << ',' << p << ',' << score(p) << ',' << results[p].rewards.size() << ','
                    << results[p].failures << ",\"" << points[p].label << "\"\n";
            }
            ecl::write_text_file(out_dir + "/sweep.csv", csv.str());
            std::cout << csv.str();
        } else if (plot->parsed()) {
            refuse_overwrite(out_prefix + ".csv", force);
            refuse_overwrite(out_prefix + ".svg", force);
            std::vector<std::vector<ecl::MetricsRow>> runs;
            for (const auto& f : metrics_files) runs.push_back(ecl::read_metrics(f));
            auto curve = ecl::learning_curve(runs, windows, kind);
            ecl::write_text_file(out_prefix + ".csv", ecl::curve_csv(curve));
            ecl::write_text_file(out_prefix + ".svg", ecl::curve_svg(curve, kind));
            std::cout << "wrote " << out_prefix << ".csv and " << out_prefix << ".svg\n";
        } else if (fetch->parsed()) {
            std::map<std::string, std::string> digests;
            if (!sha_file.empty()) {
                std::ifstream in(sha_file);
                if (!in) die("cannot open " + sha_file);
                std::string name, hexd;
                while (in >> name >> hexd) digests[name] = hexd;
            }
            const int written = ecl::fetch_mnist(url_base, out_dir, digests, force);
            std::cout << "fetched " << written << " files into " << out_dir << "\n";
        }
    } catch (const std::exception& e) {
        die(e.what());
    }
    return 0;
}
