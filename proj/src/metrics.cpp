#include "ecl/metrics.hpp"

#include <fstream>

#include <json.hpp>

namespace ecl {

using nlohmann::json;

std::string metrics_to_json(const MetricsRow& row) {
    json j;
    j["run_id"] = row.run_id;
    j["global_step"] = row.global_step;
    j["update"] = row.update;
    j["mean_reward"] = row.mean_reward;
    j["loss_total"] = row.loss_total;
    j["loss_pg"] = row.loss_pg;
    j["loss_value"] = row.loss_value;
    j["entropy_action"] = row.entropy_action;
    j["entropy_message"] = row.entropy_message;
    j["l_ps"] = row.bias.l_ps;
    j["l_pl"] = row.bias.l_pl;
    j["l_ce"] = row.bias.l_ce;
    j["marginal_entropy"] = row.bias.marginal_entropy;
    j["conditional_entropy"] = row.bias.mean_conditional_entropy;
    j["cic"] = row.bias.cic;
    j["mutual_information"] = row.bias.mutual_information;
    j["lr"] = row.lr;
    j["wall_clock_s"] = row.wall_clock_s;
    return j.dump();
}

MetricsRow metrics_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const std::exception& e) {
        fail("metrics: cannot parse line: ", e.what());
    }
    MetricsRow row;
    row.run_id = j.value("run_id", "");
    row.global_step = j.value("global_step", int64_t(0));
    row.update = j.value("update", 0);
    row.mean_reward = j.value("mean_reward", 0.0);
    row.loss_total = j.value("loss_total", 0.0);
    row.loss_pg = j.value("loss_pg", 0.0);
    row.loss_value = j.value("loss_value", 0.0);
    row.entropy_action = j.value("entropy_action", 0.0);
    row.entropy_message = j.value("entropy_message", 0.0);
    row.bias.l_ps = j.value("l_ps", 0.0);
    row.bias.l_pl = j.value("l_pl", 0.0);
    row.bias.l_ce = j.value("l_ce", 0.0);
    row.bias.marginal_entropy = j.value("marginal_entropy", 0.0);
    row.bias.mean_conditional_entropy = j.value("conditional_entropy", 0.0);
    row.bias.cic = j.value("cic", 0.0);
    row.bias.mutual_information = j.value("mutual_information", 0.0);
    row.lr = j.value("lr", 0.0);
    row.wall_clock_s = j.value("wall_clock_s", 0.0);
    return row;
}

void append_metrics(const std::string& path, const MetricsRow& row) {
    std::ofstream out(path, std::ios::app);
    if (!out) fail("metrics: cannot open ", path, " for append");
    out << metrics_to_json(row) << '\n';
    if (!out) fail("metrics: short write to ", path);
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("metrics: cannot open ", path);
    std::vector<MetricsRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(metrics_from_json(line));
    }
    return rows;
}

}  // namespace ecl
