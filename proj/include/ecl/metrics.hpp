#pragma once

#include <string>
#include <vector>

#include "ecl/biases.hpp"
#include "ecl/common.hpp"

namespace ecl {

// One logged row per metrics interval; serialized as one JSON object per line.
struct MetricsRow {
    std::string run_id;
    int64_t global_step = 0;
    int update = 0;
    double mean_reward = 0.0;  // mean episode reward (treasure) / batch reward (digit)
    double loss_total = 0.0;
    double loss_pg = 0.0;
    double loss_value = 0.0;
    double entropy_action = 0.0;
    double entropy_message = 0.0;
    BiasTerms bias;
    double lr = 0.0;
    double wall_clock_s = 0.0;  // excluded from determinism comparisons
};

std::string metrics_to_json(const MetricsRow& row);
MetricsRow metrics_from_json(const std::string& line);

void append_metrics(const std::string& path, const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::string& path);

}  // namespace ecl
