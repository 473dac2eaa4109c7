#pragma once

#include <string>
#include <vector>

#include "ecl/analysis.hpp"

namespace ecl {

// Renders a windowed learning curve with its CI band as CSV plus a minimal
// self-contained SVG. Output bytes are a pure function of the input points.
std::string curve_csv(const std::vector<CurvePoint>& points);
std::string curve_svg(const std::vector<CurvePoint>& points, const std::string& title);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace ecl
