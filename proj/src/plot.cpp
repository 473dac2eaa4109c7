#include "ecl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ecl {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

std::string curve_csv(const std::vector<CurvePoint>& points) {
    std::ostringstream out;
    out << "window_center,mean,ci_lo,ci_hi\n";
    for (const auto& p : points)
        out << fmt(p.window_center) << ',' << fmt(p.mean) << ',' << fmt(p.lo) << ',' << fmt(p.hi) << '\n';
    return out.str();
}

std::string curve_svg(const std::vector<CurvePoint>& points, const std::string& title) {
    if (points.empty()) fail("curve_svg: no points");
    const double W = 640, H = 400, ml = 60, mr = 20, mt = 36, mb = 40;
    double x0 = points.front().window_center, x1 = points.back().window_center;
    double y0 = points[0].lo, y1 = points[0].hi;
    for (const auto& p : points) {
        y0 = std::min({y0, p.lo, p.mean});
        y1 = std::max({y1, p.hi, p.mean});
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto sy = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"14\">" << title << "</text>\n";
    // CI band
    out << "<path d=\"M";
    for (const auto& p : points) out << fmt(sx(p.window_center)) << ',' << fmt(sy(p.lo)) << ' ';
    for (auto it = points.rbegin(); it != points.rend(); ++it)
        out << fmt(sx(it->window_center)) << ',' << fmt(sy(it->hi)) << ' ';
    out << "Z\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>\n";
    // mean line
    out << "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : points) out << fmt(sx(p.window_center)) << ',' << fmt(sy(p.mean)) << ' ';
    out << "\"/>\n";
    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double yv = y0 + (y1 - y0) * i / 4.0;
        out << "<text x=\"" << fmt(sx(xv)) << "\" y=\"" << H - mb + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(xv)
            << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(sy(yv) + 3)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(yv)
            << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open ", path, " for writing");
    out << content;
    if (!out) fail("short write to ", path);
}

}  // namespace ecl
