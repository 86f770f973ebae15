#include "fpvit/minutiae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fpvit/error.hpp"

namespace fpvit {

double normalize_angle_deg(double theta) {
    double t = std::fmod(theta, 360.0);
    if (t < 0.0) t += 360.0;
    // fmod can return exactly 360.0 after the correction when theta is a
    // tiny negative number.
    if (t >= 360.0) t = 0.0;
    return t;
}

Minutia::Minutia(double x_, double y_, double theta_)
    : x(x_), y(y_), theta(normalize_angle_deg(theta_)) {}

void MinutiaeSet::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Minutia& m = points[i];
        if (!(m.x >= 0.0) || !(m.x < width) || !(m.y >= 0.0) || !(m.y < height)) {
            throw ValidationError("minutia " + std::to_string(i) + " out of bounds: (" +
                                  std::to_string(m.x) + ", " + std::to_string(m.y) +
                                  ") not within " + std::to_string(width) + "x" +
                                  std::to_string(height));
        }
    }
}

namespace {

double angle_distance_deg(double a, double b) {
    double d = std::fabs(normalize_angle_deg(a) - normalize_angle_deg(b));
    return std::min(d, 360.0 - d);
}

}  // namespace

bool MinutiaeSet::equals(const MinutiaeSet& other, double pos_tol, double angle_tol) const {
    if (width != other.width || height != other.height) return false;
    if (points.size() != other.points.size()) return false;
    std::vector<bool> used(other.points.size(), false);
    for (const Minutia& m : points) {
        bool matched = false;
        for (std::size_t j = 0; j < other.points.size(); ++j) {
            if (used[j]) continue;
            const Minutia& o = other.points[j];
            if (std::fabs(m.x - o.x) <= pos_tol && std::fabs(m.y - o.y) <= pos_tol &&
                angle_distance_deg(m.theta, o.theta) <= angle_tol) {
                used[j] = true;
                matched = true;
                break;
            }
        }
        if (!matched) return false;
    }
    return true;
}

MinutiaeMap build_minutiae_map(const MinutiaeSet& set, int channels, double sigma) {
    if (channels != 1 && channels != 2)
        throw ConfigError("minutiae map channels must be 1 or 2, got " + std::to_string(channels));
    if (!(sigma > 0.0)) throw ConfigError("minutiae map sigma must be positive");
    set.validate();

    MinutiaeMap map(set.height, set.width, channels);
    int radius = static_cast<int>(std::ceil(4.0 * sigma));
    double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

    for (const Minutia& m : set.points) {
        // Rounding can push a coordinate like w - 0.3 onto the width itself;
        // keep the peak on the last in-bounds pixel.
        int cx = std::min(static_cast<int>(std::lround(m.x)), set.width - 1);
        int cy = std::min(static_cast<int>(std::lround(m.y)), set.height - 1);
        int ch = (channels == 2 && m.theta >= 180.0) ? 1 : 0;

        int y_lo = std::max(cy - radius, 0);
        int y_hi = std::min(cy + radius, set.height - 1);
        int x_lo = std::max(cx - radius, 0);
        int x_hi = std::min(cx + radius, set.width - 1);
        for (int y = y_lo; y <= y_hi; ++y) {
            for (int x = x_lo; x <= x_hi; ++x) {
                double d2 = static_cast<double>(y - cy) * (y - cy) +
                            static_cast<double>(x - cx) * (x - cx);
                float g = static_cast<float>(std::exp(-d2 * inv_two_sigma_sq));
                float& cell = map.at(ch, y, x);
                cell = std::min(std::max(cell, g), 1.0f);
            }
        }
    }
    return map;
}

MinutiaeSet recover_minutiae(const MinutiaeMap& map, double peak_threshold) {
    if (!(peak_threshold > 0.0) || peak_threshold > 1.0)
        throw ConfigError("peak_threshold must lie in (0, 1]");

    MinutiaeSet out(map.width, map.height);
    for (int ch = 0; ch < map.channels; ++ch) {
        double bin_mid = map.channels == 2 ? (ch == 0 ? 90.0 : 270.0) : 180.0;
        for (int y = 0; y < map.height; ++y) {
            for (int x = 0; x < map.width; ++x) {
                float v = map.at(ch, y, x);
                if (v < peak_threshold) continue;
                bool is_peak = true;
                for (int dy = -1; dy <= 1 && is_peak; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= map.height || nx < 0 || nx >= map.width) continue;
                        if (map.at(ch, ny, nx) >= v) {
                            is_peak = false;
                            break;
                        }
                    }
                }
                if (is_peak) out.points.emplace_back(x, y, bin_mid);
            }
        }
    }
    return out;
}

MinutiaeSet read_minutiae_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open minutiae file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty minutiae file: " + path, 1);
    std::istringstream header(line);
    std::string tag;
    int width = 0, height = 0;
    long count = -1;
    if (!(header >> tag >> width >> height >> count) || tag != "MNT")
        throw ParseError("malformed MNT header in " + path, 1);
    if (width <= 0 || height <= 0 || count < 0)
        throw ParseError("invalid MNT dimensions or count in " + path, 1);

    MinutiaeSet set(width, height);
    set.points.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        int line_no = static_cast<int>(i) + 2;
        if (!std::getline(in, line))
            throw ParseError("expected " + std::to_string(count) + " minutiae rows in " + path,
                             line_no);
        std::istringstream row(line);
        double x = 0, y = 0, theta = 0;
        if (!(row >> x >> y >> theta))
            throw ParseError("malformed minutia row in " + path, line_no);
        std::string rest;
        if (row >> rest) throw ParseError("trailing fields on minutia row in " + path, line_no);
        if (!(x >= 0.0) || !(x < width) || !(y >= 0.0) || !(y < height))
            throw ParseError("minutia out of bounds in " + path, line_no);
        set.points.emplace_back(x, y, theta);
    }
    int line_no = static_cast<int>(count) + 2;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
            throw ParseError("more rows than declared count in " + path, line_no);
        ++line_no;
    }
    return set;
}

void write_minutiae_file(const MinutiaeSet& set, const std::string& path) {
    set.validate();
    std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
    if (!out) throw IoError("cannot write minutiae file: " + path);
    out << "MNT " << set.width << " " << set.height << " " << set.points.size() << "\n";
    char buf[96];
    for (const Minutia& m : set.points) {
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f\n", m.x, m.y, m.theta);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path);
}

MinutiaeSet scale_minutiae(const MinutiaeSet& set, int new_width, int new_height) {
    MinutiaeSet out(new_width, new_height);
    double sx = static_cast<double>(new_width) / set.width;
    double sy = static_cast<double>(new_height) / set.height;
    out.points.reserve(set.points.size());
    for (const Minutia& m : set.points) {
        double nx = std::min(m.x * sx, new_width - 1e-9);
        double ny = std::min(m.y * sy, new_height - 1e-9);
        out.points.emplace_back(nx, ny, m.theta);
    }
    return out;
}

}  // namespace fpvit
