#pragma once

#include <string>
#include <vector>

namespace fpvit {

// A ridge key-point: position in pixels plus ridge direction. theta is kept
// in [0, 360) degrees; construction normalizes.
struct Minutia {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    Minutia() = default;
    Minutia(double x_, double y_, double theta_);
};

double normalize_angle_deg(double theta);

// Unordered, variable-length set of minutiae for one impression, with the
// owning image bounds. Order carries no meaning; equals() is
// order-insensitive.
struct MinutiaeSet {
    int width = 0;
    int height = 0;
    std::vector<Minutia> points;

    MinutiaeSet() = default;
    MinutiaeSet(int w, int h) : width(w), height(h) {}

    std::size_t size() const { return points.size(); }

    // Throws ValidationError naming the first out-of-bounds point.
    void validate() const;

    // Multiset match under small tolerances; angles compared circularly.
    bool equals(const MinutiaeSet& other, double pos_tol = 1e-4, double angle_tol = 1e-4) const;
};

// Fixed-size heatmap encoding of a minutiae set. Channel-planar storage:
// data[ch * height * width + y * width + x], every element in [0, 1].
// channels == 0 marks the "no map" wrapper used for vanilla tokenization.
struct MinutiaeMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    MinutiaeMap() = default;
    MinutiaeMap(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, 0.0f) {}

    static MinutiaeMap none(int h, int w) { return MinutiaeMap(h, w, 0); }

    float& at(int ch, int y, int x) {
        return data[(static_cast<std::size_t>(ch) * height + y) * width + x];
    }
    float at(int ch, int y, int x) const {
        return data[(static_cast<std::size_t>(ch) * height + y) * width + x];
    }
};

// Deposits one isotropic Gaussian bump (peak 1.0, spread sigma) per minutia
// at its rounded pixel, into channel 0 for theta in [0, 180) and channel 1
// for [180, 360) when channels == 2 (everything into channel 0 when
// channels == 1). Overlaps combine by element-wise max.
MinutiaeMap build_minutiae_map(const MinutiaeSet& set, int channels = 2, double sigma = 3.0);

// Test oracle for map invertibility: returns every strict local maximum
// (8-neighborhood, per channel) with value >= peak_threshold. theta is the
// channel bin midpoint; fine orientation is not encoded at c == 2.
MinutiaeSet recover_minutiae(const MinutiaeMap& map, double peak_threshold);

// Text template format, UTF-8, LF:
//   MNT <width> <height> <m>
//   <x> <y> <theta>        (m rows, decimal reals)
MinutiaeSet read_minutiae_file(const std::string& path);
void write_minutiae_file(const MinutiaeSet& set, const std::string& path);

// Rescales coordinates onto a new image size (used when feeding a model
// whose input side differs from the capture resolution).
MinutiaeSet scale_minutiae(const MinutiaeSet& set, int new_width, int new_height);

}  // namespace fpvit
