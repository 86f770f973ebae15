#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fpvit/image.hpp"
#include "fpvit/minutiae.hpp"

namespace fpvit {

// Toy-fingerprint generation bounds. Defaults keep impressions of one
// identity overlapping well enough for nearest-neighbor minutiae matching
// while degrading the pixels with noise, contrast swings and occlusions.
struct SynthParams {
    int image_side = 224;
    int min_minutiae = 20;
    int max_minutiae = 60;
    double min_separation = 12.0;  // master minutiae, pairwise
    double border_margin = 16.0;
    // Coarse enough that ridge structure survives a 7x downsample to the
    // desk-scale model input (period ~3.5-5 px at side 32).
    double ridge_period_min = 24.0;
    double ridge_period_max = 34.0;
    double max_translation = 2.5;  // px, +-
    double max_rotation_deg = 2.0;
    double dropout_rate = 0.08;
    double noise_std = 0.15;
    double contrast_min = 0.45;
    double contrast_max = 1.0;
    int max_occlusions = 2;
    int occlusion_min_size = 24;
    int occlusion_max_size = 64;
};

// All fields are a pure function of (seed, id): a smooth orientation field
// (sum of low-frequency sinusoids), ridge frequency, a vignette that gives
// the identity coarse large-scale structure, and the master minutiae set.
struct IdentityTemplate {
    std::uint64_t seed = 0;
    std::uint64_t id = 0;
    MinutiaeSet master;
    double ridge_period = 10.0;
    double base_angle = 0.0;

    struct Wave {
        double fx = 0.0, fy = 0.0, phase = 0.0, amp = 0.0;
    };
    std::array<Wave, 3> orientation_waves;
    std::array<Wave, 2> phase_waves;
    // Low-frequency intensity modulation (contact-pressure look); identity
    // signal that survives aggressive downsampling.
    std::array<Wave, 3> brightness_waves;
    double vignette_cx = 0.0, vignette_cy = 0.0, vignette_radius = 1.0;

    // Continuous master-frame ridge intensity in [0, 1].
    double pattern_at(double x, double y) const;
};

IdentityTemplate make_identity(std::uint64_t seed, std::uint64_t id,
                               const SynthParams& params = {});

struct Impression {
    Image image;
    MinutiaeSet minutiae;  // ground truth, post-transform, post-dropout
};

// Applies a seeded rigid transform to pattern and minutiae, drops minutiae
// at the dropout rate, then degrades the image only (contrast, occlusion
// rectangles, Gaussian noise); minutiae under an occlusion are dropped
// too. If the transform leaves no minutia in frame it is retried at half
// magnitude, up to 5 times, then GenerationError.
Impression render_impression(const IdentityTemplate& tpl, int impression_index,
                             const SynthParams& params = {});

// Greedy bipartite nearest-neighbor match count within (pos_tol, angle_tol).
// The identity-signal oracle: same-identity impressions overlap strongly,
// different identities only by chance.
int minutiae_overlap(const MinutiaeSet& a, const MinutiaeSet& b, double pos_tol = 6.0,
                     double angle_tol = 20.0);

struct ManifestRow {
    std::uint64_t identity = 0;
    int impression = 0;
    std::string image_path;
    std::string minutiae_path;
};

// Writes PGM + MNT pairs plus manifest.csv
// (identity,impression,image_path,minutiae_path) into out_dir. Byte
// deterministic in (seed, counts, params).
std::vector<ManifestRow> generate_dataset(int num_identities, int impressions_per_identity,
                                          std::uint64_t seed, const std::string& out_dir,
                                          const SynthParams& params = {});

// Paths in the returned rows are resolved against the manifest's directory.
std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path);

}  // namespace fpvit
