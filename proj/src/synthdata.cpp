#include "fpvit/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fpvit/error.hpp"
#include "fpvit/rng.hpp"

namespace fpvit {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t id) {
    return Rng::splitmix64(seed ^ Rng::splitmix64(id * 0x9e3779b97f4a7c15ull + 1));
}

}  // namespace

double IdentityTemplate::pattern_at(double x, double y) const {
    double angle = base_angle;
    for (const Wave& w : orientation_waves)
        angle += w.amp * std::sin(2.0 * M_PI * (w.fx * x + w.fy * y) + w.phase);
    double phase = 0.0;
    for (const Wave& w : phase_waves)
        phase += w.amp * std::sin(2.0 * M_PI * (w.fx * x + w.fy * y) + w.phase);
    double ridge =
        0.5 + 0.5 * std::cos(2.0 * M_PI / ridge_period * (x * std::cos(angle) + y * std::sin(angle)) +
                             phase);
    double bright = 1.0;
    for (const Wave& w : brightness_waves)
        bright += w.amp * std::sin(2.0 * M_PI * (w.fx * x + w.fy * y) + w.phase);
    double dx = x - vignette_cx, dy = y - vignette_cy;
    double vignette =
        0.7 + 0.3 * std::exp(-(dx * dx + dy * dy) / (2.0 * vignette_radius * vignette_radius));
    double v = ridge * vignette * bright;
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

IdentityTemplate make_identity(std::uint64_t seed, std::uint64_t id, const SynthParams& p) {
    if (p.min_minutiae < 1 || p.max_minutiae < p.min_minutiae)
        throw ConfigError("invalid minutiae count range");

    IdentityTemplate tpl;
    tpl.seed = seed;
    tpl.id = id;
    Rng rng(stream_seed(seed, id));

    tpl.ridge_period = rng.uniform(p.ridge_period_min, p.ridge_period_max);
    tpl.base_angle = rng.uniform(0.0, M_PI);
    double side = p.image_side;
    for (auto& w : tpl.orientation_waves) {
        double wavelength = rng.uniform(side * 0.5, side * 2.0);
        double dir = rng.uniform(0.0, 2.0 * M_PI);
        w.fx = std::cos(dir) / wavelength;
        w.fy = std::sin(dir) / wavelength;
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        w.amp = rng.uniform(0.2, 0.6);
    }
    for (auto& w : tpl.phase_waves) {
        double wavelength = rng.uniform(side * 0.4, side * 1.5);
        double dir = rng.uniform(0.0, 2.0 * M_PI);
        w.fx = std::cos(dir) / wavelength;
        w.fy = std::sin(dir) / wavelength;
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        w.amp = rng.uniform(1.0, 3.0);
    }
    for (auto& w : tpl.brightness_waves) {
        double wavelength = rng.uniform(side * 0.18, side * 0.55);
        double dir = rng.uniform(0.0, 2.0 * M_PI);
        w.fx = std::cos(dir) / wavelength;
        w.fy = std::sin(dir) / wavelength;
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        w.amp = rng.uniform(0.08, 0.18);
    }
    tpl.vignette_cx = rng.uniform(0.3, 0.7) * side;
    tpl.vignette_cy = rng.uniform(0.3, 0.7) * side;
    tpl.vignette_radius = rng.uniform(0.25, 0.45) * side;

    // Jittered-grid placement: cell pitch equals min_separation + 2*jitter,
    // which guarantees the pairwise separation invariant without rejection
    // loops.
    double jitter = 2.0;
    double pitch = p.min_separation + 2.0 * jitter;
    double usable = side - 2.0 * p.border_margin;
    int cells = static_cast<int>(usable / pitch);
    if (cells * cells < p.max_minutiae)
        throw ConfigError("image too small for the requested minutiae density");

    int m = p.min_minutiae + static_cast<int>(rng.uniform_index(
                                 static_cast<std::uint64_t>(p.max_minutiae - p.min_minutiae + 1)));
    std::vector<int> cell_ids(static_cast<std::size_t>(cells) * cells);
    for (std::size_t i = 0; i < cell_ids.size(); ++i) cell_ids[i] = static_cast<int>(i);
    rng.shuffle(cell_ids);

    tpl.master = MinutiaeSet(p.image_side, p.image_side);
    for (int i = 0; i < m; ++i) {
        int cy = cell_ids[i] / cells, cx = cell_ids[i] % cells;
        double x = p.border_margin + (cx + 0.5) * pitch + rng.uniform(-jitter, jitter);
        double y = p.border_margin + (cy + 0.5) * pitch + rng.uniform(-jitter, jitter);
        double theta = rng.uniform(0.0, 360.0);
        tpl.master.points.emplace_back(x, y, theta);
    }
    return tpl;
}

Impression render_impression(const IdentityTemplate& tpl, int impression_index,
                             const SynthParams& p) {
    Rng rng(Rng::splitmix64(stream_seed(tpl.seed, tpl.id) ^
                            Rng::splitmix64(static_cast<std::uint64_t>(impression_index) + 7)));
    double side = p.image_side;
    double cx = side / 2.0, cy = side / 2.0;

    double rot = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg);
    double dx = rng.uniform(-p.max_translation, p.max_translation);
    double dy = rng.uniform(-p.max_translation, p.max_translation);

    MinutiaeSet transformed(p.image_side, p.image_side);
    for (int attempt = 0;; ++attempt) {
        transformed.points.clear();
        double rad = rot * M_PI / 180.0;
        double c = std::cos(rad), s = std::sin(rad);
        for (const Minutia& m : tpl.master.points) {
            double rx = c * (m.x - cx) - s * (m.y - cy) + cx + dx;
            double ry = s * (m.x - cx) + c * (m.y - cy) + cy + dy;
            if (rx >= 0.0 && rx < side && ry >= 0.0 && ry < side)
                transformed.points.emplace_back(rx, ry, m.theta + rot);
        }
        if (!transformed.points.empty() || tpl.master.points.empty()) break;
        if (attempt >= 5)
            throw GenerationError("identity " + std::to_string(tpl.id) + " impression " +
                                  std::to_string(impression_index) +
                                  ": transform left no minutiae in frame after 5 retries");
        rot *= 0.5;
        dx *= 0.5;
        dy *= 0.5;
    }

    // Inverse transform per pixel; the master pattern is analytic so the
    // warp is exact.
    Impression imp;
    imp.image = Image(p.image_side, p.image_side);
    {
        double rad = rot * M_PI / 180.0;
        double c = std::cos(rad), s = std::sin(rad);
        for (int y = 0; y < p.image_side; ++y) {
            for (int x = 0; x < p.image_side; ++x) {
                double px = x - cx - dx, py = y - cy - dy;
                double mx = c * px + s * py + cx;
                double my = -s * px + c * py + cy;
                imp.image.at(y, x) = static_cast<float>(tpl.pattern_at(mx, my));
            }
        }
    }

    // Dropout.
    imp.minutiae = MinutiaeSet(p.image_side, p.image_side);
    for (const Minutia& m : transformed.points)
        if (!(rng.uniform() < p.dropout_rate)) imp.minutiae.points.push_back(m);

    // Contrast around mid-gray.
    double contrast = rng.uniform(p.contrast_min, p.contrast_max);
    for (float& v : imp.image.pixels) v = static_cast<float>(0.5 + contrast * (v - 0.5));

    // Occlusions: constant-gray rectangles; covered minutiae are dropped.
    int n_occl = p.max_occlusions > 0
                     ? static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(p.max_occlusions) + 1))
                     : 0;
    for (int o = 0; o < n_occl; ++o) {
        int w = p.occlusion_min_size +
                static_cast<int>(rng.uniform_index(
                    static_cast<std::uint64_t>(p.occlusion_max_size - p.occlusion_min_size + 1)));
        int h = p.occlusion_min_size +
                static_cast<int>(rng.uniform_index(
                    static_cast<std::uint64_t>(p.occlusion_max_size - p.occlusion_min_size + 1)));
        w = std::min(w, p.image_side);
        h = std::min(h, p.image_side);
        int ox = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(p.image_side - w) + 1));
        int oy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(p.image_side - h) + 1));
        float gray = static_cast<float>(rng.uniform(0.3, 0.7));
        for (int yy = oy; yy < oy + h; ++yy)
            for (int xx = ox; xx < ox + w; ++xx) imp.image.at(yy, xx) = gray;
        std::erase_if(imp.minutiae.points, [&](const Minutia& m) {
            return m.x >= ox && m.x < ox + w && m.y >= oy && m.y < oy + h;
        });
    }

    // Pixel noise.
    if (p.noise_std > 0.0) {
        for (float& v : imp.image.pixels)
            v = static_cast<float>(v + p.noise_std * rng.normal());
    }
    for (float& v : imp.image.pixels) v = std::clamp(v, 0.0f, 1.0f);
    return imp;
}

int minutiae_overlap(const MinutiaeSet& a, const MinutiaeSet& b, double pos_tol,
                     double angle_tol) {
    std::vector<bool> used(b.points.size(), false);
    int matches = 0;
    for (const Minutia& ma : a.points) {
        int best = -1;
        double best_d2 = pos_tol * pos_tol;
        for (std::size_t j = 0; j < b.points.size(); ++j) {
            if (used[j]) continue;
            const Minutia& mb = b.points[j];
            double dx = ma.x - mb.x, dy = ma.y - mb.y;
            double d2 = dx * dx + dy * dy;
            if (d2 > best_d2) continue;
            double da = std::fabs(ma.theta - mb.theta);
            da = std::min(da, 360.0 - da);
            if (da > angle_tol) continue;
            best_d2 = d2;
            best = static_cast<int>(j);
        }
        if (best >= 0) {
            used[best] = true;
            ++matches;
        }
    }
    return matches;
}

std::vector<ManifestRow> generate_dataset(int num_identities, int impressions_per_identity,
                                          std::uint64_t seed, const std::string& out_dir,
                                          const SynthParams& params) {
    if (num_identities <= 0 || impressions_per_identity <= 0)
        throw ConfigError("dataset needs positive identity and impression counts");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

    std::vector<ManifestRow> rows;
    rows.reserve(static_cast<std::size_t>(num_identities) * impressions_per_identity);
    for (int id = 0; id < num_identities; ++id) {
        IdentityTemplate tpl = make_identity(seed, static_cast<std::uint64_t>(id), params);
        for (int k = 0; k < impressions_per_identity; ++k) {
            Impression imp = render_impression(tpl, k, params);
            std::string stem = "id" + std::to_string(id) + "_imp" + std::to_string(k);
            ManifestRow row;
            row.identity = static_cast<std::uint64_t>(id);
            row.impression = k;
            row.image_path = stem + ".pgm";
            row.minutiae_path = stem + ".mnt";
            write_pgm(imp.image, (fs::path(out_dir) / row.image_path).string());
            write_minutiae_file(imp.minutiae, (fs::path(out_dir) / row.minutiae_path).string());
            rows.push_back(row);
        }
    }
    write_manifest(rows, (fs::path(out_dir) / "manifest.csv").string());
    return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << "identity,impression,image_path,minutiae_path\n";
    for (const ManifestRow& r : rows)
        out << r.identity << "," << r.impression << "," << r.image_path << ","
            << r.minutiae_path << "\n";
    if (!out) throw IoError("manifest write failed: " + path);
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::string dir = std::filesystem::path(path).parent_path().string();

    std::string line;
    if (!std::getline(in, line) || line.rfind("identity,impression,image_path,minutiae_path", 0) != 0)
        throw ParseError("missing manifest header in " + path, 1);

    std::vector<ManifestRow> rows;
    int line_no = 2;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            ++line_no;
            continue;
        }
        std::istringstream ss(line);
        ManifestRow row;
        std::string identity, impression;
        if (!std::getline(ss, identity, ',') || !std::getline(ss, impression, ',') ||
            !std::getline(ss, row.image_path, ',') || !std::getline(ss, row.minutiae_path))
            throw ParseError("malformed manifest row in " + path, line_no);
        if (!row.minutiae_path.empty() && row.minutiae_path.back() == '\r')
            row.minutiae_path.pop_back();
        try {
            row.identity = std::stoull(identity);
            row.impression = std::stoi(impression);
        } catch (const std::exception&) {
            throw ParseError("non-numeric manifest fields in " + path, line_no);
        }
        if (!dir.empty()) {
            row.image_path = (std::filesystem::path(dir) / row.image_path).string();
            row.minutiae_path = (std::filesystem::path(dir) / row.minutiae_path).string();
        }
        rows.push_back(row);
        ++line_no;
    }
    return rows;
}

}  // namespace fpvit
